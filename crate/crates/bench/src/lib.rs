//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use gridarena_core::gridsim::{Grid, GridConfig, GridTopology, JobSpec};
use gridarena_core::tournament::ExperimentManifest;
use gridarena_core::AgentCharacter;

/// Manifest with `agents` default-character agents.
pub fn manifest(game: &str, agents: usize, games: u32) -> ExperimentManifest {
    let mut m = ExperimentManifest::new("bench", game);
    m.games_per_match = games;
    m.agents = (0..agents)
        .map(|k| AgentCharacter::new(format!("a{k:03}"), k as u64))
        .collect();
    m
}

/// Grid of `clusters` x `wns` nodes loaded with `jobs` nominal 60 s jobs.
pub fn loaded_grid(clusters: usize, wns: u32, jobs: usize) -> Grid {
    let mut grid =
        Grid::new(GridConfig::new(GridTopology::uniform(clusters, wns))).expect("valid topology");
    let spec = Arc::new(JobSpec::nominal("bench", 60.0));
    for _ in 0..jobs {
        grid.submit(Arc::clone(&spec), 1).expect("nominal job");
    }
    grid
}
