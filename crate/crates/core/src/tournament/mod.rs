//! Round-robin experiment planning: manifests, the circle-method schedule,
//! workspace generation, segmentation into match jobs, and standings.

mod manifest;
mod schedule;
mod standings;
mod workspace;

use std::path::PathBuf;

pub use manifest::{is_safe_id, ExperimentManifest, DEFAULT_MAX_ATTEMPTS};
pub use schedule::{
    circle_pairings, experiment_totals, match_id, round_robin_schedule, schedule_matches,
    totals_for, ExperimentTotals, MatchSpec, Rounds,
};
pub use standings::{compute_standings, StandingRow, Standings, POINTS_DRAW, POINTS_WIN};
pub use workspace::{generate_experiment, write_atomic, AgentConfig, Workspace};

use crate::game::WorkloadError;
use crate::xml::XmlError;

#[derive(Debug, thiserror::Error)]
pub enum TournamentError {
    #[error("invalid manifest: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("result for unknown match `{0}`")]
    UnknownMatch(String),
    #[error("conflicting results for match `{0}`")]
    ConflictingResult(String),
    #[error("result for match `{0}` does not add up")]
    InconsistentResult(String),
    #[error("workspace is corrupt: {0}")]
    Corrupt(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// A specific version of an agent's artifact: the one it held after
/// `after_round` (0 = the initial artifact).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArtifactVersion {
    pub agent_id: String,
    pub after_round: u32,
}

impl std::fmt::Display for ArtifactVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@r{}", self.agent_id, self.after_round)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannedOutput {
    Result(String),
    Artifact(ArtifactVersion),
}

/// A match job before it is bound to concrete storage references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobPlan {
    pub spec: MatchSpec,
    /// Artifacts consumed by side A and side B.
    pub inputs: [ArtifactVersion; 2],
    /// The match result, then the updated artifacts of A and B.
    pub outputs: [PlannedOutput; 3],
}

/// One job plan per scheduled match, in round order. Each input names the
/// artifact the agent produced in its most recent earlier round.
pub fn segment_experiment(m: &ExperimentManifest) -> Result<Vec<JobPlan>, TournamentError> {
    m.validate()?;
    let mut last_round = vec![0u32; m.agents.len()];
    let mut plans = Vec::new();
    for round in schedule_matches(m)? {
        let current: Vec<u32> = last_round.clone();
        for spec in round {
            let (i, j) = spec.seats;
            let version = |k: usize, r: u32| ArtifactVersion {
                agent_id: m.agents[k].agent_id.clone(),
                after_round: r,
            };
            last_round[i] = spec.round;
            last_round[j] = spec.round;
            plans.push(JobPlan {
                inputs: [version(i, current[i]), version(j, current[j])],
                outputs: [
                    PlannedOutput::Result(spec.match_id.clone()),
                    PlannedOutput::Artifact(version(i, spec.round)),
                    PlannedOutput::Artifact(version(j, spec.round)),
                ],
                spec,
            });
        }
    }
    Ok(plans)
}
