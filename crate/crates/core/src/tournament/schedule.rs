use std::collections::BTreeSet;

use super::{ExperimentManifest, TournamentError};
use crate::seed;

/// Index pairs `(i, j)` with `i < j`, grouped by round.
pub type Rounds = Vec<Vec<(usize, usize)>>;

/// Circle-method pairings for `n` seats. Seat 0 stays put while the rest
/// rotate; with odd `n` a phantom seat gives one bye per round.
pub fn circle_pairings(n: usize) -> Rounds {
    if n < 2 {
        return Vec::new();
    }
    let m = n + n % 2;
    let mut ring: Vec<usize> = (1..m).collect();
    let mut rounds = Vec::with_capacity(m - 1);
    for _ in 0..m - 1 {
        let seats: Vec<usize> = std::iter::once(0).chain(ring.iter().copied()).collect();
        let round = (0..m / 2)
            .map(|k| (seats[k], seats[m - 1 - k]))
            .filter(|&(x, y)| x < n && y < n)
            .map(|(x, y)| (x.min(y), x.max(y)))
            .collect();
        rounds.push(round);
        ring.rotate_right(1);
    }
    rounds
}

pub fn round_robin_schedule<S: AsRef<str>>(agent_ids: &[S]) -> Result<Rounds, TournamentError> {
    if agent_ids.len() < 2 {
        return Err(TournamentError::Invalid(vec![format!(
            "an experiment needs >= 2 agents, found {}",
            agent_ids.len()
        )]));
    }
    let mut seen = BTreeSet::new();
    for id in agent_ids {
        if !seen.insert(id.as_ref()) {
            return Err(TournamentError::Invalid(vec![format!(
                "duplicate agent id {:?}",
                id.as_ref()
            )]));
        }
    }
    Ok(circle_pairings(agent_ids.len()))
}

/// One match of the tournament.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchSpec {
    pub match_id: String,
    pub agent_a: String,
    pub agent_b: String,
    /// Manifest positions of the two agents.
    pub seats: (usize, usize),
    pub games: u32,
    /// 1-based.
    pub round: u32,
    pub seed: u64,
}

pub fn match_id(experiment_id: &str, round: u32, i: usize, j: usize) -> String {
    format!("{experiment_id}-r{round:03}-{i}v{j}")
}

/// The manifest's full schedule as concrete matches.
pub fn schedule_matches(m: &ExperimentManifest) -> Result<Vec<Vec<MatchSpec>>, TournamentError> {
    let ids = m.agent_ids();
    let rounds = round_robin_schedule(&ids)?;
    Ok(rounds
        .into_iter()
        .enumerate()
        .map(|(r, pairs)| {
            let round = r as u32 + 1;
            pairs
                .into_iter()
                .map(|(i, j)| MatchSpec {
                    match_id: match_id(&m.experiment_id, round, i, j),
                    agent_a: ids[i].to_string(),
                    agent_b: ids[j].to_string(),
                    seats: (i, j),
                    games: m.games_per_match,
                    round,
                    seed: seed::derive_seed(m.seed, &[u64::from(round), i as u64, j as u64]),
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentTotals {
    pub agents: u64,
    pub games_per_match: u64,
    pub total_matches: u64,
    pub matches_per_agent: u64,
    /// Distinct games played.
    pub unique_games: u64,
    pub per_agent_games: u64,
    /// Games counted once per participant (twice per game).
    pub participation_games: u64,
}

pub fn experiment_totals(m: &ExperimentManifest) -> ExperimentTotals {
    totals_for(m.agents.len() as u64, u64::from(m.games_per_match))
}

pub fn totals_for(agents: u64, games_per_match: u64) -> ExperimentTotals {
    let n = agents;
    let matches_per_agent = n.saturating_sub(1);
    let total_matches = n * matches_per_agent / 2;
    let per_agent_games = matches_per_agent * games_per_match;
    ExperimentTotals {
        agents: n,
        games_per_match,
        total_matches,
        matches_per_agent,
        unique_games: total_matches * games_per_match,
        per_agent_games,
        participation_games: n * per_agent_games,
    }
}
