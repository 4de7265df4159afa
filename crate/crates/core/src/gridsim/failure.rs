use std::collections::BTreeMap;

use rand::Rng as _;

use super::job::FailurePhase;
use crate::seed;

/// Seeded fault injection. Each submission (attempt) fails with
/// `probability`, in `phase` if given or else in a phase drawn uniformly
/// from the four. Targeted job ids always fail in their named phase.
///
/// Draws depend only on the seed and the job's submission number, never on
/// event interleaving.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FailurePolicy {
    pub probability: f64,
    pub phase: Option<FailurePhase>,
    pub seed: u64,
    targeted: BTreeMap<String, FailurePhase>,
}

/// Fraction of the phase's duration at which an injected failure strikes.
pub const FAILURE_POINT: f64 = 0.5;

impl FailurePolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn random(probability: f64, phase: Option<FailurePhase>, seed: u64) -> Self {
        Self {
            probability,
            phase,
            seed,
            targeted: BTreeMap::new(),
        }
    }

    pub fn target(&mut self, job_id: impl Into<String>, phase: FailurePhase) {
        self.targeted.insert(job_id.into(), phase);
    }

    pub fn decide(&self, serial: u64, job_id: &str) -> Option<FailurePhase> {
        if let Some(&phase) = self.targeted.get(job_id) {
            return Some(phase);
        }
        if self.probability <= 0.0 {
            return None;
        }
        let mut rng = seed::rng_for(self.seed, &[serial]);
        if rng.random::<f64>() >= self.probability {
            return None;
        }
        Some(
            self.phase
                .unwrap_or_else(|| FailurePhase::ALL[rng.random_range(0..FailurePhase::ALL.len())]),
        )
    }
}
