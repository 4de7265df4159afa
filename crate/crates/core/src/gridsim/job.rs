use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::store::BlobRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JobState {
    Submitted,
    Matched,
    StagingIn,
    Running,
    StagingOut,
    Done,
    Failed,
    Cancelled,
}

impl JobState {
    pub const ALL: [JobState; 8] = [
        JobState::Submitted,
        JobState::Matched,
        JobState::StagingIn,
        JobState::Running,
        JobState::StagingOut,
        JobState::Done,
        JobState::Failed,
        JobState::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Done | JobState::Failed | JobState::Cancelled
        )
    }

    /// Edges of the lifecycle graph.
    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        match (self, to) {
            (Submitted, Matched)
            | (Matched, StagingIn)
            | (StagingIn, Running)
            | (Running, StagingOut)
            | (StagingOut, Done) => true,
            (Submitted | Matched, Cancelled) => true,
            (from, Failed) => !from.is_terminal(),
            _ => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Submitted => "SUBMITTED",
            JobState::Matched => "MATCHED",
            JobState::StagingIn => "STAGING_IN",
            JobState::Running => "RUNNING",
            JobState::StagingOut => "STAGING_OUT",
            JobState::Done => "DONE",
            JobState::Failed => "FAILED",
            JobState::Cancelled => "CANCELLED",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JobState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown job state `{s}`"))
    }
}

/// Where in its lifecycle a job failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailurePhase {
    StageIn,
    Runtime,
    NodeLost,
    StageOut,
}

impl FailurePhase {
    pub const ALL: [FailurePhase; 4] = [
        FailurePhase::StageIn,
        FailurePhase::Runtime,
        FailurePhase::NodeLost,
        FailurePhase::StageOut,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailurePhase::StageIn => "stage_in",
            FailurePhase::Runtime => "runtime",
            FailurePhase::NodeLost => "node_lost",
            FailurePhase::StageOut => "stage_out",
        }
    }
}

impl fmt::Display for FailurePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailurePhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FailurePhase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown failure phase `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub phase: FailurePhase,
    pub detail: String,
}

/// Work that actually runs on a worker node. Outputs are returned in the
/// order the job spec declares them.
pub trait LiveTask: Send + Sync + fmt::Debug {
    fn run(&self, inputs: &[Arc<Vec<u8>>]) -> Result<Vec<Vec<u8>>, String>;
}

#[derive(Debug, Clone)]
pub enum Compute {
    /// Occupies a worker for `seconds` (scaled by the speed factor) and
    /// emits deterministic placeholder outputs of the declared sizes.
    Nominal { seconds: f64 },
    /// Runs `task`; virtual duration is still `seconds` times the speed
    /// factor.
    Live {
        task: Arc<dyn LiveTask>,
        seconds: f64,
    },
}

impl Compute {
    pub fn seconds(&self) -> f64 {
        match self {
            Compute::Nominal { seconds } | Compute::Live { seconds, .. } => *seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputRef {
    pub name: String,
    pub blob: BlobRef,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputDecl {
    pub name: String,
    /// Exact size for nominal jobs; an estimate for live ones.
    pub size: u64,
}

#[derive(Debug, Clone)]
pub struct JobSpec {
    pub job_spec_id: String,
    /// The match this job plays, for display and bookkeeping.
    pub match_id: String,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<OutputDecl>,
    pub compute: Compute,
}

impl JobSpec {
    pub fn nominal(id: impl Into<String>, seconds: f64) -> Self {
        let id = id.into();
        Self {
            match_id: id.clone(),
            job_spec_id: id,
            inputs: Vec::new(),
            outputs: Vec::new(),
            compute: Compute::Nominal { seconds },
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in &self.inputs {
            if i.size == 0 {
                out.push(format!("input {:?} has zero size", i.name));
            }
        }
        let s = self.compute.seconds();
        if !(s.is_finite() && s >= 0.0) {
            out.push(format!(
                "compute cost {s} is not a finite non-negative duration"
            ));
        }
        let mut names: Vec<&str> = self.outputs.iter().map(|o| o.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            out.push("duplicate output names".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub cluster_id: String,
    pub wn_index: u32,
}

/// A snapshot of one submitted job.
#[derive(Debug, Clone)]
pub struct JobRecord {
    pub job_id: String,
    pub spec: Arc<JobSpec>,
    pub attempt: u32,
    pub state: JobState,
    pub placement: Option<Placement>,
    /// Cluster chosen by the WMS, known before a worker node is assigned.
    pub cluster: Option<String>,
    pub timestamps: Vec<(JobState, f64)>,
    pub failure: Option<Failure>,
    /// Central storage references of the outputs, set on DONE.
    pub outputs: Vec<(String, BlobRef)>,
    pub log: Vec<String>,
}

impl JobRecord {
    pub fn submitted_at(&self) -> f64 {
        self.timestamps[0].1
    }

    pub fn finished_at(&self) -> Option<f64> {
        self.state
            .is_terminal()
            .then(|| self.timestamps.last().map(|t| t.1))
            .flatten()
    }

    pub fn output(&self, name: &str) -> Option<&BlobRef> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_edges() {
        use JobState::*;
        let happy = [Submitted, Matched, StagingIn, Running, StagingOut, Done];
        for w in happy.windows(2) {
            assert!(w[0].can_transition(w[1]));
        }
        assert!(!Submitted.can_transition(Running));
        assert!(Running.can_transition(Failed));
        assert!(!Running.can_transition(Cancelled));
        for t in [Done, Failed, Cancelled] {
            for s in JobState::ALL {
                assert!(!t.can_transition(s));
            }
        }
        assert_eq!("STAGING_OUT".parse::<JobState>().unwrap(), StagingOut);
    }

    #[test]
    fn zero_size_inputs_are_invalid() {
        let mut spec = JobSpec::nominal("j", 1.0);
        spec.inputs.push(InputRef {
            name: "x".into(),
            blob: BlobRef::of(b""),
            size: 0,
        });
        assert_eq!(spec.violations().len(), 1);
    }
}
