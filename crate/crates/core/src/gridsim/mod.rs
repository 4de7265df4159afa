//! A model of the grid the match jobs run on: a workload management system
//! matching jobs to clusters, per-cluster compute elements with worker
//! nodes, content-addressed storage elements, explicit data staging, and
//! failure injection.

mod engine;
mod failure;
mod job;
mod store;
mod topology;

pub use engine::{Backend, Grid, GridConfig, Transition};
pub use failure::{FailurePolicy, FAILURE_POINT};
pub use job::{
    Compute, Failure, FailurePhase, InputRef, JobRecord, JobSpec, JobState, LiveTask, OutputDecl,
    Placement,
};
pub use store::{BlobRef, StorageElement};
pub use topology::{Cluster, GridTopology};

use crate::xml::{self, fmt_f64, Element, XmlError, XmlWriter};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("invalid topology: {}", .0.join("; "))]
    InvalidTopology(Vec<String>),
    #[error("invalid job spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("input `{name}` references {blob}, which is not in central storage")]
    MissingInput { name: String, blob: BlobRef },
    #[error("no such job `{0}`")]
    UnknownJob(String),
    #[error("job {job_id} cannot go from {from} to {to}")]
    IllegalTransition {
        job_id: String,
        from: JobState,
        to: JobState,
    },
    #[error("event queue drained at t={time} with {active} jobs unfinished")]
    Deadlock { active: usize, time: f64 },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("log directory: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterUsage {
    pub cluster_id: String,
    pub wn_count: u32,
    /// Jobs that finished successfully here.
    pub jobs_run: u64,
    /// Worker-node seconds spent holding a job (staging included).
    pub busy_time: f64,
    pub idle_time: f64,
    pub bytes_staged_in: u64,
    pub bytes_staged_out: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UsageStats {
    pub clusters: Vec<ClusterUsage>,
    /// First submission to last terminal transition, in virtual seconds.
    pub makespan: f64,
}

impl UsageStats {
    pub fn total_busy(&self) -> f64 {
        self.clusters.iter().map(|c| c.busy_time).sum()
    }

    pub fn total_failures(&self) -> u64 {
        self.clusters.iter().map(|c| c.failures).sum()
    }

    pub fn write(&self, w: &mut XmlWriter) {
        w.open("usage", &[("makespan", fmt_f64(self.makespan))]);
        for c in &self.clusters {
            w.empty(
                "cluster",
                &[
                    ("id", c.cluster_id.clone()),
                    ("wn_count", c.wn_count.to_string()),
                    ("jobs_run", c.jobs_run.to_string()),
                    ("busy_time", fmt_f64(c.busy_time)),
                    ("idle_time", fmt_f64(c.idle_time)),
                    ("bytes_staged_in", c.bytes_staged_in.to_string()),
                    ("bytes_staged_out", c.bytes_staged_out.to_string()),
                    ("failures", c.failures.to_string()),
                ],
            );
        }
        w.close("usage");
    }

    pub(crate) fn read(e: &Element) -> Result<Self, XmlError> {
        e.expect_name("usage")?;
        let clusters = e
            .children_named("cluster")
            .map(|c| {
                Ok(ClusterUsage {
                    cluster_id: c.attr("id")?.to_string(),
                    wn_count: c.parse_attr("wn_count")?,
                    jobs_run: c.parse_attr("jobs_run")?,
                    busy_time: c.parse_attr("busy_time")?,
                    idle_time: c.parse_attr("idle_time")?,
                    bytes_staged_in: c.parse_attr("bytes_staged_in")?,
                    bytes_staged_out: c.parse_attr("bytes_staged_out")?,
                    failures: c.parse_attr("failures")?,
                })
            })
            .collect::<Result<_, XmlError>>()?;
        Ok(Self {
            clusters,
            makespan: e.parse_attr("makespan")?,
        })
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn from_xml(doc: &str) -> Result<Self, XmlError> {
        Self::read(&xml::parse(doc)?)
    }
}
