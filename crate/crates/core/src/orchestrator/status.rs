use std::fmt;
use std::str::FromStr;

use crate::gridsim::JobState;
use crate::xml::{self, fmt_f64, XmlError, XmlWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentState {
    Created,
    Running,
    Paused,
    Completed,
    Failed,
}

impl ExperimentState {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentState::Created => "CREATED",
            ExperimentState::Running => "RUNNING",
            ExperimentState::Paused => "PAUSED",
            ExperimentState::Completed => "COMPLETED",
            ExperimentState::Failed => "FAILED",
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, ExperimentState::Completed | ExperimentState::Failed)
    }
}

impl fmt::Display for ExperimentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            ExperimentState::Created,
            ExperimentState::Running,
            ExperimentState::Paused,
            ExperimentState::Completed,
            ExperimentState::Failed,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown experiment state `{s}`"))
    }
}

/// What the status map knows about one submitted job (one attempt).
#[derive(Debug, Clone, PartialEq)]
pub struct JobSummary {
    pub job_id: String,
    pub match_id: String,
    pub state: JobState,
    pub attempt: u32,
    pub cluster: Option<String>,
    pub submitted_at: f64,
    pub finished_at: Option<f64>,
    /// Failure phase, or `interrupted` for jobs lost to a restart.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundStatus {
    pub index: u32,
    pub jobs: Vec<JobSummary>,
}

/// The full map of an experiment and its jobs, persisted as status.xml.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusMap {
    pub experiment_id: String,
    pub state: ExperimentState,
    pub rounds: Vec<RoundStatus>,
}

fn job_attrs(j: &JobSummary) -> Vec<(&'static str, String)> {
    let mut attrs = vec![
        ("job_id", j.job_id.clone()),
        ("match_id", j.match_id.clone()),
        ("state", j.state.to_string()),
        ("attempt", j.attempt.to_string()),
    ];
    if let Some(c) = &j.cluster {
        attrs.push(("cluster", c.clone()));
    }
    attrs.push(("submitted_at", fmt_f64(j.submitted_at)));
    if let Some(t) = j.finished_at {
        attrs.push(("finished_at", fmt_f64(t)));
    }
    if let Some(f) = &j.failure {
        attrs.push(("failure", f.clone()));
    }
    attrs
}

pub const INTERRUPTED: &str = "interrupted";

impl StatusMap {
    pub fn created(experiment_id: &str) -> Self {
        Self {
            experiment_id: experiment_id.to_string(),
            state: ExperimentState::Created,
            rounds: Vec::new(),
        }
    }

    pub fn jobs(&self) -> impl Iterator<Item = (u32, &JobSummary)> {
        self.rounds
            .iter()
            .flat_map(|r| r.jobs.iter().map(move |j| (r.index, j)))
    }

    pub fn job(&self, job_id: &str) -> Option<&JobSummary> {
        self.jobs().map(|(_, j)| j).find(|j| j.job_id == job_id)
    }

    pub fn job_mut(&mut self, job_id: &str) -> Option<&mut JobSummary> {
        self.rounds
            .iter_mut()
            .flat_map(|r| r.jobs.iter_mut())
            .find(|j| j.job_id == job_id)
    }

    /// Adds a job to `round`, creating the round entry on first use.
    pub fn insert(&mut self, round: u32, job: JobSummary) {
        let pos = match self.rounds.iter().position(|r| r.index == round) {
            Some(p) => p,
            None => {
                let at = self.rounds.partition_point(|r| r.index < round);
                self.rounds.insert(
                    at,
                    RoundStatus {
                        index: round,
                        jobs: Vec::new(),
                    },
                );
                at
            }
        };
        self.rounds[pos].jobs.push(job);
    }

    /// Attempts of one match, in submission order.
    pub fn attempts<'a>(&'a self, match_id: &'a str) -> impl Iterator<Item = &'a JobSummary> + 'a {
        self.jobs()
            .map(|(_, j)| j)
            .filter(move |j| j.match_id == match_id)
    }

    /// Applies one event. Folding the full event stream over
    /// [`StatusMap::created`] reproduces the live map.
    pub fn apply(&mut self, ev: &EventRecord) {
        match &ev.subject {
            EventSubject::Experiment => {
                if let Ok(st) = ev.new_state.parse() {
                    self.state = st;
                }
            }
            EventSubject::Job {
                job_id,
                match_id,
                round,
                attempt,
                cluster,
                failure,
            } => {
                let Ok(state) = ev.new_state.parse::<JobState>() else {
                    return;
                };
                let finished_at = state.is_terminal().then_some(ev.timestamp);
                match self.job_mut(job_id) {
                    Some(j) => {
                        j.state = state;
                        j.cluster.clone_from(cluster);
                        j.finished_at = finished_at;
                        j.failure.clone_from(failure);
                    }
                    None => self.insert(
                        *round,
                        JobSummary {
                            job_id: job_id.clone(),
                            match_id: match_id.clone(),
                            state,
                            attempt: *attempt,
                            cluster: cluster.clone(),
                            submitted_at: ev.timestamp,
                            finished_at,
                            failure: failure.clone(),
                        },
                    ),
                }
            }
        }
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open(
            "experiment",
            &[
                ("id", self.experiment_id.clone()),
                ("state", self.state.to_string()),
            ],
        );
        if self.rounds.is_empty() {
            w.empty("rounds", &[]);
        } else {
            w.open("rounds", &[]);
            for r in &self.rounds {
                w.open("round", &[("index", r.index.to_string())]);
                for j in &r.jobs {
                    w.empty("job", &job_attrs(j));
                }
                w.close("round");
            }
            w.close("rounds");
        }
        w.close("experiment");
        w.finish()
    }

    /// `<jobs>` listing of every job, optionally only those in `state`.
    pub fn jobs_to_xml(&self, state: Option<JobState>) -> String {
        let mut w = XmlWriter::new();
        let mut attrs = vec![("experiment", self.experiment_id.clone())];
        if let Some(st) = state {
            attrs.push(("state", st.to_string()));
        }
        w.open("jobs", &attrs);
        for (round, j) in self
            .jobs()
            .filter(|(_, j)| state.is_none_or(|st| j.state == st))
        {
            let mut attrs = job_attrs(j);
            attrs.insert(2, ("round", round.to_string()));
            w.empty("job", &attrs);
        }
        w.close("jobs");
        w.finish()
    }

    pub fn from_xml(doc: &str) -> Result<Self, XmlError> {
        let root = xml::parse(doc)?;
        root.expect_name("experiment")?;
        let state_raw = root.attr("state")?;
        let state = state_raw
            .parse()
            .map_err(|_| root.invalid("state", state_raw))?;
        let mut rounds = Vec::new();
        for r in root.child("rounds")?.children_named("round") {
            let jobs = r
                .children_named("job")
                .map(|j| {
                    let raw = j.attr("state")?;
                    Ok(JobSummary {
                        job_id: j.attr("job_id")?.to_string(),
                        match_id: j.attr("match_id")?.to_string(),
                        state: raw.parse().map_err(|_| j.invalid("state", raw))?,
                        attempt: j.parse_attr("attempt")?,
                        cluster: j.attr_opt("cluster").map(str::to_string),
                        submitted_at: j.parse_attr("submitted_at")?,
                        finished_at: j.parse_attr_opt("finished_at")?,
                        failure: j.attr_opt("failure").map(str::to_string),
                    })
                })
                .collect::<Result<_, XmlError>>()?;
            rounds.push(RoundStatus {
                index: r.parse_attr("index")?,
                jobs,
            });
        }
        Ok(Self {
            experiment_id: root.attr("id")?.to_string(),
            state,
            rounds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventSubject {
    Experiment,
    Job {
        job_id: String,
        match_id: String,
        round: u32,
        attempt: u32,
        cluster: Option<String>,
        failure: Option<String>,
    },
}

/// One entry of the orchestrator's append-only event stream.
///
/// Line form: `seq experiment_id job_id old_state new_state timestamp`,
/// followed for job events by `match_id round attempt cluster failure`
/// (`-` for absent values). Experiment-level events use `-` as job id.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub seq: u64,
    pub experiment_id: String,
    pub subject: EventSubject,
    /// `NONE` for a job's first event.
    pub old_state: String,
    pub new_state: String,
    pub timestamp: f64,
}

pub const NO_STATE: &str = "NONE";

fn dash(v: &Option<String>) -> &str {
    v.as_deref().unwrap_or("-")
}

fn undash(s: &str) -> Option<String> {
    (s != "-").then(|| s.to_string())
}

impl EventRecord {
    pub fn job_id(&self) -> Option<&str> {
        match &self.subject {
            EventSubject::Job { job_id, .. } => Some(job_id),
            EventSubject::Experiment => None,
        }
    }

    pub fn to_line(&self) -> String {
        let head = format!(
            "{} {} {} {} {} {}",
            self.seq,
            self.experiment_id,
            self.job_id().unwrap_or("-"),
            self.old_state,
            self.new_state,
            fmt_f64(self.timestamp)
        );
        match &self.subject {
            EventSubject::Experiment => head,
            EventSubject::Job {
                match_id,
                round,
                attempt,
                cluster,
                failure,
                ..
            } => format!(
                "{head} {match_id} {round} {attempt} {} {}",
                dash(cluster),
                dash(failure)
            ),
        }
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || format!("malformed event line {line:?}");
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let (seq, exp, job, old, new, ts) = match f.as_slice() {
            [seq, exp, job, old, new, ts, ..] => (num(seq)?, *exp, *job, *old, *new, *ts),
            _ => return Err(bad()),
        };
        let subject = match (job, &f[6..]) {
            ("-", []) => EventSubject::Experiment,
            (job, [match_id, round, attempt, cluster, failure]) => EventSubject::Job {
                job_id: job.to_string(),
                match_id: match_id.to_string(),
                round: round.parse().map_err(|_| bad())?,
                attempt: attempt.parse().map_err(|_| bad())?,
                cluster: undash(cluster),
                failure: undash(failure),
            },
            _ => return Err(bad()),
        };
        Ok(Self {
            seq,
            experiment_id: exp.to_string(),
            subject,
            old_state: old.to_string(),
            new_state: new.to_string(),
            timestamp: ts.parse().map_err(|_| bad())?,
        })
    }
}
