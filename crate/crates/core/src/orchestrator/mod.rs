//! Drives an experiment from launch to report.
//!
//! Rounds run one after another because each round consumes the artifacts
//! its agents produced in earlier rounds; within a round every match is
//! submitted at once. After each poll the status map is rewritten
//! atomically, newly collected results and their artifacts are persisted to
//! the workspace, and the event stream is appended to `events.log`, so an
//! experiment can be reloaded after a crash and driven to the same final
//! standings.

mod report;
mod status;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

pub use report::{
    estimate_sequential_time, speedup, ExperimentReport, FailureEntry, Timing, REFERENCE_GRID_DAYS,
    REFERENCE_MINUTES_PER_MATCH, REFERENCE_SEQUENTIAL_HOURS, REFERENCE_SPEEDUP, SECONDS_PER_GAME,
};
pub use status::{
    EventRecord, EventSubject, ExperimentState, JobSummary, RoundStatus, StatusMap, INTERRUPTED,
    NO_STATE,
};

use crate::game::{
    play_match, workload_for, AgentCharacter, AgentInput, GameWorkload, MatchResult,
};
use crate::gridsim::{
    Backend, BlobRef, Compute, FailurePolicy, Grid, GridConfig, GridError, GridTopology, InputRef,
    JobSpec, JobState, LiveTask, OutputDecl, StorageElement, Transition,
};
use crate::tournament::{
    compute_standings, experiment_totals, segment_experiment, write_atomic, ArtifactVersion,
    ExperimentManifest, JobPlan, Standings, TournamentError, Workspace,
};
use crate::xml::{self, XmlError, XmlWriter};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Tournament(#[from] TournamentError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Xml(#[from] XmlError),
    #[error("{0}")]
    Conflict(String),
    #[error("no such {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("workspace is corrupt: {0}")]
    Corrupt(String),
    #[error("cannot persist experiment state (experiment paused): {0}")]
    Persistence(String),
}

type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub topology: GridTopology,
    pub backend: Backend,
    pub failures: FailurePolicy,
    /// Virtual seconds between a failure and its resubmission.
    pub backoff: f64,
    pub seconds_per_game: f64,
    /// Grid events processed per [`Orchestrator::poll`].
    pub events_per_poll: usize,
    pub write_job_logs: bool,
}

pub const DEFAULT_BACKOFF: f64 = 5.0;

impl OrchestratorConfig {
    pub fn new(topology: GridTopology) -> Self {
        Self {
            topology,
            backend: Backend::Simulation,
            failures: FailurePolicy::none(),
            backoff: DEFAULT_BACKOFF,
            seconds_per_game: SECONDS_PER_GAME,
            events_per_poll: 256,
            write_job_logs: true,
        }
    }
}

/// Plays one match on a worker node.
#[derive(Debug)]
struct MatchTask {
    workload: Arc<dyn GameWorkload>,
    match_id: String,
    agents: [AgentCharacter; 2],
    games: u32,
    seed: u64,
}

impl LiveTask for MatchTask {
    fn run(&self, inputs: &[Arc<Vec<u8>>]) -> Result<Vec<Vec<u8>>, String> {
        let [a, b] = inputs else {
            return Err(format!("expected 2 inputs, got {}", inputs.len()));
        };
        let out = play_match(
            self.workload.as_ref(),
            &self.match_id,
            AgentInput {
                character: &self.agents[0],
                artifact: a,
            },
            AgentInput {
                character: &self.agents[1],
                artifact: b,
            },
            self.games,
            self.seed,
        )
        .map_err(|e| e.to_string())?;
        let [art_a, art_b] = out.artifacts;
        Ok(vec![out.result.to_xml().into_bytes(), art_a, art_b])
    }
}

const OUT_RESULT: &str = "result";
const OUT_AGENT_A: &str = "agent-a";
const OUT_AGENT_B: &str = "agent-b";

/// A collected match as persisted under `results/`.
#[derive(Debug, Clone, PartialEq)]
struct Collected {
    job_id: String,
    attempt: u32,
    round: u32,
    result: MatchResult,
    result_ref: BlobRef,
    artifacts: [(ArtifactVersion, BlobRef); 2],
}

impl Collected {
    fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open(
            "collected",
            &[
                ("match", self.result.match_id.clone()),
                ("round", self.round.to_string()),
                ("job", self.job_id.clone()),
                ("attempt", self.attempt.to_string()),
                ("result_ref", self.result_ref.to_string()),
            ],
        );
        for (v, r) in &self.artifacts {
            w.empty(
                "artifact",
                &[
                    ("agent", v.agent_id.clone()),
                    ("after_round", v.after_round.to_string()),
                    ("ref", r.to_string()),
                ],
            );
        }
        self.result.write(&mut w);
        w.close("collected");
        w.finish()
    }

    fn from_xml(doc: &str) -> Result<Self> {
        let root = xml::parse(doc)?;
        root.expect_name("collected")?;
        let blob = |e: &xml::Element, key: &str| -> Result<BlobRef> {
            let raw = e.attr(key)?;
            BlobRef::parse(raw).ok_or_else(|| e.invalid(key, raw).into())
        };
        let arts: Vec<(ArtifactVersion, BlobRef)> = root
            .children_named("artifact")
            .map(|a| {
                Ok((
                    ArtifactVersion {
                        agent_id: a.attr("agent")?.to_string(),
                        after_round: a.parse_attr("after_round")?,
                    },
                    blob(a, "ref")?,
                ))
            })
            .collect::<Result<_>>()?;
        let artifacts: [(ArtifactVersion, BlobRef); 2] = arts
            .try_into()
            .map_err(|_| OrchestratorError::Corrupt("collected result needs 2 artifacts".into()))?;
        Ok(Self {
            job_id: root.attr("job")?.to_string(),
            attempt: root.parse_attr("attempt")?,
            round: root.parse_attr("round")?,
            result: MatchResult::from_element(root.child("match")?)?,
            result_ref: blob(&root, "result_ref")?,
            artifacts,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PendingResubmit {
    due: f64,
    match_id: String,
    attempt: u32,
}

/// Match accounting at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub total: usize,
    pub collected: usize,
    pub in_flight: usize,
    pub awaiting_resubmit: usize,
    pub forfeited: usize,
    pub not_started: usize,
}

/// Job record plus timeline and log, as served to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDetail {
    pub experiment_id: String,
    pub round: u32,
    pub summary: JobSummary,
    pub timestamps: Vec<(String, f64)>,
    pub log: Vec<String>,
}

impl JobDetail {
    pub fn to_xml(&self) -> String {
        let s = &self.summary;
        let mut attrs = vec![
            ("job_id", s.job_id.clone()),
            ("experiment", self.experiment_id.clone()),
            ("match_id", s.match_id.clone()),
            ("round", self.round.to_string()),
            ("state", s.state.to_string()),
            ("attempt", s.attempt.to_string()),
        ];
        if let Some(c) = &s.cluster {
            attrs.push(("cluster", c.clone()));
        }
        attrs.push(("submitted_at", xml::fmt_f64(s.submitted_at)));
        if let Some(t) = s.finished_at {
            attrs.push(("finished_at", xml::fmt_f64(t)));
        }
        if let Some(f) = &s.failure {
            attrs.push(("failure", f.clone()));
        }
        let mut w = XmlWriter::new();
        w.open("job", &attrs);
        w.open("timestamps", &[]);
        for (state, t) in &self.timestamps {
            w.empty(
                "at",
                &[("state", state.clone()), ("time", xml::fmt_f64(*t))],
            );
        }
        w.close("timestamps");
        w.text("log", &[], &self.log.join("\n"));
        w.close("job");
        w.finish()
    }
}

pub struct Orchestrator {
    ws: Workspace,
    config: OrchestratorConfig,
    manifest: ExperimentManifest,
    characters: BTreeMap<String, AgentCharacter>,
    workload: Arc<dyn GameWorkload>,
    plans: HashMap<String, JobPlan>,
    rounds: Vec<Vec<String>>,
    grid: Grid,
    status: StatusMap,
    artifacts: BTreeMap<ArtifactVersion, BlobRef>,
    results: BTreeMap<String, Collected>,
    forfeited: BTreeSet<String>,
    current_round: u32,
    pending: Vec<PendingResubmit>,
    events: Vec<EventRecord>,
    events_flushed: usize,
    failures: Vec<FailureEntry>,
    resubmissions: u64,
    unsaved: Vec<String>,
    last_status_xml: String,
    report: Option<ExperimentReport>,
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |e| OrchestratorError::Persistence(format!("{}: {e}", path.display()))
}

fn job_serial(job_id: &str) -> Option<u64> {
    job_id.rsplit_once("-j").and_then(|(_, n)| n.parse().ok())
}

/// Trims an event log that ran ahead of status.xml (a crash between the
/// two writes) back to the longest prefix that folds to `status`. Returns
/// whether anything was dropped.
fn reconcile_events(status: &StatusMap, events: &mut Vec<EventRecord>) -> bool {
    let fold = |evs: &[EventRecord]| {
        let mut m = StatusMap::created(&status.experiment_id);
        evs.iter().for_each(|e| m.apply(e));
        m
    };
    if fold(events) == *status {
        return false;
    }
    let mut m = StatusMap::created(&status.experiment_id);
    let mut keep = (m == *status).then_some(0);
    for (i, e) in events.iter().enumerate() {
        m.apply(e);
        if m == *status {
            keep = Some(i + 1);
        }
    }
    match keep {
        Some(k) => {
            log::warn!(
                "dropping {} events not reflected in status.xml",
                events.len() - k
            );
            events.truncate(k);
            true
        }
        None => {
            log::warn!("events.log does not reproduce status.xml; keeping it as is");
            false
        }
    }
}

impl Orchestrator {
    /// Opens an experiment workspace in whatever state it was left,
    /// reconstructing in-memory state from status.xml, `results/`,
    /// `store/` and `events.log`. Jobs that were in flight are marked
    /// failed (`interrupted`) and queued for resubmission.
    pub fn open(root: impl Into<PathBuf>, config: OrchestratorConfig) -> Result<Self> {
        let ws = Workspace::at(root);
        let (manifest, agent_configs) = ws.load()?;
        let workload = workload_for(&manifest.game_id).map_err(TournamentError::from)?;
        let status_path = ws.status_path();
        let status_doc = fs::read_to_string(&status_path)
            .map_err(|e| OrchestratorError::Corrupt(format!("{}: {e}", status_path.display())))?;
        let status = StatusMap::from_xml(&status_doc)?;
        if status.experiment_id != manifest.experiment_id {
            return Err(OrchestratorError::Corrupt(format!(
                "status.xml belongs to `{}`, manifest to `{}`",
                status.experiment_id, manifest.experiment_id
            )));
        }

        let mut plans = HashMap::new();
        let mut rounds: Vec<Vec<String>> = Vec::new();
        for plan in segment_experiment(&manifest)? {
            let r = plan.spec.round as usize;
            if rounds.len() < r {
                rounds.resize(r, Vec::new());
            }
            rounds[r - 1].push(plan.spec.match_id.clone());
            plans.insert(plan.spec.match_id.clone(), plan);
        }

        let next_serial = status
            .jobs()
            .filter_map(|(_, j)| job_serial(&j.job_id))
            .max()
            .unwrap_or(0)
            + 1;
        let start_time = status
            .jobs()
            .flat_map(|(_, j)| [Some(j.submitted_at), j.finished_at])
            .flatten()
            .fold(0.0, f64::max);
        let mut grid = Grid::new(GridConfig {
            topology: config.topology.clone(),
            backend: config.backend,
            failures: config.failures.clone(),
            job_prefix: manifest.experiment_id.clone(),
            first_job_number: next_serial,
            start_time,
            log_dir: config.write_job_logs.then(|| ws.logs_dir()),
        })?;

        let mut artifacts = BTreeMap::new();
        for cfg in agent_configs {
            let r = grid.central_mut().put(cfg.artifact);
            artifacts.insert(
                ArtifactVersion {
                    agent_id: cfg.character.agent_id.clone(),
                    after_round: 0,
                },
                r,
            );
        }
        let store = StorageElement::load(&ws.store_dir())
            .map_err(|e| OrchestratorError::Corrupt(format!("store: {e}")))?;
        for r in store.refs() {
            let bytes = store.get(r).expect("listed blob");
            grid.central_mut().put(bytes.as_ref().clone());
        }

        let mut results = BTreeMap::new();
        let results_dir = ws.results_dir();
        if results_dir.exists() {
            let mut entries: Vec<_> = fs::read_dir(&results_dir)
                .map_err(|e| OrchestratorError::Corrupt(e.to_string()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "xml"))
                .collect();
            entries.sort();
            for path in entries {
                let doc = fs::read_to_string(&path)
                    .map_err(|e| OrchestratorError::Corrupt(format!("{}: {e}", path.display())))?;
                let c = Collected::from_xml(&doc)?;
                if !plans.contains_key(&c.result.match_id) {
                    return Err(OrchestratorError::Corrupt(format!(
                        "{} is not a match of this experiment",
                        path.display()
                    )));
                }
                for (v, r) in &c.artifacts {
                    if !grid.central().contains(r) {
                        return Err(OrchestratorError::Corrupt(format!(
                            "artifact {v} of {} is missing from the store",
                            c.result.match_id
                        )));
                    }
                    artifacts.insert(v.clone(), r.clone());
                }
                results.insert(c.result.match_id.clone(), c);
            }
        }

        let mut events = Vec::new();
        if let Ok(text) = fs::read_to_string(ws.events_path()) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                match EventRecord::parse_line(line) {
                    Ok(ev) => events.push(ev),
                    Err(e) => log::warn!("skipping event: {e}"),
                }
            }
        }
        if reconcile_events(&status, &mut events) {
            let mut buf = String::new();
            for ev in &events {
                buf.push_str(&ev.to_line());
                buf.push('\n');
            }
            write_atomic(&ws.events_path(), buf.as_bytes())?;
        }
        let events_flushed = events.len();

        let current_round = status.rounds.iter().map(|r| r.index).max().unwrap_or(0);
        let characters = manifest
            .agents
            .iter()
            .map(|a| (a.agent_id.clone(), a.clone()))
            .collect();
        let mut orch = Self {
            ws,
            config,
            manifest,
            characters,
            workload,
            plans,
            rounds,
            grid,
            last_status_xml: status_doc,
            status,
            artifacts,
            results,
            forfeited: BTreeSet::new(),
            current_round,
            pending: Vec::new(),
            events,
            events_flushed,
            failures: Vec::new(),
            resubmissions: 0,
            unsaved: Vec::new(),
            report: None,
        };
        orch.recover();
        if orch.status.state.is_finished() {
            let path = orch.ws.report_xml_path();
            orch.report = fs::read_to_string(&path)
                .ok()
                .and_then(|doc| ExperimentReport::from_xml(&doc).ok());
        }
        Ok(orch)
    }

    fn recover(&mut self) {
        let now = self.grid.now();
        let interrupted: Vec<(u32, JobSummary)> = self
            .status
            .jobs()
            .filter(|(_, j)| !j.state.is_terminal())
            .map(|(r, j)| (r, j.clone()))
            .collect();
        for (round, j) in interrupted {
            let old = j.state;
            if let Some(s) = self.status.job_mut(&j.job_id) {
                s.state = JobState::Failed;
                s.finished_at = Some(now);
                s.failure = Some(INTERRUPTED.to_string());
            }
            self.emit(
                EventSubject::Job {
                    job_id: j.job_id.clone(),
                    match_id: j.match_id.clone(),
                    round,
                    attempt: j.attempt,
                    cluster: j.cluster.clone(),
                    failure: Some(INTERRUPTED.to_string()),
                },
                old.as_str(),
                JobState::Failed.as_str(),
                now,
            );
        }
        for (_, j) in self.status.jobs() {
            if j.state == JobState::Failed {
                self.failures.push(FailureEntry {
                    match_id: j.match_id.clone(),
                    job_id: j.job_id.clone(),
                    attempt: j.attempt,
                    reason: j.failure.clone().unwrap_or_default(),
                });
            }
        }
        self.resubmissions = self.status.jobs().filter(|(_, j)| j.attempt > 1).count() as u64;
        if self.current_round == 0 {
            return;
        }
        for round in 1..=self.current_round {
            for match_id in self.rounds[round as usize - 1].clone() {
                if self.results.contains_key(&match_id) {
                    continue;
                }
                let attempts: Vec<&JobSummary> = self.status.attempts(&match_id).collect();
                if attempts.iter().any(|j| !j.state.is_terminal()) {
                    continue;
                }
                if self.failed_attempts(&match_id) >= self.manifest.max_attempts {
                    self.forfeited.insert(match_id);
                    continue;
                }
                let attempt = attempts.iter().map(|j| j.attempt).max().unwrap_or(0) + 1;
                self.pending.push(PendingResubmit {
                    due: now,
                    match_id,
                    attempt,
                });
            }
        }
    }

    /// Opens a freshly generated workspace and starts it.
    pub fn launch(root: impl Into<PathBuf>, config: OrchestratorConfig) -> Result<Self> {
        let mut orch = Self::open(root, config)?;
        if orch.status.state != ExperimentState::Created {
            return Err(OrchestratorError::Conflict(format!(
                "experiment {} is {}; launch refused",
                orch.manifest.experiment_id, orch.status.state
            )));
        }
        orch.start()?;
        Ok(orch)
    }

    pub fn manifest(&self) -> &ExperimentManifest {
        &self.manifest
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn status(&self) -> &StatusMap {
        &self.status
    }

    pub fn state(&self) -> ExperimentState {
        self.status.state
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn events_since(&self, seq: u64) -> &[EventRecord] {
        let start = self.events.partition_point(|e| e.seq <= seq);
        &self.events[start..]
    }

    pub fn report(&self) -> Option<&ExperimentReport> {
        self.report.as_ref()
    }

    pub fn results(&self) -> impl Iterator<Item = &MatchResult> {
        self.results.values().map(|c| &c.result)
    }

    pub fn current_round(&self) -> u32 {
        self.current_round
    }

    pub fn progress(&self) -> Progress {
        let total = self.plans.len();
        let collected = self.results.len();
        let forfeited = self.forfeited.len();
        let awaiting_resubmit = self.pending.len();
        let in_flight = self
            .status
            .jobs()
            .filter(|(_, j)| !j.state.is_terminal())
            .count();
        Progress {
            total,
            collected,
            in_flight,
            awaiting_resubmit,
            forfeited,
            not_started: total - collected - forfeited - awaiting_resubmit - in_flight,
        }
    }

    pub fn standings(&self) -> Result<Standings> {
        let results: Vec<MatchResult> = self.results.values().map(|c| c.result.clone()).collect();
        let forfeited: Vec<String> = self.forfeited.iter().cloned().collect();
        Ok(compute_standings(&self.manifest, &results, &forfeited)?)
    }

    fn emit(&mut self, subject: EventSubject, old: &str, new: &str, time: f64) {
        let seq = self.events.last().map_or(1, |e| e.seq + 1);
        self.events.push(EventRecord {
            seq,
            experiment_id: self.manifest.experiment_id.clone(),
            subject,
            old_state: old.to_string(),
            new_state: new.to_string(),
            timestamp: time,
        });
    }

    fn set_state(&mut self, to: ExperimentState) {
        let from = self.status.state;
        if from == to {
            return;
        }
        self.status.state = to;
        let now = self.grid.now();
        self.emit(EventSubject::Experiment, from.as_str(), to.as_str(), now);
    }

    /// Starts a created experiment or resumes a paused one.
    pub fn start(&mut self) -> Result<()> {
        match self.status.state {
            ExperimentState::Created => {
                self.set_state(ExperimentState::Running);
                self.current_round = 1;
                for match_id in self.rounds[0].clone() {
                    self.submit_match(&match_id, 1)?;
                }
                self.sync()?;
            }
            ExperimentState::Paused => self.set_state(ExperimentState::Running),
            other => {
                return Err(OrchestratorError::Conflict(format!(
                    "cannot start an experiment that is {other}"
                )))
            }
        }
        self.persist()
    }

    pub fn pause(&mut self) -> Result<()> {
        if self.status.state != ExperimentState::Running {
            return Err(OrchestratorError::Conflict(format!(
                "cannot pause an experiment that is {}",
                self.status.state
            )));
        }
        self.set_state(ExperimentState::Paused);
        self.persist()
    }

    /// The artifact `v` names, or the agent's latest earlier one if the
    /// match that would have produced `v` was forfeited.
    fn artifact_for(&self, v: &ArtifactVersion) -> Result<(BlobRef, u64)> {
        let lo = ArtifactVersion {
            agent_id: v.agent_id.clone(),
            after_round: 0,
        };
        let r = self
            .artifacts
            .range(lo..=v.clone())
            .next_back()
            .map(|(_, r)| r.clone())
            .ok_or_else(|| OrchestratorError::Corrupt(format!("no artifact for {v}")))?;
        let size = self.grid.central().size_of(&r).unwrap_or(0);
        Ok((r, size))
    }

    fn submit_match(&mut self, match_id: &str, attempt: u32) -> Result<String> {
        let plan =
            self.plans
                .get(match_id)
                .cloned()
                .ok_or_else(|| OrchestratorError::NotFound {
                    kind: "match",
                    id: match_id.to_string(),
                })?;
        let mut inputs = Vec::with_capacity(2);
        for (name, v) in [
            (OUT_AGENT_A, &plan.inputs[0]),
            (OUT_AGENT_B, &plan.inputs[1]),
        ] {
            let (blob, size) = self.artifact_for(v)?;
            inputs.push(InputRef {
                name: name.to_string(),
                blob,
                size,
            });
        }
        let games = plan.spec.games;
        let outputs = vec![
            OutputDecl {
                name: OUT_RESULT.into(),
                size: 64 + 48 * u64::from(games),
            },
            OutputDecl {
                name: OUT_AGENT_A.into(),
                size: inputs[0].size,
            },
            OutputDecl {
                name: OUT_AGENT_B.into(),
                size: inputs[1].size,
            },
        ];
        let character = |id: &str| self.characters[id].clone();
        let task = MatchTask {
            workload: Arc::clone(&self.workload),
            match_id: match_id.to_string(),
            agents: [character(&plan.spec.agent_a), character(&plan.spec.agent_b)],
            games,
            seed: plan.spec.seed,
        };
        let spec = JobSpec {
            job_spec_id: match_id.to_string(),
            match_id: match_id.to_string(),
            inputs,
            outputs,
            compute: Compute::Live {
                task: Arc::new(task),
                seconds: f64::from(games) * self.config.seconds_per_game,
            },
        };
        Ok(self.grid.submit(Arc::new(spec), attempt)?)
    }

    fn round_of(&self, match_id: &str) -> u32 {
        self.plans.get(match_id).map_or(0, |p| p.spec.round)
    }

    fn failed_attempts(&self, match_id: &str) -> u32 {
        self.status
            .attempts(match_id)
            .filter(|j| j.state == JobState::Failed && j.failure.as_deref() != Some(INTERRUPTED))
            .count() as u32
    }

    fn apply_transition(&mut self, t: &Transition) -> Result<()> {
        let round = self.round_of(&t.match_id);
        let failure = (t.to == JobState::Failed)
            .then(|| self.grid.job(&t.job_id).ok())
            .flatten()
            .and_then(|r| r.failure.as_ref())
            .map(|f| f.phase.to_string());
        let finished_at = t.to.is_terminal().then_some(t.time);
        match self.status.job_mut(&t.job_id) {
            Some(j) => {
                j.state = t.to;
                j.cluster.clone_from(&t.cluster);
                j.finished_at = finished_at;
                j.failure.clone_from(&failure);
            }
            None => self.status.insert(
                round,
                JobSummary {
                    job_id: t.job_id.clone(),
                    match_id: t.match_id.clone(),
                    state: t.to,
                    attempt: t.attempt,
                    cluster: t.cluster.clone(),
                    submitted_at: t.time,
                    finished_at,
                    failure: failure.clone(),
                },
            ),
        }
        self.emit(
            EventSubject::Job {
                job_id: t.job_id.clone(),
                match_id: t.match_id.clone(),
                round,
                attempt: t.attempt,
                cluster: t.cluster.clone(),
                failure,
            },
            t.from.map_or(NO_STATE, JobState::as_str),
            t.to.as_str(),
            t.time,
        );
        match t.to {
            JobState::Done => self.collect(&t.job_id).map(|_| ()),
            JobState::Failed => {
                self.handle_failure(&t.job_id);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Records a finished job's result and artifacts. Returns `false` when
    /// the match was already collected (the delivery is ignored).
    pub fn collect(&mut self, job_id: &str) -> Result<bool> {
        let rec = self.grid.job(job_id)?.clone();
        if rec.state != JobState::Done {
            return Err(OrchestratorError::Conflict(format!(
                "job {job_id} is {}, only DONE jobs can be collected",
                rec.state
            )));
        }
        let match_id = rec.spec.match_id.clone();
        if self.results.contains_key(&match_id) {
            log::warn!("duplicate completion of {match_id} via {job_id} ignored");
            return Ok(false);
        }
        let plan = &self.plans[&match_id];
        let output = |name: &str| {
            rec.output(name).cloned().ok_or_else(|| {
                OrchestratorError::Corrupt(format!("job {job_id} has no `{name}` output"))
            })
        };
        let result_ref = output(OUT_RESULT)?;
        let bytes = self
            .grid
            .central()
            .get(&result_ref)
            .ok_or_else(|| OrchestratorError::Corrupt(format!("{result_ref} missing")))?;
        let doc = std::str::from_utf8(&bytes)
            .map_err(|_| OrchestratorError::Corrupt("result is not utf-8".into()))?;
        let result = MatchResult::from_xml(doc)?;
        if result.match_id != match_id || !result.is_consistent() {
            return Err(OrchestratorError::Corrupt(format!(
                "job {job_id} returned an inconsistent result"
            )));
        }
        let round = plan.spec.round;
        let version = |agent: &str| ArtifactVersion {
            agent_id: agent.to_string(),
            after_round: round,
        };
        let artifacts = [
            (version(&plan.spec.agent_a), output(OUT_AGENT_A)?),
            (version(&plan.spec.agent_b), output(OUT_AGENT_B)?),
        ];
        for (v, r) in &artifacts {
            self.artifacts.insert(v.clone(), r.clone());
        }
        self.results.insert(
            match_id.clone(),
            Collected {
                job_id: job_id.to_string(),
                attempt: rec.attempt,
                round,
                result,
                result_ref,
                artifacts,
            },
        );
        self.unsaved.push(match_id);
        Ok(true)
    }

    fn handle_failure(&mut self, job_id: &str) {
        let Some(s) = self.status.job(job_id).cloned() else {
            return;
        };
        let reason = self
            .grid
            .job(job_id)
            .ok()
            .and_then(|r| r.failure.as_ref())
            .map_or_else(
                || "unknown".to_string(),
                |f| format!("{}: {}", f.phase, f.detail),
            );
        self.failures.push(FailureEntry {
            match_id: s.match_id.clone(),
            job_id: job_id.to_string(),
            attempt: s.attempt,
            reason,
        });
        if self.results.contains_key(&s.match_id) {
            return;
        }
        if self.failed_attempts(&s.match_id) < self.manifest.max_attempts {
            let due = self.grid.now() + self.config.backoff;
            self.pending.push(PendingResubmit {
                due,
                match_id: s.match_id,
                attempt: s.attempt + 1,
            });
            self.grid.wake_at(due);
        } else {
            log::warn!(
                "match {} failed {} times; forfeited",
                s.match_id,
                self.manifest.max_attempts
            );
            self.forfeited.insert(s.match_id);
        }
    }

    /// Resubmits every failed match whose back-off has elapsed. Returns the
    /// new job ids.
    pub fn resubmit_failed(&mut self) -> Result<Vec<String>> {
        let now = self.grid.now();
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|p| p.due <= now);
        self.pending = later;
        let mut ids = Vec::with_capacity(due.len());
        for p in due {
            ids.push(self.submit_match(&p.match_id, p.attempt)?);
            self.resubmissions += 1;
        }
        Ok(ids)
    }

    /// Operator-triggered resubmission of a failed job, skipping back-off.
    pub fn resubmit_job(&mut self, job_id: &str) -> Result<String> {
        let s = self
            .status
            .job(job_id)
            .cloned()
            .ok_or_else(|| OrchestratorError::NotFound {
                kind: "job",
                id: job_id.to_string(),
            })?;
        if s.state != JobState::Failed {
            return Err(OrchestratorError::Conflict(format!(
                "job {job_id} is {}; only FAILED jobs can be resubmitted",
                s.state
            )));
        }
        if self.status.state != ExperimentState::Running {
            return Err(OrchestratorError::Conflict(format!(
                "experiment is {}",
                self.status.state
            )));
        }
        let newer = self
            .status
            .attempts(&s.match_id)
            .any(|j| j.attempt > s.attempt);
        if newer || self.results.contains_key(&s.match_id) {
            return Err(OrchestratorError::Conflict(format!(
                "match {} already has a newer attempt",
                s.match_id
            )));
        }
        if self.forfeited.contains(&s.match_id) {
            return Err(OrchestratorError::Conflict(format!(
                "match {} has used all {} attempts",
                s.match_id, self.manifest.max_attempts
            )));
        }
        self.pending.retain(|p| p.match_id != s.match_id);
        let id = self.submit_match(&s.match_id, s.attempt + 1)?;
        self.resubmissions += 1;
        self.sync()?;
        self.persist()?;
        Ok(id)
    }

    fn round_settled(&self, round: u32) -> bool {
        self.rounds[round as usize - 1]
            .iter()
            .all(|m| self.results.contains_key(m) || self.forfeited.contains(m))
    }

    /// Drains grid transitions into the status map and event stream, and
    /// moves to the next round once the current one has settled.
    fn sync(&mut self) -> Result<()> {
        loop {
            let transitions = self.grid.drain_transitions();
            for t in &transitions {
                self.apply_transition(t)?;
            }
            let advanced = self.advance_round()?;
            if transitions.is_empty() && !advanced {
                return Ok(());
            }
        }
    }

    fn advance_round(&mut self) -> Result<bool> {
        if self.status.state != ExperimentState::Running
            || self.current_round == 0
            || !self.round_settled(self.current_round)
        {
            return Ok(false);
        }
        if self.current_round as usize == self.rounds.len() {
            let to = if self.forfeited.is_empty() {
                ExperimentState::Completed
            } else {
                ExperimentState::Failed
            };
            self.set_state(to);
            self.report = Some(self.build_report()?);
            return Ok(true);
        }
        self.current_round += 1;
        for match_id in self.rounds[self.current_round as usize - 1].clone() {
            self.submit_match(&match_id, 1)?;
        }
        Ok(true)
    }

    /// Advances the experiment by up to `events_per_poll` grid events and
    /// persists. Returns the events emitted during this poll.
    pub fn poll(&mut self) -> Result<Vec<EventRecord>> {
        let first = self.events.len();
        if self.status.state == ExperimentState::Running {
            self.sync()?;
            for _ in 0..self.config.events_per_poll {
                if self.status.state != ExperimentState::Running {
                    break;
                }
                self.resubmit_failed()?;
                self.sync()?;
                if self.grid.step()?.is_none() && self.pending.is_empty() {
                    self.sync()?;
                    break;
                }
                self.sync()?;
            }
        }
        self.persist()?;
        Ok(self.events[first..].to_vec())
    }

    /// Polls until the experiment completes, fails, or is paused.
    pub fn run_to_end(&mut self) -> Result<ExperimentState> {
        while self.status.state == ExperimentState::Running {
            self.poll()?;
        }
        Ok(self.status.state)
    }

    fn build_report(&self) -> Result<ExperimentReport> {
        let makespan = {
            let mut start = f64::INFINITY;
            let mut end: f64 = 0.0;
            for (_, j) in self.status.jobs() {
                start = start.min(j.submitted_at);
                end = end.max(j.finished_at.unwrap_or(j.submitted_at));
            }
            if start.is_finite() {
                end - start
            } else {
                0.0
            }
        };
        let per_match_minutes =
            f64::from(self.manifest.games_per_match) * self.config.seconds_per_game / 60.0;
        let sequential = estimate_sequential_time(&self.manifest, per_match_minutes);
        let mut failures = self.failures.clone();
        failures.sort_by(|a, b| a.job_id.cmp(&b.job_id));
        Ok(ExperimentReport {
            experiment_id: self.manifest.experiment_id.clone(),
            state: self.status.state,
            standings: self.standings()?,
            totals: experiment_totals(&self.manifest),
            timing: Timing {
                makespan,
                estimated_sequential: sequential,
                speedup: speedup(sequential, makespan),
            },
            usage: self.grid.usage(),
            failures,
            resubmissions: self.resubmissions,
            permanently_failed: self.forfeited.iter().cloned().collect(),
        })
    }

    /// The final report. Refused while the experiment is still going.
    pub fn finalize(&mut self) -> Result<ExperimentReport> {
        if !self.status.state.is_finished() {
            return Err(OrchestratorError::Conflict(format!(
                "experiment {} is {}; no report yet",
                self.manifest.experiment_id, self.status.state
            )));
        }
        if self.report.is_none() {
            self.report = Some(self.build_report()?);
        }
        self.persist()?;
        Ok(self.report.clone().expect("report just built"))
    }

    fn try_persist(&mut self) -> Result<()> {
        if !self.unsaved.is_empty() {
            let results_dir = self.ws.results_dir();
            let store_dir = self.ws.store_dir();
            fs::create_dir_all(&results_dir).map_err(io_err(&results_dir))?;
            fs::create_dir_all(&store_dir).map_err(io_err(&store_dir))?;
            while let Some(match_id) = self.unsaved.first() {
                let c = &self.results[match_id];
                for r in [&c.result_ref, &c.artifacts[0].1, &c.artifacts[1].1] {
                    let path = store_dir.join(r.hex());
                    if !path.exists() {
                        let bytes = self.grid.central().get(r).expect("collected blob");
                        write_atomic(&path, &bytes)?;
                    }
                }
                write_atomic(&self.ws.result_path(match_id), c.to_xml().as_bytes())?;
                self.unsaved.remove(0);
            }
        }
        if self.events_flushed < self.events.len() {
            let path = self.ws.events_path();
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            let mut buf = String::new();
            for ev in &self.events[self.events_flushed..] {
                buf.push_str(&ev.to_line());
                buf.push('\n');
            }
            f.write_all(buf.as_bytes()).map_err(io_err(&path))?;
            self.events_flushed = self.events.len();
        }
        if let Some(report) = &self.report {
            let xml_path = self.ws.report_xml_path();
            if !xml_path.exists() {
                write_atomic(&xml_path, report.to_xml().as_bytes())?;
                write_atomic(&self.ws.report_text_path(), report.to_text().as_bytes())?;
            }
        }
        let doc = self.status.to_xml();
        if doc != self.last_status_xml {
            write_atomic(&self.ws.status_path(), doc.as_bytes())?;
            self.last_status_xml = doc;
        }
        Ok(())
    }

    fn persist(&mut self) -> Result<()> {
        self.try_persist().inspect_err(|_| {
            if self.status.state == ExperimentState::Running {
                self.set_state(ExperimentState::Paused);
            }
        })
    }

    /// Status, timeline and log of one job of this experiment.
    pub fn job_detail(&self, job_id: &str) -> Option<JobDetail> {
        let (round, summary) = self.status.jobs().find(|(_, j)| j.job_id == job_id)?;
        let (timestamps, log) = match self.grid.job(job_id) {
            Ok(rec) => (
                rec.timestamps
                    .iter()
                    .map(|(s, t)| (s.to_string(), *t))
                    .collect(),
                rec.log.clone(),
            ),
            Err(_) => {
                let path = self
                    .ws
                    .logs_dir()
                    .join(format!("{job_id}-a{}.log", summary.attempt));
                let log: Vec<String> = fs::read_to_string(path)
                    .map(|t| t.lines().map(str::to_string).collect())
                    .unwrap_or_default();
                let ts = log
                    .iter()
                    .filter_map(|l| {
                        let mut it = l.split_whitespace();
                        let t = it.next()?.parse().ok()?;
                        Some((it.next()?.to_string(), t))
                    })
                    .collect();
                (ts, log)
            }
        };
        Some(JobDetail {
            experiment_id: self.manifest.experiment_id.clone(),
            round,
            summary: summary.clone(),
            timestamps,
            log,
        })
    }
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("experiment", &self.manifest.experiment_id)
            .field("state", &self.status.state)
            .field("round", &self.current_round)
            .finish_non_exhaustive()
    }
}
