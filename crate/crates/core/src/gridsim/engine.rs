//! Discrete-event grid engine.
//!
//! One coordinator owns every job record and advances a virtual clock by
//! popping events in `(time, seq)` order. With the local-parallel backend,
//! live tasks are handed to a worker pool when their job starts running
//! and joined when the job's run-complete event is popped, so real
//! execution overlaps while every observable timestamp stays virtual and
//! deterministic.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::failure::{FailurePolicy, FAILURE_POINT};
use super::job::{Compute, Failure, FailurePhase, JobRecord, JobSpec, JobState, Placement};
use super::store::{BlobRef, StorageElement};
use super::topology::GridTopology;
use super::{ClusterUsage, GridError, UsageStats};
use crate::xml::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Everything runs inline on the coordinator.
    Simulation,
    /// Live tasks run on a pool of `threads` workers.
    LocalParallel { threads: usize },
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub topology: GridTopology,
    pub backend: Backend,
    pub failures: FailurePolicy,
    pub job_prefix: String,
    /// Number given to the first submitted job; raise it when resuming so
    /// ids are never reused.
    pub first_job_number: u64,
    /// Initial reading of the virtual clock.
    pub start_time: f64,
    /// Per-job log files are written here when set.
    pub log_dir: Option<PathBuf>,
}

impl GridConfig {
    pub fn new(topology: GridTopology) -> Self {
        Self {
            topology,
            backend: Backend::Simulation,
            failures: FailurePolicy::none(),
            job_prefix: "job".into(),
            first_job_number: 1,
            start_time: 0.0,
            log_dir: None,
        }
    }
}

/// A state change observed by the coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub job_id: String,
    pub match_id: String,
    pub attempt: u32,
    pub from: Option<JobState>,
    pub to: JobState,
    pub time: f64,
    pub cluster: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    StageInDone(usize),
    RunDone(usize),
    StageOutDone(usize),
    Fail(usize, FailurePhase),
    Wake,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

type TaskResult = Result<Vec<Vec<u8>>, String>;

enum Pending {
    Ready(TaskResult),
    Remote(mpsc::Receiver<TaskResult>),
}

#[derive(Default)]
struct Runtime {
    planned_failure: Option<FailurePhase>,
    scratch: Vec<Arc<Vec<u8>>>,
    task: Option<Pending>,
    outputs: Vec<Vec<u8>>,
    wn_since: f64,
}

struct ClusterState {
    queue: VecDeque<usize>,
    free: BTreeSet<u32>,
    se: StorageElement,
    usage: ClusterUsage,
}

impl ClusterState {
    fn load(&self) -> usize {
        self.queue.len() + (self.usage.wn_count as usize - self.free.len())
    }
}

pub struct Grid {
    config: GridConfig,
    central: StorageElement,
    clusters: Vec<ClusterState>,
    now: f64,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    jobs: Vec<JobRecord>,
    runtime: Vec<Runtime>,
    index: HashMap<String, usize>,
    wms_queue: VecDeque<usize>,
    transitions: Vec<Transition>,
    active: usize,
    first_submit: Option<f64>,
    last_finish: f64,
    pool: Option<rayon::ThreadPool>,
}

fn placeholder_bytes(spec_id: &str, name: &str, size: u64) -> Vec<u8> {
    let digest = Sha256::digest(format!("{spec_id}/{name}").as_bytes());
    digest.iter().copied().cycle().take(size as usize).collect()
}

impl Grid {
    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        let v = config.topology.violations();
        if !v.is_empty() {
            return Err(GridError::InvalidTopology(v));
        }
        let pool = match config.backend {
            Backend::Simulation => None,
            Backend::LocalParallel { threads } => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads.max(1))
                    .thread_name(|i| format!("grid-wn-{i}"))
                    .build()
                    .map_err(|e| GridError::Pool(e.to_string()))?,
            ),
        };
        if let Some(dir) = &config.log_dir {
            fs::create_dir_all(dir).map_err(|e| GridError::Io(e.to_string()))?;
        }
        let clusters = config
            .topology
            .clusters
            .iter()
            .map(|c| ClusterState {
                queue: VecDeque::new(),
                free: (0..c.wn_count).collect(),
                se: StorageElement::new(),
                usage: ClusterUsage {
                    cluster_id: c.cluster_id.clone(),
                    wn_count: c.wn_count,
                    ..ClusterUsage::default()
                },
            })
            .collect();
        Ok(Self {
            now: config.start_time,
            config,
            central: StorageElement::new(),
            clusters,
            seq: 0,
            events: BinaryHeap::new(),
            jobs: Vec::new(),
            runtime: Vec::new(),
            index: HashMap::new(),
            wms_queue: VecDeque::new(),
            transitions: Vec::new(),
            active: 0,
            first_submit: None,
            last_finish: 0.0,
            pool,
        })
    }

    pub fn topology(&self) -> &GridTopology {
        &self.config.topology
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn central(&self) -> &StorageElement {
        &self.central
    }

    pub fn central_mut(&mut self) -> &mut StorageElement {
        &mut self.central
    }

    pub fn failures_mut(&mut self) -> &mut FailurePolicy {
        &mut self.config.failures
    }

    /// Number of jobs not yet in a terminal state.
    pub fn active_jobs(&self) -> usize {
        self.active
    }

    pub fn job(&self, job_id: &str) -> Result<&JobRecord, GridError> {
        self.index
            .get(job_id)
            .map(|&i| &self.jobs[i])
            .ok_or_else(|| GridError::UnknownJob(job_id.to_string()))
    }

    pub fn jobs(&self) -> &[JobRecord] {
        &self.jobs
    }

    /// Transitions observed since the last call.
    pub fn drain_transitions(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.transitions)
    }

    fn push_event(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    /// Makes sure the clock stops at `time` even if nothing else happens
    /// then (used for resubmission back-off).
    pub fn wake_at(&mut self, time: f64) {
        self.push_event(time.max(self.now), EventKind::Wake);
    }

    fn transition(&mut self, idx: usize, to: JobState, detail: &str) {
        let rec = &mut self.jobs[idx];
        let from = rec.state;
        assert!(
            from.can_transition(to),
            "illegal transition {from} -> {to} for {}",
            rec.job_id
        );
        rec.state = to;
        rec.timestamps.push((to, self.now));
        self.record(idx, Some(from), detail);
        if to.is_terminal() {
            self.active -= 1;
            self.last_finish = self.last_finish.max(self.now);
        }
    }

    fn record(&mut self, idx: usize, from: Option<JobState>, detail: &str) {
        let rec = &mut self.jobs[idx];
        let line = format!("{} {} {}", fmt_f64(self.now), rec.state, detail);
        if let Some(dir) = &self.config.log_dir {
            let path = dir.join(format!("{}-a{}.log", rec.job_id, rec.attempt));
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                log::warn!("cannot write {}: {e}", path.display());
            }
        }
        rec.log.push(line);
        self.transitions.push(Transition {
            job_id: rec.job_id.clone(),
            match_id: rec.spec.match_id.clone(),
            attempt: rec.attempt,
            from,
            to: rec.state,
            time: self.now,
            cluster: rec.cluster.clone(),
        });
    }

    /// Queues `spec` with the WMS. Every input must already be in central
    /// storage.
    pub fn submit(&mut self, spec: Arc<JobSpec>, attempt: u32) -> Result<String, GridError> {
        let v = spec.violations();
        if !v.is_empty() {
            return Err(GridError::InvalidSpec(v));
        }
        for input in &spec.inputs {
            if !self.central.contains(&input.blob) {
                return Err(GridError::MissingInput {
                    name: input.name.clone(),
                    blob: input.blob.clone(),
                });
            }
        }
        let serial = self.config.first_job_number + self.jobs.len() as u64;
        let job_id = format!("{}-j{serial:06}", self.config.job_prefix);
        let idx = self.jobs.len();
        let planned_failure = self.config.failures.decide(serial, &job_id);
        self.jobs.push(JobRecord {
            job_id: job_id.clone(),
            spec,
            attempt,
            state: JobState::Submitted,
            placement: None,
            cluster: None,
            timestamps: vec![(JobState::Submitted, self.now)],
            failure: None,
            outputs: Vec::new(),
            log: Vec::new(),
        });
        self.runtime.push(Runtime {
            planned_failure,
            ..Runtime::default()
        });
        self.index.insert(job_id.clone(), idx);
        self.active += 1;
        self.first_submit.get_or_insert(self.now);
        self.record(idx, None, &format!("attempt={attempt}"));
        self.wms_queue.push_back(idx);
        self.dispatch();
        Ok(job_id)
    }

    /// Withdraws a job that has not reached a worker node yet.
    pub fn cancel(&mut self, job_id: &str) -> Result<(), GridError> {
        let idx = *self
            .index
            .get(job_id)
            .ok_or_else(|| GridError::UnknownJob(job_id.to_string()))?;
        let state = self.jobs[idx].state;
        match state {
            JobState::Submitted => self.wms_queue.retain(|&i| i != idx),
            JobState::Matched => {
                for c in &mut self.clusters {
                    c.queue.retain(|&i| i != idx);
                }
            }
            _ => {
                return Err(GridError::IllegalTransition {
                    job_id: job_id.to_string(),
                    from: state,
                    to: JobState::Cancelled,
                })
            }
        }
        self.transition(idx, JobState::Cancelled, "cancelled");
        self.dispatch();
        Ok(())
    }

    /// Index of the cluster the WMS would pick now, if any CE has room.
    fn choose_cluster(&self) -> Option<usize> {
        self.clusters
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                c.queue.len() < self.config.topology.clusters[*i].ce_queue_capacity as usize
            })
            .min_by(|(i, a), (j, b)| {
                let (ta, tb) = (
                    &self.config.topology.clusters[*i],
                    &self.config.topology.clusters[*j],
                );
                a.load()
                    .cmp(&b.load())
                    .then(ta.wn_speed_factor.total_cmp(&tb.wn_speed_factor))
                    .then(ta.cluster_id.cmp(&tb.cluster_id))
            })
            .map(|(i, _)| i)
    }

    fn dispatch(&mut self) {
        loop {
            let mut progressed = false;
            for c in 0..self.clusters.len() {
                while !self.clusters[c].free.is_empty() && !self.clusters[c].queue.is_empty() {
                    let idx = self.clusters[c].queue.pop_front().expect("non-empty queue");
                    self.start_stage_in(idx, c);
                    progressed = true;
                }
            }
            while let Some(&idx) = self.wms_queue.front() {
                let Some(c) = self.choose_cluster() else {
                    break;
                };
                self.wms_queue.pop_front();
                let cluster_id = self.config.topology.clusters[c].cluster_id.clone();
                self.jobs[idx].cluster = Some(cluster_id.clone());
                self.transition(idx, JobState::Matched, &format!("cluster={cluster_id}"));
                self.clusters[c].queue.push_back(idx);
                progressed = true;
            }
            if !progressed {
                break;
            }
        }
    }

    fn bandwidth(&self, c: usize) -> f64 {
        self.config
            .topology
            .central_se_bandwidth
            .min(self.config.topology.clusters[c].local_se_bandwidth)
    }

    fn cluster_of(&self, idx: usize) -> usize {
        let id = self.jobs[idx]
            .cluster
            .as_deref()
            .expect("matched job has a cluster");
        self.config
            .topology
            .clusters
            .iter()
            .position(|c| c.cluster_id == id)
            .expect("cluster exists")
    }

    /// Schedules the end of a phase of length `duration`, or the injected
    /// failure part-way through it.
    fn schedule_phase(
        &mut self,
        idx: usize,
        duration: f64,
        phases: &[FailurePhase],
        done: EventKind,
    ) {
        match self.runtime[idx].planned_failure {
            Some(p) if phases.contains(&p) => {
                self.push_event(self.now + FAILURE_POINT * duration, EventKind::Fail(idx, p))
            }
            _ => self.push_event(self.now + duration, done),
        }
    }

    fn start_stage_in(&mut self, idx: usize, c: usize) {
        let wn = self.clusters[c].free.pop_first().expect("free worker node");
        self.runtime[idx].wn_since = self.now;
        self.jobs[idx].placement = Some(Placement {
            cluster_id: self.config.topology.clusters[c].cluster_id.clone(),
            wn_index: wn,
        });
        let bytes: u64 = self.jobs[idx].spec.inputs.iter().map(|i| i.size).sum();
        let duration = bytes as f64 / self.bandwidth(c);
        self.transition(idx, JobState::StagingIn, &format!("wn={wn} bytes={bytes}"));
        self.schedule_phase(
            idx,
            duration,
            &[FailurePhase::StageIn],
            EventKind::StageInDone(idx),
        );
    }

    fn finish_stage_in(&mut self, idx: usize) {
        let c = self.cluster_of(idx);
        let spec = Arc::clone(&self.jobs[idx].spec);
        let mut scratch = Vec::with_capacity(spec.inputs.len());
        for input in &spec.inputs {
            let bytes = self
                .central
                .get(&input.blob)
                .filter(|b| input.blob.matches(b));
            let Some(bytes) = bytes else {
                let detail = format!("digest mismatch for input {} ({})", input.name, input.blob);
                return self.fail(idx, FailurePhase::StageIn, detail);
            };
            self.clusters[c].se.put(bytes.as_ref().clone());
            self.clusters[c].usage.bytes_staged_in += bytes.len() as u64;
            scratch.push(bytes);
        }
        let speed = self.config.topology.clusters[c].wn_speed_factor;
        let duration = spec.compute.seconds() * speed;
        let doomed = matches!(
            self.runtime[idx].planned_failure,
            Some(FailurePhase::Runtime | FailurePhase::NodeLost)
        );
        if let (Compute::Live { task, .. }, false) = (&spec.compute, doomed) {
            let task = Arc::clone(task);
            let run = move |inputs: &[Arc<Vec<u8>>]| -> TaskResult {
                catch_unwind(AssertUnwindSafe(|| task.run(inputs)))
                    .unwrap_or_else(|_| Err("task panicked".to_string()))
            };
            let pending = match &self.pool {
                None => Pending::Ready(run(&scratch)),
                Some(pool) => {
                    let (tx, rx) = mpsc::sync_channel(1);
                    let inputs = scratch.clone();
                    pool.spawn(move || {
                        let _ = tx.send(run(&inputs));
                    });
                    Pending::Remote(rx)
                }
            };
            self.runtime[idx].task = Some(pending);
        }
        self.runtime[idx].scratch = scratch;
        self.transition(
            idx,
            JobState::Running,
            &format!("duration={}", fmt_f64(duration)),
        );
        self.schedule_phase(
            idx,
            duration,
            &[FailurePhase::Runtime, FailurePhase::NodeLost],
            EventKind::RunDone(idx),
        );
    }

    fn finish_run(&mut self, idx: usize) {
        let spec = Arc::clone(&self.jobs[idx].spec);
        let outputs = match &spec.compute {
            Compute::Nominal { .. } => spec
                .outputs
                .iter()
                .map(|o| placeholder_bytes(&spec.job_spec_id, &o.name, o.size))
                .collect(),
            Compute::Live { .. } => {
                let result = match self.runtime[idx].task.take() {
                    Some(Pending::Ready(r)) => r,
                    Some(Pending::Remote(rx)) => rx
                        .recv()
                        .unwrap_or_else(|_| Err("worker vanished".to_string())),
                    None => Err("task was never started".to_string()),
                };
                match result {
                    Ok(out) if out.len() == spec.outputs.len() => out,
                    Ok(out) => {
                        let detail = format!(
                            "task produced {} outputs, {} declared",
                            out.len(),
                            spec.outputs.len()
                        );
                        return self.fail(idx, FailurePhase::Runtime, detail);
                    }
                    Err(e) => return self.fail(idx, FailurePhase::Runtime, e),
                }
            }
        };
        self.runtime[idx].scratch.clear();
        let c = self.cluster_of(idx);
        let bytes: u64 = outputs.iter().map(|o: &Vec<u8>| o.len() as u64).sum();
        let duration = bytes as f64 / self.bandwidth(c);
        self.runtime[idx].outputs = outputs;
        self.transition(idx, JobState::StagingOut, &format!("bytes={bytes}"));
        self.schedule_phase(
            idx,
            duration,
            &[FailurePhase::StageOut],
            EventKind::StageOutDone(idx),
        );
    }

    fn finish_stage_out(&mut self, idx: usize) {
        let c = self.cluster_of(idx);
        let outputs = std::mem::take(&mut self.runtime[idx].outputs);
        let spec = Arc::clone(&self.jobs[idx].spec);
        let mut refs = Vec::with_capacity(outputs.len());
        for (decl, bytes) in spec.outputs.iter().zip(outputs) {
            self.clusters[c].usage.bytes_staged_out += bytes.len() as u64;
            self.clusters[c].se.put(bytes.clone());
            let r = self.central.put(bytes);
            refs.push((decl.name.clone(), r));
        }
        self.release(idx, c);
        self.clusters[c].usage.jobs_run += 1;
        let detail = refs
            .iter()
            .map(|(n, r)| format!("{n}={r}"))
            .collect::<Vec<_>>()
            .join(" ");
        self.jobs[idx].outputs = refs;
        self.transition(idx, JobState::Done, &detail);
        self.dispatch();
    }

    fn release(&mut self, idx: usize, c: usize) {
        if let Some(p) = &self.jobs[idx].placement {
            let wn = p.wn_index;
            if self.clusters[c].free.insert(wn) {
                self.clusters[c].usage.busy_time += self.now - self.runtime[idx].wn_since;
            }
        }
    }

    fn fail(&mut self, idx: usize, phase: FailurePhase, detail: String) {
        if self.jobs[idx].state.is_terminal() {
            return;
        }
        let holds_wn = matches!(
            self.jobs[idx].state,
            JobState::StagingIn | JobState::Running | JobState::StagingOut
        );
        if holds_wn {
            let c = self.cluster_of(idx);
            self.release(idx, c);
            self.clusters[c].usage.failures += 1;
        }
        let rt = &mut self.runtime[idx];
        rt.scratch.clear();
        rt.outputs.clear();
        rt.task = None;
        self.jobs[idx].failure = Some(Failure {
            phase,
            detail: detail.clone(),
        });
        self.transition(idx, JobState::Failed, &format!("{phase}: {detail}"));
        self.dispatch();
    }

    /// Processes the next event. `Ok(None)` means the grid is idle with
    /// every job terminal.
    pub fn step(&mut self) -> Result<Option<f64>, GridError> {
        let Some(Reverse(ev)) = self.events.pop() else {
            if self.active > 0 {
                return Err(GridError::Deadlock {
                    active: self.active,
                    time: self.now,
                });
            }
            return Ok(None);
        };
        debug_assert!(ev.time >= self.now, "clock went backwards");
        self.now = ev.time;
        match ev.kind {
            EventKind::StageInDone(i) => self.finish_stage_in(i),
            EventKind::RunDone(i) => self.finish_run(i),
            EventKind::StageOutDone(i) => self.finish_stage_out(i),
            EventKind::Fail(i, phase) => {
                let detail = match phase {
                    FailurePhase::NodeLost => "worker node lost",
                    _ => "injected failure",
                };
                self.fail(i, phase, detail.to_string());
            }
            EventKind::Wake => {}
        }
        Ok(Some(self.now))
    }

    pub fn has_pending_events(&self) -> bool {
        !self.events.is_empty()
    }

    pub fn run_to_completion(&mut self) -> Result<UsageStats, GridError> {
        while self.step()?.is_some() {}
        Ok(self.usage())
    }

    /// Utilisation so far. Worker nodes still held count as busy up to now.
    pub fn usage(&self) -> UsageStats {
        let Some(start) = self.first_submit else {
            return UsageStats {
                clusters: self.clusters.iter().map(|c| c.usage.clone()).collect(),
                makespan: 0.0,
            };
        };
        let end = if self.active > 0 {
            self.now
        } else {
            self.last_finish
        };
        let elapsed = end - start;
        let held: HashMap<&str, f64> = self
            .jobs
            .iter()
            .enumerate()
            .filter(|(_, j)| {
                matches!(
                    j.state,
                    JobState::StagingIn | JobState::Running | JobState::StagingOut
                )
            })
            .fold(HashMap::new(), |mut acc, (i, j)| {
                let cid = j.cluster.as_deref().unwrap_or_default();
                *acc.entry(cid).or_insert(0.0) += self.now - self.runtime[i].wn_since;
                acc
            });
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                let mut u = c.usage.clone();
                u.busy_time += held.get(u.cluster_id.as_str()).copied().unwrap_or(0.0);
                u.idle_time = f64::from(u.wn_count) * elapsed - u.busy_time;
                u
            })
            .collect();
        UsageStats {
            clusters,
            makespan: elapsed,
        }
    }

    /// Central references produced by finished jobs, for callers that want
    /// to check exactly-once delivery.
    pub fn output_refs(&self) -> impl Iterator<Item = (&str, &BlobRef)> {
        self.jobs
            .iter()
            .flat_map(|j| j.outputs.iter().map(move |(_, r)| (j.job_id.as_str(), r)))
    }
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("now", &self.now)
            .field("jobs", &self.jobs.len())
            .field("active", &self.active)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lost_events_are_reported_as_deadlock() {
        let mut grid = Grid::new(GridConfig::new(GridTopology::uniform(1, 1))).unwrap();
        grid.submit(Arc::new(JobSpec::nominal("j", 10.0)), 1)
            .unwrap();
        grid.events.clear();
        assert_eq!(
            grid.step(),
            Err(GridError::Deadlock {
                active: 1,
                time: 0.0
            })
        );
    }

    #[test]
    fn idle_grid_steps_to_none() {
        let mut grid = Grid::new(GridConfig::new(GridTopology::uniform(1, 1))).unwrap();
        assert_eq!(grid.step(), Ok(None));
        assert_eq!(grid.usage().makespan, 0.0);
    }
}
