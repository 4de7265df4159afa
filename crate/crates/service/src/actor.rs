use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use gridarena_core::orchestrator::{
    ExperimentState, Orchestrator, OrchestratorConfig, OrchestratorError,
};
use tokio::sync::oneshot;

use crate::error::ApiError;
use crate::hub::EventHub;

type Job = Box<dyn FnOnce(&mut Orchestrator) + Send>;

/// Handle to the thread that owns one experiment's orchestrator. Every
/// operation, read or write, runs on that thread in arrival order; while
/// the experiment is RUNNING the thread polls between requests.
#[derive(Clone)]
pub struct ExperimentHandle {
    id: String,
    tx: mpsc::Sender<Job>,
    last_error: Arc<Mutex<Option<String>>>,
}

impl ExperimentHandle {
    /// Opens the workspace at `root` on a new thread. Historical events are
    /// published to `hub` before this returns.
    pub fn spawn(
        id: String,
        root: PathBuf,
        config: OrchestratorConfig,
        hub: Arc<EventHub>,
        poll_interval: Duration,
    ) -> Result<Self, OrchestratorError> {
        let (tx, rx) = mpsc::channel::<Job>();
        let (ready_tx, ready_rx) = mpsc::channel();
        let last_error = Arc::new(Mutex::new(None));
        let errors = Arc::clone(&last_error);
        thread::Builder::new()
            .name(format!("exp-{id}"))
            .spawn(move || {
                let mut orch = match Orchestrator::open(&root, config) {
                    Ok(o) => o,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                hub.publish(orch.events().iter().cloned());
                let mut published = orch.events().len();
                let _ = ready_tx.send(Ok(()));
                // Requests never postpone the next poll, so a busy client
                // cannot starve a running experiment.
                let mut next_poll = Instant::now();
                loop {
                    let running = orch.state() == ExperimentState::Running;
                    let next = if running {
                        match rx.recv_timeout(next_poll.saturating_duration_since(Instant::now())) {
                            Ok(job) => Some(job),
                            Err(RecvTimeoutError::Timeout) => None,
                            Err(RecvTimeoutError::Disconnected) => break,
                        }
                    } else {
                        match rx.recv() {
                            Ok(job) => Some(job),
                            Err(_) => break,
                        }
                    };
                    match next {
                        Some(job) => {
                            job(&mut orch);
                            if !running {
                                next_poll = Instant::now();
                            }
                        }
                        None => {
                            next_poll = Instant::now() + poll_interval;
                            if let Err(e) = orch.poll() {
                                log::error!("{}: {e}", orch.manifest().experiment_id);
                                *errors.lock().expect("poisoned") = Some(e.to_string());
                                if orch.state() == ExperimentState::Running {
                                    let _ = orch.pause();
                                }
                            }
                        }
                    }
                    hub.publish(orch.events()[published..].iter().cloned());
                    published = orch.events().len();
                }
            })
            .map_err(|e| {
                OrchestratorError::Persistence(format!("cannot start experiment thread: {e}"))
            })?;
        ready_rx.recv().map_err(|_| {
            OrchestratorError::Corrupt("experiment thread died while opening".into())
        })??;
        Ok(Self { id, tx, last_error })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The last error raised while polling in the background, if any.
    pub fn last_error(&self) -> Option<String> {
        self.last_error.lock().expect("poisoned").clone()
    }

    /// Runs `f` on the owning thread and returns its result.
    pub async fn call<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Orchestrator) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.tx
            .send(Box::new(move |o| {
                let _ = tx.send(f(o));
            }))
            .map_err(|_| {
                ApiError::internal(format!("experiment {} is not being served", self.id))
            })?;
        rx.await
            .map_err(|_| ApiError::internal(format!("experiment {} stopped responding", self.id)))
    }
}
