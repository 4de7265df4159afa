//! HTTP front end for the orchestrator.
//!
//! Bodies are XML, using the same documents the orchestrator persists
//! (manifest.xml, status.xml, report.xml). Errors are a single
//! `<error code message>` element. `GET /events` is a server-sent event
//! stream, resumable with `?since=` or `Last-Event-ID`.

mod actor;
mod error;
mod hub;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::stream::{Stream, StreamExt};
use gridarena_core::gridsim::{GridTopology, JobState};
use gridarena_core::orchestrator::OrchestratorConfig;
use gridarena_core::tournament::{generate_experiment, ExperimentManifest};
use gridarena_core::XmlWriter;
use serde::Deserialize;

pub use actor::ExperimentHandle;
pub use error::ApiError;
pub use hub::{EventHub, HubEvent};

pub(crate) const XML: &str = "application/xml; charset=utf-8";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// One sub-directory per experiment workspace.
    pub data_dir: PathBuf,
    /// When set, every request must present it as `Authorization: Bearer`
    /// or `X-Api-Token`.
    pub token: Option<String>,
    pub orchestrator: OrchestratorConfig,
    /// Pause between background polls of a running experiment.
    pub poll_interval: Duration,
    /// Live events buffered per subscriber before it is cut off.
    pub subscriber_buffer: usize,
    /// Log lines returned by `GET /jobs/{id}`.
    pub log_tail: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            token: None,
            orchestrator: OrchestratorConfig::new(GridTopology::uniform(4, 8)),
            poll_interval: Duration::from_millis(20),
            subscriber_buffer: 1024,
            log_tail: 100,
        }
    }
}

struct Inner {
    config: ServiceConfig,
    experiments: RwLock<BTreeMap<String, ExperimentHandle>>,
    /// Held from the existence check until the new experiment is registered.
    creating: tokio::sync::Mutex<()>,
    hub: Arc<EventHub>,
}

/// Shared state behind the router; cheap to clone.
#[derive(Clone)]
pub struct Service(Arc<Inner>);

impl Service {
    /// Serves every valid workspace already under `data_dir`. Workspaces
    /// that fail to open are skipped with a warning.
    pub fn open(config: ServiceConfig) -> io::Result<Self> {
        fs::create_dir_all(&config.data_dir)?;
        let svc = Service(Arc::new(Inner {
            hub: Arc::new(EventHub::new(config.subscriber_buffer)),
            experiments: RwLock::new(BTreeMap::new()),
            creating: tokio::sync::Mutex::new(()),
            config,
        }));
        let mut dirs: Vec<_> = fs::read_dir(&svc.0.config.data_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("manifest.xml").is_file())
            .collect();
        dirs.sort_by_key(|e| e.file_name());
        for dir in dirs {
            let id = dir.file_name().to_string_lossy().into_owned();
            match svc.spawn(&id) {
                Ok(h) => {
                    svc.0.experiments.write().expect("poisoned").insert(id, h);
                }
                Err(e) => log::warn!("not serving {}: {e}", dir.path().display()),
            }
        }
        Ok(svc)
    }

    fn spawn(&self, id: &str) -> Result<ExperimentHandle, ApiError> {
        let c = &self.0.config;
        ExperimentHandle::spawn(
            id.to_string(),
            c.data_dir.join(id),
            c.orchestrator.clone(),
            Arc::clone(&self.0.hub),
            c.poll_interval,
        )
        .map_err(ApiError::from)
    }

    pub fn hub(&self) -> &EventHub {
        &self.0.hub
    }

    pub fn experiment(&self, id: &str) -> Result<ExperimentHandle, ApiError> {
        self.0
            .experiments
            .read()
            .expect("poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("experiment", id))
    }

    fn handles(&self) -> Vec<ExperimentHandle> {
        self.0
            .experiments
            .read()
            .expect("poisoned")
            .values()
            .cloned()
            .collect()
    }

    /// Job ids are `<experiment>-j<serial>`.
    fn experiment_of_job(&self, job_id: &str) -> Result<ExperimentHandle, ApiError> {
        job_id
            .rsplit_once("-j")
            .and_then(|(exp, _)| self.experiment(exp).ok())
            .ok_or_else(|| ApiError::not_found("job", job_id))
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route(
                "/experiments",
                post(create_experiment).get(list_experiments),
            )
            .route("/experiments/{id}", get(get_experiment))
            .route("/experiments/{id}/start", post(start_experiment))
            .route("/experiments/{id}/pause", post(pause_experiment))
            .route("/experiments/{id}/jobs", get(list_jobs))
            .route("/experiments/{id}/report", get(get_report))
            .route("/jobs/{id}", get(get_job))
            .route("/jobs/{id}/resubmit", post(resubmit_job))
            .route("/grid/usage", get(grid_usage))
            .route("/events", get(events))
            .fallback(|| async {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
            })
            .layer(middleware::from_fn_with_state(self.clone(), authenticate))
            .with_state(self.clone())
    }
}

/// Serves `service` on `listener` until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, service: Service) -> io::Result<()> {
    axum::serve(listener, service.router()).await
}

async fn authenticate(State(svc): State<Service>, req: Request, next: Next) -> Response {
    if let Some(token) = &svc.0.config.token {
        let h = req.headers();
        let bearer = h
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        let plain = h.get("x-api-token").and_then(|v| v.to_str().ok());
        if bearer != Some(token.as_str()) && plain != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

fn xml(body: String) -> Response {
    ([(header::CONTENT_TYPE, XML)], body).into_response()
}

async fn create_experiment(State(svc): State<Service>, body: String) -> Result<Response, ApiError> {
    let manifest = ExperimentManifest::from_xml(&body)
        .map_err(|e| ApiError::bad_request(format!("manifest: {e}")))?;
    let violations = manifest.violations();
    if !violations.is_empty() {
        return Err(ApiError::validation(violations));
    }
    let id = manifest.experiment_id.clone();
    let root = svc.0.config.data_dir.join(&id);
    let _creating = svc.0.creating.lock().await;
    if svc.experiment(&id).is_ok() || root.exists() {
        return Err(ApiError::conflict(format!(
            "experiment `{id}` already exists"
        )));
    }
    let generated = {
        let m = manifest.clone();
        let root = root.clone();
        tokio::task::spawn_blocking(move || generate_experiment(&m, &root))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
    };
    generated.map_err(|e| ApiError::internal(e.to_string()))?;
    let handle = {
        let svc = svc.clone();
        let id = id.clone();
        tokio::task::spawn_blocking(move || svc.spawn(&id))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    };
    svc.0
        .experiments
        .write()
        .expect("poisoned")
        .insert(id.clone(), handle.clone());
    let status = handle.call(|o| o.status().to_xml()).await?;
    Ok((
        StatusCode::CREATED,
        [
            (header::CONTENT_TYPE, XML.to_string()),
            (header::LOCATION, format!("/experiments/{id}")),
        ],
        status,
    )
        .into_response())
}

async fn list_experiments(State(svc): State<Service>) -> Result<Response, ApiError> {
    let mut rows = Vec::new();
    for h in svc.handles() {
        let row = h
            .call(|o| {
                let m = o.manifest();
                let p = o.progress();
                vec![
                    ("id", m.experiment_id.clone()),
                    ("state", o.state().to_string()),
                    ("game", m.game_id.clone()),
                    ("agents", m.agents.len().to_string()),
                    ("games_per_match", m.games_per_match.to_string()),
                    ("round", o.current_round().to_string()),
                    ("matches", p.total.to_string()),
                    ("collected", p.collected.to_string()),
                    ("in_flight", p.in_flight.to_string()),
                    ("awaiting_resubmit", p.awaiting_resubmit.to_string()),
                    ("forfeited", p.forfeited.to_string()),
                ]
            })
            .await?;
        rows.push((row, h.last_error()));
    }
    let mut w = XmlWriter::new();
    if rows.is_empty() {
        w.empty("experiments", &[]);
    } else {
        w.open("experiments", &[]);
        for (mut attrs, err) in rows {
            if let Some(e) = err {
                attrs.push(("error", e));
            }
            w.empty("experiment", &attrs);
        }
        w.close("experiments");
    }
    Ok(xml(w.finish()))
}

async fn get_experiment(
    State(svc): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(xml(svc
        .experiment(&id)?
        .call(|o| o.status().to_xml())
        .await?))
}

async fn start_experiment(
    State(svc): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let h = svc.experiment(&id)?;
    Ok(xml(h
        .call(|o| o.start().map(|_| o.status().to_xml()))
        .await??))
}

async fn pause_experiment(
    State(svc): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let h = svc.experiment(&id)?;
    Ok(xml(h
        .call(|o| o.pause().map(|_| o.status().to_xml()))
        .await??))
}

#[derive(Deserialize)]
struct JobFilter {
    state: Option<String>,
}

async fn list_jobs(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<JobFilter>,
) -> Result<Response, ApiError> {
    let state = match q.state.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse::<JobState>().map_err(ApiError::bad_request)?),
    };
    Ok(xml(svc
        .experiment(&id)?
        .call(move |o| o.status().jobs_to_xml(state))
        .await?))
}

async fn get_job(State(svc): State<Service>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let tail = svc.0.config.log_tail;
    let job = id.clone();
    let detail = svc
        .experiment_of_job(&id)?
        .call(move |o| o.job_detail(&job))
        .await?
        .ok_or_else(|| ApiError::not_found("job", &id))?;
    let mut detail = detail;
    let skip = detail.log.len().saturating_sub(tail);
    detail.log.drain(..skip);
    Ok(xml(detail.to_xml()))
}

async fn resubmit_job(
    State(svc): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let job = id.clone();
    let detail = svc
        .experiment_of_job(&id)?
        .call(move |o| {
            o.resubmit_job(&job)
                .map(|new_id| o.job_detail(&new_id).expect("just submitted"))
        })
        .await??;
    Ok((
        StatusCode::ACCEPTED,
        [(header::CONTENT_TYPE, XML)],
        detail.to_xml(),
    )
        .into_response())
}

async fn grid_usage(State(svc): State<Service>) -> Result<Response, ApiError> {
    let mut w = XmlWriter::new();
    let handles = svc.handles();
    if handles.is_empty() {
        w.empty("grid-usage", &[]);
        return Ok(xml(w.finish()));
    }
    w.open("grid-usage", &[]);
    for h in handles {
        let (state, usage) = h.call(|o| (o.state(), o.grid().usage())).await?;
        w.open(
            "experiment",
            &[("id", h.id().to_string()), ("state", state.to_string())],
        );
        usage.write(&mut w);
        w.close("experiment");
    }
    w.close("grid-usage");
    Ok(xml(w.finish()))
}

#[derive(Deserialize)]
struct ReportFormat {
    format: Option<String>,
}

async fn get_report(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<ReportFormat>,
) -> Result<Response, ApiError> {
    let report = svc.experiment(&id)?.call(|o| o.finalize()).await??;
    match q.format.as_deref() {
        None | Some("xml") => Ok(xml(report.to_xml())),
        Some("text") => Ok((
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            report.to_text(),
        )
            .into_response()),
        Some(other) => Err(ApiError::bad_request(format!(
            "unknown report format `{other}`"
        ))),
    }
}

#[derive(Deserialize)]
struct Since {
    since: Option<u64>,
}

/// Each SSE message carries the hub sequence number as its id and one
/// event-log line (`seq experiment_id job_id old_state new_state timestamp
/// ...`) as its data.
async fn events(
    State(svc): State<Service>,
    headers: HeaderMap,
    Query(q): Query<Since>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let since = match q.since {
        Some(s) => s,
        None => match headers.get("last-event-id") {
            Some(v) => v
                .to_str()
                .ok()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be a sequence number"))?,
            None => 0,
        },
    };
    let stream = svc.hub().subscribe(since).map(|ev| {
        Ok(Event::default()
            .id(ev.seq.to_string())
            .event("transition")
            .data(ev.record.to_line()))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
