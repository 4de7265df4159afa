use std::time::Duration;

use axum::body::Body;
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use gridarena_core::gridsim::{FailurePhase, GridTopology};
use gridarena_core::orchestrator::{EventRecord, ExperimentReport, ExperimentState, StatusMap};
use gridarena_core::tournament::ExperimentManifest;
use gridarena_core::AgentCharacter;
use gridarena_service::{Service, ServiceConfig};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn manifest(id: &str, agents: usize) -> ExperimentManifest {
    let mut m = ExperimentManifest::new(id, "rsp");
    m.games_per_match = 20;
    m.seed = 5;
    for k in 0..agents {
        m.agents
            .push(AgentCharacter::new(format!("ag{k}"), 40 + k as u64));
    }
    m
}

fn config(dir: &std::path::Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(dir);
    c.orchestrator.topology = GridTopology::uniform(2, 2);
    c.poll_interval = Duration::from_millis(1);
    c
}

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    body: String,
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<String>) -> Reply {
    call_with(app, method, uri, body, &[]).await
}

async fn call_with(
    app: &Router,
    method: Method,
    uri: &str,
    body: impl Into<String>,
    headers: &[(&str, &str)],
) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let res = app
        .clone()
        .oneshot(req.body(Body::from(body.into())).unwrap())
        .await
        .unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        headers,
        body: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, "").await
}

async fn post(app: &Router, uri: &str, body: impl Into<String>) -> Reply {
    call(app, Method::POST, uri, body).await
}

async fn status_of(app: &Router, id: &str) -> StatusMap {
    let r = get(app, &format!("/experiments/{id}")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    StatusMap::from_xml(&r.body).unwrap()
}

async fn wait_for(app: &Router, id: &str, pred: impl Fn(&StatusMap) -> bool) -> StatusMap {
    for _ in 0..2_000 {
        let s = status_of(app, id).await;
        if pred(&s) {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("experiment {id} never reached the expected state");
}

async fn wait_finished(app: &Router, id: &str) -> StatusMap {
    wait_for(app, id, |s| s.state.is_finished()).await
}

fn error_code(body: &str) -> &str {
    let start = body.find("code=\"").expect("error document") + 6;
    &body[start..start + body[start..].find('"').unwrap()]
}

/// Reads SSE messages until `done` holds for the last one.
async fn read_events(
    app: &Router,
    uri: &str,
    done: impl Fn(&EventRecord) -> bool,
) -> Vec<(u64, EventRecord)> {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.headers()[header::CONTENT_TYPE]
        .to_str()
        .unwrap()
        .starts_with("text/event-stream"));
    let mut body = res.into_body();
    let mut buf = String::new();
    let mut out = Vec::new();
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(20), body.frame())
            .await
            .expect("event stream stalled")
            .expect("event stream ended")
            .unwrap();
        let Ok(data) = frame.into_data() else {
            continue;
        };
        buf.push_str(std::str::from_utf8(&data).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let msg: String = buf.drain(..end + 2).collect();
            let (mut id, mut line) = (None, None);
            for l in msg.lines() {
                if let Some(v) = l.strip_prefix("id:") {
                    id = Some(v.trim().parse::<u64>().unwrap());
                } else if let Some(v) = l.strip_prefix("data:") {
                    line = Some(EventRecord::parse_line(v.trim()).unwrap());
                }
            }
            if let (Some(id), Some(rec)) = (id, line) {
                let stop = done(&rec);
                out.push((id, rec));
                if stop {
                    return out;
                }
            }
        }
    }
}

fn finished_event(id: &str) -> impl Fn(&EventRecord) -> bool + '_ {
    move |e| {
        e.experiment_id == id
            && e.job_id().is_none()
            && (e.new_state == "COMPLETED" || e.new_state == "FAILED")
    }
}

fn fold(id: &str, events: &[(u64, EventRecord)]) -> StatusMap {
    let mut m = StatusMap::created(id);
    events
        .iter()
        .filter(|(_, e)| e.experiment_id == id)
        .for_each(|(_, e)| m.apply(e));
    m
}

#[tokio::test]
async fn one_agent_manifest_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    let r = post(&app, "/experiments", manifest("solo", 1).to_xml()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&r.body), "validation");
    assert!(r.body.contains("&gt;= 2 agents"), "{}", r.body);
    assert!(!dir.path().join("solo").exists());
}

#[tokio::test]
async fn malformed_body_is_a_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    let r = post(&app, "/experiments", "<experiment").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&r.body), "bad_request");
}

#[tokio::test]
async fn create_lists_and_refuses_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    let empty = get(&app, "/experiments").await;
    assert!(empty.body.contains("<experiments/>"));

    let r = post(&app, "/experiments", manifest("e1", 4).to_xml()).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    assert_eq!(r.headers[header::LOCATION], "/experiments/e1");
    assert!(r.headers[header::CONTENT_TYPE]
        .to_str()
        .unwrap()
        .starts_with("application/xml"));
    let s = StatusMap::from_xml(&r.body).unwrap();
    assert_eq!((s.state, s.rounds.len()), (ExperimentState::Created, 0));
    assert!(dir.path().join("e1/manifest.xml").is_file());

    let list = get(&app, "/experiments").await.body;
    assert!(
        list.contains("id=\"e1\"")
            && list.contains("state=\"CREATED\"")
            && list.contains("matches=\"6\"")
    );

    let again = post(&app, "/experiments", manifest("e1", 4).to_xml()).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
    assert_eq!(error_code(&again.body), "conflict");
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    post(&app, "/experiments", manifest("e1", 2).to_xml()).await;
    for uri in [
        "/experiments/nope",
        "/experiments/nope/jobs",
        "/experiments/nope/report",
        "/jobs/nope-j000001",
        "/jobs/e1-j000099",
        "/jobs/garbage",
        "/no/such/route",
    ] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(error_code(&r.body), "not_found", "{uri}");
    }
    let r = post(&app, "/experiments/nope/start", "").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn token_is_required_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.token = Some("s3cret".into());
    let app = Service::open(c).unwrap().router();
    let r = get(&app, "/experiments").await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(error_code(&r.body), "unauthorized");
    let wrong = call_with(
        &app,
        Method::GET,
        "/experiments",
        "",
        &[("x-api-token", "nope")],
    )
    .await;
    assert_eq!(wrong.status, StatusCode::UNAUTHORIZED);
    let bearer = call_with(
        &app,
        Method::GET,
        "/experiments",
        "",
        &[("authorization", "Bearer s3cret")],
    )
    .await;
    assert_eq!(bearer.status, StatusCode::OK);
    let plain = call_with(
        &app,
        Method::GET,
        "/experiments",
        "",
        &[("x-api-token", "s3cret")],
    )
    .await;
    assert_eq!(plain.status, StatusCode::OK);
}

#[tokio::test]
async fn lifecycle_actions_are_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    post(&app, "/experiments", manifest("e1", 2).to_xml()).await;
    let r = post(&app, "/experiments/e1/pause", "").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = get(&app, "/experiments/e1/report").await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let r = post(&app, "/experiments/e1/start", "").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    wait_finished(&app, "e1").await;
    let r = post(&app, "/experiments/e1/start", "").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = post(&app, "/jobs/e1-j000001/resubmit", "").await;
    assert_eq!(
        r.status,
        StatusCode::CONFLICT,
        "DONE jobs cannot be resubmitted"
    );
}

#[tokio::test]
async fn completed_job_has_six_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    post(&app, "/experiments", manifest("e1", 3).to_xml()).await;
    post(&app, "/experiments/e1/start", "").await;
    let s = wait_finished(&app, "e1").await;
    assert_eq!(s.state, ExperimentState::Completed);

    let r = get(&app, "/jobs/e1-j000001").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.body.contains("state=\"DONE\""));
    assert_eq!(r.body.matches("<at ").count(), 6, "{}", r.body);
    for st in [
        "SUBMITTED",
        "MATCHED",
        "STAGING_IN",
        "RUNNING",
        "STAGING_OUT",
        "DONE",
    ] {
        assert!(r.body.contains(&format!("state=\"{st}\"")), "{st}");
    }

    let done = get(&app, "/experiments/e1/jobs?state=DONE").await.body;
    assert_eq!(done.matches("<job ").count(), 3);
    let failed = get(&app, "/experiments/e1/jobs?state=FAILED").await.body;
    assert_eq!(failed.matches("<job ").count(), 0);
    let all = get(&app, "/experiments/e1/jobs").await.body;
    assert_eq!(all.matches("<job ").count(), 3);
    let bad = get(&app, "/experiments/e1/jobs?state=SLEEPING").await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn report_and_usage_after_completion() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    post(&app, "/experiments", manifest("e1", 4).to_xml()).await;
    post(&app, "/experiments/e1/start", "").await;
    wait_finished(&app, "e1").await;

    let r = get(&app, "/experiments/e1/report").await;
    assert_eq!(r.status, StatusCode::OK);
    let report = ExperimentReport::from_xml(&r.body).unwrap();
    assert_eq!(report.totals.total_matches, 6);
    assert_eq!(report.standings.rows.len(), 4);
    assert!(report.failures.is_empty());
    let again = get(&app, "/experiments/e1/report").await;
    assert_eq!(again.body, r.body, "repeated GETs are identical");

    let text = get(&app, "/experiments/e1/report?format=text").await;
    assert!(text.headers[header::CONTENT_TYPE]
        .to_str()
        .unwrap()
        .starts_with("text/plain"));
    assert!(text.body.contains("ag0"));

    let usage = get(&app, "/grid/usage").await.body;
    assert!(usage.contains("<grid-usage>") && usage.contains("id=\"e1\""));
    assert_eq!(usage.matches("<cluster ").count(), 2);
    let jobs_run: u32 = usage
        .split("jobs_run=\"")
        .skip(1)
        .map(|s| s[..s.find('"').unwrap()].parse::<u32>().unwrap())
        .sum();
    assert_eq!(jobs_run, 6);
}

#[tokio::test]
async fn event_stream_replays_to_the_status_map() {
    let dir = tempfile::tempdir().unwrap();
    let app = Service::open(config(dir.path())).unwrap().router();
    post(&app, "/experiments", manifest("three", 3).to_xml()).await;
    post(&app, "/experiments", manifest("other", 2).to_xml()).await;
    let stream = tokio::spawn({
        let app = app.clone();
        async move { read_events(&app, "/events?since=0", finished_event("three")).await }
    });
    post(&app, "/experiments/three/start", "").await;
    post(&app, "/experiments/other/start", "").await;
    let events = stream.await.unwrap();
    let status = wait_finished(&app, "three").await;

    let seqs: Vec<u64> = events.iter().map(|(s, _)| *s).collect();
    assert_eq!(
        seqs,
        (1..=seqs.len() as u64).collect::<Vec<_>>(),
        "gap-free, in order"
    );
    let mine: Vec<u64> = events
        .iter()
        .filter(|(_, e)| e.experiment_id == "three")
        .map(|(_, e)| e.seq)
        .collect();
    assert!(mine.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(fold("three", &events), status);
    let jobs: std::collections::BTreeSet<_> = events
        .iter()
        .filter_map(|(_, e)| e.job_id())
        .filter(|j| j.starts_with("three"))
        .collect();
    assert_eq!(jobs.len(), 3);

    // Resuming from the middle yields exactly the tail.
    let cut = seqs.len() as u64 / 2;
    let tail = read_events(
        &app,
        &format!("/events?since={cut}"),
        finished_event("three"),
    )
    .await;
    assert_eq!(tail.first().unwrap().0, cut + 1);
    assert_eq!(tail[..], events[cut as usize..]);
    let via_header = {
        let res = app
            .clone()
            .oneshot(
                Request::get("/events")
                    .header("last-event-id", cut.to_string())
                    .body(Body::empty())
                    .unwrap(),
            )
            .await
            .unwrap();
        let mut body = res.into_body();
        let frame = body.frame().await.unwrap().unwrap().into_data().unwrap();
        String::from_utf8(frame.to_vec()).unwrap()
    };
    assert!(
        via_header.starts_with(&format!("id: {}\n", cut + 1))
            || via_header.contains(&format!("id: {}\n", cut + 1)),
        "{via_header}"
    );
}

#[tokio::test]
async fn restart_serves_existing_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let app = Service::open(config(dir.path())).unwrap().router();
        post(&app, "/experiments", manifest("kept", 3).to_xml()).await;
        post(&app, "/experiments/kept/start", "").await;
        wait_finished(&app, "kept").await
    };
    let app = Service::open(config(dir.path())).unwrap().router();
    assert_eq!(status_of(&app, "kept").await, before);
    let events = read_events(&app, "/events?since=0", finished_event("kept")).await;
    assert_eq!(fold("kept", &events), before);
    let r = get(&app, "/experiments/kept/report").await;
    assert_eq!(r.status, StatusCode::OK);
}

#[tokio::test]
async fn failed_job_can_be_resubmitted_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.orchestrator
        .failures
        .target("man-j000001", FailurePhase::StageIn);
    // Automatic resubmission is far away in virtual time and the
    // background poll slow, leaving a window for the manual request.
    c.orchestrator.backoff = 1e6;
    c.orchestrator.events_per_poll = 1;
    c.poll_interval = Duration::from_millis(400);
    let app = Service::open(c).unwrap().router();
    post(&app, "/experiments", manifest("man", 2).to_xml()).await;
    post(&app, "/experiments/man/start", "").await;
    wait_for(&app, "man", |s| {
        s.job("man-j000001").is_some_and(|j| j.state.is_terminal())
    })
    .await;

    let r = post(&app, "/jobs/man-j000001/resubmit", "").await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.body);
    assert!(
        r.body.contains("job_id=\"man-j000002\"") && r.body.contains("attempt=\"2\""),
        "{}",
        r.body
    );
    let again = post(&app, "/jobs/man-j000001/resubmit", "").await;
    assert_eq!(again.status, StatusCode::CONFLICT);

    let s = wait_finished(&app, "man").await;
    assert_eq!(s.state, ExperimentState::Completed);
    assert_eq!(
        s.job("man-j000001").unwrap().failure.as_deref(),
        Some("stage_in")
    );
    assert_eq!(s.jobs().count(), 2);
}

#[tokio::test]
async fn pause_freezes_progress_until_start() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.orchestrator.events_per_poll = 1;
    c.poll_interval = Duration::from_millis(10);
    let app = Service::open(c).unwrap().router();
    post(&app, "/experiments", manifest("p", 4).to_xml()).await;
    post(&app, "/experiments/p/start", "").await;
    let r = post(&app, "/experiments/p/pause", "").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let frozen = status_of(&app, "p").await;
    assert_eq!(frozen.state, ExperimentState::Paused);
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(status_of(&app, "p").await, frozen);
    post(&app, "/experiments/p/start", "").await;
    assert_eq!(
        wait_finished(&app, "p").await.state,
        ExperimentState::Completed
    );
}
