use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use gridarena_core::orchestrator::{ExperimentReport, ExperimentState, StatusMap};
use gridarena_core::tournament::{experiment_totals, Workspace};

fn gridarena(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridarena"))
        .args(args)
        .current_dir(dir)
        .env_remove("GRIDARENA_URL")
        .env_remove("GRIDARENA_TOKEN")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gridarena(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = gridarena(dir, args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn demo(dir: &Path, id: &str, agents: usize) {
    ok(
        dir,
        &["new", id, "--game", "rsp", "--games", "10", "--seed", "3"],
    );
    for k in 0..agents {
        ok(dir, &["add-agent", &format!("agent{k}"), "--alpha", "0.2"]);
    }
}

#[test]
fn new_add_agent_export_gives_a_valid_workspace() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path(), "three", 3);
    let out = ok(dir.path(), &["export", "--out", "ws"]);
    assert!(out.contains("3 agents, 3 matches"), "{out}");
    let (m, agents) = Workspace::at(dir.path().join("ws")).load().unwrap();
    assert_eq!(m.agents.len(), 3);
    assert_eq!(agents.len(), 3);
    assert!(m.agents.iter().all(|a| a.td_params.alpha == 0.2));
    let seeds: std::collections::BTreeSet<_> = m.agents.iter().map(|a| a.network_seed).collect();
    assert_eq!(seeds.len(), 3, "default network seeds differ per agent");
}

#[test]
fn manifest_errors_are_reported_with_a_code() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["new", "e"]);
    let err = fails(dir.path(), &["new", "e"]);
    assert!(err.starts_with("error[conflict]"), "{err}");
    ok(dir.path(), &["add-agent", "a"]);
    let err = fails(dir.path(), &["add-agent", "a"]);
    assert!(err.starts_with("error[conflict]"), "{err}");
    let err = fails(dir.path(), &["export", "--out", "ws"]);
    assert!(
        err.starts_with("error[validation]") && err.contains(">= 2 agents"),
        "{err}"
    );
    assert!(!dir.path().join("ws").exists());
    let err = fails(dir.path(), &["--xml", "add-agent", "b", "--gamma", "7"]);
    assert!(err.contains("<error code=\"validation\""), "{err}");
    let err = fails(dir.path(), &["new", "x", "--game", "chess", "-m", "x.xml"]);
    assert!(err.starts_with("error[validation]"), "{err}");
}

#[test]
fn local_run_of_the_six_agent_demo() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path(), "demo", 6);
    let out = ok(
        dir.path(),
        &[
            "--local",
            "--xml",
            "run",
            "manifest.xml",
            "--quiet",
            "--backend",
            "parallel",
        ],
    );
    let report = ExperimentReport::from_xml(&out).unwrap();
    let (m, _) = Workspace::at(dir.path().join("demo")).load().unwrap();
    assert_eq!(report.state, ExperimentState::Completed);
    assert_eq!(report.totals, experiment_totals(&m));
    assert_eq!(report.standings.rows.len(), 6);

    let table = ok(dir.path(), &["--local", "status", "demo"]);
    assert!(table.starts_with("experiment demo  COMPLETED"), "{table}");
    assert!(table.trim_end().ends_with("15 jobs: 15 DONE"), "{table}");
    let xml = ok(dir.path(), &["--local", "--xml", "status", "demo"]);
    assert_eq!(
        xml,
        std::fs::read_to_string(dir.path().join("demo/status.xml")).unwrap()
    );
    let text = ok(dir.path(), &["--local", "report", "demo"]);
    assert!(text.contains("agent0"));
    let watched = ok(
        dir.path(),
        &["--local", "watch", "demo", "--interval-ms", "1"],
    );
    assert!(watched.contains("COMPLETED"));
    let done = ok(
        dir.path(),
        &["--local", "--xml", "jobs", "demo", "--state", "DONE"],
    );
    assert_eq!(done.matches("<job ").count(), 15);

    // Rerunning a finished workspace just prints its report.
    let again = ok(dir.path(), &["--local", "--xml", "run", "demo", "--quiet"]);
    assert_eq!(ExperimentReport::from_xml(&again).unwrap(), report);
}

#[test]
fn local_run_prints_events_and_survives_failures() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path(), "flaky", 4);
    let out = ok(
        dir.path(),
        &[
            "--local",
            "run",
            "manifest.xml",
            "--failure-rate",
            "0.3",
            "--failure-seed",
            "9",
        ],
    );
    assert!(out.lines().any(|l| l.contains(" DONE ")));
    let s =
        StatusMap::from_xml(&std::fs::read_to_string(dir.path().join("flaky/status.xml")).unwrap())
            .unwrap();
    assert!(s.state.is_finished());
    let failed = s.jobs().filter(|(_, j)| j.failure.is_some()).count();
    assert!(failed > 0, "seed 9 injects at least one failure");
}

#[test]
fn report_before_finish_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path(), "early", 2);
    ok(dir.path(), &["export", "--out", "early"]);
    let err = fails(dir.path(), &["--local", "report", "early"]);
    assert!(err.starts_with("error[conflict]"), "{err}");
    let err = fails(dir.path(), &["--local", "list"]);
    assert!(err.starts_with("error[bad_request]"), "{err}");
}

#[test]
fn unreachable_service_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(dir.path(), &["--url", "http://127.0.0.1:9", "status", "x"]);
    assert!(err.starts_with("error[unreachable]"), "{err}");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(dir: &Path, token: &str) -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_gridarena"))
        .args([
            "serve",
            "--addr",
            "127.0.0.1:0",
            "--data-dir",
            "served",
            "--poll-ms",
            "1",
            "--token",
            token,
        ])
        .current_dir(dir)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listen line")
        .to_string();
    (Server(child), url)
}

#[test]
fn remote_commands_mirror_the_service() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path(), "remote", 4);
    let (_server, url) = serve(dir.path(), "t0k");
    let remote = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_gridarena"))
            .args(args)
            .current_dir(dir.path())
            .env("GRIDARENA_URL", &url)
            .env("GRIDARENA_TOKEN", "t0k")
            .output()
            .unwrap()
    };

    let out = remote(&["run", "manifest.xml"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("remote") || l.contains(" remote ")));
    assert!(stdout.contains("agent3"));

    let xml = String::from_utf8(remote(&["--xml", "status", "remote"]).stdout).unwrap();
    assert_eq!(
        xml,
        std::fs::read_to_string(dir.path().join("served/remote/status.xml")).unwrap(),
        "CLI XML is the document the service persists and serves"
    );
    let report = String::from_utf8(remote(&["--xml", "report", "remote"]).stdout).unwrap();
    let report = ExperimentReport::from_xml(&report).unwrap();
    assert_eq!(report.totals.total_matches, 6);
    let list = String::from_utf8(remote(&["list"]).stdout).unwrap();
    assert!(list.contains("id=\"remote\"") && list.contains("COMPLETED"));
    let usage = String::from_utf8(remote(&["usage"]).stdout).unwrap();
    assert!(usage.contains("<grid-usage>"));
    let jobs =
        String::from_utf8(remote(&["--xml", "jobs", "remote", "--state", "DONE"]).stdout).unwrap();
    assert_eq!(jobs.matches("<job ").count(), 6);

    let out = remote(&["resubmit", "remote-j000001"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[conflict]"));
    let out = remote(&["pause", "remote"]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[conflict]"));

    let bad = Command::new(env!("CARGO_BIN_EXE_gridarena"))
        .args(["--url", &url, "--token", "wrong", "list"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error[unauthorized]"));
}
