use std::collections::BTreeMap;
use std::fmt::Write as _;

use gridarena_core::orchestrator::StatusMap;

fn opt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "-".to_string(), |t| format!("{t:.1}"))
}

/// Plain-text table of a status map.
pub fn status_table(s: &StatusMap) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment {}  {}", s.experiment_id, s.state);
    let header = [
        "ROUND",
        "JOB",
        "MATCH",
        "STATE",
        "ATTEMPT",
        "CLUSTER",
        "SUBMITTED",
        "FINISHED",
        "FAILURE",
    ];
    let mut rows: Vec<[String; 9]> = vec![header.map(String::from)];
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (round, j) in s.jobs() {
        *counts.entry(j.state.to_string()).or_default() += 1;
        rows.push([
            round.to_string(),
            j.job_id.clone(),
            j.match_id.clone(),
            j.state.to_string(),
            j.attempt.to_string(),
            j.cluster.clone().unwrap_or_else(|| "-".into()),
            format!("{:.1}", j.submitted_at),
            opt_time(j.finished_at),
            j.failure.clone().unwrap_or_else(|| "-".into()),
        ]);
    }
    let widths: Vec<usize> = (0..9)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{v} {k}")).collect();
    let _ = writeln!(
        out,
        "{} jobs{}{}",
        rows.len() - 1,
        if summary.is_empty() { "" } else { ": " },
        summary.join(", ")
    );
    out
}
