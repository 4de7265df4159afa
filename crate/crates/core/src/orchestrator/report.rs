use std::fmt::Write as _;

use super::status::ExperimentState;
use crate::gridsim::UsageStats;
use crate::tournament::{totals_for, ExperimentManifest, ExperimentTotals, Standings};
use crate::xml::{self, fmt_f64, XmlError, XmlWriter};

/// Nominal virtual time of one game; a 100-game match takes one minute.
pub const SECONDS_PER_GAME: f64 = 0.6;

/// Published reference figures for a 126-agent, 100-games-per-match run,
/// carried into every report for comparison.
pub const REFERENCE_MINUTES_PER_MATCH: f64 = 1.0;
pub const REFERENCE_SEQUENTIAL_HOURS: f64 = 26_000.0;
pub const REFERENCE_GRID_DAYS: f64 = 24.0;
pub const REFERENCE_SPEEDUP: f64 = 50.0;

/// Time a single worker would need to play every match back to back.
pub fn estimate_sequential_time(manifest: &ExperimentManifest, per_match_minutes: f64) -> f64 {
    let totals = crate::tournament::experiment_totals(manifest);
    totals.total_matches as f64 * per_match_minutes * 60.0
}

pub fn speedup(sequential: f64, makespan: f64) -> Option<f64> {
    (sequential > 0.0 && makespan > 0.0).then(|| sequential / makespan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Virtual seconds.
    pub makespan: f64,
    pub estimated_sequential: f64,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEntry {
    pub match_id: String,
    pub job_id: String,
    pub attempt: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment_id: String,
    pub state: ExperimentState,
    pub standings: Standings,
    pub totals: ExperimentTotals,
    pub timing: Timing,
    pub usage: UsageStats,
    pub failures: Vec<FailureEntry>,
    pub resubmissions: u64,
    pub permanently_failed: Vec<String>,
}

impl ExperimentReport {
    pub fn to_xml(&self) -> String {
        let t = &self.totals;
        let mut w = XmlWriter::new();
        w.open(
            "report",
            &[
                ("experiment", self.experiment_id.clone()),
                ("state", self.state.to_string()),
            ],
        );
        w.empty(
            "totals",
            &[
                ("agents", t.agents.to_string()),
                ("games_per_match", t.games_per_match.to_string()),
                ("matches", t.total_matches.to_string()),
                ("matches_per_agent", t.matches_per_agent.to_string()),
                ("unique_games", t.unique_games.to_string()),
                ("games_per_agent", t.per_agent_games.to_string()),
                ("participation_games", t.participation_games.to_string()),
            ],
        );
        let mut timing = vec![
            ("makespan", fmt_f64(self.timing.makespan)),
            (
                "estimated_sequential",
                fmt_f64(self.timing.estimated_sequential),
            ),
        ];
        if let Some(s) = self.timing.speedup {
            timing.push(("speedup", fmt_f64(s)));
        }
        w.empty("timing", &timing);
        w.empty(
            "reference",
            &[
                ("minutes_per_match", fmt_f64(REFERENCE_MINUTES_PER_MATCH)),
                ("sequential_hours", fmt_f64(REFERENCE_SEQUENTIAL_HOURS)),
                ("grid_days", fmt_f64(REFERENCE_GRID_DAYS)),
                ("speedup", fmt_f64(REFERENCE_SPEEDUP)),
            ],
        );
        self.standings.write(&mut w);
        self.usage.write(&mut w);
        w.open(
            "failures",
            &[
                ("resubmissions", self.resubmissions.to_string()),
                ("permanent", self.permanently_failed.len().to_string()),
            ],
        );
        for f in &self.failures {
            w.empty(
                "failure",
                &[
                    ("match", f.match_id.clone()),
                    ("job", f.job_id.clone()),
                    ("attempt", f.attempt.to_string()),
                    ("reason", f.reason.clone()),
                ],
            );
        }
        for m in &self.permanently_failed {
            w.empty("forfeit", &[("match", m.clone())]);
        }
        w.close("failures");
        w.close("report");
        w.finish()
    }

    pub fn from_xml(doc: &str) -> Result<Self, XmlError> {
        let root = xml::parse(doc)?;
        root.expect_name("report")?;
        let state_raw = root.attr("state")?;
        let totals_el = root.child("totals")?;
        let agents: u64 = totals_el.parse_attr("agents")?;
        let gpm: u64 = totals_el.parse_attr("games_per_match")?;
        let timing_el = root.child("timing")?;
        let failures_el = root.child("failures")?;
        Ok(Self {
            experiment_id: root.attr("experiment")?.to_string(),
            state: state_raw
                .parse()
                .map_err(|_| root.invalid("state", state_raw))?,
            standings: Standings::read(root.child("standings")?)?,
            totals: totals_for(agents, gpm),
            timing: Timing {
                makespan: timing_el.parse_attr("makespan")?,
                estimated_sequential: timing_el.parse_attr("estimated_sequential")?,
                speedup: timing_el.parse_attr_opt("speedup")?,
            },
            usage: UsageStats::read(root.child("usage")?)?,
            failures: failures_el
                .children_named("failure")
                .map(|f| {
                    Ok(FailureEntry {
                        match_id: f.attr("match")?.to_string(),
                        job_id: f.attr("job")?.to_string(),
                        attempt: f.parse_attr("attempt")?,
                        reason: f.attr("reason")?.to_string(),
                    })
                })
                .collect::<Result<_, XmlError>>()?,
            resubmissions: failures_el.parse_attr("resubmissions")?,
            permanently_failed: failures_el
                .children_named("forfeit")
                .map(|f| f.attr("match").map(str::to_string))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn to_text(&self) -> String {
        let t = &self.totals;
        let mut s = String::new();
        let _ = writeln!(s, "experiment {} — {}", self.experiment_id, self.state);
        let _ = writeln!(
            s,
            "agents {}  matches {}  ({} per agent)",
            t.agents, t.total_matches, t.matches_per_agent
        );
        let _ = writeln!(
            s,
            "games: {} unique, {} per agent, {} counted per participant",
            t.unique_games, t.per_agent_games, t.participation_games
        );
        let _ = writeln!(
            s,
            "makespan {:.1} s  sequential estimate {:.1} s  speedup {}",
            self.timing.makespan,
            self.timing.estimated_sequential,
            self.timing
                .speedup
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
        );
        let _ = writeln!(
            s,
            "reference figures: {REFERENCE_MINUTES_PER_MATCH} min/match, {REFERENCE_SEQUENTIAL_HOURS} h sequential, {REFERENCE_GRID_DAYS} days on the grid, ~{REFERENCE_SPEEDUP}x"
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>4}  {:<16} {:>6} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}",
            "rank", "agent", "points", "W", "D", "L", "F", "g.won", "g.lost", "g.drawn"
        );
        for (i, r) in self.standings.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>4}  {:<16} {:>6} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}",
                i + 1,
                r.agent_id,
                r.points,
                r.match_wins,
                r.match_draws,
                r.match_losses,
                r.forfeits,
                r.game_wins,
                r.game_losses,
                r.game_draws
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "cluster usage:");
        for c in &self.usage.clusters {
            let total = c.busy_time + c.idle_time;
            let util = if total > 0.0 {
                100.0 * c.busy_time / total
            } else {
                0.0
            };
            let _ = writeln!(
                s,
                "  {:<12} {:>4} WNs  {:>6} jobs  {:>5.1}% busy  {:>10} B in  {:>10} B out  {} failures",
                c.cluster_id, c.wn_count, c.jobs_run, util, c.bytes_staged_in, c.bytes_staged_out, c.failures
            );
        }
        let _ = writeln!(
            s,
            "failures: {} attempts failed, {} resubmissions, {} matches forfeited",
            self.failures.len(),
            self.resubmissions,
            self.permanently_failed.len()
        );
        for f in &self.failures {
            let _ = writeln!(
                s,
                "  {} {} attempt {}: {}",
                f.match_id, f.job_id, f.attempt, f.reason
            );
        }
        for m in &self.permanently_failed {
            let _ = writeln!(s, "  forfeited: {m}");
        }
        s
    }
}
