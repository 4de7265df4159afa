use std::cmp::Reverse;
use std::collections::BTreeMap;

use super::{schedule_matches, ExperimentManifest, TournamentError};
use crate::game::{MatchResult, MatchWinner};
use crate::xml::{Element, XmlError, XmlWriter};

pub const POINTS_WIN: u32 = 3;
pub const POINTS_DRAW: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StandingRow {
    pub agent_id: String,
    pub matches_played: u32,
    pub match_wins: u32,
    pub match_draws: u32,
    pub match_losses: u32,
    /// Matches lost by double forfeit after exhausting their attempts.
    pub forfeits: u32,
    pub game_wins: u32,
    pub game_losses: u32,
    pub game_draws: u32,
    pub points: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Standings {
    pub rows: Vec<StandingRow>,
}

/// Tabulates `results` (possibly partial) against the manifest's schedule.
/// Matches in `forfeited` count as played with zero points for both sides.
/// An identical result delivered twice counts once.
pub fn compute_standings(
    manifest: &ExperimentManifest,
    results: &[MatchResult],
    forfeited: &[String],
) -> Result<Standings, TournamentError> {
    let schedule: BTreeMap<String, (usize, usize)> = schedule_matches(manifest)?
        .into_iter()
        .flatten()
        .map(|s| (s.match_id, s.seats))
        .collect();
    let mut rows: Vec<StandingRow> = manifest
        .agents
        .iter()
        .map(|a| StandingRow {
            agent_id: a.agent_id.clone(),
            ..StandingRow::default()
        })
        .collect();

    let mut seen: BTreeMap<&str, &MatchResult> = BTreeMap::new();
    for r in results {
        let &(i, j) = schedule
            .get(&r.match_id)
            .ok_or_else(|| TournamentError::UnknownMatch(r.match_id.clone()))?;
        if let Some(prev) = seen.insert(&r.match_id, r) {
            if prev != r {
                return Err(TournamentError::ConflictingResult(r.match_id.clone()));
            }
            continue;
        }
        if !r.is_consistent() {
            return Err(TournamentError::InconsistentResult(r.match_id.clone()));
        }
        for (k, wins, losses) in [(i, r.wins_a, r.wins_b), (j, r.wins_b, r.wins_a)] {
            let row = &mut rows[k];
            row.matches_played += 1;
            row.game_wins += wins;
            row.game_losses += losses;
            row.game_draws += r.draws;
        }
        let (wi, wj) = match r.winner() {
            MatchWinner::A => (Some(true), Some(false)),
            MatchWinner::B => (Some(false), Some(true)),
            MatchWinner::Draw => (None, None),
        };
        for (k, won) in [(i, wi), (j, wj)] {
            let row = &mut rows[k];
            match won {
                Some(true) => {
                    row.match_wins += 1;
                    row.points += POINTS_WIN;
                }
                Some(false) => row.match_losses += 1,
                None => {
                    row.match_draws += 1;
                    row.points += POINTS_DRAW;
                }
            }
        }
    }
    for id in forfeited {
        let &(i, j) = schedule
            .get(id)
            .ok_or_else(|| TournamentError::UnknownMatch(id.clone()))?;
        if seen.contains_key(id.as_str()) {
            return Err(TournamentError::ConflictingResult(id.clone()));
        }
        for k in [i, j] {
            rows[k].matches_played += 1;
            rows[k].forfeits += 1;
        }
    }

    rows.sort_by(|x, y| {
        (Reverse(x.points), Reverse(x.game_wins), &x.agent_id).cmp(&(
            Reverse(y.points),
            Reverse(y.game_wins),
            &y.agent_id,
        ))
    });
    Ok(Standings { rows })
}

impl Standings {
    pub(crate) fn write(&self, w: &mut XmlWriter) {
        if self.rows.is_empty() {
            w.empty("standings", &[]);
            return;
        }
        w.open("standings", &[]);
        for (rank, r) in self.rows.iter().enumerate() {
            w.empty(
                "row",
                &[
                    ("rank", (rank + 1).to_string()),
                    ("agent", r.agent_id.clone()),
                    ("points", r.points.to_string()),
                    ("matches", r.matches_played.to_string()),
                    ("match_wins", r.match_wins.to_string()),
                    ("match_draws", r.match_draws.to_string()),
                    ("match_losses", r.match_losses.to_string()),
                    ("forfeits", r.forfeits.to_string()),
                    ("game_wins", r.game_wins.to_string()),
                    ("game_losses", r.game_losses.to_string()),
                    ("game_draws", r.game_draws.to_string()),
                ],
            );
        }
        w.close("standings");
    }

    pub(crate) fn read(e: &Element) -> Result<Self, XmlError> {
        e.expect_name("standings")?;
        let rows = e
            .children_named("row")
            .map(|r| {
                Ok(StandingRow {
                    agent_id: r.attr("agent")?.to_string(),
                    points: r.parse_attr("points")?,
                    matches_played: r.parse_attr("matches")?,
                    match_wins: r.parse_attr("match_wins")?,
                    match_draws: r.parse_attr("match_draws")?,
                    match_losses: r.parse_attr("match_losses")?,
                    forfeits: r.parse_attr("forfeits")?,
                    game_wins: r.parse_attr("game_wins")?,
                    game_losses: r.parse_attr("game_losses")?,
                    game_draws: r.parse_attr("game_draws")?,
                })
            })
            .collect::<Result<_, XmlError>>()?;
        Ok(Self { rows })
    }

    pub fn row(&self, agent_id: &str) -> Option<&StandingRow> {
        self.rows.iter().find(|r| r.agent_id == agent_id)
    }
}
