//! The game-workload contract every tournament match runs against.
//!
//! A workload plays a fixed number of games between two agents and hands
//! back the match result together with each agent's updated artifact
//! (learned weights, move statistics), which the orchestrator stages back to
//! central storage for the next round.

pub mod rsp;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::rlgame::{BoardParams, RlGameWorkload};
use crate::xml::{self, Element, XmlError, XmlWriter};

pub use rsp::{compare_moves, random_move, RspMove, RspWorkload};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("a match needs at least one game")]
    NoGames,
    #[error("unknown game `{0}`")]
    UnknownGame(String),
    #[error("policy failed in game {game}: {reason}")]
    Policy { game: u32, reason: String },
    #[error("agent artifact is unreadable: {0}")]
    Artifact(String),
    #[error("learning diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Board(#[from] crate::rlgame::BoardError),
    #[error(transparent)]
    Network(#[from] crate::rlgame::NetworkError),
}

/// Temporal-difference learning parameters. Each agent may carry its own,
/// which is what distinguishes agent "characters" within one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdParams {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for TdParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            lambda: 0.5,
            epsilon: 0.1,
        }
    }
}

impl TdParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(format!("alpha must be > 0, got {}", self.alpha));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCharacter {
    pub agent_id: String,
    pub display_name: String,
    pub network_seed: u64,
    pub td_params: TdParams,
}

impl AgentCharacter {
    pub fn new(agent_id: impl Into<String>, network_seed: u64) -> Self {
        let agent_id = agent_id.into();
        Self {
            display_name: agent_id.clone(),
            agent_id,
            network_seed,
            td_params: TdParams::default(),
        }
    }
}

/// Per-game rewards for the two sides of a zero-sum game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameOutcome {
    pub reward_a: i8,
    pub reward_b: i8,
}

impl GameOutcome {
    pub fn from_a(reward_a: i8) -> Self {
        Self {
            reward_a,
            reward_b: -reward_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GameLog {
    Rsp {
        move_a: RspMove,
        move_b: RspMove,
        reward_a: i8,
    },
    Board {
        a_first: bool,
        plies: u32,
        reward_a: i8,
    },
}

impl GameLog {
    pub fn reward_a(&self) -> i8 {
        match self {
            GameLog::Rsp { reward_a, .. } | GameLog::Board { reward_a, .. } => *reward_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub match_id: String,
    pub wins_a: u32,
    pub wins_b: u32,
    pub draws: u32,
    pub games_played: u32,
    pub per_game_log: Vec<GameLog>,
}

/// Which side took the match, by majority of game wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchWinner {
    A,
    B,
    Draw,
}

impl MatchResult {
    pub fn from_log(match_id: impl Into<String>, log: Vec<GameLog>) -> Self {
        let mut r = Self {
            match_id: match_id.into(),
            wins_a: 0,
            wins_b: 0,
            draws: 0,
            games_played: log.len() as u32,
            per_game_log: Vec::new(),
        };
        for g in &log {
            match g.reward_a() {
                1 => r.wins_a += 1,
                -1 => r.wins_b += 1,
                _ => r.draws += 1,
            }
        }
        r.per_game_log = log;
        r
    }

    pub fn is_consistent(&self) -> bool {
        self.wins_a + self.wins_b + self.draws == self.games_played
            && self.per_game_log.len() == self.games_played as usize
    }

    pub fn winner(&self) -> MatchWinner {
        match self.wins_a.cmp(&self.wins_b) {
            std::cmp::Ordering::Greater => MatchWinner::A,
            std::cmp::Ordering::Less => MatchWinner::B,
            std::cmp::Ordering::Equal => MatchWinner::Draw,
        }
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut XmlWriter) {
        w.open(
            "match",
            &[
                ("id", self.match_id.clone()),
                ("games", self.games_played.to_string()),
                ("wins_a", self.wins_a.to_string()),
                ("wins_b", self.wins_b.to_string()),
                ("draws", self.draws.to_string()),
            ],
        );
        for g in &self.per_game_log {
            match g {
                GameLog::Rsp {
                    move_a,
                    move_b,
                    reward_a,
                } => w.empty(
                    "game",
                    &[
                        ("a", move_a.to_string()),
                        ("b", move_b.to_string()),
                        ("reward_a", reward_a.to_string()),
                    ],
                ),
                GameLog::Board {
                    a_first,
                    plies,
                    reward_a,
                } => w.empty(
                    "game",
                    &[
                        ("first", if *a_first { "a" } else { "b" }.to_string()),
                        ("plies", plies.to_string()),
                        ("reward_a", reward_a.to_string()),
                    ],
                ),
            }
        }
        w.close("match");
    }

    pub fn from_xml(doc: &str) -> Result<Self, XmlError> {
        let root = xml::parse(doc)?;
        Self::from_element(&root)
    }

    pub(crate) fn from_element(root: &Element) -> Result<Self, XmlError> {
        root.expect_name("match")?;
        let mut log = Vec::new();
        for g in root.children_named("game") {
            let reward_a: i8 = g.parse_attr("reward_a")?;
            if !(-1..=1).contains(&reward_a) {
                return Err(g.invalid("reward_a", &reward_a.to_string()));
            }
            let entry = if g.attr_opt("a").is_some() {
                GameLog::Rsp {
                    move_a: g.parse_attr("a")?,
                    move_b: g.parse_attr("b")?,
                    reward_a,
                }
            } else {
                let first = g.attr("first")?;
                GameLog::Board {
                    a_first: match first {
                        "a" => true,
                        "b" => false,
                        other => return Err(g.invalid("first", other)),
                    },
                    plies: g.parse_attr("plies")?,
                    reward_a,
                }
            };
            log.push(entry);
        }
        let result = MatchResult::from_log(root.attr("id")?, log);
        let declared: [(&str, u32); 4] = [
            ("games", result.games_played),
            ("wins_a", result.wins_a),
            ("wins_b", result.wins_b),
            ("draws", result.draws),
        ];
        for (key, actual) in declared {
            let v: u32 = root.parse_attr(key)?;
            if v != actual {
                return Err(root.invalid(key, &v.to_string()));
            }
        }
        Ok(result)
    }
}

/// One side's inputs to a match: who they are and what they know so far.
#[derive(Debug, Clone, Copy)]
pub struct AgentInput<'a> {
    pub character: &'a AgentCharacter,
    pub artifact: &'a [u8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutput {
    pub result: MatchResult,
    /// Updated artifacts for side A and side B, in that order.
    pub artifacts: [Vec<u8>; 2],
}

pub trait GameWorkload: Send + Sync + fmt::Debug {
    fn game_id(&self) -> &str;

    /// The artifact an agent starts the experiment with.
    fn initial_artifact(&self, agent: &AgentCharacter) -> Vec<u8>;

    /// Plays `games` games. Must be a pure function of its arguments.
    fn play_match(
        &self,
        match_id: &str,
        a: AgentInput<'_>,
        b: AgentInput<'_>,
        games: u32,
        seed: u64,
    ) -> Result<MatchOutput, WorkloadError>;
}

/// Runs a match through `workload`, enforcing the match-level contract.
pub fn play_match(
    workload: &dyn GameWorkload,
    match_id: &str,
    a: AgentInput<'_>,
    b: AgentInput<'_>,
    games: u32,
    seed: u64,
) -> Result<MatchOutput, WorkloadError> {
    if games == 0 {
        return Err(WorkloadError::NoGames);
    }
    let out = workload.play_match(match_id, a, b, games, seed)?;
    debug_assert!(out.result.is_consistent());
    debug_assert_eq!(out.result.games_played, games);
    Ok(out)
}

/// Game identifiers understood by [`workload_for`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameKind {
    /// Rock-Scissors-Paper between uniform-random computer players.
    Rsp,
    /// Rock-Scissors-Paper between tabular TD learners.
    RspLearning,
    RlGame(BoardParams),
}

impl FromStr for GameKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rsp" => Ok(GameKind::Rsp),
            "rsp-td" => Ok(GameKind::RspLearning),
            "rlgame" => Ok(GameKind::RlGame(BoardParams::default())),
            other => {
                let unknown = || WorkloadError::UnknownGame(other.to_string());
                let rest = other.strip_prefix("rlgame:").ok_or_else(unknown)?;
                let dims: Vec<usize> = rest
                    .split(':')
                    .map(|p| p.parse().map_err(|_| unknown()))
                    .collect::<Result<_, _>>()?;
                match dims.as_slice() {
                    [n, a, beta] => Ok(GameKind::RlGame(BoardParams::new(*n, *a, *beta)?)),
                    _ => Err(unknown()),
                }
            }
        }
    }
}

pub fn workload_for(game_id: &str) -> Result<Arc<dyn GameWorkload>, WorkloadError> {
    Ok(match game_id.parse::<GameKind>()? {
        GameKind::Rsp => Arc::new(RspWorkload::computer()),
        GameKind::RspLearning => Arc::new(RspWorkload::learning()),
        GameKind::RlGame(params) => Arc::new(RlGameWorkload::with_id(game_id, params)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_result_xml_round_trip() {
        let log = vec![
            GameLog::Rsp {
                move_a: RspMove::Rock,
                move_b: RspMove::Paper,
                reward_a: -1,
            },
            GameLog::Board {
                a_first: false,
                plies: 17,
                reward_a: 1,
            },
            GameLog::Rsp {
                move_a: RspMove::Paper,
                move_b: RspMove::Paper,
                reward_a: 0,
            },
        ];
        let r = MatchResult::from_log("exp-r001-0v1", log);
        assert_eq!((r.wins_a, r.wins_b, r.draws), (1, 1, 1));
        let doc = r.to_xml();
        let back = MatchResult::from_xml(&doc).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_xml(), doc);
    }

    #[test]
    fn tampered_counts_are_rejected() {
        let r = MatchResult::from_log(
            "m",
            vec![GameLog::Rsp {
                move_a: RspMove::Rock,
                move_b: RspMove::Scissors,
                reward_a: 1,
            }],
        );
        let doc = r.to_xml().replace("wins_a=\"1\"", "wins_a=\"0\"");
        assert!(MatchResult::from_xml(&doc).is_err());
    }

    #[test]
    fn game_ids_parse() {
        assert_eq!("rsp".parse::<GameKind>().unwrap(), GameKind::Rsp);
        assert_eq!(
            "rlgame:5:2:2".parse::<GameKind>().unwrap(),
            GameKind::RlGame(BoardParams::new(5, 2, 2).unwrap())
        );
        assert!("chess".parse::<GameKind>().is_err());
        assert!("rlgame:3:3:1".parse::<GameKind>().is_err());
        assert!(workload_for("rsp-td").is_ok());
    }

    #[test]
    fn td_params_validation() {
        assert!(TdParams::default().validate().is_ok());
        let bad = TdParams {
            alpha: 0.0,
            ..TdParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = TdParams {
            epsilon: 1.5,
            ..TdParams::default()
        };
        assert!(bad.validate().unwrap_err().contains("epsilon"));
    }
}
