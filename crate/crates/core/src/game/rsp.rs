//! Rock-Scissors-Paper, the reference workload for new games.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::{
    AgentCharacter, AgentInput, GameLog, GameOutcome, GameWorkload, MatchOutput, MatchResult,
    TdParams, WorkloadError,
};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RspMove {
    Rock,
    Paper,
    Scissors,
}

impl RspMove {
    pub const ALL: [RspMove; 3] = [RspMove::Rock, RspMove::Paper, RspMove::Scissors];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Reward for playing `self` against `theirs`: 1 win, 0 draw, -1 loss.
    pub fn compare(self, theirs: RspMove) -> i8 {
        if self == theirs {
            return 0;
        }
        match self {
            RspMove::Rock => {
                if theirs == RspMove::Scissors {
                    1
                } else {
                    -1
                }
            }
            RspMove::Paper => {
                if theirs == RspMove::Rock {
                    1
                } else {
                    -1
                }
            }
            RspMove::Scissors => {
                if theirs == RspMove::Paper {
                    1
                } else {
                    -1
                }
            }
        }
    }
}

impl fmt::Display for RspMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RspMove::Rock => "ROCK",
            RspMove::Paper => "PAPER",
            RspMove::Scissors => "SCISSORS",
        })
    }
}

impl FromStr for RspMove {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ROCK" => Ok(RspMove::Rock),
            "PAPER" => Ok(RspMove::Paper),
            "SCISSORS" => Ok(RspMove::Scissors),
            other => Err(format!("not a move: {other}")),
        }
    }
}

pub fn compare_moves(mine: RspMove, theirs: RspMove) -> i8 {
    mine.compare(theirs)
}

/// A uniformly random move, the default computer player's choice.
pub fn random_move<R: rand::Rng + ?Sized>(rng: &mut R) -> RspMove {
    RspMove::ALL[rng.random_range(0..RspMove::ALL.len())]
}

/// A player. `history` holds this player's prior `(own, opponent)` moves in
/// the current match; the opponent's current move is never visible.
pub trait RspPolicy {
    fn choose(&mut self, history: &[(RspMove, RspMove)], rng: &mut Rng) -> Result<RspMove, String>;

    /// Called once both moves are revealed.
    fn observe(&mut self, _own: RspMove, _opponent: RspMove, _reward: i8) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl RspPolicy for UniformPolicy {
    fn choose(&mut self, _: &[(RspMove, RspMove)], rng: &mut Rng) -> Result<RspMove, String> {
        Ok(random_move(rng))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub RspMove);

impl RspPolicy for FixedPolicy {
    fn choose(&mut self, _: &[(RspMove, RspMove)], _: &mut Rng) -> Result<RspMove, String> {
        Ok(self.0)
    }
}

/// Draws from a fixed distribution over ROCK, PAPER, SCISSORS.
#[derive(Debug, Clone, Copy)]
pub struct BiasedPolicy {
    pub probabilities: [f64; 3],
}

impl BiasedPolicy {
    pub fn favouring(mv: RspMove, p: f64) -> Self {
        let mut probabilities = [(1.0 - p) / 2.0; 3];
        probabilities[mv.index()] = p;
        Self { probabilities }
    }
}

impl RspPolicy for BiasedPolicy {
    fn choose(&mut self, _: &[(RspMove, RspMove)], rng: &mut Rng) -> Result<RspMove, String> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for mv in RspMove::ALL {
            acc += self.probabilities[mv.index()];
            if u < acc {
                return Ok(mv);
            }
        }
        Ok(RspMove::Scissors)
    }
}

/// Tabular TD control. The state is the opponent's previous move (or
/// "none" on the first game of a match); action values are updated with a
/// one-step Q-learning backup after every game.
#[derive(Debug, Clone)]
pub struct TdLearner {
    pub q: [[f64; 3]; 4],
    pub params: TdParams,
    pending: Option<(usize, usize)>,
}

const NO_PREVIOUS: usize = 3;

impl TdLearner {
    pub fn new(params: TdParams) -> Self {
        Self {
            q: [[0.0; 3]; 4],
            params,
            pending: None,
        }
    }

    pub fn with_values(params: TdParams, q: [[f64; 3]; 4]) -> Self {
        Self {
            q,
            params,
            pending: None,
        }
    }

    fn state(history: &[(RspMove, RspMove)]) -> usize {
        history.last().map_or(NO_PREVIOUS, |(_, opp)| opp.index())
    }

    fn greedy(&self, state: usize) -> usize {
        let row = &self.q[state];
        let mut best = 0;
        for a in 1..3 {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }
}

impl RspPolicy for TdLearner {
    fn choose(&mut self, history: &[(RspMove, RspMove)], rng: &mut Rng) -> Result<RspMove, String> {
        let state = Self::state(history);
        let action = if rng.random::<f64>() < self.params.epsilon {
            rng.random_range(0..3)
        } else {
            self.greedy(state)
        };
        self.pending = Some((state, action));
        Ok(RspMove::ALL[action])
    }

    fn observe(&mut self, _own: RspMove, opponent: RspMove, reward: i8) {
        let Some((s, a)) = self.pending.take() else {
            return;
        };
        let next = opponent.index();
        let bootstrap = self.q[next]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let target = f64::from(reward) + self.params.gamma * bootstrap;
        self.q[s][a] += self.params.alpha * (target - self.q[s][a]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RspPlay {
    pub move_a: RspMove,
    pub move_b: RspMove,
    pub outcome: GameOutcome,
}

/// One simultaneous-move game. Both players commit before either move is
/// revealed; histories are appended afterwards.
pub fn play_rsp_game(
    policy_a: &mut dyn RspPolicy,
    policy_b: &mut dyn RspPolicy,
    history_a: &mut Vec<(RspMove, RspMove)>,
    history_b: &mut Vec<(RspMove, RspMove)>,
    rng_a: &mut Rng,
    rng_b: &mut Rng,
) -> Result<RspPlay, String> {
    let move_a = policy_a.choose(history_a, rng_a)?;
    let move_b = policy_b.choose(history_b, rng_b)?;
    let outcome = GameOutcome {
        reward_a: compare_moves(move_a, move_b),
        reward_b: compare_moves(move_b, move_a),
    };
    policy_a.observe(move_a, move_b, outcome.reward_a);
    policy_b.observe(move_b, move_a, outcome.reward_b);
    history_a.push((move_a, move_b));
    history_b.push((move_b, move_a));
    Ok(RspPlay {
        move_a,
        move_b,
        outcome,
    })
}

/// Plays a full match between two policies. Each side draws from its own
/// stream derived from `(seed, side)`.
pub fn play_rsp_match(
    match_id: &str,
    policy_a: &mut dyn RspPolicy,
    policy_b: &mut dyn RspPolicy,
    games: u32,
    seed: u64,
) -> Result<MatchResult, WorkloadError> {
    if games == 0 {
        return Err(WorkloadError::NoGames);
    }
    let mut rng_a = seed::rng_for(seed, &[0]);
    let mut rng_b = seed::rng_for(seed, &[1]);
    let mut history_a = Vec::with_capacity(games as usize);
    let mut history_b = Vec::with_capacity(games as usize);
    let mut log = Vec::with_capacity(games as usize);
    for game in 0..games {
        let play = play_rsp_game(
            policy_a,
            policy_b,
            &mut history_a,
            &mut history_b,
            &mut rng_a,
            &mut rng_b,
        )
        .map_err(|reason| WorkloadError::Policy { game, reason })?;
        log.push(GameLog::Rsp {
            move_a: play.move_a,
            move_b: play.move_b,
            reward_a: play.outcome.reward_a,
        });
    }
    Ok(MatchResult::from_log(match_id, log))
}

/// What an RSP agent carries between matches: lifetime move statistics and
/// (for learners) its action-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct RspAgentState {
    pub games: u64,
    pub move_counts: [u64; 3],
    pub q: [[f64; 3]; 4],
}

impl Default for RspAgentState {
    fn default() -> Self {
        Self {
            games: 0,
            move_counts: [0; 3],
            q: [[0.0; 3]; 4],
        }
    }
}

const RSP_MAGIC: &str = "rsp-agent v1";

impl RspAgentState {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{RSP_MAGIC}\ngames {}\n", self.games);
        out.push_str(&format!(
            "moves {} {} {}\n",
            self.move_counts[0], self.move_counts[1], self.move_counts[2]
        ));
        for (s, row) in self.q.iter().enumerate() {
            out.push_str(&format!(
                "q {s} {:.16e} {:.16e} {:.16e}\n",
                row[0], row[1], row[2]
            ));
        }
        out.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WorkloadError> {
        let bad = |m: &str| WorkloadError::Artifact(format!("rsp agent state: {m}"));
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not utf-8"))?;
        let mut lines = text.lines();
        if lines.next() != Some(RSP_MAGIC) {
            return Err(bad("bad header"));
        }
        let mut state = RspAgentState::default();
        let mut seen_q = 0;
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["games", n] => state.games = n.parse().map_err(|_| bad("games"))?,
                ["moves", r, p, s] => {
                    for (slot, v) in state.move_counts.iter_mut().zip([r, p, s]) {
                        *slot = v.parse().map_err(|_| bad("moves"))?;
                    }
                }
                ["q", s, a, b, c] => {
                    let s: usize = s.parse().map_err(|_| bad("q state"))?;
                    let row = state.q.get_mut(s).ok_or_else(|| bad("q state"))?;
                    for (slot, v) in row.iter_mut().zip([a, b, c]) {
                        *slot = v.parse().map_err(|_| bad("q value"))?;
                    }
                    seen_q += 1;
                }
                [] => {}
                _ => return Err(bad("unrecognised line")),
            }
        }
        if seen_q != 4 {
            return Err(bad("incomplete value table"));
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlayerKind {
    Computer,
    Learner,
}

/// Builds two computer players and plays a series of games between them.
#[derive(Debug, Clone)]
pub struct RspWorkload {
    kind: PlayerKind,
}

impl RspWorkload {
    /// Uniform-random players.
    pub fn computer() -> Self {
        Self {
            kind: PlayerKind::Computer,
        }
    }

    /// Tabular TD learners parameterised by each agent's character.
    pub fn learning() -> Self {
        Self {
            kind: PlayerKind::Learner,
        }
    }
}

impl GameWorkload for RspWorkload {
    fn game_id(&self) -> &str {
        match self.kind {
            PlayerKind::Computer => "rsp",
            PlayerKind::Learner => "rsp-td",
        }
    }

    fn initial_artifact(&self, _agent: &AgentCharacter) -> Vec<u8> {
        RspAgentState::default().encode()
    }

    fn play_match(
        &self,
        match_id: &str,
        a: AgentInput<'_>,
        b: AgentInput<'_>,
        games: u32,
        seed: u64,
    ) -> Result<MatchOutput, WorkloadError> {
        let mut state_a = RspAgentState::decode(a.artifact)?;
        let mut state_b = RspAgentState::decode(b.artifact)?;
        let result = match self.kind {
            PlayerKind::Computer => play_rsp_match(
                match_id,
                &mut UniformPolicy,
                &mut UniformPolicy,
                games,
                seed,
            )?,
            PlayerKind::Learner => {
                let mut pa = TdLearner::with_values(a.character.td_params, state_a.q);
                let mut pb = TdLearner::with_values(b.character.td_params, state_b.q);
                let r = play_rsp_match(match_id, &mut pa, &mut pb, games, seed)?;
                for (name, q) in [("a", &pa.q), ("b", &pb.q)] {
                    if q.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(WorkloadError::NonFinite(format!("side {name} values")));
                    }
                }
                state_a.q = pa.q;
                state_b.q = pb.q;
                r
            }
        };
        for g in &result.per_game_log {
            if let GameLog::Rsp { move_a, move_b, .. } = g {
                state_a.move_counts[move_a.index()] += 1;
                state_b.move_counts[move_b.index()] += 1;
            }
        }
        state_a.games += u64::from(games);
        state_b.games += u64::from(games);
        Ok(MatchOutput {
            result,
            artifacts: [state_a.encode(), state_b.encode()],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn table_examples() {
        assert_eq!(compare_moves(RspMove::Rock, RspMove::Scissors), 1);
        assert_eq!(compare_moves(RspMove::Paper, RspMove::Paper), 0);
        assert_eq!(compare_moves(RspMove::Scissors, RspMove::Rock), -1);
    }

    #[test]
    fn fixed_seed_draws_repeat() {
        let mut r1 = Rng::seed_from_u64(99);
        let mut r2 = Rng::seed_from_u64(99);
        let a: Vec<_> = (0..50).map(|_| random_move(&mut r1)).collect();
        let b: Vec<_> = (0..50).map(|_| random_move(&mut r2)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rock_beats_scissors_in_a_game() {
        let (mut ha, mut hb) = (Vec::new(), Vec::new());
        let (mut ra, mut rb) = (Rng::seed_from_u64(1), Rng::seed_from_u64(2));
        let play = play_rsp_game(
            &mut FixedPolicy(RspMove::Rock),
            &mut FixedPolicy(RspMove::Scissors),
            &mut ha,
            &mut hb,
            &mut ra,
            &mut rb,
        )
        .unwrap();
        assert_eq!(play.outcome, GameOutcome::from_a(1));
        assert_eq!(ha, vec![(RspMove::Rock, RspMove::Scissors)]);
        assert_eq!(hb, vec![(RspMove::Scissors, RspMove::Rock)]);
    }

    #[test]
    fn paper_paper_is_a_draw() {
        let r = play_rsp_match(
            "m",
            &mut FixedPolicy(RspMove::Paper),
            &mut FixedPolicy(RspMove::Paper),
            5,
            0,
        )
        .unwrap();
        assert_eq!((r.wins_a, r.wins_b, r.draws), (0, 0, 5));
    }

    /// Records the history it was shown so the test can check it never
    /// contains the opponent's pending move.
    struct Spy {
        seen_lengths: Vec<usize>,
    }

    impl RspPolicy for Spy {
        fn choose(
            &mut self,
            history: &[(RspMove, RspMove)],
            _: &mut Rng,
        ) -> Result<RspMove, String> {
            self.seen_lengths.push(history.len());
            Ok(RspMove::Rock)
        }
    }

    #[test]
    fn policies_only_see_completed_games() {
        let mut spy = Spy {
            seen_lengths: Vec::new(),
        };
        play_rsp_match("m", &mut spy, &mut UniformPolicy, 4, 3).unwrap();
        assert_eq!(spy.seen_lengths, vec![0, 1, 2, 3]);
    }

    struct FailsAt(u32, u32);

    impl RspPolicy for FailsAt {
        fn choose(&mut self, _: &[(RspMove, RspMove)], _: &mut Rng) -> Result<RspMove, String> {
            self.1 += 1;
            if self.1 > self.0 {
                Err("player crashed".into())
            } else {
                Ok(RspMove::Rock)
            }
        }
    }

    #[test]
    fn policy_failure_aborts_the_match() {
        let err = play_rsp_match("m", &mut FailsAt(3, 0), &mut UniformPolicy, 10, 0).unwrap_err();
        assert!(matches!(err, WorkloadError::Policy { game: 3, .. }));
    }

    #[test]
    fn zero_games_is_rejected() {
        assert!(matches!(
            play_rsp_match("m", &mut UniformPolicy, &mut UniformPolicy, 0, 0),
            Err(WorkloadError::NoGames)
        ));
    }

    #[test]
    fn agent_state_round_trips() {
        let s = RspAgentState {
            games: 42,
            move_counts: [10, 20, 12],
            q: [
                [0.1, -0.25, 1.0 / 3.0],
                [0.0; 3],
                [1e-17, 2.0, -3.5],
                [0.7; 3],
            ],
        };
        assert_eq!(RspAgentState::decode(&s.encode()).unwrap(), s);
        assert!(RspAgentState::decode(b"garbage").is_err());
    }

    #[test]
    fn workload_updates_statistics() {
        let w = RspWorkload::computer();
        let ca = AgentCharacter::new("a", 1);
        let cb = AgentCharacter::new("b", 2);
        let art = w.initial_artifact(&ca);
        let out = w
            .play_match(
                "m",
                AgentInput {
                    character: &ca,
                    artifact: &art,
                },
                AgentInput {
                    character: &cb,
                    artifact: &art,
                },
                30,
                5,
            )
            .unwrap();
        let sa = RspAgentState::decode(&out.artifacts[0]).unwrap();
        assert_eq!(sa.games, 30);
        assert_eq!(sa.move_counts.iter().sum::<u64>(), 30);
    }
}
