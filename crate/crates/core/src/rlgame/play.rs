//! Self-play matches between two learning agents.

use rand::Rng as _;

use super::board::{
    apply_move, initial_board, legal_moves, terminal, BoardParams, Player, Terminal,
};
use super::features::input_size;
use super::network::{NetworkError, ValueNetwork};
use super::td::{select_move_by, td_update, SelectError, TdTarget, Traces};
use crate::game::{
    AgentCharacter, AgentInput, GameLog, GameWorkload, MatchOutput, MatchResult, TdParams,
    WorkloadError,
};
use crate::seed::{self, Rng};

/// A learning side of a game: its network, its parameters, and whether it
/// updates its weights as it plays.
pub struct Learner<'a> {
    pub net: &'a mut ValueNetwork,
    pub params: TdParams,
    pub learn: bool,
    pub rng: &'a mut Rng,
}

fn select_error(game: u32) -> impl Fn(SelectError) -> WorkloadError {
    move |e| match e {
        SelectError::Board(b) => WorkloadError::Policy {
            game,
            reason: b.to_string(),
        },
        SelectError::Network(n) => WorkloadError::Network(n),
    }
}

fn outcome_value(result: Terminal, me: Player) -> f64 {
    match result {
        Terminal::Winner(p) if p == me => 1.0,
        Terminal::Winner(_) => 0.0,
        Terminal::Draw => 0.5,
    }
}

/// Plays one game; `sides[0]` is white. Returns the terminal result and the
/// number of plies.
pub fn play_game(
    board: BoardParams,
    max_moves: u32,
    mut sides: [&mut Learner<'_>; 2],
    game: u32,
) -> Result<(Terminal, u32), WorkloadError> {
    let mut state = initial_board(board)?.with_max_moves(max_moves);
    let mut traces = [
        Traces::for_network(sides[0].net),
        Traces::for_network(sides[1].net),
    ];
    let mut prev: [Option<Vec<f64>>; 2] = [None, None];

    let result = loop {
        if let Some(t) = terminal(&state) {
            break t;
        }
        let k = state.to_move as usize;
        let side = &mut *sides[k];
        let net: &ValueNetwork = side.net;
        let (mv, features) =
            select_move_by(&state, side.params.epsilon, side.rng, |f| net.value(f))
                .map_err(select_error(game))?;
        if side.learn {
            if let Some(p) = prev[k].take() {
                let v_next = side.net.value(&features)?;
                td_update(
                    side.net,
                    &p,
                    TdTarget::Next(v_next),
                    &side.params,
                    &mut traces[k],
                )?;
            }
        }
        prev[k] = Some(features);
        state = apply_move(&state, mv)?;
    };

    for (k, side) in sides.iter_mut().enumerate() {
        if !side.learn {
            continue;
        }
        if let Some(p) = prev[k].take() {
            let me = if k == 0 { Player::White } else { Player::Black };
            let outcome = outcome_value(result, me);
            td_update(
                side.net,
                &p,
                TdTarget::Terminal(outcome),
                &side.params,
                &mut traces[k],
            )?;
        }
    }
    Ok((result, state.move_count))
}

/// RLGame as a tournament workload. Agent artifacts are encoded value
/// networks.
#[derive(Debug, Clone)]
pub struct RlGameWorkload {
    id: String,
    pub board: BoardParams,
    pub max_moves: u32,
}

impl RlGameWorkload {
    pub fn new(board: BoardParams) -> Self {
        Self::with_id("rlgame", board)
    }

    pub fn with_id(id: &str, board: BoardParams) -> Self {
        Self {
            id: id.to_string(),
            board,
            max_moves: super::board::DEFAULT_MAX_MOVES,
        }
    }

    fn decode(&self, artifact: &[u8]) -> Result<ValueNetwork, WorkloadError> {
        let text = std::str::from_utf8(artifact)
            .map_err(|_| WorkloadError::Artifact("network is not utf-8".into()))?;
        let net = ValueNetwork::decode(text)?;
        let expected = input_size(&self.board);
        if net.input_size() != expected {
            return Err(NetworkError::Dimension {
                expected,
                got: net.input_size(),
            }
            .into());
        }
        Ok(net)
    }
}

/// Self-play with learning on for both sides; side A moves first in even
/// games. Returns the match result and both updated networks.
pub fn rlgame_play_match(
    board: BoardParams,
    max_moves: u32,
    match_id: &str,
    agents: [(&AgentCharacter, &mut ValueNetwork); 2],
    games: u32,
    seed: u64,
) -> Result<MatchResult, WorkloadError> {
    if games == 0 {
        return Err(WorkloadError::NoGames);
    }
    let [(ca, net_a), (cb, net_b)] = agents;
    let mut rng_a = seed::rng_for(seed, &[0]);
    let mut rng_b = seed::rng_for(seed, &[1]);
    let mut a = Learner {
        net: net_a,
        params: ca.td_params,
        learn: true,
        rng: &mut rng_a,
    };
    let mut b = Learner {
        net: net_b,
        params: cb.td_params,
        learn: true,
        rng: &mut rng_b,
    };
    let mut log = Vec::with_capacity(games as usize);
    for game in 0..games {
        let a_first = game % 2 == 0;
        let (result, plies) = if a_first {
            play_game(board, max_moves, [&mut a, &mut b], game)?
        } else {
            play_game(board, max_moves, [&mut b, &mut a], game)?
        };
        let a_colour = if a_first {
            Player::White
        } else {
            Player::Black
        };
        let reward_a = match result {
            Terminal::Winner(p) if p == a_colour => 1,
            Terminal::Winner(_) => -1,
            Terminal::Draw => 0,
        };
        log.push(GameLog::Board {
            a_first,
            plies,
            reward_a,
        });
    }
    Ok(MatchResult::from_log(match_id, log))
}

impl GameWorkload for RlGameWorkload {
    fn game_id(&self) -> &str {
        &self.id
    }

    fn initial_artifact(&self, agent: &AgentCharacter) -> Vec<u8> {
        ValueNetwork::new(input_size(&self.board), agent.network_seed)
            .encode()
            .into_bytes()
    }

    fn play_match(
        &self,
        match_id: &str,
        a: AgentInput<'_>,
        b: AgentInput<'_>,
        games: u32,
        seed: u64,
    ) -> Result<MatchOutput, WorkloadError> {
        let mut net_a = self.decode(a.artifact)?;
        let mut net_b = self.decode(b.artifact)?;
        let result = rlgame_play_match(
            self.board,
            self.max_moves,
            match_id,
            [(a.character, &mut net_a), (b.character, &mut net_b)],
            games,
            seed,
        )?;
        Ok(MatchOutput {
            result,
            artifacts: [net_a.encode().into_bytes(), net_b.encode().into_bytes()],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalRecord {
    pub wins: u32,
    pub losses: u32,
    pub draws: u32,
}

/// Plays `net` greedily (no learning) against a uniformly random mover,
/// alternating colours.
pub fn evaluate_against_random(
    board: BoardParams,
    max_moves: u32,
    net: &ValueNetwork,
    games: u32,
    seed: u64,
) -> Result<EvalRecord, WorkloadError> {
    let mut rng_net = seed::rng_for(seed, &[0]);
    let mut rng_rand = seed::rng_for(seed, &[1]);
    let mut record = EvalRecord::default();
    for game in 0..games {
        let net_colour = if game % 2 == 0 {
            Player::White
        } else {
            Player::Black
        };
        let mut state = initial_board(board)?.with_max_moves(max_moves);
        let result = loop {
            if let Some(t) = terminal(&state) {
                break t;
            }
            let mv = if state.to_move == net_colour {
                select_move_by(&state, 0.0, &mut rng_net, |f| net.value(f))
                    .map_err(select_error(game))?
                    .0
            } else {
                let moves = legal_moves(&state);
                moves[rng_rand.random_range(0..moves.len())]
            };
            state = apply_move(&state, mv)?;
        };
        match result {
            Terminal::Winner(p) if p == net_colour => record.wins += 1,
            Terminal::Winner(_) => record.losses += 1,
            Terminal::Draw => record.draws += 1,
        }
    }
    Ok(record)
}
