//! TD(λ) learning and move selection over afterstates.

use rand::Rng as _;

use super::board::{legal_moves, BoardError, BoardState, RlMove};
use super::features::encode_features;
use super::network::{NetworkError, ValueNetwork};
use crate::game::TdParams;
use crate::seed::Rng;

/// Accumulating eligibility traces, one per network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces(Vec<f64>);

impl Traces {
    pub fn for_network(net: &ValueNetwork) -> Self {
        Self(vec![0.0; net.num_params()])
    }

    pub fn reset(&mut self) {
        self.0.iter_mut().for_each(|e| *e = 0.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TdTarget {
    /// Value of the learner's next afterstate (no intermediate reward).
    Next(f64),
    /// Final outcome: 1 win, 0.5 draw, 0 loss.
    Terminal(f64),
}

/// One TD(λ) step from `prev_features`. Returns the TD error.
pub fn td_update(
    net: &mut ValueNetwork,
    prev_features: &[f64],
    target: TdTarget,
    params: &TdParams,
    traces: &mut Traces,
) -> Result<f64, NetworkError> {
    if traces.0.len() != net.num_params() {
        return Err(NetworkError::Dimension {
            expected: net.num_params(),
            got: traces.0.len(),
        });
    }
    let (v_prev, grad) = net.value_and_gradient(prev_features)?;
    let delta = match target {
        TdTarget::Next(v_next) => params.gamma * v_next - v_prev,
        TdTarget::Terminal(outcome) => outcome - v_prev,
    };
    if !delta.is_finite() {
        return Err(NetworkError::NonFinite("td error"));
    }
    let decay = params.gamma * params.lambda;
    let step = params.alpha * delta;
    for ((w, e), g) in net.params_mut().iter_mut().zip(&mut traces.0).zip(&grad) {
        *e = decay * *e + g;
        *w += step * *e;
    }
    if !net.is_finite() {
        return Err(NetworkError::NonFinite("weights"));
    }
    Ok(delta)
}

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Epsilon-greedy over afterstates using an arbitrary scoring function.
/// One uniform draw decides explore vs exploit; ties go to the first move
/// in legal-move order. Returns the move and its afterstate features.
pub fn select_move_by<F>(
    state: &BoardState,
    epsilon: f64,
    rng: &mut Rng,
    mut score: F,
) -> Result<(RlMove, Vec<f64>), SelectError>
where
    F: FnMut(&[f64]) -> Result<f64, NetworkError>,
{
    let moves = legal_moves(state);
    if moves.is_empty() {
        return Err(BoardError::NoLegalMoves(state.to_move).into());
    }
    if rng.random::<f64>() < epsilon {
        let mv = moves[rng.random_range(0..moves.len())];
        let features = encode_features(state, mv)?;
        return Ok((mv, features));
    }
    let mut best: Option<(RlMove, Vec<f64>, f64)> = None;
    for mv in moves {
        let features = encode_features(state, mv)?;
        let v = score(&features)?;
        if best.as_ref().is_none_or(|(_, _, b)| v > *b) {
            best = Some((mv, features, v));
        }
    }
    let (mv, features, _) = best.expect("at least one legal move");
    Ok((mv, features))
}

pub fn select_move(
    net: &ValueNetwork,
    state: &BoardState,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<RlMove, SelectError> {
    select_move_by(state, epsilon, rng, |f| net.value(f)).map(|(mv, _)| mv)
}
