//! RLGame: a two-player pawn race on an `n`×`n` board with corner bases,
//! played by agents whose afterstate value function is a small neural
//! network trained with TD(λ).
//!
//! Movement rules: a pawn steps one square orthogonally onto an empty cell;
//! once it has left its own base it may never re-enter; at the start of a
//! player's turn any of their pawns without a legal step is removed. A
//! player wins by stepping into the opponent's base or by leaving the
//! opponent without pawns. Games reaching the move cap are drawn.

mod board;
mod features;
mod network;
mod play;
mod td;

pub use board::{
    apply_move, initial_board, legal_moves, terminal, BoardError, BoardParams, BoardState, Coord,
    Pawn, Player, RlMove, Terminal, DEFAULT_MAX_MOVES,
};
pub use features::{board_features, cell_index, encode_features, input_size};
pub use network::{hidden_size_for, NetworkError, ValueNetwork, INIT_RANGE};
pub use play::{
    evaluate_against_random, play_game, rlgame_play_match, EvalRecord, Learner, RlGameWorkload,
};
pub use td::{select_move, select_move_by, td_update, SelectError, TdTarget, Traces};
