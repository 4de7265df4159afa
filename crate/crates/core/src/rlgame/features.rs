use super::board::{apply_move, BoardError, BoardParams, BoardState, Coord, Player, RlMove};

/// Length of the feature vector for a board of side `n`: one entry per
/// cell plus two coverage flags.
pub fn input_size(params: &BoardParams) -> usize {
    params.cells() + 2
}

/// Encodes `board` as seen by `viewer`: cells in the viewer's own frame
/// (their base in the top-left), +1 for own pawns, -1 for the opponent's,
/// followed by the fraction of own and opponent pawns outside their bases.
pub fn board_features(board: &BoardState, viewer: Player) -> Vec<f64> {
    let p = &board.params;
    let mut out = vec![0.0; input_size(p)];
    let mut outside = [0usize; 2];
    let mut total = [0usize; 2];
    for (at, pawn) in board.pawns() {
        let local = p.orient(viewer, at);
        let idx = local.row as usize * p.n + local.col as usize;
        let side = usize::from(pawn.owner != viewer);
        out[idx] = if side == 0 { 1.0 } else { -1.0 };
        total[side] += 1;
        if !p.in_base(pawn.owner, at) {
            outside[side] += 1;
        }
    }
    let frac = |k: usize| {
        if total[k] == 0 {
            0.0
        } else {
            outside[k] as f64 / total[k] as f64
        }
    };
    out[p.cells()] = frac(0);
    out[p.cells() + 1] = frac(1);
    out
}

/// Features of the afterstate reached by playing `mv`, from the mover's
/// point of view.
pub fn encode_features(state: &BoardState, mv: RlMove) -> Result<Vec<f64>, BoardError> {
    let after = apply_move(state, mv)?;
    Ok(board_features(&after, state.to_move))
}

/// Index of `at` (absolute frame) inside the cell block of `viewer`'s
/// feature vector.
pub fn cell_index(params: &BoardParams, viewer: Player, at: Coord) -> usize {
    let local = params.orient(viewer, at);
    local.row as usize * params.n + local.col as usize
}
