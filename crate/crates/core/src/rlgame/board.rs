use std::fmt;

/// Square board of side `n` with two `a`×`a` bases in opposite corners,
/// each starting with `beta` pawns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoardParams {
    pub n: usize,
    pub a: usize,
    pub beta: usize,
}

impl Default for BoardParams {
    fn default() -> Self {
        Self {
            n: 8,
            a: 2,
            beta: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoardError {
    #[error("invalid board parameters: {0}")]
    InvalidParams(&'static str),
    #[error("illegal move {mv}: {reason}")]
    IllegalMove { mv: RlMove, reason: &'static str },
    #[error("no legal moves for {0:?}")]
    NoLegalMoves(Player),
}

impl BoardParams {
    pub fn new(n: usize, a: usize, beta: usize) -> Result<Self, BoardError> {
        if a < 2 {
            return Err(BoardError::InvalidParams("base side a must be at least 2"));
        }
        if a >= n {
            return Err(BoardError::InvalidParams(
                "base side a must be smaller than board side n (a < n)",
            ));
        }
        if 2 * a > n {
            return Err(BoardError::InvalidParams(
                "bases overlap: 2a must not exceed n",
            ));
        }
        if beta < 1 {
            return Err(BoardError::InvalidParams("beta must be at least 1"));
        }
        if beta > a * a {
            return Err(BoardError::InvalidParams("beta exceeds the a*a base cells"));
        }
        if n > 255 {
            return Err(BoardError::InvalidParams(
                "board side n must be at most 255",
            ));
        }
        Ok(Self { n, a, beta })
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn in_base(&self, owner: Player, at: Coord) -> bool {
        let (r, c) = (at.row as usize, at.col as usize);
        match owner {
            Player::White => r < self.a && c < self.a,
            Player::Black => r >= self.n - self.a && c >= self.n - self.a,
        }
    }

    /// Base cells of `owner` in fill order: row-major as seen from that
    /// player's own corner.
    pub fn base_cells(&self, owner: Player) -> Vec<Coord> {
        let mut out = Vec::with_capacity(self.a * self.a);
        for r in 0..self.a {
            for c in 0..self.a {
                out.push(self.orient(owner, Coord::new(r, c)));
            }
        }
        out
    }

    /// Maps a coordinate in `viewer`'s frame to the absolute board frame
    /// (the map is its own inverse). White's frame is the absolute frame.
    pub fn orient(&self, viewer: Player, at: Coord) -> Coord {
        match viewer {
            Player::White => at,
            Player::Black => Coord::new(self.n - 1 - at.row as usize, self.n - 1 - at.col as usize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Player {
    White,
    Black,
}

impl Player {
    pub fn other(self) -> Player {
        match self {
            Player::White => Player::Black,
            Player::Black => Player::White,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub row: u8,
    pub col: u8,
}

impl Coord {
    pub fn new(row: usize, col: usize) -> Self {
        Self {
            row: row as u8,
            col: col as u8,
        }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RlMove {
    pub from: Coord,
    pub to: Coord,
}

impl fmt::Display for RlMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pawn {
    pub owner: Player,
    /// Set once the pawn steps out of its own base; it may never go back.
    pub left_base: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Winner(Player),
    Draw,
}

pub const DEFAULT_MAX_MOVES: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoardState {
    pub params: BoardParams,
    cells: Vec<Option<Pawn>>,
    pub to_move: Player,
    pub move_count: u32,
    pub max_moves: u32,
}

impl BoardState {
    /// An empty board, white to move. Used to build positions in tests.
    pub fn empty(params: BoardParams) -> Self {
        Self {
            params,
            cells: vec![None; params.cells()],
            to_move: Player::White,
            move_count: 0,
            max_moves: DEFAULT_MAX_MOVES,
        }
    }

    pub fn with_max_moves(mut self, max_moves: u32) -> Self {
        self.max_moves = max_moves;
        self
    }

    fn idx(&self, at: Coord) -> usize {
        at.row as usize * self.params.n + at.col as usize
    }

    pub fn get(&self, at: Coord) -> Option<Pawn> {
        self.cells[self.idx(at)]
    }

    pub fn set(&mut self, at: Coord, pawn: Option<Pawn>) {
        let i = self.idx(at);
        self.cells[i] = pawn;
    }

    pub fn pawns(&self) -> impl Iterator<Item = (Coord, Pawn)> + '_ {
        let n = self.params.n;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.map(|p| (Coord::new(i / n, i % n), p)))
    }

    pub fn pawn_count(&self, owner: Player) -> usize {
        self.pawns().filter(|(_, p)| p.owner == owner).count()
    }

    fn neighbours(&self, at: Coord) -> impl Iterator<Item = Coord> {
        let n = self.params.n as i32;
        let (r, c) = (at.row as i32, at.col as i32);
        // Lexicographic order of the resulting coordinates.
        [(r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)]
            .into_iter()
            .filter(move |&(r, c)| r >= 0 && c >= 0 && r < n && c < n)
            .map(|(r, c)| Coord::new(r as usize, c as usize))
    }

    fn can_step(&self, pawn: Pawn, to: Coord) -> bool {
        self.get(to).is_none() && !(pawn.left_base && self.params.in_base(pawn.owner, to))
    }

    fn pawn_moves(&self, from: Coord, pawn: Pawn) -> impl Iterator<Item = RlMove> + '_ {
        self.neighbours(from)
            .filter(move |&to| self.can_step(pawn, to))
            .map(move |to| RlMove { from, to })
    }

    fn has_move(&self, from: Coord, pawn: Pawn) -> bool {
        self.pawn_moves(from, pawn).next().is_some()
    }

    /// Removes every pawn of `owner` that currently has no legal move.
    fn remove_stranded(&mut self, owner: Player) -> usize {
        let stranded: Vec<Coord> = self
            .pawns()
            .filter(|&(at, p)| p.owner == owner && !self.has_move(at, p))
            .map(|(at, _)| at)
            .collect();
        for &at in &stranded {
            self.set(at, None);
        }
        stranded.len()
    }
}

pub fn initial_board(params: BoardParams) -> Result<BoardState, BoardError> {
    let params = BoardParams::new(params.n, params.a, params.beta)?;
    let mut state = BoardState::empty(params);
    for owner in [Player::White, Player::Black] {
        for at in params.base_cells(owner).into_iter().take(params.beta) {
            state.set(
                at,
                Some(Pawn {
                    owner,
                    left_base: false,
                }),
            );
        }
    }
    Ok(state)
}

pub fn terminal(state: &BoardState) -> Option<Terminal> {
    let p = &state.params;
    let mut counts = [0usize; 2];
    for (at, pawn) in state.pawns() {
        if p.in_base(pawn.owner.other(), at) {
            return Some(Terminal::Winner(pawn.owner));
        }
        counts[pawn.owner as usize] += 1;
    }
    if counts[Player::White as usize] == 0 {
        return Some(Terminal::Winner(Player::Black));
    }
    if counts[Player::Black as usize] == 0 {
        return Some(Terminal::Winner(Player::White));
    }
    if state.move_count >= state.max_moves {
        return Some(Terminal::Draw);
    }
    None
}

/// Legal moves for the side to move, ordered by `from` then `to`. Empty
/// once the game is over.
pub fn legal_moves(state: &BoardState) -> Vec<RlMove> {
    if terminal(state).is_some() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (from, pawn) in state.pawns() {
        if pawn.owner == state.to_move {
            out.extend(state.pawn_moves(from, pawn));
        }
    }
    out
}

/// Plays `mv`, hands the turn over, and removes any of the next player's
/// pawns that are left without a move.
pub fn apply_move(state: &BoardState, mv: RlMove) -> Result<BoardState, BoardError> {
    let illegal = |reason| Err(BoardError::IllegalMove { mv, reason });
    let n = state.params.n as u8;
    if mv.from.row >= n || mv.from.col >= n || mv.to.row >= n || mv.to.col >= n {
        return illegal("off the board");
    }
    if terminal(state).is_some() {
        return illegal("game is over");
    }
    let Some(pawn) = state.get(mv.from) else {
        return illegal("no pawn on the source cell");
    };
    if pawn.owner != state.to_move {
        return illegal("pawn belongs to the other player");
    }
    let dr = (mv.from.row as i32 - mv.to.row as i32).abs();
    let dc = (mv.from.col as i32 - mv.to.col as i32).abs();
    if dr + dc != 1 {
        return illegal("not an orthogonal single step");
    }
    if state.get(mv.to).is_some() {
        return illegal("destination is occupied");
    }
    if pawn.left_base && state.params.in_base(pawn.owner, mv.to) {
        return illegal("pawn may not re-enter its own base");
    }

    let mut next = state.clone();
    next.set(mv.from, None);
    next.set(
        mv.to,
        Some(Pawn {
            owner: pawn.owner,
            left_base: pawn.left_base || !state.params.in_base(pawn.owner, mv.to),
        }),
    );
    next.to_move = state.to_move.other();
    next.move_count += 1;
    if !state.params.in_base(pawn.owner.other(), mv.to) {
        next.remove_stranded(next.to_move);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pawn(owner: Player) -> Option<Pawn> {
        Some(Pawn {
            owner,
            left_base: true,
        })
    }

    #[test]
    fn full_bases_on_default_board() {
        let s = initial_board(BoardParams::default()).unwrap();
        assert_eq!(s.pawn_count(Player::White), 4);
        assert_eq!(s.pawn_count(Player::Black), 4);
        for at in s.params.base_cells(Player::White) {
            assert_eq!(s.get(at).unwrap().owner, Player::White);
        }
        assert_eq!(s.to_move, Player::White);
        assert_eq!(s.move_count, 0);
    }

    #[test]
    fn partial_base_fill_order() {
        let p = BoardParams::new(5, 2, 2).unwrap();
        let s = initial_board(p).unwrap();
        let white: Vec<Coord> = s
            .pawns()
            .filter(|(_, p)| p.owner == Player::White)
            .map(|(c, _)| c)
            .collect();
        let black: Vec<Coord> = s
            .pawns()
            .filter(|(_, p)| p.owner == Player::Black)
            .map(|(c, _)| c)
            .collect();
        assert_eq!(white, vec![Coord::new(0, 0), Coord::new(0, 1)]);
        assert_eq!(black, vec![Coord::new(4, 3), Coord::new(4, 4)]);
    }

    #[test]
    fn invalid_params_name_the_constraint() {
        let err = BoardParams::new(3, 3, 1).unwrap_err();
        assert!(err.to_string().contains("a < n"), "{err}");
        assert!(BoardParams::new(8, 1, 1).is_err());
        assert!(BoardParams::new(8, 2, 5).is_err());
        assert!(BoardParams::new(8, 2, 0).is_err());
        assert!(BoardParams::new(5, 3, 1).is_err());
    }

    #[test]
    fn interior_pawn_has_four_moves() {
        let p = BoardParams::new(7, 2, 1).unwrap();
        let mut s = BoardState::empty(p);
        s.set(Coord::new(3, 3), pawn(Player::White));
        s.set(Coord::new(6, 6), pawn(Player::Black));
        let moves = legal_moves(&s);
        assert_eq!(moves.len(), 4);
        let targets: Vec<Coord> = moves.iter().map(|m| m.to).collect();
        assert_eq!(
            targets,
            vec![
                Coord::new(2, 3),
                Coord::new(3, 2),
                Coord::new(3, 4),
                Coord::new(4, 3)
            ]
        );
    }

    #[test]
    fn boxed_in_pawn_contributes_nothing() {
        let p = BoardParams::new(7, 2, 1).unwrap();
        let mut s = BoardState::empty(p);
        s.set(Coord::new(3, 3), pawn(Player::White));
        for at in [(2, 3), (3, 2), (3, 4), (4, 3)] {
            s.set(Coord::new(at.0, at.1), pawn(Player::Black));
        }
        s.set(Coord::new(0, 6), pawn(Player::White));
        let moves = legal_moves(&s);
        assert!(moves.iter().all(|m| m.from == Coord::new(0, 6)));
        assert_eq!(moves.len(), 2);
    }

    #[test]
    fn no_reentry_into_own_base() {
        let p = BoardParams::new(6, 2, 1).unwrap();
        let mut s = BoardState::empty(p);
        s.set(Coord::new(0, 2), pawn(Player::White));
        s.set(Coord::new(5, 5), pawn(Player::Black));
        let moves = legal_moves(&s);
        assert!(!moves.iter().any(|m| m.to == Coord::new(0, 1)));
        let err = apply_move(
            &s,
            RlMove {
                from: Coord::new(0, 2),
                to: Coord::new(0, 1),
            },
        )
        .unwrap_err();
        assert!(matches!(err, BoardError::IllegalMove { .. }));
    }

    #[test]
    fn leaving_the_base_sets_the_flag() {
        let s = initial_board(BoardParams::new(6, 2, 1).unwrap()).unwrap();
        let s = apply_move(
            &s,
            RlMove {
                from: Coord::new(0, 0),
                to: Coord::new(0, 1),
            },
        )
        .unwrap();
        assert!(!s.get(Coord::new(0, 1)).unwrap().left_base);
        let s = apply_move(
            &s,
            RlMove {
                from: Coord::new(5, 5),
                to: Coord::new(4, 5),
            },
        )
        .unwrap();
        let s = apply_move(
            &s,
            RlMove {
                from: Coord::new(0, 1),
                to: Coord::new(0, 2),
            },
        )
        .unwrap();
        assert!(s.get(Coord::new(0, 2)).unwrap().left_base);
    }

    #[test]
    fn entering_opponent_base_wins() {
        let p = BoardParams::new(5, 2, 1).unwrap();
        let mut s = BoardState::empty(p);
        s.set(Coord::new(2, 3), pawn(Player::White));
        s.set(Coord::new(4, 4), pawn(Player::Black));
        let s = apply_move(
            &s,
            RlMove {
                from: Coord::new(2, 3),
                to: Coord::new(3, 3),
            },
        )
        .unwrap();
        assert_eq!(terminal(&s), Some(Terminal::Winner(Player::White)));
        assert!(legal_moves(&s).is_empty());
    }

    #[test]
    fn no_pawns_left_loses() {
        let p = BoardParams::new(5, 2, 1).unwrap();
        let mut s = BoardState::empty(p);
        s.set(Coord::new(2, 2), pawn(Player::White));
        assert_eq!(terminal(&s), Some(Terminal::Winner(Player::White)));
    }

    #[test]
    fn stranded_pawn_is_removed_on_its_turn() {
        let p = BoardParams::new(6, 2, 1).unwrap();
        let mut s = BoardState::empty(p);
        // Black pawn in the top-right corner, hemmed in once white closes the gap.
        s.set(Coord::new(0, 5), pawn(Player::Black));
        s.set(Coord::new(0, 4), pawn(Player::White));
        s.set(Coord::new(2, 5), pawn(Player::White));
        s.set(Coord::new(3, 3), pawn(Player::Black));
        let s = apply_move(
            &s,
            RlMove {
                from: Coord::new(2, 5),
                to: Coord::new(1, 5),
            },
        )
        .unwrap();
        assert_eq!(s.get(Coord::new(0, 5)), None);
        assert_eq!(s.pawn_count(Player::Black), 1);
    }

    #[test]
    fn illegal_moves_are_rejected() {
        let s = initial_board(BoardParams::default()).unwrap();
        let occupied = RlMove {
            from: Coord::new(0, 0),
            to: Coord::new(0, 1),
        };
        assert!(apply_move(&s, occupied).is_err());
        let theirs = RlMove {
            from: Coord::new(7, 7),
            to: Coord::new(7, 6),
        };
        assert!(apply_move(&s, theirs).is_err());
        let diagonal = RlMove {
            from: Coord::new(1, 1),
            to: Coord::new(2, 2),
        };
        assert!(apply_move(&s, diagonal).is_err());
    }

    #[test]
    fn shuttle_loop_hits_the_draw_cap() {
        let p = BoardParams::new(6, 2, 1).unwrap();
        let mut s = BoardState::empty(p).with_max_moves(10);
        s.set(Coord::new(2, 2), pawn(Player::White));
        s.set(Coord::new(3, 3), pawn(Player::Black));
        let shuttle = [
            (Coord::new(2, 2), Coord::new(2, 1)),
            (Coord::new(3, 3), Coord::new(3, 4)),
            (Coord::new(2, 1), Coord::new(2, 2)),
            (Coord::new(3, 4), Coord::new(3, 3)),
        ];
        for i in 0..10 {
            assert_eq!(terminal(&s), None, "ply {i}");
            let (from, to) = shuttle[i % 4];
            s = apply_move(&s, RlMove { from, to }).unwrap();
        }
        assert_eq!(s.move_count, 10);
        assert_eq!(terminal(&s), Some(Terminal::Draw));
        assert!(legal_moves(&s).is_empty());
    }
}
