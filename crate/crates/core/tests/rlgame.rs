use gridarena_core::game::TdParams;
use gridarena_core::rlgame::*;
use gridarena_core::seed::{self, Rng};
use gridarena_core::AgentCharacter;
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};

/// Independent move enumerator: scan every cell, try every direction, and
/// apply the movement rules directly.
fn brute_force_moves(s: &BoardState) -> Vec<RlMove> {
    let p = s.params;
    let n = p.n as i32;
    let mut out = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let from = Coord::new(r as usize, c as usize);
            let Some(pawn) = s.get(from) else { continue };
            if pawn.owner != s.to_move {
                continue;
            }
            for (dr, dc) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (tr, tc) = (r + dr, c + dc);
                if tr < 0 || tc < 0 || tr >= n || tc >= n {
                    continue;
                }
                let to = Coord::new(tr as usize, tc as usize);
                let own_base = if pawn.owner == Player::White {
                    (tr as usize) < p.a && (tc as usize) < p.a
                } else {
                    tr as usize >= p.n - p.a && tc as usize >= p.n - p.a
                };
                if s.get(to).is_none() && !(pawn.left_base && own_base) {
                    out.push(RlMove { from, to });
                }
            }
        }
    }
    out.sort();
    out
}

fn random_position(params: BoardParams, plies: usize, rng: &mut Rng) -> BoardState {
    let mut s = initial_board(params).unwrap();
    for _ in 0..plies {
        let moves = legal_moves(&s);
        if moves.is_empty() {
            break;
        }
        let mv = moves[rng.random_range(0..moves.len())];
        s = apply_move(&s, mv).unwrap();
    }
    s
}

/// Point-reflects the board and swaps pawn colours and the side to move.
fn mirror(s: &BoardState) -> BoardState {
    let mut m = BoardState::empty(s.params).with_max_moves(s.max_moves);
    for (at, pawn) in s.pawns() {
        m.set(
            s.params.orient(Player::Black, at),
            Some(Pawn {
                owner: pawn.owner.other(),
                left_base: pawn.left_base,
            }),
        );
    }
    m.to_move = s.to_move.other();
    m.move_count = s.move_count;
    m
}

#[test]
fn initial_moves_match_brute_force() {
    let s = initial_board(BoardParams::new(5, 2, 4).unwrap()).unwrap();
    let moves = legal_moves(&s);
    assert_eq!(moves, brute_force_moves(&s));
    assert!(!moves.is_empty());
}

#[test]
fn random_positions_match_brute_force() {
    let mut rng = Rng::seed_from_u64(5);
    for params in [
        BoardParams::new(5, 2, 4).unwrap(),
        BoardParams::default(),
        BoardParams::new(7, 3, 5).unwrap(),
    ] {
        for plies in 0..60 {
            let s = random_position(params, plies, &mut rng);
            if terminal(&s).is_none() {
                assert_eq!(
                    legal_moves(&s),
                    brute_force_moves(&s),
                    "after {plies} plies"
                );
            }
        }
    }
}

#[test]
fn mirrored_colour_swapped_position_encodes_identically() {
    let mut rng = Rng::seed_from_u64(17);
    let params = BoardParams::default();
    let mut checked = 0;
    for plies in 0..200 {
        let s = random_position(params, plies % 40, &mut rng);
        let moves = legal_moves(&s);
        if moves.is_empty() {
            continue;
        }
        let mv = moves[rng.random_range(0..moves.len())];
        let m = mirror(&s);
        let mv_m = RlMove {
            from: params.orient(Player::Black, mv.from),
            to: params.orient(Player::Black, mv.to),
        };
        assert_eq!(
            encode_features(&s, mv).unwrap(),
            encode_features(&m, mv_m).unwrap()
        );

        // Seen by the other side, every cell flips sign.
        let after = apply_move(&s, mv).unwrap();
        let mine = board_features(&after, s.to_move);
        let theirs = board_features(&after, s.to_move.other());
        for r in 0..params.n {
            for c in 0..params.n {
                let at = Coord::new(r, c);
                assert_eq!(
                    mine[cell_index(&params, s.to_move, at)],
                    -theirs[cell_index(&params, s.to_move.other(), at)]
                );
            }
        }
        checked += 1;
    }
    assert!(checked > 150);
}

#[test]
fn topology_for_board_sizes() {
    for n in 4..=10 {
        let params = BoardParams::new(n, 2, 1).unwrap();
        let net = ValueNetwork::new(input_size(&params), 0);
        assert_eq!(net.input_size(), n * n + 2);
        assert_eq!(net.hidden_size(), (n * n + 2).div_ceil(2));
        assert_eq!(net.output_size(), 1);
    }
}

/// Central finite differences of the network output, one parameter at a
/// time.
fn numeric_gradient(net: &ValueNetwork, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|i| {
            let w = probe.params()[i];
            probe.params_mut()[i] = w + h;
            let up = probe.value(x).unwrap();
            probe.params_mut()[i] = w - h;
            let down = probe.value(x).unwrap();
            probe.params_mut()[i] = w;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(123);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let net = ValueNetwork::random(27, trial, 1.0);
        let x: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let (_, analytic) = net.value_and_gradient(&x).unwrap();
        let numeric = numeric_gradient(&net, &x, 1e-5);
        for (a, f) in analytic.iter().zip(&numeric) {
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn value_stays_in_open_unit_interval() {
    let mut rng = Rng::seed_from_u64(8);
    for t in 0..10_000u64 {
        let net = ValueNetwork::random(6, t, 5.0);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..=3.0)).collect();
        let v = net.value(&x).unwrap();
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
}

#[test]
fn full_exploration_is_uniform() {
    let s = initial_board(BoardParams::new(5, 2, 2).unwrap()).unwrap();
    let moves = legal_moves(&s);
    assert_eq!(moves.len(), 3);
    let net = ValueNetwork::new(input_size(&s.params), 1);
    let mut rng = Rng::seed_from_u64(99);
    let mut counts = [0u32; 3];
    let draws = 10_000;
    for _ in 0..draws {
        let mv = select_move(&net, &s, 1.0, &mut rng).unwrap();
        counts[moves.iter().position(|m| *m == mv).unwrap()] += 1;
    }
    let expected = f64::from(draws) / 3.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (f64::from(c) - expected).powi(2) / expected)
        .sum();
    // Critical value of chi-square with 2 degrees of freedom at p = 0.001.
    assert!(chi2 < 13.816, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn greedy_choice_ignores_positive_affine_rescaling() {
    let mut rng = Rng::seed_from_u64(4);
    let params = BoardParams::default();
    for t in 0..50 {
        let s = random_position(params, t % 20, &mut rng);
        if terminal(&s).is_some() {
            continue;
        }
        let net = ValueNetwork::random(input_size(&params), t as u64, 2.0);
        let mut r1 = Rng::seed_from_u64(t as u64);
        let mut r2 = Rng::seed_from_u64(t as u64);
        let plain = select_move_by(&s, 0.0, &mut r1, |f| net.value(f))
            .unwrap()
            .0;
        let scaled = select_move_by(&s, 0.0, &mut r2, |f| Ok(3.5 * net.value(f)? - 7.0))
            .unwrap()
            .0;
        assert_eq!(plain, scaled);
    }
}

#[test]
fn match_is_deterministic_in_results_and_weights() {
    let w = RlGameWorkload::new(BoardParams::new(5, 2, 2).unwrap());
    let a = AgentCharacter::new("a", 1);
    let b = AgentCharacter::new("b", 2);
    let run = || {
        let mut na = ValueNetwork::new(27, 1);
        let mut nb = ValueNetwork::new(27, 2);
        let r = rlgame_play_match(
            w.board,
            w.max_moves,
            "m",
            [(&a, &mut na), (&b, &mut nb)],
            30,
            77,
        )
        .unwrap();
        (r, na, nb)
    };
    assert_eq!(run(), run());
}

#[test]
fn hundred_game_match_between_fresh_agents() {
    let params = BoardParams::default();
    let a = AgentCharacter::new("a", 1);
    let b = AgentCharacter::new("b", 2);
    let mut na = ValueNetwork::new(input_size(&params), 1);
    let mut nb = ValueNetwork::new(input_size(&params), 2);
    let r = rlgame_play_match(
        params,
        DEFAULT_MAX_MOVES,
        "m",
        [(&a, &mut na), (&b, &mut nb)],
        100,
        3,
    )
    .unwrap();
    assert!(r.is_consistent());
    assert_eq!(r.games_played, 100);
}

#[test]
fn trained_agent_beats_random_mover() {
    let params = BoardParams::new(5, 2, 2).unwrap();
    let a = AgentCharacter::new("a", 1);
    let b = AgentCharacter::new("b", 2);
    let mut na = ValueNetwork::new(input_size(&params), a.network_seed);
    let mut nb = ValueNetwork::new(input_size(&params), b.network_seed);
    rlgame_play_match(
        params,
        DEFAULT_MAX_MOVES,
        "train",
        [(&a, &mut na), (&b, &mut nb)],
        5_000,
        seed::derive_seed(2024, &[]),
    )
    .unwrap();
    let record = evaluate_against_random(params, DEFAULT_MAX_MOVES, &na, 500, 9).unwrap();
    let rate = f64::from(record.wins) / 500.0;
    assert!(rate > 0.60, "win rate {rate:.3} ({record:?})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pawns_never_increase_and_terminal_absorbs(seed in any::<u64>(), plies in 0usize..300) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut s = initial_board(BoardParams::new(6, 2, 3).unwrap()).unwrap().with_max_moves(200);
        let mut count = s.pawns().count();
        for _ in 0..plies {
            let moves = legal_moves(&s);
            if terminal(&s).is_some() {
                prop_assert!(moves.is_empty());
                break;
            }
            prop_assert!(!moves.is_empty(), "non-terminal position without moves");
            let mv = moves[rng.random_range(0..moves.len())];
            s = apply_move(&s, mv).unwrap();
            let now = s.pawns().count();
            prop_assert!(now <= count);
            count = now;
        }
    }

    #[test]
    fn td_step_is_finite_for_sane_inputs(seed in any::<u64>(), target in 0.0f64..=1.0) {
        let mut net = ValueNetwork::random(10, seed, 1.0);
        let mut traces = Traces::for_network(&net);
        let x: Vec<f64> = (0..10).map(|i| ((seed >> i) & 1) as f64).collect();
        let delta = td_update(&mut net, &x, TdTarget::Terminal(target), &TdParams::default(), &mut traces).unwrap();
        prop_assert!(delta.is_finite());
        prop_assert!(net.is_finite());
    }
}
