use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gridarena_bench::{loaded_grid, manifest};
use gridarena_core::game::rsp::{play_rsp_match, TdLearner, UniformPolicy};
use gridarena_core::gridsim::GridTopology;
use gridarena_core::orchestrator::{Orchestrator, OrchestratorConfig};
use gridarena_core::rlgame::{input_size, rlgame_play_match, BoardParams, ValueNetwork};
use gridarena_core::tournament::{circle_pairings, generate_experiment, segment_experiment};
use gridarena_core::TdParams;

fn schedule(c: &mut Criterion) {
    c.bench_function("circle_pairings/126", |b| {
        b.iter(|| circle_pairings(black_box(126)))
    });
    let m = manifest("rsp", 126, 100);
    c.bench_function("segment_experiment/126", |b| {
        b.iter(|| segment_experiment(black_box(&m)).unwrap())
    });
}

fn workloads(c: &mut Criterion) {
    c.bench_function("rsp_td_match/100", |b| {
        b.iter(|| {
            let mut a = TdLearner::new(TdParams::default());
            let mut u = UniformPolicy;
            play_rsp_match("m", &mut a, &mut u, 100, black_box(7)).unwrap()
        })
    });
    let n_in = input_size(&BoardParams::new(8, 3, 3).unwrap());
    let net = ValueNetwork::new(n_in, 1);
    let x: Vec<f64> = (0..n_in).map(|i| (i % 3) as f64 - 1.0).collect();
    c.bench_function("value_and_gradient/66", |b| {
        b.iter(|| net.value_and_gradient(black_box(&x)).unwrap())
    });

    let board = BoardParams::new(5, 2, 2).unwrap();
    let agents = manifest("rlgame:5:2:2", 2, 10).agents;
    c.bench_function("rlgame_match/5x5/10", |b| {
        b.iter_batched(
            || {
                (
                    ValueNetwork::new(input_size(&board), 1),
                    ValueNetwork::new(input_size(&board), 2),
                )
            },
            |(mut na, mut nb)| {
                rlgame_play_match(
                    board,
                    200,
                    "m",
                    [(&agents[0], &mut na), (&agents[1], &mut nb)],
                    10,
                    3,
                )
                .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn grid(c: &mut Criterion) {
    c.bench_function("gridsim/500_jobs_50_wns", |b| {
        b.iter_batched(
            || loaded_grid(1, 50, 500),
            |mut g| g.run_to_completion().unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn experiment(c: &mut Criterion) {
    let m = manifest("rsp", 8, 20);
    c.bench_function("orchestrator/rsp_8_agents", |b| {
        b.iter_batched(
            || {
                let dir = tempfile::tempdir().unwrap();
                generate_experiment(&m, dir.path()).unwrap();
                dir
            },
            |dir| {
                let mut o = Orchestrator::launch(
                    dir.path(),
                    OrchestratorConfig::new(GridTopology::uniform(2, 4)),
                )
                .unwrap();
                o.run_to_end().unwrap()
            },
            BatchSize::PerIteration,
        )
    });
}

criterion_group!(benches, schedule, workloads, grid, experiment);
criterion_main!(benches);
