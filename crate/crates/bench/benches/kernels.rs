use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aoii_sched::config::ProcessModel;
use aoii_sched::env::Environment;
use aoii_sched::mappo::wiac_fuse;
use aoii_sched::nn::{Activation, GradBuffer, Mlp};
use aoii_sched::state::ActionVector;
use aoii_sched::whittle::{build_table, IndexGrid};
use aoii_sched_bench::fixture_config;

fn table_build(c: &mut Criterion) {
    let grid = IndexGrid {
        c_high: 1000.0,
        ..IndexGrid::default()
    };
    let models = [ProcessModel::new(10, 0.6, 1.0)];
    c.bench_function("whittle column x<=200", |b| {
        b.iter(|| build_table(black_box(&models), 200, &grid).unwrap())
    });
}

fn env_step(c: &mut Criterion) {
    let mut env = Environment::new(fixture_config(6, 2), 1).unwrap();
    let idle = ActionVector::idle(2);
    c.bench_function("env step tiny", |b| {
        b.iter(|| {
            let s = env.step(black_box(&idle)).unwrap();
            if s.next_state.aoii.iter().any(|&x| x > 1000) {
                env.reset();
            }
        })
    });
}

fn actor_passes(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(&[9, 128, 128, 4], Activation::Tanh, &mut rng);
    let input = vec![0.1; 9];
    c.bench_function("actor forward 9-128-128-4", |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
    let mut grads = GradBuffer::zeros_like(&net);
    let cache = net.forward_cached(&input).unwrap();
    let g = [0.1, -0.2, 0.05, 0.05];
    c.bench_function("actor backward 9-128-128-4", |b| {
        b.iter(|| net.backward(black_box(&cache), &g, &mut grads).unwrap())
    });
}

fn fuse(c: &mut Criterion) {
    let cfg = fixture_config(90, 10);
    let table = build_table(&cfg.monitors, 100, &IndexGrid { c_high: 2000.0, ..IndexGrid::default() }).unwrap();
    let env = Environment::new(cfg, 2).unwrap();
    let mut state = env.state().clone();
    for (i, x) in state.aoii.iter_mut().enumerate() {
        *x = (i * 7 % 23) as u64;
    }
    let choices = [3, 1, 3, 2, 3, 4, 3, 3, 1, 3];
    c.bench_function("wiac fuse 90x10", |b| b.iter(|| wiac_fuse(black_box(&state), &choices, &table, 2)));
}

criterion_group!(benches, table_build, env_step, actor_passes, fuse);
criterion_main!(benches);
