use std::hint::black_box;
use std::path::Path;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DMatrix;
use plume_scout::agent::{shared, AgentConfig, C51Agent, StateEncoder, Transition};
use plume_scout::assimilation::{blue_analysis, Observation, ObservationSet};
use plume_scout::{Env, EnvConfig, ScenarioFile};

fn scenario() -> Arc<plume_scout::Scenario> {
    Arc::new(ScenarioFile::paperlike().build(Path::new(".")).unwrap())
}

fn blue(c: &mut Criterion) {
    let sc = scenario();
    let mut group = c.benchmark_group("blue_analysis");
    for m in [10usize, 40, 80] {
        let obs = ObservationSet::from_entries(
            (0..m).map(|i| Observation { cell: (i * 37) % 100, value: 1.0 + i as f64, agent: 0, step: i }).collect(),
        );
        group.bench_function(format!("n100_m{m}"), |b| {
            b.iter(|| blue_analysis(&sc.background, &sc.background_cov, black_box(&obs), 0.0).unwrap())
        });
    }
    group.finish();
}

fn env_step(c: &mut Criterion) {
    let sc = scenario();
    let env = Env::new(sc.clone(), EnvConfig::new(sc.grid(), 2, 2000.0)).unwrap();
    c.bench_function("env_step_n2", |b| {
        b.iter_batched(
            || env.reset(11).unwrap(),
            |mut state| {
                let a = (state.drones[0].cell + 1) % 100;
                let b2 = (state.drones[1].cell + 10) % 100;
                env.step(&mut state, &[Some(a), Some(b2)]).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn network(c: &mut Criterion) {
    let agent = C51Agent::new(AgentConfig::default(), 104, 100, 1).unwrap();
    let x: Vec<f64> = (0..104).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("forward_single", |b| b.iter(|| agent.online.forward(black_box(&x)).unwrap()));
    let batch = DMatrix::from_fn(104, 128, |i, j| ((i * j) as f64 * 0.01).cos());
    c.bench_function("logits_batch_128", |b| b.iter(|| agent.online.logits_batch(black_box(&batch)).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let sc = scenario();
    let enc = StateEncoder::new(&sc.background, 2).unwrap();
    let mut agent = C51Agent::new(AgentConfig::default(), enc.dim(), 100, 3).unwrap();
    for k in 0..512 {
        let s = shared((0..enc.dim()).map(|i| ((i * k) as f64 * 0.013).sin()).collect());
        agent.remember(Transition {
            state: s.clone(),
            action: k % 100,
            reward: 0.01 * (k % 7) as f64,
            next_state: s,
            done: k % 40 == 39,
            next_mask: shared(vec![true; 100]),
        });
    }
    c.bench_function("c51_train_step_b128", |b| b.iter(|| agent.train_step().unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = blue, env_step, network, train_step
}
criterion_main!(benches);
