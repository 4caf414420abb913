use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scones_bench::gaussian_fixture;
use scones_core::discrete::{dual_ascent_generic, sinkhorn_kl, DiscreteInstance};
use scones_core::dual::{train_dual, TrainConfig};
use scones_core::mlp::{Mlp, MlpSpec, OptimizerConfig, Tape};
use scones_core::sampler::{sample_scones_with_rng, GaussianScoreOracle, SamplerConfig};
use scones_core::{Compatibility, Rng};

fn discrete_solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("discrete");
    for n in [10usize, 20] {
        let inst = DiscreteInstance::random(n, n, 2, true, 0).unwrap();
        let cost = inst.cost_matrix().unwrap();
        let (s, t) = (&inst.source.weights, &inst.target.weights);
        group.bench_with_input(BenchmarkId::new("sinkhorn", n), &n, |b, _| {
            b.iter(|| sinkhorn_kl(&cost, s, t, 0.5, 1e-10, 100_000).unwrap())
        });
        let compat = Compatibility::kl(0.5).unwrap();
        group.bench_with_input(BenchmarkId::new("generic_ascent", n), &n, |b, _| {
            b.iter(|| dual_ascent_generic(&cost, s, t, &compat, 1.0, 1e-10, 100_000).unwrap())
        });
    }
    group.finish();
}

fn mlp_passes(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp");
    for d in [2usize, 16] {
        let net = Mlp::init(MlpSpec::potential(d, &[64, 64]).unwrap(), 0).unwrap();
        let x: Vec<f64> = (0..d).map(|k| 0.1 * k as f64).collect();
        let mut tape = Tape::default();
        group.bench_with_input(BenchmarkId::new("forward", d), &d, |b, _| {
            b.iter(|| net.forward_scalar(black_box(&x), &mut tape))
        });
        let mut grad = vec![0.0; d];
        group.bench_with_input(BenchmarkId::new("input_grad", d), &d, |b, _| {
            b.iter(|| net.input_grad_tape(black_box(&x), &mut tape, &mut grad))
        });
    }
    group.finish();
}

fn dual_training(c: &mut Criterion) {
    let (inst, pair) = gaussian_fixture(2, 64);
    let cfg = TrainConfig {
        iterations: 10,
        batch_size: Some(128),
        optimizer: OptimizerConfig::adam(1e-3),
        seed: 0,
        eval_samples: 16,
    };
    c.bench_function("train_dual/10x128", |b| {
        b.iter(|| train_dual(pair.clone(), &inst.source, &inst.target, &cfg).unwrap())
    });
}

fn langevin(c: &mut Criterion) {
    let mut group = c.benchmark_group("scones_chain");
    for d in [2usize, 16] {
        let (inst, pair) = gaussian_fixture(d, 64);
        let oracle = GaussianScoreOracle::new(&inst.target).unwrap();
        let cfg = SamplerConfig {
            epsilon: 0.1,
            steps: 100,
            ..SamplerConfig::default()
        };
        let x = vec![0.5; d];
        group.bench_with_input(BenchmarkId::new("100_steps", d), &d, |b, _| {
            let mut rng = Rng::new(0);
            b.iter(|| sample_scones_with_rng(&pair, &oracle, &x, &cfg, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, discrete_solvers, mlp_passes, dual_training, langevin);
criterion_main!(benches);
