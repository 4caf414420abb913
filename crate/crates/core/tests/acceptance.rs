//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Run with `cargo test -p scones-core --test acceptance`. Positional
//! arguments restrict the run to the listed criterion numbers, e.g.
//! `cargo test -p scones-core --test acceptance -- 3 4`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use scones_core::discrete::{
    dual_ascent_generic, dual_value, logconcavity_check, plan_from_duals, primal_objective, sinkhorn_kl, CostMatrix,
    DiscreteInstance, EmpiricalMeasure, TransportPlan, DEFAULT_MAX_ITER,
};
use scones_core::dual::{DualPair, TrainConfig};
use scones_core::fdiv::{dual_penalty, h_regularizer, ALL_KINDS};
use scones_core::gaussian::{
    conditional_of_joint, entropic_plan, entropic_plan_for, random_instance, GaussianMeasure,
};
use scones_core::harness::{
    run_discrete_validation, run_gaussian_benchmark, run_swissroll, DiscreteConfig, GaussianBenchConfig,
    SwissrollConfig, METHOD_BP, METHOD_SCONES,
};
use scones_core::linalg::{empirical_covariance, inv_sqrtm_pd, sqrtm_psd};
use scones_core::mlp::{Activation, Mlp, MlpSpec};
use scones_core::sampler::{
    conditional_score, langevin_trajectory, sample_scones_batch, GaussianScoreOracle, SamplerConfig,
};
use scones_core::{Compatibility, CostKind, FDivKind, Matrix, RegParams, Rng};

type Outcome = Result<String, String>;

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scones-acceptance-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn within_budget(start: Instant, budget: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    if t > budget {
        Err(format!("{what} took {:.0}s, budget {:.0}s", t.as_secs_f64(), budget.as_secs_f64()))
    } else {
        Ok(())
    }
}

fn err(e: scones_core::Error) -> String {
    format!("error [{}]: {e}", e.category())
}

fn gaussian_benchmark() -> Outcome {
    let start = Instant::now();
    let cfg = GaussianBenchConfig {
        dims: vec![2, 16],
        trials: 3,
        samples: 10_000,
        ..GaussianBenchConfig::default()
    };
    let dir = scratch_dir("gaussian");
    let report = run_gaussian_benchmark(&cfg, 0, &dir).map_err(err)?;
    let _ = std::fs::remove_dir_all(&dir);
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (d, cap) in [(2usize, 1.0), (16, 5.0)] {
        let (Some(s), Some(b)) = (report.summary_for(d, METHOD_SCONES), report.summary_for(d, METHOD_BP)) else {
            return Err(format!("missing summary for d={d}"));
        };
        if s.trials_ok != cfg.trials || b.trials_ok != cfg.trials {
            failures.push(format!("d={d}: only {}/{} trials completed", s.trials_ok.min(b.trials_ok), cfg.trials));
        }
        notes.push(format!("d={d} scones {:.3} bp {:.2}", s.mean, b.mean));
        if !(s.mean <= cap) {
            failures.push(format!("d={d}: scones {:.3} > {cap}", s.mean));
        }
        if !(b.mean >= 5.0 * s.mean) {
            failures.push(format!("d={d}: bp {:.3} < 5x scones {:.3}", b.mean, s.mean));
        }
    }
    within_budget(start, Duration::from_secs(15 * 60), "benchmark")?;
    notes.push(format!("{:.0}s", start.elapsed().as_secs_f64()));
    if failures.is_empty() {
        Ok(notes.join(", "))
    } else {
        Err(failures.join("; "))
    }
}

fn stability_bound() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    for (k, (lambda, count)) in [(0.5, 7), (1.0, 7), (2.0, 6)].into_iter().enumerate() {
        let cfg = DiscreteConfig {
            lambda,
            instances: count,
            ..DiscreteConfig::default()
        };
        let dir = scratch_dir(&format!("discrete-{k}"));
        let report = run_discrete_validation(&cfg, 100 + k as u64, &dir).map_err(err)?;
        let _ = std::fs::remove_dir_all(&dir);
        rows.extend(report.rows.into_iter().map(|r| (lambda, r)));
    }
    let bad: Vec<String> = rows
        .iter()
        .filter(|(_, r)| r.status != "ok" || !r.holds || !(r.epsilon <= 1e-2))
        .map(|(l, r)| format!("lambda {l} instance {}: {} eps {:.2e} l1 {:.2e} bound {:.2e}", r.instance, r.status, r.epsilon, r.plan_l1, r.bound))
        .collect();
    within_budget(start, Duration::from_secs(5 * 60), "validation")?;
    let max_eps = rows.iter().map(|(_, r)| r.epsilon).fold(0.0, f64::max);
    if bad.is_empty() && rows.len() == 20 {
        Ok(format!("20/20 hold, max eps {max_eps:.2e}, {:.0}s", start.elapsed().as_secs_f64()))
    } else {
        Err(format!("{} of {} fail: {}", bad.len(), rows.len(), bad.join("; ")))
    }
}

fn strong_duality() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(3);
    let (mut worst_gap, mut worst_l1) = (0.0f64, 0.0f64);
    for case in 0..50u64 {
        let n = 2 + rng.index(19);
        let m = 2 + rng.index(19);
        let d = 1 + rng.index(3);
        let lambda = rng.uniform(0.1, 2.0);
        let inst = DiscreteInstance::random(n, m, d, case % 2 == 0, 1000 + case).map_err(err)?;
        let cost = inst.cost_matrix().map_err(err)?;
        let (sigma, tau) = (&inst.source.weights, &inst.target.weights);
        let compat = Compatibility::kl(lambda).map_err(err)?;
        let (plan, duals) = sinkhorn_kl(&cost, sigma, tau, lambda, 1e-13, DEFAULT_MAX_ITER).map_err(err)?;
        let j_star = dual_value(&cost, sigma, tau, &compat, &duals).map_err(err)?;
        let k = primal_objective(&cost, sigma, tau, FDivKind::Kl, lambda, &plan).map_err(err)?;
        let (generic, _) = dual_ascent_generic(&cost, sigma, tau, &compat, 1.0, 1e-13, DEFAULT_MAX_ITER).map_err(err)?;
        let generic_plan = plan_from_duals(&cost, sigma, tau, &compat, &generic).map_err(err)?;
        worst_gap = worst_gap.max((k - j_star).abs());
        worst_l1 = worst_l1.max(plan.l1_distance(&generic_plan));
    }
    within_budget(start, Duration::from_secs(2 * 60), "oracles")?;
    let msg = format!("max |K - J*| {worst_gap:.2e}, max plan l1 {worst_l1:.2e}");
    if worst_gap < 1e-7 && worst_l1 < 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// A point strictly inside `dom f*`, away from its boundary.
fn conjugate_point(kind: FDivKind, rng: &mut Rng) -> f64 {
    match kind.conjugate_upper() {
        Some(b) => rng.uniform(-4.0, b - 0.2),
        None => rng.uniform(-4.0, 4.0),
    }
}

fn registry() -> Outcome {
    let mut rng = Rng::new(4);
    let mut failures = Vec::new();

    // Fenchel-Young: f(t) + f*(w) >= t w
    let mut fy_violations = 0;
    for kind in ALL_KINDS {
        for _ in 0..500 {
            let t = rng.uniform(1e-3, 5.0);
            let w = conjugate_point(kind, &mut rng);
            let f = kind.primal(t).ok_or("primal undefined on (0, inf)")?;
            let conj = kind.conjugate(w).map_err(err)?;
            if f + conj - t * w < -1e-8 {
                fy_violations += 1;
            }
        }
    }
    if fy_violations > 0 {
        failures.push(format!("{fy_violations} Fenchel-Young violations"));
    }

    // d/dv H*(v) = M(v)
    let mut worst_fd = 0.0f64;
    for kind in ALL_KINDS {
        for _ in 0..200 {
            let lambda = rng.uniform(0.2, 5.0);
            let w = conjugate_point(kind, &mut rng);
            if kind == FDivKind::PearsonChi2 && (w / 2.0 + 1.0).abs() < 0.05 {
                continue; // hinge kink
            }
            let params = RegParams::new(lambda).map_err(err)?;
            let compat = Compatibility::new(kind, params).map_err(err)?;
            let v = lambda * w;
            let h = 1e-5 * lambda;
            let fd = (dual_penalty(kind, params, v + h).map_err(err)? - dual_penalty(kind, params, v - h).map_err(err)?)
                / (2.0 * h);
            let m = compat.m(v).map_err(err)?;
            worst_fd = worst_fd.max((fd - m).abs() / m.abs().max(1.0));
        }
    }
    if !(worst_fd <= 1e-6) {
        failures.push(format!("penalty derivative off by {worst_fd:.2e}"));
    }

    // KL: e M(v) = exp(v / lambda)
    let mut worst_kl = 0.0f64;
    for _ in 0..500 {
        let lambda = rng.uniform(0.1, 5.0);
        let v = lambda * rng.uniform(-10.0, 10.0);
        let m = Compatibility::kl(lambda).map_err(err)?.m(v).map_err(err)?;
        let want = (v / lambda).exp();
        worst_kl = worst_kl.max((std::f64::consts::E * m - want).abs() / want);
    }
    if !(worst_kl <= 1e-12) {
        failures.push(format!("KL compatibility off by {worst_kl:.2e}"));
    }

    // chi2: H(p2) - H(p1) - <grad H(p1), p2 - p1> >= (alpha/2) |p2 - p1|_1^2
    let kind = FDivKind::PearsonChi2;
    let alpha = kind.strong_convexity().ok_or("chi2 has no modulus")?;
    let mut sc_violations = 0;
    for _ in 0..100 {
        let n = 2 + rng.index(6);
        let m = 2 + rng.index(6);
        let sigma = random_simplex(n, &mut rng);
        let tau = random_simplex(m, &mut rng);
        let product = TransportPlan::product(&sigma, &tau);
        let p1 = random_plan(n, m, &mut rng);
        let p2 = random_plan(n, m, &mut rng);
        let h1 = h_regularizer(kind, &p1, &product).map_err(err)?;
        let h2 = h_regularizer(kind, &p2, &product).map_err(err)?;
        let mut linear = 0.0;
        let mut l1 = 0.0;
        for ((a, b), q) in p1.entries().iter().zip(p2.entries()).zip(product.entries()) {
            let grad = kind.primal_derivative(a / q).ok_or("chi2 derivative undefined")?;
            linear += grad * (b - a);
            l1 += (b - a).abs();
        }
        if h2 - h1 - linear < 0.5 * alpha * l1 * l1 - 1e-12 {
            sc_violations += 1;
        }
    }
    if sc_violations > 0 {
        failures.push(format!("{sc_violations} strong-convexity violations"));
    }

    let msg = format!("FY 0/3000, derivative {worst_fd:.1e}, KL {worst_kl:.1e}, chi2 convexity 0/100");
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(failures.join("; "))
    }
}

fn random_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| r / s).collect()
}

fn random_plan(n: usize, m: usize, rng: &mut Rng) -> TransportPlan {
    let w = random_simplex(n * m, rng);
    TransportPlan(Matrix::from_vec(n, m, w).expect("sizes agree"))
}

fn random_mlp(widths: Vec<usize>, rng: &mut Rng) -> Mlp {
    let spec = MlpSpec::new(widths, Activation::Linear).expect("valid widths");
    let mut net = Mlp::zeros(spec).expect("valid spec");
    for p in &mut net.params.data {
        *p = 0.6 * rng.normal();
    }
    net
}

fn random_point(d: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| scale * rng.normal()).collect()
}

/// Max componentwise error over the largest component.
fn rel_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

fn gradient_checks() -> Outcome {
    let mut rng = Rng::new(5);
    let h = 1e-6;
    let (mut worst_param, mut worst_input, mut worst_cond) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let d_in = 1 + rng.index(4);
        let widths = vec![d_in, 2 + rng.index(8), 2 + rng.index(8), 1];
        let net = random_mlp(widths, &mut rng);
        let x = random_point(d_in, 1.0, &mut rng);

        let analytic = net.param_grad(&x, &[1.0]).map_err(err)?;
        let mut numeric = vec![0.0; net.params.data.len()];
        for (k, g) in numeric.iter_mut().enumerate() {
            let mut plus = net.clone();
            plus.params.data[k] += h;
            let mut minus = net.clone();
            minus.params.data[k] -= h;
            *g = (plus.forward(&x).map_err(err)?[0] - minus.forward(&x).map_err(err)?[0]) / (2.0 * h);
        }
        worst_param = worst_param.max(rel_error(&analytic.data, &numeric));

        let analytic = net.input_grad(&x).map_err(err)?;
        let numeric = central_diff(|p| net.forward(p).map(|o| o[0]), &x, h).map_err(err)?;
        worst_input = worst_input.max(rel_error(&analytic, &numeric));
    }

    for case in 0..50 {
        let d = 1 + rng.index(3);
        // KL everywhere; softplus chi2 exercises a non-exponential compatibility
        let lambda = rng.uniform(0.5, 4.0);
        let compat = if case % 2 == 0 {
            Compatibility::kl(lambda).map_err(err)?
        } else {
            let params = RegParams::new(lambda).and_then(|p| p.with_softplus(4.0)).map_err(err)?;
            Compatibility::new(FDivKind::PearsonChi2, params).map_err(err)?
        };
        let phi = random_mlp(vec![d, 6, 6, 1], &mut rng);
        let psi = random_mlp(vec![d, 6, 6, 1], &mut rng);
        let pair = DualPair::new(phi, psi, compat, CostKind::SqEuclidean).map_err(err)?;
        let target = GaussianMeasure::new(random_point(d, 0.5, &mut rng), Matrix::identity(d).scale(rng.uniform(0.5, 3.0)))
            .map_err(err)?;
        let oracle = GaussianScoreOracle::new(&target).map_err(err)?;
        let x = random_point(d, 1.0, &mut rng);
        let y = random_point(d, 1.0, &mut rng);
        let analytic = conditional_score(&pair, &oracle, &x, &y).map_err(err)?;
        let log_cond = |p: &[f64]| -> scones_core::Result<f64> {
            let v = pair.violation(&x, p)?;
            Ok(target.log_density(p)? + pair.compat.m(v)?.ln())
        };
        let numeric = central_diff(log_cond, &y, h).map_err(err)?;
        worst_cond = worst_cond.max(rel_error(&analytic, &numeric));
    }
    let msg = format!("param {worst_param:.1e}, input {worst_input:.1e}, conditional score {worst_cond:.1e}");
    if worst_param <= 1e-5 && worst_input <= 1e-5 && worst_cond <= 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn central_diff(
    mut f: impl FnMut(&[f64]) -> scones_core::Result<f64>,
    at: &[f64],
    h: f64,
) -> scones_core::Result<Vec<f64>> {
    let mut p = at.to_vec();
    let mut out = vec![0.0; at.len()];
    for k in 0..at.len() {
        p[k] = at[k] + h;
        let up = f(&p)?;
        p[k] = at[k] - h;
        let down = f(&p)?;
        p[k] = at[k];
        out[k] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

fn langevin() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();

    // stationary variance of the discretized chain on N(0, 1)
    let eps = 0.1;
    let (chains, burn, steps) = (64u64, 1000usize, 100_000usize);
    let mut sum_sq = 0.0;
    for c in 0..chains {
        let mut rng = Rng::substream(6, "stationary", c);
        let traj = langevin_trajectory(
            |y, s| {
                s[0] = -y[0];
                Ok(())
            },
            &[0.0],
            eps,
            burn + steps,
            &mut rng,
        )
        .map_err(err)?;
        sum_sq += traj.as_slice()[burn..].iter().map(|v| v * v).sum::<f64>();
    }
    let var = sum_sq / (chains as usize * steps) as f64;
    let want = 1.0 / (1.0 - eps / 4.0);
    let var_err = (var - want).abs() / want;
    if !(var_err <= 0.02) {
        failures.push(format!("stationary variance {var:.4} vs {want:.4}"));
    }

    // trained duals on a d=2 instance against the exact conditional
    let inst = random_instance(2, 7).map_err(err)?;
    let plan = entropic_plan(&inst).map_err(err)?;
    let bench = GaussianBenchConfig::default();
    let pair = DualPair::init(
        2,
        2,
        &bench.hidden,
        Compatibility::kl(inst.lambda).map_err(err)?,
        CostKind::SqEuclidean,
        Rng::derive_seed(7, "pair-init", 0),
    )
    .map_err(err)?;
    // a longer run than the benchmark's: the dual error, not the chain, dominates here
    let dual_cfg = TrainConfig {
        iterations: 10_000,
        batch_size: Some(256),
        seed: Rng::derive_seed(7, "dual-train", 0),
        ..bench.dual.clone()
    };
    let (pair, _) = scones_core::dual::train_dual(pair, &inst.source, &inst.target, &dual_cfg).map_err(err)?;
    let oracle = GaussianScoreOracle::new(&inst.target).map_err(err)?;
    // a one-standard-deviation source point
    let sd = sqrtm_psd(inst.source.cov()).map_err(err)?;
    let x = sd.mat_vec(&[1.0, -0.5]).map_err(err)?;
    let n = 10_000;
    let mut xs = Matrix::zeros(n, 2);
    for i in 0..n {
        xs.row_mut(i).copy_from_slice(&x);
    }
    let sampler = SamplerConfig {
        epsilon: 0.03,
        steps: 4000,
        seed: 8,
        ..bench.sampler.clone()
    };
    let (ys, _) = sample_scones_batch(&pair, &oracle, &xs, &sampler).map_err(err)?;
    let (mean, cov) = empirical_covariance(&ys).map_err(err)?;
    let exact = conditional_of_joint(&plan, &x).map_err(err)?;
    let mean_gap = mean.iter().zip(exact.mean()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mean_scale = exact.mean().iter().map(|v| v * v).sum::<f64>().sqrt().max(exact.cov().trace().sqrt());
    let mean_err = mean_gap / mean_scale;
    let cov_err = cov.sub(exact.cov()).map_err(err)?.frobenius() / exact.cov().frobenius();
    if !(mean_err <= 0.05) {
        failures.push(format!("conditional mean off by {:.1}%", 100.0 * mean_err));
    }
    if !(cov_err <= 0.05) {
        failures.push(format!("conditional covariance off by {:.1}%", 100.0 * cov_err));
    }
    within_budget(start, Duration::from_secs(5 * 60), "langevin checks")?;
    let msg = format!(
        "variance {var:.4} vs {want:.4} ({:.2}%), conditional mean {:.2}%, covariance {:.2}%",
        100.0 * var_err,
        100.0 * mean_err,
        100.0 * cov_err
    );
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {}", failures.join("; ")))
    }
}

fn logconcavity() -> Outcome {
    let mut rng = Rng::new(9);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = 1 + rng.index(3);
        let n = 2 + rng.index(12);
        let mut atoms = Matrix::zeros(n, d);
        rng.fill_normal(atoms.as_mut_slice());
        let weights = random_simplex(n, &mut rng);
        let source = EmpiricalMeasure::new(atoms, weights).map_err(err)?;
        let phi: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let lambda = rng.uniform(0.1, 5.0);
        let x = random_point(d, 1.0, &mut rng);
        let y = random_point(d, 1.5, &mut rng);
        let top = logconcavity_check(&source, &phi, lambda, rng.normal(), &x, &y, 1e-3 * lambda.sqrt()).map_err(err)?;
        worst = worst.max(top);
    }
    let msg = format!("max Hessian eigenvalue {worst:.2e}");
    if worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Cross-covariance of the KL-regularized plan between two centered 1-d
/// Gaussians, computed by Sinkhorn on a quadrature grid.
fn grid_cross_covariance(var_x: f64, var_y: f64, lambda: f64, points: usize) -> scones_core::Result<f64> {
    let grid = |var: f64| {
        let half = 7.0 * var.sqrt();
        let step = 2.0 * half / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| -half + step * i as f64).collect();
        let raw: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * var)).exp()).collect();
        let total: f64 = raw.iter().sum();
        (xs, raw.iter().map(|w| w / total).collect::<Vec<f64>>())
    };
    let (xs, sigma) = grid(var_x);
    let (ys, tau) = grid(var_y);
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| ys.iter().map(|y| (x - y) * (x - y)).collect()).collect();
    let cost = CostMatrix::from_rows(&rows)?;
    // grid tails carry weights far below f64 resolution; drop them
    let keep_x: Vec<usize> = (0..points).filter(|&i| sigma[i] > 1e-280).collect();
    let keep_y: Vec<usize> = (0..points).filter(|&j| tau[j] > 1e-280).collect();
    let sub = CostMatrix::from_rows(
        &keep_x.iter().map(|&i| keep_y.iter().map(|&j| cost.get(i, j)).collect()).collect::<Vec<Vec<f64>>>(),
    )?;
    let s: Vec<f64> = keep_x.iter().map(|&i| sigma[i]).collect();
    let t: Vec<f64> = keep_y.iter().map(|&j| tau[j]).collect();
    let (plan, _) = sinkhorn_kl(&sub, &s, &t, lambda, 1e-11, DEFAULT_MAX_ITER)?;
    let mut cross = 0.0;
    for (a, &i) in keep_x.iter().enumerate() {
        for (b, &j) in keep_y.iter().enumerate() {
            cross += plan.get(a, b) * xs[i] * ys[j];
        }
    }
    Ok(cross)
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_grid = 0.0f64;
    for (var_x, var_y, lambda) in [(2.0, 5.0, 2.0), (1.0, 9.0, 1.0), (6.0, 3.0, 4.0)] {
        let src = GaussianMeasure::new(vec![0.0], Matrix::from_diag(&[var_x])).map_err(err)?;
        let tgt = GaussianMeasure::new(vec![0.0], Matrix::from_diag(&[var_y])).map_err(err)?;
        let closed = entropic_plan_for(&src, &tgt, lambda).map_err(err)?.cross[(0, 0)];
        let grid = grid_cross_covariance(var_x, var_y, lambda, 500).map_err(err)?;
        worst_grid = worst_grid.max((closed - grid).abs());
    }
    if !(worst_grid <= 1e-2) {
        failures.push(format!("grid mismatch {worst_grid:.2e}"));
    }

    let (mut worst_indep, mut worst_monge) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let inst = random_instance(3, 50 + seed).map_err(err)?;
        let (a, b) = (inst.source.cov(), inst.target.cov());
        let wide = entropic_plan_for(&inst.source, &inst.target, 1e6).map_err(err)?;
        worst_indep = worst_indep.max(wide.cross.max_abs());
        let a_half = sqrtm_psd(a).map_err(err)?;
        let a_inv_half = inv_sqrtm_pd(a).map_err(err)?;
        let inner = sqrtm_psd(&a_half.matmul(b).and_then(|m| m.matmul(&a_half)).map_err(err)?.symmetrize()).map_err(err)?;
        let monge = a_half.matmul(&inner).and_then(|m| m.matmul(&a_inv_half)).map_err(err)?;
        let sharp = entropic_plan_for(&inst.source, &inst.target, 1e-6).map_err(err)?;
        worst_monge = worst_monge.max(sharp.cross.sub(&monge).map_err(err)?.max_abs());
    }
    if !(worst_indep <= 1e-3) {
        failures.push(format!("large-lambda cross {worst_indep:.2e}"));
    }
    if !(worst_monge <= 1e-3) {
        failures.push(format!("small-lambda gap to Monge {worst_monge:.2e}"));
    }
    within_budget(start, Duration::from_secs(60), "closed-form checks")?;
    let msg = format!("grid {worst_grid:.1e}, independence {worst_indep:.1e}, Monge {worst_monge:.1e}");
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {}", failures.join("; ")))
    }
}

fn swiss_roll() -> Outcome {
    let start = Instant::now();
    let dir = scratch_dir("swissroll");
    let report = run_swissroll(&SwissrollConfig::default(), 0, &dir).map_err(err)?;
    let _ = std::fs::remove_dir_all(&dir);
    within_budget(start, Duration::from_secs(10 * 60), "swiss roll")?;
    let msg = format!(
        "energy scones {:.4}, bp {:.4}, target self {:.4}, {:.0}s",
        report.energy_scones,
        report.energy_bp,
        report.energy_self,
        start.elapsed().as_secs_f64()
    );
    if report.energy_scones < report.energy_bp && report.energy_scones < 2.0 * report.energy_self {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let checks: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gaussian benchmark", gaussian_benchmark),
        (2, "stability bound", stability_bound),
        (3, "strong duality", strong_duality),
        (4, "divergence registry", registry),
        (5, "gradient checks", gradient_checks),
        (6, "langevin", langevin),
        (7, "log-concavity", logconcavity),
        (8, "gaussian closed form", closed_form),
        (9, "swiss roll", swiss_roll),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut failed = 0;
    for (n, name, check) in checks {
        if !wanted(n) {
            continue;
        }
        let t0 = Instant::now();
        match check() {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail} [{:.1}s]", t0.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail} [{:.1}s]", t0.elapsed().as_secs_f64());
            }
        }
    }
    if wanted(10) {
        println!("criterion 10 (image-scale experiments): EXCLUDED - not reproducible at this scale");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
