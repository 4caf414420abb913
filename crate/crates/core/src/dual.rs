//! Dual potentials as a pair of networks, and their stochastic trainer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::CostKind;
use crate::discrete::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::fdiv::Compatibility;
use crate::linalg::Matrix;
use crate::mlp::{Mlp, MlpSpec, Optimizer, OptimizerConfig, Tape};
use crate::rng::Rng;

/// Anything training batches can be drawn from.
pub trait DataSource: Sync {
    fn dim(&self) -> usize;

    /// `m` i.i.d. draws as rows.
    fn sample(&self, m: usize, rng: &mut Rng) -> Matrix;

    /// The whole (finite) data set with its weights, for full-batch work.
    fn full(&self) -> Option<(Matrix, Vec<f64>)> {
        None
    }
}

impl DataSource for Matrix {
    fn dim(&self) -> usize {
        self.cols()
    }

    fn sample(&self, m: usize, rng: &mut Rng) -> Matrix {
        let mut out = Matrix::zeros(m, self.cols());
        for i in 0..m {
            out.row_mut(i).copy_from_slice(self.row(rng.index(self.rows())));
        }
        out
    }

    fn full(&self) -> Option<(Matrix, Vec<f64>)> {
        Some((self.clone(), vec![1.0 / self.rows() as f64; self.rows()]))
    }
}

impl DataSource for EmpiricalMeasure {
    fn dim(&self) -> usize {
        self.atoms.cols()
    }

    fn sample(&self, m: usize, rng: &mut Rng) -> Matrix {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let mut out = Matrix::zeros(m, self.dim());
        for i in 0..m {
            let u = rng.uniform(0.0, acc);
            let k = cdf.partition_point(|c| *c <= u).min(self.len() - 1);
            out.row_mut(i).copy_from_slice(self.atoms.row(k));
        }
        out
    }

    fn full(&self) -> Option<(Matrix, Vec<f64>)> {
        Some((self.atoms.clone(), self.weights.clone()))
    }
}

/// `(φ_θ, ψ_θ)` with the regularizer and cost they were trained for.
#[derive(Clone, Debug)]
pub struct DualPair {
    pub phi: Mlp,
    pub psi: Mlp,
    pub compat: Compatibility,
    pub cost: CostKind,
}

impl DualPair {
    pub fn new(phi: Mlp, psi: Mlp, compat: Compatibility, cost: CostKind) -> Result<Self> {
        if phi.output_dim() != 1 || psi.output_dim() != 1 {
            return Err(Error::Shape("dual potentials must have scalar output".into()));
        }
        Ok(Self { phi, psi, compat, cost })
    }

    /// He-initialized potentials with linear output and the given hidden widths.
    pub fn init(
        source_dim: usize,
        target_dim: usize,
        hidden: &[usize],
        compat: Compatibility,
        cost: CostKind,
        seed: u64,
    ) -> Result<Self> {
        let phi = Mlp::init(MlpSpec::potential(source_dim, hidden)?, Rng::derive_seed(seed, "phi", 0))?;
        let psi = Mlp::init(MlpSpec::potential(target_dim, hidden)?, Rng::derive_seed(seed, "psi", 0))?;
        Self::new(phi, psi, compat, cost)
    }

    pub fn source_dim(&self) -> usize {
        self.phi.input_dim()
    }

    pub fn target_dim(&self) -> usize {
        self.psi.input_dim()
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.source_dim() || y.len() != self.target_dim() {
            return Err(Error::Shape(format!(
                "pair expects ({}, {}), got ({}, {})",
                self.source_dim(),
                self.target_dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    /// `V(x, y) = φ(x) + ψ(y) − c(x, y)`.
    pub fn violation(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dims(x, y)?;
        let mut tape = Tape::default();
        let p = self.phi.forward_scalar(x, &mut tape);
        let q = self.psi.forward_scalar(y, &mut tape);
        Ok(p + q - self.cost.eval(x, y))
    }

    pub fn phi_at(&self, x: &[f64], tape: &mut Tape) -> f64 {
        self.phi.forward_scalar(x, tape)
    }

    /// `∇_y log M(V(x, y))` given a cached `φ(x)`; writes into `out` and
    /// returns `V`. `scratch` must have the target dimension.
    pub fn log_compat_grad_y(
        &self,
        phi_x: f64,
        x: &[f64],
        y: &[f64],
        tape: &mut Tape,
        scratch: &mut [f64],
        out: &mut [f64],
    ) -> Result<f64> {
        let psi_y = self.psi.input_grad_tape(y, tape, out);
        let v = phi_x + psi_y - self.cost.eval(x, y);
        self.cost.grad_y(x, y, scratch);
        let c = self.compat.eval(v)?;
        let slope = if c.saturated { 0.0 } else { c.dlogm_dv };
        for (o, g) in out.iter_mut().zip(scratch.iter()) {
            *o = slope * (*o - g);
        }
        Ok(v)
    }

    /// Potentials evaluated at the atoms of a discrete problem.
    pub fn to_dual_vectors(&self, xs: &Matrix, ys: &Matrix) -> Result<crate::discrete::DualVectors> {
        Ok(crate::discrete::DualVectors {
            phi: self.phi.forward_batch(xs)?.into_vec(),
            psi: self.psi.forward_batch(ys)?.into_vec(),
        })
    }
}

/// Weighted batch objective
/// `Σ a_i φ(x_i) + Σ b_j ψ(y_j) − Σ a_i b_j H*(V_ij)`.
/// Returns the value and whether any violation had to be clamped into the
/// conjugate domain.
fn weighted_objective(pair: &DualPair, xs: &Matrix, a: &[f64], ys: &Matrix, b: &[f64]) -> Result<(f64, bool)> {
    let phis = pair.phi.forward_batch(xs)?;
    let psis = pair.psi.forward_batch(ys)?;
    let mut j = 0.0;
    let mut clamped = false;
    for (i, (ai, pi)) in a.iter().zip(phis.as_slice()).enumerate() {
        j += ai * pi;
        for (k, (bk, qk)) in b.iter().zip(psis.as_slice()).enumerate() {
            let v = pi + qk - pair.cost.eval(xs.row(i), ys.row(k));
            let (h, _, c) = pair.compat.penalty_soft(v);
            clamped |= c;
            j -= ai * bk * h;
        }
    }
    for (bk, qk) in b.iter().zip(psis.as_slice()) {
        j += bk * qk;
    }
    if !j.is_finite() {
        return Err(Error::NonFinite("dual objective".into()));
    }
    Ok((j, clamped))
}

/// Dual objective over all `m²` pairs of two equally weighted batches.
pub fn dual_objective_batch(pair: &DualPair, xs: &Matrix, ys: &Matrix) -> Result<f64> {
    if xs.rows() == 0 || ys.rows() == 0 {
        return Err(Error::InvalidParam("empty minibatch".into()));
    }
    if xs.cols() != pair.source_dim() || ys.cols() != pair.target_dim() {
        return Err(Error::Shape("batch dimensions differ from the pair".into()));
    }
    let a = vec![1.0 / xs.rows() as f64; xs.rows()];
    let b = vec![1.0 / ys.rows() as f64; ys.rows()];
    let (j, clamped) = weighted_objective(pair, xs, &a, ys, &b)?;
    if clamped {
        return Err(Error::Domain {
            kind: pair.compat.kind.name(),
            value: f64::NAN,
        });
    }
    Ok(j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Samples per side per step; `None` uses the full (weighted) data set.
    pub batch_size: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Samples per side for the final held-out objective.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: Some(256),
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 0,
            eval_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch estimate of `J` before each update.
    pub objective: Vec<f64>,
    pub wall_clock_secs: f64,
    /// `J` on the full data, or on fresh held-out draws when the data is
    /// not finite. `None` when no iteration ran.
    pub final_objective: Option<f64>,
    /// Steps where some violation was clamped into the conjugate domain.
    pub clamped_steps: usize,
}

pub(crate) struct Batch {
    pub xs: Matrix,
    pub a: Vec<f64>,
    pub ys: Matrix,
    pub b: Vec<f64>,
}

pub(crate) type FullData = Option<(Matrix, Vec<f64>, Matrix, Vec<f64>)>;

pub(crate) fn full_data(source: &dyn DataSource, target: &dyn DataSource) -> FullData {
    match (source.full(), target.full()) {
        (Some((xs, a)), Some((ys, b))) => Some((xs, a, ys, b)),
        _ => None,
    }
}

pub(crate) fn draw_batch(
    source: &dyn DataSource,
    target: &dyn DataSource,
    full: &FullData,
    m: Option<usize>,
    rng: &mut Rng,
) -> Batch {
    match (full, m) {
        (Some((xs, a, ys, b)), None) => Batch {
            xs: xs.clone(),
            a: a.clone(),
            ys: ys.clone(),
            b: b.clone(),
        },
        (_, Some(m)) => Batch {
            xs: source.sample(m, rng),
            a: vec![1.0 / m as f64; m],
            ys: target.sample(m, rng),
            b: vec![1.0 / m as f64; m],
        },
        (None, None) => unreachable!("callers reject full-batch mode without finite data"),
    }
}

/// Stochastic dual ascent on `J` with all cross pairs of each batch.
pub fn train_dual(
    mut pair: DualPair,
    source: &dyn DataSource,
    target: &dyn DataSource,
    config: &TrainConfig,
) -> Result<(DualPair, TrainReport)> {
    config.optimizer.validate()?;
    if source.dim() != pair.source_dim() || target.dim() != pair.target_dim() {
        return Err(Error::Shape("data dimensions differ from the pair".into()));
    }
    if config.batch_size == Some(0) {
        return Err(Error::InvalidParam("batch size must be positive".into()));
    }
    let full = full_data(source, target);
    if config.batch_size.is_none() && full.is_none() {
        return Err(Error::InvalidParam("full-batch training needs finite data".into()));
    }
    let start = Instant::now();
    let mut report = TrainReport {
        objective: Vec::with_capacity(config.iterations),
        ..Default::default()
    };
    if config.iterations == 0 {
        return Ok((pair, report));
    }

    let mut rng = Rng::substream(config.seed, "train-dual", 0);
    let mut opt_phi = Optimizer::new(config.optimizer, pair.phi.params.data.len());
    let mut opt_psi = Optimizer::new(config.optimizer, pair.psi.params.data.len());
    let mut grad_phi = vec![0.0; pair.phi.params.data.len()];
    let mut grad_psi = vec![0.0; pair.psi.params.data.len()];
    let mut tapes_x: Vec<Tape> = Vec::new();
    let mut tapes_y: Vec<Tape> = Vec::new();

    for step in 0..config.iterations {
        let batch = draw_batch(source, target, &full, config.batch_size, &mut rng);
        let (nx, ny) = (batch.xs.rows(), batch.ys.rows());
        tapes_x.resize_with(nx, Tape::default);
        tapes_y.resize_with(ny, Tape::default);
        let phis: Vec<f64> = (0..nx)
            .map(|i| pair.phi.forward_scalar(batch.xs.row(i), &mut tapes_x[i]))
            .collect();
        let psis: Vec<f64> = (0..ny)
            .map(|k| pair.psi.forward_scalar(batch.ys.row(k), &mut tapes_y[k]))
            .collect();

        // ∂J/∂φ(x_i) = a_i (1 − Σ_k b_k M_ik), and symmetrically for ψ
        let mut up_x: Vec<f64> = batch.a.clone();
        let mut up_y: Vec<f64> = batch.b.clone();
        let mut j = 0.0;
        let mut clamped = false;
        for i in 0..nx {
            j += batch.a[i] * phis[i];
            let xi = batch.xs.row(i);
            for k in 0..ny {
                let v = phis[i] + psis[k] - pair.cost.eval(xi, batch.ys.row(k));
                let (h, m, c) = pair.compat.penalty_soft(v);
                clamped |= c;
                let w = batch.a[i] * batch.b[k];
                j -= w * h;
                up_x[i] -= w * m;
                up_y[k] -= w * m;
            }
        }
        for k in 0..ny {
            j += batch.b[k] * psis[k];
        }
        if !j.is_finite() || up_x.iter().chain(&up_y).any(|u| !u.is_finite()) {
            return Err(Error::NonFinite(format!("dual training diverged at step {step}")));
        }
        report.objective.push(j);
        if clamped {
            report.clamped_steps += 1;
        }

        grad_phi.iter_mut().for_each(|g| *g = 0.0);
        grad_psi.iter_mut().for_each(|g| *g = 0.0);
        for (tape, u) in tapes_x.iter_mut().zip(&up_x) {
            // ascent: hand the optimizer −∂J/∂θ
            pair.phi.backward_tape(tape, &[-u], Some(&mut grad_phi), None);
        }
        for (tape, u) in tapes_y.iter_mut().zip(&up_y) {
            pair.psi.backward_tape(tape, &[-u], Some(&mut grad_psi), None);
        }
        if grad_phi.iter().chain(&grad_psi).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("dual gradient at step {step}")));
        }
        opt_phi.descend(&mut pair.phi.params.data, &grad_phi);
        opt_psi.descend(&mut pair.psi.params.data, &grad_psi);
    }

    let final_j = match &full {
        Some((xs, a, ys, b)) => weighted_objective(&pair, xs, a, ys, b)?.0,
        None => {
            let mut eval_rng = Rng::substream(config.seed, "train-dual-eval", 0);
            let xs = source.sample(config.eval_samples, &mut eval_rng);
            let ys = target.sample(config.eval_samples, &mut eval_rng);
            let w = vec![1.0 / config.eval_samples as f64; config.eval_samples];
            weighted_objective(&pair, &xs, &w, &ys, &w)?.0
        }
    };
    report.final_objective = Some(final_j);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((pair, report))
}
