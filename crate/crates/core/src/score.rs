//! Denoising score matching for low-dimensional data.
//!
//! The network sees `[ỹ, log τ]` and the score is its output divided by
//! `τ`, so the τ²-weighted loss `½τ²‖s(ỹ) + z/τ‖²` is `½‖net + z‖²` at
//! every level.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::{Mlp, MlpSpec, Optimizer, OptimizerConfig, Tape};
use crate::rng::Rng;
use crate::sampler::{ScoreOracle, ScoreWorkspace};

pub const SWISS_ROLL_JITTER: f64 = 0.05;
const SWISS_ROLL_T_MIN: f64 = 1.5 * PI;
const SWISS_ROLL_T_MAX: f64 = 4.5 * PI;
/// Maps the outermost turn (radius `4.5π`) to radius 2.
pub const SWISS_ROLL_SCALE: f64 = SWISS_ROLL_T_MAX / 2.0;

/// `t ~ U[1.5π, 4.5π]`, `(t cos t, t sin t) / scale` plus Gaussian jitter.
pub fn swiss_roll_data(n: usize, noise_sd: f64, rng: &mut Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidParam("swiss roll needs n >= 1".into()));
    }
    let mut out = Matrix::zeros(n, 2);
    for i in 0..n {
        let t = rng.uniform(SWISS_ROLL_T_MIN, SWISS_ROLL_T_MAX);
        let row = out.row_mut(i);
        row[0] = t * t.cos() / SWISS_ROLL_SCALE + noise_sd * rng.normal();
        row[1] = t * t.sin() / SWISS_ROLL_SCALE + noise_sd * rng.normal();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsmConfig {
    /// Noise levels, each sample draws one uniformly.
    pub levels: Vec<f64>,
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for DsmConfig {
    fn default() -> Self {
        let ratio: f64 = 0.01f64.powf(1.0 / 9.0);
        Self {
            levels: (0..10).map(|i| ratio.powi(i)).collect(),
            iterations: 20_000,
            batch_size: 256,
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 0,
        }
    }
}

impl DsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParam("noise levels must be positive and nonempty".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Noise-conditioned score network.
#[derive(Clone, Debug)]
pub struct ScoreNet {
    pub net: Mlp,
    /// Level used when the sampler asks for the clean score.
    pub default_level: f64,
}

impl ScoreNet {
    pub fn new(net: Mlp, default_level: f64) -> Result<Self> {
        if net.input_dim() != net.output_dim() + 1 {
            return Err(Error::Shape(format!(
                "score net must map d+1 inputs to d outputs, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        if !(default_level > 0.0) {
            return Err(Error::InvalidParam("default noise level must be > 0".into()));
        }
        Ok(Self { net, default_level })
    }

    /// He-initialized net with the given hidden widths.
    pub fn init(dim: usize, hidden: &[usize], default_level: f64, seed: u64) -> Result<Self> {
        let mut widths = vec![dim + 1];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let spec = MlpSpec::new(widths, crate::mlp::Activation::Linear)?;
        Self::new(Mlp::init(spec, seed)?, default_level)
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn fill_input(buf: &mut Vec<f64>, y: &[f64], tau: f64) {
        buf.clear();
        buf.extend_from_slice(y);
        buf.push(tau.ln());
    }

    pub fn score(&self, y: &[f64], tau: f64) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::Shape("score input has the wrong dimension".into()));
        }
        let mut ws = ScoreWorkspace::default();
        let mut out = vec![0.0; y.len()];
        self.score_into(y, Some(tau), &mut ws, &mut out);
        Ok(out)
    }
}

impl ScoreOracle for ScoreNet {
    fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn score_into(&self, y: &[f64], noise: Option<f64>, ws: &mut ScoreWorkspace, out: &mut [f64]) {
        let tau = noise.unwrap_or(self.default_level);
        Self::fill_input(&mut ws.buf, y, tau);
        let raw = self.net.forward_tape(&ws.buf, &mut ws.tape);
        for (o, r) in out.iter_mut().zip(raw) {
            *o = r / tau;
        }
    }
}

/// Accumulates the DSM loss and parameter gradient of one sample at level `tau`.
#[allow(clippy::too_many_arguments)]
fn dsm_sample(
    net: &ScoreNet,
    y: &[f64],
    tau: f64,
    rng: &mut Rng,
    tape: &mut Tape,
    buf: &mut Vec<f64>,
    z: &mut [f64],
    upstream: &mut [f64],
    grad: &mut [f64],
    weight: f64,
) -> f64 {
    rng.fill_normal(z);
    buf.clear();
    buf.extend(y.iter().zip(z.iter()).map(|(v, n)| v + tau * n));
    buf.push(tau.ln());
    let raw = net.net.forward_tape(buf, tape);
    let mut loss = 0.0;
    for ((u, r), n) in upstream.iter_mut().zip(raw).zip(z.iter()) {
        let resid = r + n;
        loss += 0.5 * resid * resid;
        *u = weight * resid;
    }
    net.net.backward_tape(tape, upstream, Some(grad), None);
    loss
}

/// Mean τ²-weighted DSM loss on `batch` at one level and its gradient.
pub fn dsm_loss_grad(net: &ScoreNet, batch: &Matrix, tau: f64, rng: &mut Rng) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("noise level must be > 0, got {tau}")));
    }
    if batch.cols() != net.dim() {
        return Err(Error::Shape("batch dimension differs from the score net".into()));
    }
    let d = net.dim();
    let n = batch.rows().max(1) as f64;
    let (mut tape, mut buf) = (Tape::default(), Vec::with_capacity(d + 1));
    let (mut z, mut up) = (vec![0.0; d], vec![0.0; d]);
    let mut grad = vec![0.0; net.net.params.data.len()];
    let mut loss = 0.0;
    for y in batch.row_iter() {
        loss += dsm_sample(net, y, tau, rng, &mut tape, &mut buf, &mut z, &mut up, &mut grad, 1.0 / n);
    }
    Ok((loss / n, grad))
}

/// Fits `net` by multi-level DSM on `data`.
pub fn train_score(mut net: ScoreNet, data: &Matrix, config: &DsmConfig) -> Result<(ScoreNet, Vec<f64>)> {
    config.validate()?;
    if data.rows() == 0 {
        return Err(Error::InvalidParam("score training needs data".into()));
    }
    if data.cols() != net.dim() {
        return Err(Error::Shape("data dimension differs from the score net".into()));
    }
    let d = net.dim();
    let mut rng = Rng::substream(config.seed, "dsm", 0);
    let mut opt = Optimizer::new(config.optimizer, net.net.params.data.len());
    let (mut tape, mut buf) = (Tape::default(), Vec::with_capacity(d + 1));
    let (mut z, mut up) = (vec![0.0; d], vec![0.0; d]);
    let mut grad = vec![0.0; net.net.params.data.len()];
    let mut losses = Vec::with_capacity(config.iterations);
    let w = 1.0 / config.batch_size as f64;
    for step in 0..config.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let y = data.row(rng.index(data.rows()));
            let tau = config.levels[rng.index(config.levels.len())];
            loss += dsm_sample(&net, y, tau, &mut rng, &mut tape, &mut buf, &mut z, &mut up, &mut grad, w);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("score training diverged at step {step}")));
        }
        losses.push(loss * w);
        opt.descend(&mut net.net.params.data, &grad);
    }
    Ok((net, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, MlpParams};

    #[test]
    fn swiss_roll_shape() {
        let mut rng = Rng::new(1);
        let clean = swiss_roll_data(2000, 0.0, &mut rng).unwrap();
        for r in clean.row_iter() {
            let radius = (r[0] * r[0] + r[1] * r[1]).sqrt();
            let t = radius * SWISS_ROLL_SCALE;
            assert!((SWISS_ROLL_T_MIN - 1e-9..=SWISS_ROLL_T_MAX + 1e-9).contains(&t));
            // on the curve: the angle agrees with t modulo 2π
            assert!((r[0] - t * t.cos() / SWISS_ROLL_SCALE).abs() < 1e-12);
            assert!((r[1] - t * t.sin() / SWISS_ROLL_SCALE).abs() < 1e-12);
            assert!(r[0].abs() <= 2.0 && r[1].abs() <= 2.0);
        }
        let a = swiss_roll_data(10, SWISS_ROLL_JITTER, &mut Rng::new(3)).unwrap();
        let b = swiss_roll_data(10, SWISS_ROLL_JITTER, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(swiss_roll_data(0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn radial_range_with_jitter() {
        let data = swiss_roll_data(10_000, SWISS_ROLL_JITTER, &mut Rng::new(2)).unwrap();
        let (lo, hi) = (SWISS_ROLL_T_MIN / SWISS_ROLL_SCALE, SWISS_ROLL_T_MAX / SWISS_ROLL_SCALE);
        for r in data.row_iter() {
            let radius = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!(radius > lo - 6.0 * SWISS_ROLL_JITTER && radius < hi + 6.0 * SWISS_ROLL_JITTER);
        }
    }

    #[test]
    fn oracle_residual_has_zero_loss() {
        // s(ỹ) = −z/τ makes r = 0; the loss is then exactly zero and any
        // other value is positive
        let tau = 0.3;
        let z = [0.4, -1.1];
        let loss = |s: [f64; 2]| {
            0.5 * tau * tau * s.iter().zip(&z).map(|(a, b)| (a + b / tau).powi(2)).sum::<f64>()
        };
        assert_eq!(loss([-z[0] / tau, -z[1] / tau]), 0.0);
        assert!(loss([0.0, 0.0]) > 0.0);
        assert!(loss([-z[0] / tau + 1e-3, -z[1] / tau]) > 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let net = ScoreNet::init(2, &[8], 0.1, 4).unwrap();
        let data = swiss_roll_data(16, 0.05, &mut Rng::new(5)).unwrap();
        let (_, g) = dsm_loss_grad(&net, &data, 0.4, &mut Rng::new(6)).unwrap();
        let n = net.net.params.data.len();
        for k in (0..n).step_by(5) {
            let h = 1e-6;
            let mut plus = net.clone();
            plus.net.params.data[k] += h;
            let mut minus = net.clone();
            minus.net.params.data[k] -= h;
            let (lp, _) = dsm_loss_grad(&plus, &data, 0.4, &mut Rng::new(6)).unwrap();
            let (lm, _) = dsm_loss_grad(&minus, &data, 0.4, &mut Rng::new(6)).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * fd.abs().max(1.0), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn linear_model_hits_analytic_minimizer() {
        // N(0, 1) data at one level: the best linear score is −y/(1 + τ²)
        let tau = 0.5;
        let spec = MlpSpec::new(vec![2, 1], Activation::Linear).unwrap();
        let net = ScoreNet::new(Mlp::new(spec.clone(), MlpParams::zeros(&spec)).unwrap(), tau).unwrap();
        let mut rng = Rng::new(7);
        let mut data = Matrix::zeros(20_000, 1);
        rng.fill_normal(data.as_mut_slice());
        let cfg = DsmConfig {
            levels: vec![tau],
            iterations: 4000,
            batch_size: 1024,
            optimizer: OptimizerConfig::adam(2e-3),
            seed: 1,
        };
        let (trained, _) = train_score(net, &data, &cfg).unwrap();
        let slope = trained.score(&[1.0], tau).unwrap()[0] - trained.score(&[0.0], tau).unwrap()[0];
        let want = -1.0 / (1.0 + tau * tau);
        assert!((slope - want).abs() < 0.02 * want.abs(), "{slope} vs {want}");
    }

    #[test]
    fn multi_level_gaussian_scores() {
        let levels = vec![0.3, 0.6, 1.0];
        let net = ScoreNet::init(1, &[32], 0.3, 8).unwrap();
        let mut data = Matrix::zeros(500_000, 1);
        Rng::new(9).fill_normal(data.as_mut_slice());
        let cfg = DsmConfig {
            levels: levels.clone(),
            iterations: 20_000,
            batch_size: 512,
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 2,
        };
        let (coarse, _) = train_score(net, &data, &cfg).unwrap();
        let fine = DsmConfig { optimizer: OptimizerConfig::adam(1e-4), iterations: 4000, batch_size: 4096, seed: 3, ..cfg };
        let (trained, _) = train_score(coarse, &data, &fine).unwrap();
        for tau in levels {
            let (mut err, mut norm) = (0.0, 0.0);
            for k in 0..=40 {
                let y = -2.0 + 0.1 * k as f64;
                let want = -y / (1.0 + tau * tau);
                let got = trained.score(&[y], tau).unwrap()[0];
                err += (got - want).powi(2);
                norm += want * want;
            }
            let rel = (err / norm).sqrt();
            assert!(rel < 0.05, "tau {tau}: relative error {rel}");
            let (mut asym, mut mag) = (0.0, 0.0);
            for k in 1..=20 {
                let y = 0.1 * k as f64;
                let (p, m) = (trained.score(&[y], tau).unwrap()[0], trained.score(&[-y], tau).unwrap()[0]);
                asym += (p + m).powi(2);
                mag += p * p;
            }
            assert!((asym / mag).sqrt() < 0.05, "tau {tau}: odd-symmetry defect {}", (asym / mag).sqrt());
        }
    }

    #[test]
    fn zero_iterations_returns_untrained_net() {
        let net = ScoreNet::init(2, &[4], 0.1, 0).unwrap();
        let cfg = DsmConfig {
            levels: vec![0.1],
            iterations: 0,
            batch_size: 4,
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 0,
        };
        let data = Matrix::zeros(3, 2);
        let (out, losses) = train_score(net.clone(), &data, &cfg).unwrap();
        assert_eq!(out.net.params, net.net.params);
        assert!(losses.is_empty());
    }
}
