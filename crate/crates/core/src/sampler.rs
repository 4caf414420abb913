//! Langevin sampling from `π(y | x) ∝ M(V(x, y)) τ(y)`.
//!
//! The conditional score is the target score plus `∇_y log M(V(x, y))`.
//! Chains are independent; batches run on rayon with one RNG substream per
//! chain, so results do not depend on scheduling.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::DualPair;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianMeasure, GaussianScore};
use crate::linalg::Matrix;
use crate::mlp::Tape;
use crate::rng::Rng;

/// Scratch space owned by one chain and lent to its score oracle.
#[derive(Clone, Debug, Default)]
pub struct ScoreWorkspace {
    pub tape: Tape,
    pub buf: Vec<f64>,
}

/// `(y, noise level) ↦ ∇_y log p_noise(y)`.
pub trait ScoreOracle: Sync {
    fn dim(&self) -> usize;

    /// Writes the score at `y` into `out`; `noise` is the annealing level,
    /// `None` for the clean density.
    fn score_into(&self, y: &[f64], noise: Option<f64>, ws: &mut ScoreWorkspace, out: &mut [f64]);
}

/// Always zero; turns the sampler into a pure compatibility chain.
#[derive(Clone, Copy, Debug)]
pub struct ZeroScore(pub usize);

impl ScoreOracle for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score_into(&self, _y: &[f64], _noise: Option<f64>, _ws: &mut ScoreWorkspace, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// `N(0, I)`, noised to `N(0, (1 + τ²) I)`.
#[derive(Clone, Copy, Debug)]
pub struct StandardNormalScore(pub usize);

impl ScoreOracle for StandardNormalScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score_into(&self, y: &[f64], noise: Option<f64>, _ws: &mut ScoreWorkspace, out: &mut [f64]) {
        let var = 1.0 + noise.map_or(0.0, |t| t * t);
        for (o, v) in out.iter_mut().zip(y) {
            *o = -v / var;
        }
    }
}

/// Exact score of a Gaussian, with noised precisions for known levels.
#[derive(Clone, Debug)]
pub struct GaussianScoreOracle {
    measure: GaussianMeasure,
    clean: GaussianScore,
    noised: Vec<(f64, GaussianScore)>,
}

impl GaussianScoreOracle {
    pub fn new(measure: &GaussianMeasure) -> Result<Self> {
        Ok(Self {
            measure: measure.clone(),
            clean: GaussianScore::new(measure)?,
            noised: Vec::new(),
        })
    }

    pub fn with_levels(mut self, schedule: &NoiseSchedule) -> Result<Self> {
        for &t in schedule.levels() {
            self.noised.push((t, GaussianScore::new(&self.measure.noised(t)?)?));
        }
        Ok(self)
    }
}

impl ScoreOracle for GaussianScoreOracle {
    fn dim(&self) -> usize {
        self.measure.dim()
    }

    fn score_into(&self, y: &[f64], noise: Option<f64>, _ws: &mut ScoreWorkspace, out: &mut [f64]) {
        match noise {
            None => self.clean.eval_into(y, out),
            Some(t) => match self.noised.iter().find(|(l, _)| *l == t) {
                Some((_, s)) => s.eval_into(y, out),
                None => {
                    let g = self.measure.noised(t).expect("noised covariance stays PD");
                    GaussianScore::new(&g).expect("noised covariance stays PD").eval_into(y, out)
                }
            },
        }
    }
}

/// Strictly decreasing positive noise levels, serialized as a plain list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    levels: Vec<f64>,
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.levels
    }
}

impl NoiseSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParam("noise levels must be positive and nonempty".into()));
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParam("noise levels must be strictly decreasing".into()));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.levels.last().expect("schedule is nonempty")
    }
}

pub fn geometric_schedule(tau_first: f64, tau_last: f64, n: usize) -> Result<NoiseSchedule> {
    if !(tau_first > tau_last && tau_last > 0.0) || n < 2 {
        return Err(Error::InvalidParam(format!(
            "schedule needs tau_first > tau_last > 0 and n >= 2, got ({tau_first}, {tau_last}, {n})"
        )));
    }
    let ratio = (tau_last / tau_first).powf(1.0 / (n - 1) as f64);
    let mut levels: Vec<f64> = (0..n).map(|i| tau_first * ratio.powi(i as i32)).collect();
    levels[n - 1] = tau_last;
    Ok(NoiseSchedule { levels })
}

/// How the step size and noise interact across annealing levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnealingRule {
    /// Level `i` uses step `ε (τ_i / τ_N)²` and unit Gaussian noise.
    #[default]
    ScaledStep,
    /// Fixed step `ε`, noise drawn with variance `τ_i`.
    LiteralNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub schedule: Option<NoiseSchedule>,
    #[serde(default)]
    pub rule: AnnealingRule,
    pub denoise_final: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            epsilon: 5e-3,
            steps: 1000,
            schedule: None,
            rule: AnnealingRule::ScaledStep,
            denoise_final: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParam(format!("step size must be > 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParam("steps per level must be >= 1".into()));
        }
        if self.denoise_final && self.schedule.is_none() {
            return Err(Error::InvalidParam("denoising needs a noise schedule".into()));
        }
        Ok(())
    }
}

/// One Langevin update `y + (ε/2) s + √ε z`, in place.
#[inline]
pub fn langevin_update(y: &mut [f64], score: &[f64], epsilon: f64, z: &[f64]) {
    let (half, root) = (0.5 * epsilon, epsilon.sqrt());
    for ((v, s), n) in y.iter_mut().zip(score).zip(z) {
        *v += half * s + root * n;
    }
}

fn check_finite(y: &[f64], step: usize) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("Langevin iterate at step {step}")))
    }
}

/// Runs `steps` updates from `y0`; returns the final state.
pub fn langevin_chain<F>(mut score_fn: F, y0: &[f64], epsilon: f64, steps: usize, rng: &mut Rng) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParam(format!("step size must be > 0, got {epsilon}")));
    }
    let mut y = y0.to_vec();
    let mut s = vec![0.0; y.len()];
    let mut z = vec![0.0; y.len()];
    for t in 0..steps {
        score_fn(&y, &mut s)?;
        rng.fill_normal(&mut z);
        langevin_update(&mut y, &s, epsilon, &z);
        check_finite(&y, t)?;
    }
    Ok(y)
}

/// Like [`langevin_chain`] but records every state (row `t` is after `t+1` steps).
pub fn langevin_trajectory<F>(mut score_fn: F, y0: &[f64], epsilon: f64, steps: usize, rng: &mut Rng) -> Result<Matrix>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParam(format!("step size must be > 0, got {epsilon}")));
    }
    let d = y0.len();
    let mut out = Matrix::zeros(steps, d);
    let mut y = y0.to_vec();
    let mut s = vec![0.0; d];
    let mut z = vec![0.0; d];
    for t in 0..steps {
        score_fn(&y, &mut s)?;
        rng.fill_normal(&mut z);
        langevin_update(&mut y, &s, epsilon, &z);
        check_finite(&y, t)?;
        out.row_mut(t).copy_from_slice(&y);
    }
    Ok(out)
}

/// `s(y) + dlogM/dv · (∇ψ(y) − ∇_y c(x, y))`.
pub fn conditional_score(pair: &DualPair, score: &dyn ScoreOracle, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != pair.source_dim() || y.len() != pair.target_dim() || score.dim() != y.len() {
        return Err(Error::Shape("conditional_score dimensions disagree".into()));
    }
    let mut tape = Tape::default();
    let phi_x = pair.phi_at(x, &mut tape);
    let v = pair.violation(x, y)?;
    if pair.compat.eval(v)?.saturated {
        return Err(Error::Support(format!("compatibility vanishes at violation {v}")));
    }
    let d = y.len();
    let (mut scratch, mut grad) = (vec![0.0; d], vec![0.0; d]);
    pair.log_compat_grad_y(phi_x, x, y, &mut tape, &mut scratch, &mut grad)?;
    let mut s = vec![0.0; d];
    score.score_into(y, None, &mut ScoreWorkspace::default(), &mut s);
    Ok(s.iter().zip(&grad).map(|(a, b)| a + b).collect())
}

/// `y + τ² s(y, τ)`.
pub fn denoise_final(y: &[f64], score: &dyn ScoreOracle, tau_last: f64) -> Result<Vec<f64>> {
    if !(tau_last > 0.0) {
        return Err(Error::InvalidParam(format!("noise level must be > 0, got {tau_last}")));
    }
    let mut s = vec![0.0; y.len()];
    score.score_into(y, Some(tau_last), &mut ScoreWorkspace::default(), &mut s);
    Ok(y.iter().zip(&s).map(|(v, g)| v + tau_last * tau_last * g).collect())
}

/// Per-chain counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChainStats {
    /// Steps taken where the compatibility was flat (hinge region).
    pub saturated_steps: usize,
}

/// One chain of the conditional sampler for source point `x`, driven by `rng`.
pub fn sample_scones_with_rng(
    pair: &DualPair,
    score: &dyn ScoreOracle,
    x: &[f64],
    config: &SamplerConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, ChainStats)> {
    config.validate()?;
    let d = pair.target_dim();
    if x.len() != pair.source_dim() || score.dim() != d {
        return Err(Error::Shape("sampler dimensions disagree".into()));
    }
    let mut tape = Tape::default();
    let phi_x = pair.phi_at(x, &mut tape);
    let mut ws = ScoreWorkspace::default();
    let mut y = vec![0.0; d];
    rng.fill_normal(&mut y);
    let (mut s, mut g, mut scratch, mut z) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut stats = ChainStats::default();

    let levels: Vec<Option<f64>> = match &config.schedule {
        Some(sch) => sch.levels().iter().map(|t| Some(*t)).collect(),
        None => vec![None],
    };
    let last = config.schedule.as_ref().map(|s| s.last());
    for level in levels {
        let (eps, noise_scale) = match (level, last, config.rule) {
            (Some(t), Some(tn), AnnealingRule::ScaledStep) => (config.epsilon * (t / tn).powi(2), 1.0),
            (Some(t), _, AnnealingRule::LiteralNoise) => (config.epsilon, t.sqrt()),
            _ => (config.epsilon, 1.0),
        };
        for t in 0..config.steps {
            score.score_into(&y, level, &mut ws, &mut s);
            let v = pair.log_compat_grad_y(phi_x, x, &y, &mut tape, &mut scratch, &mut g)?;
            if pair.compat.eval(v)?.saturated {
                stats.saturated_steps += 1;
            }
            for (a, b) in s.iter_mut().zip(&g) {
                *a += b;
            }
            rng.fill_normal(&mut z);
            if noise_scale != 1.0 {
                z.iter_mut().for_each(|v| *v *= noise_scale);
            }
            langevin_update(&mut y, &s, eps, &z);
            check_finite(&y, t)?;
        }
    }
    if config.denoise_final {
        y = denoise_final(&y, score, last.expect("validated"))?;
    }
    Ok((y, stats))
}

/// One chain seeded from `config.seed`.
pub fn sample_scones(pair: &DualPair, score: &dyn ScoreOracle, x: &[f64], config: &SamplerConfig) -> Result<Vec<f64>> {
    let mut rng = Rng::substream(config.seed, "scones-chain", 0);
    Ok(sample_scones_with_rng(pair, score, x, config, &mut rng)?.0)
}

/// One chain per row of `xs`; chain `i` uses substream `i` of `config.seed`.
pub fn sample_scones_batch(
    pair: &DualPair,
    score: &dyn ScoreOracle,
    xs: &Matrix,
    config: &SamplerConfig,
) -> Result<(Matrix, ChainStats)> {
    config.validate()?;
    let rows: Vec<Result<(Vec<f64>, ChainStats)>> = (0..xs.rows())
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::substream(config.seed, "scones-chain", i as u64);
            sample_scones_with_rng(pair, score, xs.row(i), config, &mut rng)
        })
        .collect();
    let mut out = Matrix::zeros(xs.rows(), pair.target_dim());
    let mut stats = ChainStats::default();
    for (i, r) in rows.into_iter().enumerate() {
        let (y, s) = r?;
        out.row_mut(i).copy_from_slice(&y);
        stats.saturated_steps += s.saturated_steps;
    }
    Ok((out, stats))
}

/// CSV with source columns `x0..` followed by target columns `y0..`.
pub fn write_samples_csv(path: &Path, xs: &Matrix, ys: &Matrix) -> Result<()> {
    if xs.rows() != ys.rows() {
        return Err(Error::Shape("source and target sample counts differ".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..xs.cols()).map(|k| format!("x{k}")).collect();
    header.extend((0..ys.cols()).map(|k| format!("y{k}")));
    w.write_record(&header)?;
    for i in 0..xs.rows() {
        let rec: Vec<String> = xs.row(i).iter().chain(ys.row(i)).map(|v| format!("{v:e}")).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
