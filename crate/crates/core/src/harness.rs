//! Experiment pipelines: configuration, runs, and on-disk artifacts.
//!
//! Every run writes plain CSV tables with header rows, a `metrics.json`
//! summary, and binary checkpoints under its output directory. Per-trial
//! seeds are derived from the master seed, and wall-clock timings are only
//! logged, so a run's files are a pure function of its resolved config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::baselines::{bary_map_eval, train_barycentric, BaryConfig};
use crate::checkpoint::Checkpoint;
use crate::cost::CostKind;
use crate::discrete::{
    dual_ascent_generic, plan_from_duals, sinkhorn_kl, stability_check, DiscreteInstance, DEFAULT_MAX_ITER,
};
use crate::dual::{train_dual, DataSource, DualPair, TrainConfig};
use crate::error::{Error, Result};
use crate::fdiv::{Compatibility, FDivKind, RegParams};
use crate::gaussian::{bw_uvp, entropic_plan, random_instance, GaussianMeasure};
use crate::linalg::{empirical_covariance, Matrix};
use crate::mlp::OptimizerConfig;
use crate::rng::Rng;
use crate::sampler::{
    geometric_schedule, sample_scones_batch, write_samples_csv, GaussianScoreOracle, SamplerConfig, ScoreOracle,
};
use crate::score::{swiss_roll_data, train_score, DsmConfig, ScoreNet, SWISS_ROLL_JITTER};

pub const MAX_BENCH_DIM: usize = 64;
pub const MAX_DISCRETE_SIZE: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    GaussianBench,
    DiscreteValidate,
    Swissroll,
    Sample,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GaussianBench => "gaussian-bench",
            ExperimentKind::DiscreteValidate => "discrete-validate",
            ExperimentKind::Swissroll => "swissroll",
            ExperimentKind::Sample => "sample",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianBenchConfig {
    pub dims: Vec<usize>,
    pub trials: usize,
    /// SCONES chains and BP pairs per trial.
    pub samples: usize,
    /// Overrides the default `λ = 2d`.
    pub lambda: Option<f64>,
    pub hidden: Vec<usize>,
    pub dual: TrainConfig,
    pub sampler: SamplerConfig,
    pub bary: BaryConfig,
}

impl Default for GaussianBenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 8, 16],
            trials: 3,
            samples: 10_000,
            lambda: None,
            hidden: vec![64, 64],
            dual: TrainConfig {
                iterations: 2000,
                batch_size: Some(128),
                optimizer: OptimizerConfig::adam(1e-3),
                seed: 0,
                eval_samples: 1000,
            },
            sampler: SamplerConfig {
                epsilon: 0.1,
                steps: 500,
                ..SamplerConfig::default()
            },
            bary: BaryConfig {
                hidden: vec![64, 64],
                optimizer: OptimizerConfig::adam(1e-3),
                iterations: 1000,
                batch_size: Some(128),
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscreteConfig {
    pub nx: usize,
    pub ny: usize,
    /// Dimension of the atoms, drawn uniformly from the unit cube.
    pub dim: usize,
    pub kind: FDivKind,
    pub lambda: f64,
    /// Trains χ² duals with a softplus hinge; the oracle keeps the hard one.
    pub chi2_softplus_alpha: Option<f64>,
    pub instances: usize,
    pub uniform_weights: bool,
    pub hidden: Vec<usize>,
    pub dual: TrainConfig,
    pub oracle_tol: f64,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        Self {
            nx: 10,
            ny: 10,
            dim: 2,
            kind: FDivKind::Kl,
            lambda: 1.0,
            chi2_softplus_alpha: None,
            instances: 1,
            uniform_weights: true,
            hidden: vec![64, 64],
            dual: TrainConfig {
                iterations: 5000,
                batch_size: None,
                optimizer: OptimizerConfig::adam(1e-3),
                seed: 0,
                eval_samples: 0,
            },
            oracle_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwissrollConfig {
    pub lambda: f64,
    /// Target training points shared by score and dual training.
    pub train_samples: usize,
    /// Output samples per method; the held-out target set is twice this.
    pub samples: usize,
    pub score_hidden: Vec<usize>,
    pub score: DsmConfig,
    pub dual_hidden: Vec<usize>,
    pub dual: TrainConfig,
    pub sampler: SamplerConfig,
    pub bary: BaryConfig,
}

/// Annealed sampler used with trained score nets.
pub fn annealed_sampler_default() -> SamplerConfig {
    SamplerConfig {
        epsilon: 2e-5,
        steps: 100,
        schedule: Some(geometric_schedule(1.0, 0.01, 10).expect("valid constant schedule")),
        denoise_final: true,
        ..SamplerConfig::default()
    }
}

/// Sampler used with exact Gaussian scores (no annealing).
pub fn gaussian_sampler_default() -> SamplerConfig {
    GaussianBenchConfig::default().sampler
}

impl Default for SwissrollConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            train_samples: 20_000,
            samples: 1000,
            score_hidden: vec![128, 128],
            score: DsmConfig::default(),
            dual_hidden: vec![64, 64],
            dual: TrainConfig {
                iterations: 3000,
                batch_size: Some(128),
                optimizer: OptimizerConfig::adam(1e-3),
                seed: 0,
                eval_samples: 1000,
            },
            sampler: annealed_sampler_default(),
            bary: BaryConfig {
                hidden: vec![64, 64],
                optimizer: OptimizerConfig::adam(1e-3),
                iterations: 2000,
                batch_size: Some(128),
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Dual-pair checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Score-net or Gaussian target checkpoint. When absent, the file next to
    /// `checkpoint` with `pair` replaced by `score` or `target` is used.
    pub score_checkpoint: Option<PathBuf>,
    /// Source points, one per row, with a header line.
    pub source_csv: Option<PathBuf>,
    /// Defaults to the annealed sampler for score nets and the plain one
    /// for Gaussian targets.
    pub sampler: Option<SamplerConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub gaussian: GaussianBenchConfig,
    pub discrete: DiscreteConfig,
    pub swissroll: SwissrollConfig,
    pub sample: SampleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            gaussian: GaussianBenchConfig::default(),
            discrete: DiscreteConfig::default(),
            swissroll: SwissrollConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::GaussianBench => self.gaussian.validate(),
            ExperimentKind::DiscreteValidate => self.discrete.validate(),
            ExperimentKind::Swissroll => self.swissroll.validate(),
            ExperimentKind::Sample => self.sample.validate(),
        }
    }
}

impl GaussianBenchConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.dims.iter().find(|d| !(1..=MAX_BENCH_DIM).contains(*d)) {
            return Err(Error::InvalidParam(format!("benchmark dimension {d} outside 1..={MAX_BENCH_DIM}")));
        }
        if self.trials > 0 && self.samples < 2 {
            return Err(Error::InvalidParam("need at least 2 samples per trial".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParam(format!("lambda must be > 0, got {l}")));
            }
        }
        self.dual.optimizer.validate()?;
        self.bary.optimizer.validate()?;
        self.sampler.validate()
    }
}

impl DiscreteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nx > MAX_DISCRETE_SIZE || self.ny > MAX_DISCRETE_SIZE {
            return Err(Error::InvalidParam(format!(
                "instance size {}x{} outside 1..={MAX_DISCRETE_SIZE}",
                self.nx, self.ny
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParam("atom dimension must be >= 1".into()));
        }
        self.params(self.chi2_softplus_alpha)?;
        self.dual.optimizer.validate()
    }

    fn params(&self, alpha: Option<f64>) -> Result<Compatibility> {
        let alpha = if self.kind == FDivKind::PearsonChi2 { alpha } else { None };
        Compatibility::new(
            self.kind,
            RegParams {
                lambda: self.lambda,
                chi2_softplus_alpha: alpha,
            },
        )
    }
}

impl SwissrollConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_samples == 0 || self.samples < 2 {
            return Err(Error::InvalidParam("swiss roll needs training data and >= 2 samples".into()));
        }
        Compatibility::kl(self.lambda)?;
        self.score.validate()?;
        self.dual.optimizer.validate()?;
        self.bary.optimizer.validate()?;
        self.sampler.validate()
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        let ckpt = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("sampling needs a checkpoint".into()))?;
        if !ckpt.exists() {
            return Err(Error::InvalidParam(format!("checkpoint {} does not exist", ckpt.display())));
        }
        let src = self
            .source_csv
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("sampling needs a source CSV".into()))?;
        if !src.exists() {
            return Err(Error::InvalidParam(format!("source CSV {} does not exist", src.display())));
        }
        if let Some(s) = &self.sampler {
            s.validate()?;
        }
        Ok(())
    }
}

/// Files and headline numbers produced by a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub tables: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    /// Resolved config, written by [`run_experiment`].
    pub config_echo: Option<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunArtifacts {
    fn write_metrics(&mut self, out: &Path) -> Result<()> {
        let path = out.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(&self.metrics)?)?;
        self.tables.push(path);
        Ok(())
    }
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads numeric rows from a CSV with a header line.
pub fn read_points_csv(path: &Path) -> Result<Matrix> {
    let mut r = csv::Reader::from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParam(format!("row {}: '{f}' is not a number", i + 1)))
            })
            .collect::<Result<_>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(Error::Shape(format!("row {} has {} columns", i + 1, row.len())));
        }
        data.extend(row);
    }
    let cols = cols.ok_or_else(|| Error::InvalidParam(format!("{} has no data rows", path.display())))?;
    Matrix::from_vec(data.len() / cols, cols, data)
}

/// Biased (V-statistic) energy distance
/// `2 E‖A − B‖ − E‖A − A'‖ − E‖B − B'‖` between two point clouds.
pub fn energy_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidParam("energy distance needs nonempty samples".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::Shape("point clouds have different dimensions".into()));
    }
    let mean_dist = |p: &Matrix, q: &Matrix| -> f64 {
        let mut s = 0.0;
        for u in p.row_iter() {
            for v in q.row_iter() {
                s += crate::cost::sq_dist(u, v).sqrt();
            }
        }
        s / (p.rows() * q.rows()) as f64
    };
    Ok(2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b))
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn failure_status(e: &Error) -> String {
    format!("failed: {}: {e}", e.category())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub dim: usize,
    pub trial: usize,
    pub seed: u64,
    pub lambda: f64,
    pub method: &'static str,
    pub bw_uvp: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSummary {
    pub dim: usize,
    pub method: &'static str,
    pub trials_ok: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct GaussianBenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
    pub artifacts: RunArtifacts,
}

impl GaussianBenchReport {
    pub fn summary_for(&self, dim: usize, method: &str) -> Option<&BenchSummary> {
        self.summary.iter().find(|s| s.dim == dim && s.method == method)
    }
}

pub const METHOD_SCONES: &str = "scones";
pub const METHOD_BP: &str = "bp";

struct TrialOutcome {
    scones: f64,
    bp: f64,
    lambda: f64,
}

fn gaussian_trial(
    cfg: &GaussianBenchConfig,
    d: usize,
    seed: u64,
    ckpt_prefix: &Path,
    ckpts: &mut Vec<PathBuf>,
) -> Result<TrialOutcome> {
    let mut inst = random_instance(d, seed)?;
    if let Some(l) = cfg.lambda {
        inst = inst.with_lambda(l)?;
    }
    let plan = entropic_plan(&inst)?;
    let compat = Compatibility::kl(inst.lambda)?;
    let t0 = Instant::now();
    let pair = DualPair::init(d, d, &cfg.hidden, compat, CostKind::SqEuclidean, Rng::derive_seed(seed, "pair-init", 0))?;
    let dual_cfg = TrainConfig {
        seed: Rng::derive_seed(seed, "dual-train", 0),
        ..cfg.dual.clone()
    };
    let (pair, report) = train_dual(pair, &inst.source, &inst.target, &dual_cfg)?;
    info!(
        "d={d} seed={seed}: duals trained in {:.1}s, J={:?}, clamped steps {}",
        t0.elapsed().as_secs_f64(),
        report.final_objective,
        report.clamped_steps
    );

    let mut rng = Rng::substream(seed, "bench-source", 0);
    let xs = inst.source.sample(cfg.samples, &mut rng);
    let sampler = SamplerConfig {
        seed: Rng::derive_seed(seed, "sampler", 0),
        ..cfg.sampler.clone()
    };
    let mut oracle = GaussianScoreOracle::new(&inst.target)?;
    if let Some(s) = &sampler.schedule {
        oracle = oracle.with_levels(s)?;
    }
    let t1 = Instant::now();
    let (ys, stats) = sample_scones_batch(&pair, &oracle, &xs, &sampler)?;
    let (_, cov) = empirical_covariance(&Matrix::hstack(&xs, &ys)?)?;
    let scones = bw_uvp(&cov, &plan)?;
    info!(
        "d={d} seed={seed}: {} chains in {:.1}s, saturated steps {}, BW-UVP {scones:.4}",
        cfg.samples,
        t1.elapsed().as_secs_f64(),
        stats.saturated_steps
    );

    let bary_cfg = BaryConfig {
        seed: Rng::derive_seed(seed, "bary", 0),
        ..cfg.bary.clone()
    };
    let map = train_barycentric(&pair, &inst.source, &inst.target, &bary_cfg)?;
    let ty = bary_map_eval(&map, &xs)?;
    let (_, cov_bp) = empirical_covariance(&Matrix::hstack(&xs, &ty)?)?;
    let bp = bw_uvp(&cov_bp, &plan)?;
    info!("d={d} seed={seed}: BP BW-UVP {bp:.4}");

    let stem = ckpt_prefix.to_string_lossy();
    for (suffix, ck) in [
        ("pair", Checkpoint::Pair(pair)),
        ("target", Checkpoint::Gaussian(inst.target.clone())),
        ("bp", Checkpoint::Bary(map)),
    ] {
        let path = PathBuf::from(format!("{stem}_{suffix}.ckpt"));
        ck.save(&path)?;
        ckpts.push(path);
    }
    Ok(TrialOutcome {
        scones,
        bp,
        lambda: inst.lambda,
    })
}

/// SCONES vs BP BW-UVP against the closed-form plan, per dimension and trial.
pub fn run_gaussian_benchmark(cfg: &GaussianBenchConfig, seed: u64, out: &Path) -> Result<GaussianBenchReport> {
    cfg.validate()?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let mut artifacts = RunArtifacts::default();
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        for t in 0..cfg.trials {
            let trial_seed = Rng::derive_seed(seed, "gaussian-trial", ((d as u64) << 32) | t as u64);
            let prefix = out.join("checkpoints").join(format!("gaussian_d{d}_t{t}"));
            let lambda_default = cfg.lambda.unwrap_or(2.0 * d as f64);
            match gaussian_trial(cfg, d, trial_seed, &prefix, &mut artifacts.checkpoints) {
                Ok(o) => {
                    for (method, v) in [(METHOD_SCONES, o.scones), (METHOD_BP, o.bp)] {
                        rows.push(BenchRow {
                            dim: d,
                            trial: t,
                            seed: trial_seed,
                            lambda: o.lambda,
                            method,
                            bw_uvp: v,
                            status: "ok".into(),
                        });
                    }
                }
                Err(e) => {
                    warn!("d={d} trial {t} failed: {e}");
                    for method in [METHOD_SCONES, METHOD_BP] {
                        rows.push(BenchRow {
                            dim: d,
                            trial: t,
                            seed: trial_seed,
                            lambda: lambda_default,
                            method,
                            bw_uvp: f64::NAN,
                            status: failure_status(&e),
                        });
                    }
                }
            }
        }
    }

    let mut summary = Vec::new();
    for &d in &cfg.dims {
        for method in [METHOD_SCONES, METHOD_BP] {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.dim == d && r.method == method && r.status == "ok")
                .map(|r| r.bw_uvp)
                .collect();
            if cfg.trials == 0 {
                continue;
            }
            let (mean, stderr) = mean_and_stderr(&vals);
            artifacts.metrics.insert(format!("gaussian.d{d}.{method}.mean"), mean);
            artifacts.metrics.insert(format!("gaussian.d{d}.{method}.stderr"), stderr);
            summary.push(BenchSummary {
                dim: d,
                method,
                trials_ok: vals.len(),
                mean,
                stderr,
            });
        }
    }

    let trials_path = out.join("gaussian_trials.csv");
    write_table(
        &trials_path,
        &["dim", "trial", "seed", "lambda", "method", "bw_uvp", "status"],
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.dim.to_string(),
                    r.trial.to_string(),
                    r.seed.to_string(),
                    r.lambda.to_string(),
                    r.method.to_string(),
                    r.bw_uvp.to_string(),
                    r.status.clone(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let summary_path = out.join("gaussian_summary.csv");
    write_table(
        &summary_path,
        &["dim", "method", "trials_ok", "bw_uvp_mean", "bw_uvp_stderr"],
        &summary
            .iter()
            .map(|s| {
                vec![
                    s.dim.to_string(),
                    s.method.to_string(),
                    s.trials_ok.to_string(),
                    s.mean.to_string(),
                    s.stderr.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    artifacts.tables.extend([trials_path, summary_path]);
    artifacts.write_metrics(out)?;
    Ok(GaussianBenchReport {
        rows,
        summary,
        artifacts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteRow {
    pub instance: usize,
    pub seed: u64,
    pub j_star: f64,
    pub j_hat: f64,
    pub epsilon: f64,
    pub plan_l1: f64,
    pub bound: f64,
    pub holds: bool,
    /// Sinkhorn vs generic ascent plan distance; NaN for non-KL kinds.
    pub oracle_l1: f64,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct DiscreteReport {
    pub rows: Vec<DiscreteRow>,
    pub artifacts: RunArtifacts,
}

fn discrete_instance_row(cfg: &DiscreteConfig, index: usize, seed: u64, out: &Path) -> Result<DiscreteRow> {
    let inst = DiscreteInstance::random(cfg.nx, cfg.ny, cfg.dim, cfg.uniform_weights, seed)?;
    inst.write_csv(&out.join(format!("instance_{index}.csv")))?;
    let cost = inst.cost_matrix()?;
    let (sigma, tau) = (&inst.source.weights, &inst.target.weights);
    let oracle = cfg.params(None)?;

    let (generic_duals, j_generic) = dual_ascent_generic(&cost, sigma, tau, &oracle, 1.0, cfg.oracle_tol, DEFAULT_MAX_ITER)?;
    let generic_plan = plan_from_duals(&cost, sigma, tau, &oracle, &generic_duals)?;
    let (j_star, plan_star, oracle_l1) = if cfg.kind == FDivKind::Kl {
        let (plan, duals) = sinkhorn_kl(&cost, sigma, tau, cfg.lambda, cfg.oracle_tol, DEFAULT_MAX_ITER)?;
        let j = crate::discrete::dual_value(&cost, sigma, tau, &oracle, &duals)?;
        let l1 = plan.l1_distance(&generic_plan);
        (j, plan, l1)
    } else {
        (j_generic, generic_plan, f64::NAN)
    };

    let train_compat = cfg.params(cfg.chi2_softplus_alpha)?;
    let pair = DualPair::init(
        cfg.dim,
        cfg.dim,
        &cfg.hidden,
        train_compat,
        inst.cost,
        Rng::derive_seed(seed, "pair-init", 0),
    )?;
    let dual_cfg = TrainConfig {
        seed: Rng::derive_seed(seed, "dual-train", 0),
        ..cfg.dual.clone()
    };
    let (pair, _) = train_dual(pair, &inst.source, &inst.target, &dual_cfg)?;
    let approx = pair.to_dual_vectors(&inst.source.atoms, &inst.target.atoms)?;
    let report = stability_check(&cost, sigma, tau, &oracle, &approx, (j_star, &plan_star))?;
    Ok(DiscreteRow {
        instance: index,
        seed,
        j_star,
        j_hat: j_star - report.epsilon,
        epsilon: report.epsilon,
        plan_l1: report.lhs,
        bound: report.rhs,
        holds: report.holds,
        oracle_l1,
        status: "ok".into(),
    })
}

/// Neural duals against exact discrete oracles, with the stability bound.
pub fn run_discrete_validation(cfg: &DiscreteConfig, seed: u64, out: &Path) -> Result<DiscreteReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut artifacts = RunArtifacts::default();
    let mut rows = Vec::new();
    for i in 0..cfg.instances {
        let inst_seed = Rng::derive_seed(seed, "discrete-instance", i as u64);
        let t0 = Instant::now();
        match discrete_instance_row(cfg, i, inst_seed, out) {
            Ok(r) => {
                info!(
                    "instance {i}: eps {:.3e}, |plan diff| {:.3e} vs bound {:.3e} ({:.1}s)",
                    r.epsilon,
                    r.plan_l1,
                    r.bound,
                    t0.elapsed().as_secs_f64()
                );
                rows.push(r)
            }
            Err(e) => {
                warn!("instance {i} aborted: {e}");
                rows.push(DiscreteRow {
                    instance: i,
                    seed: inst_seed,
                    j_star: f64::NAN,
                    j_hat: f64::NAN,
                    epsilon: f64::NAN,
                    plan_l1: f64::NAN,
                    bound: f64::NAN,
                    holds: false,
                    oracle_l1: f64::NAN,
                    status: failure_status(&e),
                });
            }
        }
        artifacts.tables.push(out.join(format!("instance_{i}.csv")));
    }
    artifacts.tables.retain(|p| p.exists());
    let ok: Vec<&DiscreteRow> = rows.iter().filter(|r| r.status == "ok").collect();
    if !rows.is_empty() {
        let held = ok.iter().filter(|r| r.holds).count() as f64;
        artifacts.metrics.insert("discrete.holds_fraction".into(), held / rows.len() as f64);
        let max_of = |f: fn(&DiscreteRow) -> f64| ok.iter().map(|r| f(r)).fold(f64::NAN, f64::max);
        artifacts.metrics.insert("discrete.max_epsilon".into(), max_of(|r| r.epsilon));
        artifacts.metrics.insert("discrete.max_plan_l1".into(), max_of(|r| r.plan_l1));
        artifacts.metrics.insert("discrete.max_oracle_l1".into(), max_of(|r| r.oracle_l1));
    }
    let path = out.join("discrete_validation.csv");
    write_table(
        &path,
        &[
            "instance", "seed", "kind", "lambda", "j_star", "j_hat", "epsilon", "plan_l1", "bound", "holds",
            "oracle_l1", "status",
        ],
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.instance.to_string(),
                    r.seed.to_string(),
                    cfg.kind.name().to_string(),
                    cfg.lambda.to_string(),
                    r.j_star.to_string(),
                    r.j_hat.to_string(),
                    r.epsilon.to_string(),
                    r.plan_l1.to_string(),
                    r.bound.to_string(),
                    r.holds.to_string(),
                    r.oracle_l1.to_string(),
                    r.status.clone(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    artifacts.tables.push(path);
    artifacts.write_metrics(out)?;
    Ok(DiscreteReport { rows, artifacts })
}

#[derive(Clone, Debug)]
pub struct SwissrollReport {
    pub energy_scones: f64,
    pub energy_bp: f64,
    /// Energy distance between two disjoint held-out target halves.
    pub energy_self: f64,
    pub artifacts: RunArtifacts,
}

/// Standard-normal source to the swiss roll, with a trained score net.
pub fn run_swissroll(cfg: &SwissrollConfig, seed: u64, out: &Path) -> Result<SwissrollReport> {
    cfg.validate()?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let mut artifacts = RunArtifacts::default();

    let train = swiss_roll_data(cfg.train_samples, SWISS_ROLL_JITTER, &mut Rng::substream(seed, "swissroll-train", 0))?;
    let held = swiss_roll_data(2 * cfg.samples, SWISS_ROLL_JITTER, &mut Rng::substream(seed, "swissroll-heldout", 0))?;
    let (held_a, held_b) = (held.slice_rows(0, cfg.samples), held.slice_rows(cfg.samples, 2 * cfg.samples));

    let t0 = Instant::now();
    let smallest = cfg.score.levels.iter().copied().fold(f64::INFINITY, f64::min);
    let net = ScoreNet::init(2, &cfg.score_hidden, smallest, Rng::derive_seed(seed, "score-init", 0))?;
    let dsm = DsmConfig {
        seed: Rng::derive_seed(seed, "dsm", 0),
        ..cfg.score.clone()
    };
    let (score, losses) = train_score(net, &train, &dsm)?;
    info!("score net trained in {:.1}s", t0.elapsed().as_secs_f64());

    let source = GaussianMeasure::standard(2);
    let t1 = Instant::now();
    let pair = DualPair::init(
        2,
        2,
        &cfg.dual_hidden,
        Compatibility::kl(cfg.lambda)?,
        CostKind::SqEuclidean,
        Rng::derive_seed(seed, "pair-init", 0),
    )?;
    let dual_cfg = TrainConfig {
        seed: Rng::derive_seed(seed, "dual-train", 0),
        ..cfg.dual.clone()
    };
    let (pair, dual_report) = train_dual(pair, &source, &train, &dual_cfg)?;
    info!("duals trained in {:.1}s", t1.elapsed().as_secs_f64());

    let xs = source.sample(cfg.samples, &mut Rng::substream(seed, "swissroll-source", 0));
    let sampler = SamplerConfig {
        seed: Rng::derive_seed(seed, "sampler", 0),
        ..cfg.sampler.clone()
    };
    let t2 = Instant::now();
    let (ys, _) = sample_scones_batch(&pair, &score, &xs, &sampler)?;
    info!("{} chains in {:.1}s", cfg.samples, t2.elapsed().as_secs_f64());

    let bary_cfg = BaryConfig {
        seed: Rng::derive_seed(seed, "bary", 0),
        ..cfg.bary.clone()
    };
    let map = train_barycentric(&pair, &source, &train, &bary_cfg)?;
    let ty = bary_map_eval(&map, &xs)?;

    let energy_scones = energy_distance(&ys, &held_a)?;
    let energy_bp = energy_distance(&ty, &held_a)?;
    let energy_self = energy_distance(&held_b, &held_a)?;
    info!("energy distances: scones {energy_scones:.5}, bp {energy_bp:.5}, self {energy_self:.5}");

    let scones_path = out.join("swissroll_scones.csv");
    write_samples_csv(&scones_path, &xs, &ys)?;
    let bp_path = out.join("swissroll_bp.csv");
    write_samples_csv(&bp_path, &xs, &ty)?;
    let held_path = out.join("swissroll_heldout.csv");
    write_table(
        &held_path,
        &["y0", "y1"],
        &held.row_iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect::<Vec<_>>(),
    )?;
    let energy_path = out.join("swissroll_energy.csv");
    write_table(
        &energy_path,
        &["method", "energy_distance"],
        &[
            vec![METHOD_SCONES.into(), energy_scones.to_string()],
            vec![METHOD_BP.into(), energy_bp.to_string()],
            vec!["target-halves".into(), energy_self.to_string()],
        ],
    )?;
    let curves_path = out.join("swissroll_training.csv");
    let n = losses.len().max(dual_report.objective.len());
    write_table(
        &curves_path,
        &["step", "dsm_loss", "dual_objective"],
        &(0..n)
            .map(|i| {
                let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
                vec![i.to_string(), cell(losses.get(i)), cell(dual_report.objective.get(i))]
            })
            .collect::<Vec<_>>(),
    )?;
    artifacts.tables.extend([scones_path, bp_path, held_path, energy_path, curves_path]);

    for (name, ck) in [
        ("swissroll_pair", Checkpoint::Pair(pair)),
        ("swissroll_score", Checkpoint::Score(score)),
        ("swissroll_bp", Checkpoint::Bary(map)),
    ] {
        let path = out.join("checkpoints").join(format!("{name}.ckpt"));
        ck.save(&path)?;
        artifacts.checkpoints.push(path);
    }
    artifacts.metrics.insert("swissroll.energy.scones".into(), energy_scones);
    artifacts.metrics.insert("swissroll.energy.bp".into(), energy_bp);
    artifacts.metrics.insert("swissroll.energy.target_halves".into(), energy_self);
    artifacts.write_metrics(out)?;
    Ok(SwissrollReport {
        energy_scones,
        energy_bp,
        energy_self,
        artifacts,
    })
}

/// Target model a dual pair is sampled against.
pub enum TargetScore {
    Net(ScoreNet),
    Gaussian(GaussianScoreOracle),
}

impl TargetScore {
    pub fn oracle(&self) -> &dyn ScoreOracle {
        match self {
            TargetScore::Net(n) => n,
            TargetScore::Gaussian(g) => g,
        }
    }
}

fn sibling_score_path(pair_path: &Path) -> Option<PathBuf> {
    let name = pair_path.file_name()?.to_str()?;
    if !name.contains("pair") {
        return None;
    }
    ["score", "target"]
        .iter()
        .map(|s| pair_path.with_file_name(name.replace("pair", s)))
        .find(|p| p.exists())
}

/// Draws one SCONES sample per source row from checkpointed models.
pub fn run_sample(cfg: &SampleConfig, seed: u64, out: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let pair_path = cfg.checkpoint.as_ref().expect("validated");
    let pair = Checkpoint::load(pair_path)?.into_pair()?;
    let score_path = match &cfg.score_checkpoint {
        Some(p) => p.clone(),
        None => sibling_score_path(pair_path).ok_or_else(|| {
            Error::InvalidParam(format!("no score or target checkpoint found next to {}", pair_path.display()))
        })?,
    };
    let mut sampler = cfg.sampler.clone();
    let target = match Checkpoint::load(&score_path)? {
        Checkpoint::Score(net) => {
            sampler.get_or_insert_with(annealed_sampler_default);
            TargetScore::Net(net)
        }
        Checkpoint::Gaussian(g) => {
            let s = sampler.get_or_insert_with(gaussian_sampler_default);
            let mut oracle = GaussianScoreOracle::new(&g)?;
            if let Some(sch) = &s.schedule {
                oracle = oracle.with_levels(sch)?;
            }
            TargetScore::Gaussian(oracle)
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "expected a score-net or gaussian checkpoint, found {}",
                other.kind()
            )))
        }
    };
    let sampler = SamplerConfig {
        seed: Rng::derive_seed(seed, "sample", 0),
        ..sampler.expect("set above")
    };
    let xs = read_points_csv(cfg.source_csv.as_ref().expect("validated"))?;
    if xs.cols() != pair.source_dim() {
        return Err(Error::Shape(format!(
            "source CSV has {} columns, the pair expects {}",
            xs.cols(),
            pair.source_dim()
        )));
    }
    let (ys, stats) = sample_scones_batch(&pair, target.oracle(), &xs, &sampler)?;
    let path = out.join("samples.csv");
    write_samples_csv(&path, &xs, &ys)?;
    let mut artifacts = RunArtifacts {
        tables: vec![path],
        ..Default::default()
    };
    artifacts.metrics.insert("sample.count".into(), xs.rows() as f64);
    artifacts.metrics.insert("sample.saturated_steps".into(), stats.saturated_steps as f64);
    artifacts.write_metrics(out)?;
    Ok(artifacts)
}

/// Validates, echoes the resolved config to `config.json`, and runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    let echo = out.join("config.json");
    fs::write(&echo, config.to_json()?)?;
    info!("running {} into {}", config.kind.name(), out.display());
    let mut artifacts = match config.kind {
        ExperimentKind::GaussianBench => run_gaussian_benchmark(&config.gaussian, config.seed, out)?.artifacts,
        ExperimentKind::DiscreteValidate => run_discrete_validation(&config.discrete, config.seed, out)?.artifacts,
        ExperimentKind::Swissroll => run_swissroll(&config.swissroll, config.seed, out)?.artifacts,
        ExperimentKind::Sample => run_sample(&config.sample, config.seed, out)?,
    };
    artifacts.config_echo = Some(echo);
    Ok(artifacts)
}
