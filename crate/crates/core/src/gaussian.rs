//! Closed-form entropic transport between Gaussians.
//!
//! With squared Euclidean cost and `λ·KL(π ‖ σ⊗τ)`, the optimal coupling of
//! two Gaussians is a joint Gaussian whose cross-covariance is
//!
//! `C = ½ A^{1/2} (4 A^{1/2} B A^{1/2} + (λ²/4) I)^{1/2} A^{−1/2} − (λ/4) I`
//!
//! for source covariance `A` and target covariance `B`. In one dimension this
//! reduces to the root of `2c² + λc − 2ab = 0`.

use crate::dual::DataSource;
use crate::error::{Error, Result};
use crate::linalg::{haar_orthogonal, inv_sqrtm_pd, sample_gaussian, sqrtm_psd, sym_eig, Matrix};
use crate::rng::Rng;

/// `N(mean, cov)` with a cached symmetric square root of `cov`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    cov: Matrix,
    factor: Matrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if cov.rows() != mean.len() || cov.cols() != mean.len() {
            return Err(Error::Shape(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.rows(),
                cov.cols()
            )));
        }
        let factor = sqrtm_psd(&cov)?;
        Ok(Self { mean, cov, factor })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            cov: Matrix::identity(d),
            factor: Matrix::identity(d),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The measure convolved with `N(0, noise² I)`.
    pub fn noised(&self, noise: f64) -> Result<Self> {
        let mut cov = self.cov.clone();
        for k in 0..self.dim() {
            cov[(k, k)] += noise * noise;
        }
        Self::new(self.mean.clone(), cov)
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        let prec = self.cov.inverse_spd()?;
        let r: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let quad = crate::linalg::dot(&r, &prec.mat_vec(&r)?);
        let logdet = self.cov.determinant()?.ln();
        let d = self.dim() as f64;
        Ok(-0.5 * (quad + logdet + d * (2.0 * std::f64::consts::PI).ln()))
    }
}

impl DataSource for GaussianMeasure {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, m: usize, rng: &mut Rng) -> Matrix {
        sample_gaussian(&self.mean, &self.factor, m, rng).expect("factor shape fixed at construction")
    }
}

/// Score of a Gaussian with a precomputed precision matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScore {
    pub mean: Vec<f64>,
    pub precision: Matrix,
}

impl GaussianScore {
    pub fn new(g: &GaussianMeasure) -> Result<Self> {
        Ok(Self {
            mean: g.mean.clone(),
            precision: g.cov.inverse_spd()?,
        })
    }

    /// Writes `−Σ⁻¹(y − μ)` into `out`.
    #[inline]
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.precision.row_iter()) {
            *o = -row
                .iter()
                .zip(y.iter().zip(&self.mean))
                .map(|(p, (a, b))| p * (a - b))
                .sum::<f64>();
        }
    }
}

/// `∇_y log N(y; μ, Σ) = −Σ⁻¹(y − μ)`.
pub fn gaussian_score(g: &GaussianMeasure, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != g.dim() {
        return Err(Error::Shape("point and measure dimensions differ".into()));
    }
    let s = GaussianScore::new(g)?;
    let mut out = vec![0.0; y.len()];
    s.eval_into(y, &mut out);
    Ok(out)
}

/// Joint Gaussian on `X × Y` given by its blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGaussianPlan {
    pub source_mean: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub source_cov: Matrix,
    pub target_cov: Matrix,
    /// `Cov(X, Y)`, `d × d`.
    pub cross: Matrix,
}

impl JointGaussianPlan {
    pub fn dim(&self) -> usize {
        self.source_mean.len()
    }

    pub fn joint_mean(&self) -> Vec<f64> {
        let mut m = self.source_mean.clone();
        m.extend_from_slice(&self.target_mean);
        m
    }

    /// `[[Σ₁, C], [Cᵀ, Σ₂]]`.
    pub fn joint_covariance(&self) -> Matrix {
        let d = self.dim();
        let mut j = Matrix::zeros(2 * d, 2 * d);
        j.set_block(0, 0, &self.source_cov);
        j.set_block(0, d, &self.cross);
        j.set_block(d, 0, &self.cross.transpose());
        j.set_block(d, d, &self.target_cov);
        j
    }

    pub fn from_joint(mean: &[f64], cov: &Matrix) -> Result<Self> {
        let n = mean.len();
        if n % 2 != 0 || cov.rows() != n || cov.cols() != n {
            return Err(Error::Shape("joint must be 2d-dimensional".into()));
        }
        let d = n / 2;
        Ok(Self {
            source_mean: mean[..d].to_vec(),
            target_mean: mean[d..].to_vec(),
            source_cov: cov.block(0, 0, d, d),
            target_cov: cov.block(d, d, d, d),
            cross: cov.block(0, d, d, d),
        })
    }
}

/// Random benchmark problem: zero means, Haar eigenvectors, eigenvalues
/// uniform on `[1, 10]`, `λ = 2d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub dim: usize,
    pub source: GaussianMeasure,
    pub target: GaussianMeasure,
    pub lambda: f64,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be > 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }
}

fn random_covariance(d: usize, rng: &mut Rng) -> Result<Matrix> {
    let q = haar_orthogonal(d, rng)?;
    let w: Vec<f64> = (0..d).map(|_| rng.uniform(1.0, 10.0)).collect();
    Ok(crate::linalg::from_eig(&w, &q).symmetrize())
}

pub fn random_instance(d: usize, seed: u64) -> Result<ProblemInstance> {
    if d == 0 {
        return Err(Error::InvalidParam("dimension must be >= 1".into()));
    }
    let mut rs = Rng::substream(seed, "gaussian-source", 0);
    let mut rt = Rng::substream(seed, "gaussian-target", 0);
    Ok(ProblemInstance {
        dim: d,
        source: GaussianMeasure::new(vec![0.0; d], random_covariance(d, &mut rs)?)?,
        target: GaussianMeasure::new(vec![0.0; d], random_covariance(d, &mut rt)?)?,
        lambda: 2.0 * d as f64,
        seed,
    })
}

/// Optimal KL-regularized coupling of two Gaussians.
pub fn entropic_plan_for(source: &GaussianMeasure, target: &GaussianMeasure, lambda: f64) -> Result<JointGaussianPlan> {
    let d = source.dim();
    if target.dim() != d {
        return Err(Error::Shape("source and target dimensions differ".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParam(format!("lambda must be > 0, got {lambda}")));
    }
    let a_half = sqrtm_psd(&source.cov)?;
    let a_inv_half = inv_sqrtm_pd(&source.cov)?;
    let mut inner = a_half.matmul(&target.cov)?.matmul(&a_half)?.scale(4.0).symmetrize();
    for k in 0..d {
        inner[(k, k)] += lambda * lambda / 4.0;
    }
    let root = sqrtm_psd(&inner)?;
    let mut cross = a_half.matmul(&root)?.matmul(&a_inv_half)?.scale(0.5);
    for k in 0..d {
        cross[(k, k)] -= lambda / 4.0;
    }
    Ok(JointGaussianPlan {
        source_mean: source.mean.clone(),
        target_mean: target.mean.clone(),
        source_cov: source.cov.clone(),
        target_cov: target.cov.clone(),
        cross,
    })
}

pub fn entropic_plan(instance: &ProblemInstance) -> Result<JointGaussianPlan> {
    entropic_plan_for(&instance.source, &instance.target, instance.lambda)
}

/// `Y | X = x` under the joint: Schur complement.
pub fn conditional_of_joint(plan: &JointGaussianPlan, x: &[f64]) -> Result<GaussianMeasure> {
    if x.len() != plan.dim() {
        return Err(Error::Shape("conditioning point has the wrong dimension".into()));
    }
    let prec = plan.source_cov.inverse_spd()?;
    // K = Cᵀ Σ₁⁻¹
    let gain = plan.cross.transpose().matmul(&prec)?;
    let dx: Vec<f64> = x.iter().zip(&plan.source_mean).map(|(a, b)| a - b).collect();
    let shift = gain.mat_vec(&dx)?;
    let mean = plan.target_mean.iter().zip(&shift).map(|(m, s)| m + s).collect();
    let cov = plan.target_cov.sub(&gain.matmul(&plan.cross)?)?.symmetrize();
    GaussianMeasure::new(mean, cov)
}

/// Squared Bures–Wasserstein distance, clamped at zero.
pub fn bw2_squared(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::Shape("dimensions differ".into()));
    }
    let mean_term: f64 = g1.mean.iter().zip(&g2.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let s1 = &g1.factor;
    let cross = sqrtm_psd(&s1.matmul(&g2.cov)?.matmul(s1)?.symmetrize())?;
    let v = mean_term + g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    Ok(v.max(0.0))
}

/// `100 · BW²(N(0, Σ̂), N(0, Σ*)) / (½ tr Σ*)`.
pub fn bw_uvp(sample_joint_cov: &Matrix, reference: &JointGaussianPlan) -> Result<f64> {
    let star = reference.joint_covariance();
    if sample_joint_cov.rows() != star.rows() || sample_joint_cov.cols() != star.cols() {
        return Err(Error::Shape("joint covariance dimensions differ".into()));
    }
    let n = star.rows();
    let est = GaussianMeasure::new(vec![0.0; n], sample_joint_cov.symmetrize())?;
    let refm = GaussianMeasure::new(vec![0.0; n], star.clone())?;
    Ok(100.0 * bw2_squared(&est, &refm)? / (0.5 * star.trace()))
}

/// Smallest eigenvalue of the joint covariance.
pub fn min_joint_eigenvalue(plan: &JointGaussianPlan) -> Result<f64> {
    let (w, _) = sym_eig(&plan.joint_covariance().symmetrize())?;
    Ok(*w.last().expect("nonempty"))
}
