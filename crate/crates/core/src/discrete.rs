//! Exact solvers on finite instances.
//!
//! These are the ground truth the neural potentials are measured against:
//! log-domain Sinkhorn for KL, block-coordinate dual ascent for any
//! registered divergence, and the checks built on top of them (strong
//! duality, the stability bound, the log-concavity of the KL compatibility).
//!
//! Potentials follow the normalization `π = M(φ_i + ψ_j − c_ij) σ_i τ_j`, so
//! for KL `π = e⁻¹ exp((φ_i + ψ_j − c_ij)/λ) σ_i τ_j`.

use std::path::Path;

use crate::cost::CostKind;
use crate::error::{Error, Result};
use crate::fdiv::{Compatibility, FDivKind};
use crate::linalg::{sym_eig, Matrix};
use crate::rng::Rng;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Weighted point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub atoms: Matrix,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Matrix, weights: Vec<f64>) -> Result<Self> {
        if atoms.rows() != weights.len() {
            return Err(Error::Shape(format!(
                "{} atoms but {} weights",
                atoms.rows(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParam("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Matrix) -> Self {
        let n = atoms.rows();
        Self {
            atoms,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }
}

/// `c(x_i, y_j)` for every source/target pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(pub Matrix);

impl CostMatrix {
    pub fn from_measures(source: &EmpiricalMeasure, target: &EmpiricalMeasure, cost: CostKind) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::Shape("source and target dimensions differ".into()));
        }
        let mut c = Matrix::zeros(source.len(), target.len());
        for i in 0..source.len() {
            for j in 0..target.len() {
                c[(i, j)] = cost.eval(source.atoms.row(i), target.atoms.row(j));
            }
        }
        Ok(Self(c))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        if !m.is_finite() {
            return Err(Error::InvalidParam("non-finite cost".into()));
        }
        Ok(Self(m))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Nonnegative matrix of couplings `π_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan(pub Matrix);

impl TransportPlan {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self(Matrix::from_rows(rows)?))
    }

    pub fn product(sigma: &[f64], tau: &[f64]) -> Self {
        let mut m = Matrix::zeros(sigma.len(), tau.len());
        for (i, s) in sigma.iter().enumerate() {
            for (j, t) in tau.iter().enumerate() {
                m[(i, j)] = s * t;
            }
        }
        Self(m)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    pub fn entries(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.0.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.0.cols()];
        for r in self.0.row_iter() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn mass(&self) -> f64 {
        self.entries().iter().sum()
    }

    /// `max(|rowsums − σ|₁, |colsums − τ|₁)`.
    pub fn marginal_residual(&self, sigma: &[f64], tau: &[f64]) -> f64 {
        let r: f64 = self.row_sums().iter().zip(sigma).map(|(a, b)| (a - b).abs()).sum();
        let c: f64 = self.col_sums().iter().zip(tau).map(|(a, b)| (a - b).abs()).sum();
        r.max(c)
    }

    pub fn l1_distance(&self, other: &TransportPlan) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Finite-dimensional dual variables.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVectors {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

fn check_instance(cost: &CostMatrix, sigma: &[f64], tau: &[f64]) -> Result<()> {
    if cost.shape() != (sigma.len(), tau.len()) {
        return Err(Error::Shape(format!(
            "cost {:?} vs marginals ({}, {})",
            cost.shape(),
            sigma.len(),
            tau.len()
        )));
    }
    Ok(())
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn for KL regularization.
///
/// Iterates until the row-marginal l1 residual (columns are exact after
/// each sweep) drops below `tol`.
pub fn sinkhorn_kl(
    cost: &CostMatrix,
    sigma: &[f64],
    tau: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(TransportPlan, DualVectors)> {
    check_instance(cost, sigma, tau)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParam(format!("lambda must be > 0, got {lambda}")));
    }
    if sigma.iter().chain(tau).any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidParam("sinkhorn needs strictly positive weights".into()));
    }
    let (n, m) = cost.shape();
    let log_sigma: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
    let log_tau: Vec<f64> = tau.iter().map(|t| t.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    for _ in 0..max_iter {
        for i in 0..n {
            f[i] = -lambda * logsumexp((0..m).map(|j| log_tau[j] + (g[j] - cost.get(i, j)) / lambda));
        }
        for j in 0..m {
            g[j] = -lambda * logsumexp((0..n).map(|i| log_sigma[i] + (f[i] - cost.get(i, j)) / lambda));
        }
        let resid: f64 = (0..n)
            .map(|i| {
                let row = (0..m)
                    .map(|j| ((f[i] + g[j] - cost.get(i, j)) / lambda + log_tau[j]).exp())
                    .sum::<f64>();
                sigma[i] * (row - 1.0).abs()
            })
            .sum();
        if resid < tol {
            let mut plan = Matrix::zeros(n, m);
            for i in 0..n {
                for j in 0..m {
                    plan[(i, j)] = ((f[i] + g[j] - cost.get(i, j)) / lambda).exp() * sigma[i] * tau[j];
                }
            }
            // (φ + ψ)/λ − 1 = (f + g)/λ, gauge split evenly
            let half = lambda / 2.0;
            let duals = DualVectors {
                phi: f.iter().map(|v| v + half).collect(),
                psi: g.iter().map(|v| v + half).collect(),
            };
            return Ok((TransportPlan(plan), duals));
        }
    }
    Err(Error::NoConvergence("sinkhorn_kl", max_iter))
}

/// Root of `Σ_j w_j M(s + a_j) = 1` in `s`, bracketed and Newton-polished.
fn solve_block(compat: &Compatibility, weights: &[f64], offsets: &[f64], start: f64) -> Result<f64> {
    let lam = compat.lambda();
    let a_max = offsets.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    // violations must stay inside the conjugate domain
    let limit = compat.kind.conjugate_upper().map(|b| lam * b - a_max);
    let eval = |s: f64| -> Result<(f64, f64)> {
        let mut h = -1.0;
        let mut dh = 0.0;
        for (w, a) in weights.iter().zip(offsets) {
            if *w == 0.0 {
                continue;
            }
            let c = compat.eval(s + a)?;
            h += w * c.m;
            if !c.saturated {
                dh += w * c.m * c.dlogm_dv;
            }
        }
        Ok((h, dh))
    };
    let step0 = lam.max(1.0);
    let mut s = start;
    if let Some(l) = limit {
        if s >= l {
            s = l - step0;
        }
    }
    let (mut h, _) = eval(s)?;
    let (mut lo, mut hi);
    if h < 0.0 {
        lo = s;
        let mut step = step0;
        loop {
            let cand = match limit {
                Some(l) => (s + step).min(0.5 * (lo + l)),
                None => s + step,
            };
            let (hc, _) = eval(cand)?;
            if hc >= 0.0 {
                hi = cand;
                break;
            }
            lo = cand;
            step *= 2.0;
            if step > 1e300 {
                return Err(Error::NoConvergence("dual block bracket", 0));
            }
        }
    } else {
        hi = s;
        let mut step = step0;
        loop {
            let cand = s - step;
            let (hc, _) = eval(cand)?;
            if hc < 0.0 {
                lo = cand;
                break;
            }
            hi = cand;
            step *= 2.0;
            if step > 1e300 {
                return Err(Error::NoConvergence("dual block bracket", 0));
            }
        }
    }
    s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (hs, dh) = eval(s)?;
        h = hs;
        if h == 0.0 {
            return Ok(s);
        }
        if h < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = if dh > 0.0 { s - h / dh } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - s).abs() <= 1e-15 * s.abs().max(lam) || hi - lo <= 1e-15 * s.abs().max(lam) {
            return Ok(next);
        }
        s = next;
    }
    if h.abs() < 1e-12 {
        Ok(s)
    } else {
        Err(Error::NoConvergence("dual block solve", 200))
    }
}

/// Discrete dual objective `Σσφ + Στψ − Σ σ_i τ_j H*(φ_i + ψ_j − c_ij)`.
pub fn dual_value(
    cost: &CostMatrix,
    sigma: &[f64],
    tau: &[f64],
    compat: &Compatibility,
    duals: &DualVectors,
) -> Result<f64> {
    check_instance(cost, sigma, tau)?;
    let mut j = 0.0;
    for (s, p) in sigma.iter().zip(&duals.phi) {
        j += s * p;
    }
    for (t, p) in tau.iter().zip(&duals.psi) {
        j += t * p;
    }
    for (i, s) in sigma.iter().enumerate() {
        for (k, t) in tau.iter().enumerate() {
            j -= s * t * compat.penalty(duals.phi[i] + duals.psi[k] - cost.get(i, k))?;
        }
    }
    Ok(j)
}

/// Dual ascent for any registered divergence.
///
/// Alternates exact block maximization over `φ` and `ψ`: each coordinate
/// solves its first-order condition `Σ_j τ_j M(φ_i + ψ_j − c_ij) = 1` by
/// safeguarded Newton. `lr ∈ (0, 1]` relaxes each block step towards its
/// maximizer (1 = exact). Stops once both marginal l1 residuals are below
/// `tol`; returns the duals and `J*`.
pub fn dual_ascent_generic(
    cost: &CostMatrix,
    sigma: &[f64],
    tau: &[f64],
    compat: &Compatibility,
    lr: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DualVectors, f64)> {
    check_instance(cost, sigma, tau)?;
    if !(lr > 0.0 && lr <= 1.0) {
        return Err(Error::InvalidParam(format!("relaxation must lie in (0, 1], got {lr}")));
    }
    let (n, m) = cost.shape();
    let mut duals = DualVectors {
        phi: vec![0.0; n],
        psi: vec![0.0; m],
    };
    let mut offsets = vec![0.0; n.max(m)];
    for _ in 0..max_iter {
        for i in 0..n {
            for j in 0..m {
                offsets[j] = duals.psi[j] - cost.get(i, j);
            }
            let s = solve_block(compat, tau, &offsets[..m], duals.phi[i])?;
            duals.phi[i] += lr * (s - duals.phi[i]);
        }
        for j in 0..m {
            for i in 0..n {
                offsets[i] = duals.phi[i] - cost.get(i, j);
            }
            let s = solve_block(compat, sigma, &offsets[..n], duals.psi[j])?;
            duals.psi[j] += lr * (s - duals.psi[j]);
        }
        let plan = plan_from_duals(cost, sigma, tau, compat, &duals)?;
        if plan.marginal_residual(sigma, tau) < tol {
            let j = dual_value(cost, sigma, tau, compat, &duals)?;
            return Ok((duals, j));
        }
    }
    Err(Error::NoConvergence("dual_ascent_generic", max_iter))
}

/// Pseudo-coupling `π̂_ij = M(φ_i + ψ_j − c_ij) σ_i τ_j`, unnormalized.
pub fn plan_from_duals(
    cost: &CostMatrix,
    sigma: &[f64],
    tau: &[f64],
    compat: &Compatibility,
    duals: &DualVectors,
) -> Result<TransportPlan> {
    check_instance(cost, sigma, tau)?;
    if duals.phi.len() != sigma.len() || duals.psi.len() != tau.len() {
        return Err(Error::Shape("dual vector lengths differ from marginals".into()));
    }
    let (n, m) = cost.shape();
    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = compat.m(duals.phi[i] + duals.psi[j] - cost.get(i, j))? * sigma[i] * tau[j];
        }
    }
    Ok(TransportPlan(plan))
}

/// `K(π) = Σ π_ij c_ij + λ D_f(π ‖ σ⊗τ)`.
pub fn primal_objective(
    cost: &CostMatrix,
    sigma: &[f64],
    tau: &[f64],
    kind: FDivKind,
    lambda: f64,
    plan: &TransportPlan,
) -> Result<f64> {
    check_instance(cost, sigma, tau)?;
    if plan.shape() != cost.shape() {
        return Err(Error::Shape("plan and cost shapes differ".into()));
    }
    let transport: f64 = plan.entries().iter().zip(cost.0.as_slice()).map(|(p, c)| p * c).sum();
    let reg = crate::fdiv::h_regularizer(kind, plan, &TransportPlan::product(sigma, tau))?;
    Ok(transport + lambda * reg)
}

/// `−λ log Σ_i σ_i exp((φ_i − c_i)/λ)` for one target point's cost column.
pub fn softmin_potential(cost_col: &[f64], phi: &[f64], sigma: &[f64], lambda: f64) -> f64 {
    -lambda
        * logsumexp(
            cost_col
                .iter()
                .zip(phi)
                .zip(sigma)
                .map(|((c, p), s)| s.ln() + (p - c) / lambda),
        )
}

/// Largest eigenvalue of the central finite-difference Hessian (in `y`) of
/// `log h(y) = (φ(x) + ψ(y) − ‖x − y‖²)/λ`, where `ψ` is the softmin
/// transform of `phi` over the source atoms. `phi_x` is `φ(x)`.
pub fn logconcavity_check(
    source: &EmpiricalMeasure,
    phi: &[f64],
    lambda: f64,
    phi_x: f64,
    x: &[f64],
    y: &[f64],
    h: f64,
) -> Result<f64> {
    let d = y.len();
    if x.len() != d || source.dim() != d || phi.len() != source.len() {
        return Err(Error::Shape("logconcavity_check dimensions disagree".into()));
    }
    // fourth-order truncation grows like (h/√λ)²; past this it swamps the signal
    if !(h > 0.0) || h > 1e-2 * lambda.sqrt() {
        return Err(Error::InvalidParam(format!(
            "finite-difference step {h} too large for lambda {lambda}"
        )));
    }
    let mut col = vec![0.0; source.len()];
    let mut log_h = |pt: &[f64]| {
        for (c, a) in col.iter_mut().zip(source.atoms.row_iter()) {
            *c = CostKind::SqEuclidean.eval(a, pt);
        }
        let psi = softmin_potential(&col, phi, &source.weights, lambda);
        (phi_x + psi - CostKind::SqEuclidean.eval(x, pt)) / lambda
    };
    let mut hess = Matrix::zeros(d, d);
    let mut p = y.to_vec();
    for k in 0..d {
        for l in k..d {
            let mut corner = |sk: f64, sl: f64| {
                p.copy_from_slice(y);
                p[k] += sk * h;
                p[l] += sl * h;
                log_h(&p)
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
        }
    }
    let (w, _) = sym_eig(&hess)?;
    Ok(w[0])
}

/// Both sides of `|π̂ − π*|₁ ≤ sqrt(2ε/s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `J* − J(approx)`, clamped at zero.
    pub epsilon: f64,
    pub holds: bool,
}

pub fn stability_check(
    cost: &CostMatrix,
    sigma: &[f64],
    tau: &[f64],
    compat: &Compatibility,
    approx: &DualVectors,
    oracle: (f64, &TransportPlan),
) -> Result<StabilityReport> {
    let (j_star, plan_star) = oracle;
    let j_hat = dual_value(cost, sigma, tau, compat, approx)?;
    let epsilon = (j_star - j_hat).max(0.0);
    let plan_hat = plan_from_duals(cost, sigma, tau, compat, approx)?;
    let lhs = plan_hat.l1_distance(plan_star);
    let rhs = (2.0 * epsilon / compat.primal_modulus()).sqrt();
    Ok(StabilityReport {
        lhs,
        rhs,
        epsilon,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Source/target measures plus the cost tag, as exchanged with the CLI.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteInstance {
    pub source: EmpiricalMeasure,
    pub target: EmpiricalMeasure,
    pub cost: CostKind,
}

impl DiscreteInstance {
    /// Atoms uniform in `[0, 1]^d`; weights uniform or randomly perturbed.
    pub fn random(n: usize, m: usize, d: usize, uniform_weights: bool, seed: u64) -> Result<Self> {
        let mut rng = Rng::substream(seed, "discrete-instance", 0);
        let mut draw = |k: usize| -> Result<EmpiricalMeasure> {
            let mut atoms = Matrix::zeros(k, d);
            for v in atoms.as_mut_slice() {
                *v = rng.uniform(0.0, 1.0);
            }
            if uniform_weights {
                return Ok(EmpiricalMeasure::uniform(atoms));
            }
            let raw: Vec<f64> = (0..k).map(|_| rng.uniform(0.5, 1.5)).collect();
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            // absorb rounding so the sum is 1 to machine precision
            let drift: f64 = 1.0 - w.iter().sum::<f64>();
            w[0] += drift;
            EmpiricalMeasure::new(atoms, w)
        };
        let source = draw(n)?;
        let target = draw(m)?;
        Ok(Self {
            source,
            target,
            cost: CostKind::SqEuclidean,
        })
    }

    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        CostMatrix::from_measures(&self.source, &self.target, self.cost)
    }

    /// CSV with a `# cost=<tag>` first line and `side,weight,x0,..` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "# cost={}", self.cost.name())?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["side".to_string(), "weight".to_string()];
        header.extend((0..self.source.dim()).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for (side, m) in [("source", &self.source), ("target", &self.target)] {
            for (i, row) in m.atoms.row_iter().enumerate() {
                let mut rec = vec![side.to_string(), format!("{:e}", m.weights[i])];
                rec.extend(row.iter().map(|v| format!("{v:e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
        let cost = match first.trim().strip_prefix("# cost=") {
            Some(tag) => CostKind::parse(tag.trim())?,
            None => return Err(Error::InvalidParam("instance file must start with '# cost=<tag>'".into())),
        };
        let mut r = csv::Reader::from_reader(rest.as_bytes());
        let mut sides: [(Vec<f64>, Vec<f64>, usize); 2] = Default::default();
        let mut dim = None;
        for rec in r.records() {
            let rec = rec?;
            let which = match rec.get(0) {
                Some("source") => 0,
                Some("target") => 1,
                other => return Err(Error::InvalidParam(format!("bad side {other:?}"))),
            };
            let nums: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParam(format!("bad number: {e}")))?;
            if nums.len() < 2 {
                return Err(Error::InvalidParam("row needs a weight and coordinates".into()));
            }
            let d = nums.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::Shape("rows have different dimensions".into()));
            }
            sides[which].0.push(nums[0]);
            sides[which].1.extend_from_slice(&nums[1..]);
            sides[which].2 += 1;
        }
        let d = dim.ok_or_else(|| Error::InvalidParam("empty instance".into()))?;
        let [(ws, xs, ns), (wt, yt, nt)] = sides;
        Ok(Self {
            source: EmpiricalMeasure::new(Matrix::from_vec(ns, d, xs)?, ws)?,
            target: EmpiricalMeasure::new(Matrix::from_vec(nt, d, yt)?, wt)?,
            cost,
        })
    }
}
