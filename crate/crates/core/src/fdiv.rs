//! f-divergence regularizers.
//!
//! For each divergence `D_f(p || q) = E_q[f(p/q)]` this module provides the
//! generator `f`, its convex conjugate `f*` and `f*'`, the dual penalty
//! `H*(v) = λ f*(v/λ)` and the compatibility `M(v) = f*'(v/λ)` that turns
//! dual potentials into a transport density `π = M(V) σ⊗τ`.
//!
//! | kind | f(t) | f*(v) | f*'(v) | dom f* |
//! |------|------|-------|--------|--------|
//! | KL | t log t | exp(v-1) | exp(v-1) | ℝ |
//! | reverse KL | -log t | log(-1/v) - 1 | -1/v | v < 0 |
//! | Pearson χ² | (t-1)² | v²/4 + v | v/2 + 1 | ℝ |
//! | squared Hellinger | (√t - 1)² | v/(1-v) | (1-v)⁻² | v < 1 |
//! | Jensen-Shannon | -(t+1) log((1+t)/2) + t log t | -log(2-eᵛ) | eᵛ/(2-eᵛ) | v < log 2 |
//! | GAN | t log t - (t+1) log(t+1) | -log(1-eᵛ) | (e⁻ᵛ-1)⁻¹ | v < 0 |
//!
//! The χ² compatibility `v/2 + 1` goes negative, so the penalty and
//! compatibility for χ² use the conjugate of `f` restricted to `t >= 0`
//! (a hinge), optionally smoothed with a softplus of sharpness `α`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::discrete::TransportPlan;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FDivKind {
    Kl,
    ReverseKl,
    #[serde(alias = "chi2")]
    PearsonChi2,
    SquaredHellinger,
    JensenShannon,
    Gan,
}

pub const ALL_KINDS: [FDivKind; 6] = [
    FDivKind::Kl,
    FDivKind::ReverseKl,
    FDivKind::PearsonChi2,
    FDivKind::SquaredHellinger,
    FDivKind::JensenShannon,
    FDivKind::Gan,
];

/// Values of the generator and its conjugate at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugateTriple {
    /// `f(v)`, absent when `v` is outside the domain of `f`.
    pub f: Option<f64>,
    pub conj: f64,
    pub conj_prime: f64,
}

impl FDivKind {
    pub fn name(self) -> &'static str {
        match self {
            FDivKind::Kl => "kl",
            FDivKind::ReverseKl => "reverse-kl",
            FDivKind::PearsonChi2 => "chi2",
            FDivKind::SquaredHellinger => "squared-hellinger",
            FDivKind::JensenShannon => "jensen-shannon",
            FDivKind::Gan => "gan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_KINDS
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .or(match s {
                "pearson-chi2" => Some(FDivKind::PearsonChi2),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidParam(format!("unknown divergence '{s}'")))
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FDivKind::Kl => 0,
            FDivKind::ReverseKl => 1,
            FDivKind::PearsonChi2 => 2,
            FDivKind::SquaredHellinger => 3,
            FDivKind::JensenShannon => 4,
            FDivKind::Gan => 5,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        ALL_KINDS.get(usize::from(c)).copied()
    }

    /// Strong-convexity constant of `f`, where one is known.
    pub fn strong_convexity(self) -> Option<f64> {
        match self {
            FDivKind::PearsonChi2 => Some(2.0),
            _ => None,
        }
    }

    /// Open upper bound of `dom f*`; `None` means all of ℝ.
    pub fn conjugate_upper(self) -> Option<f64> {
        match self {
            FDivKind::Kl | FDivKind::PearsonChi2 => None,
            FDivKind::ReverseKl | FDivKind::Gan => Some(0.0),
            FDivKind::SquaredHellinger => Some(1.0),
            FDivKind::JensenShannon => Some(LN_2),
        }
    }

    pub fn in_conjugate_domain(self, v: f64) -> bool {
        v.is_finite() && self.conjugate_upper().is_none_or(|b| v < b)
    }

    /// Generator `f(t)`; `None` outside its domain.
    pub fn primal(self, t: f64) -> Option<f64> {
        if !t.is_finite() {
            return None;
        }
        match self {
            FDivKind::PearsonChi2 => Some((t - 1.0) * (t - 1.0)),
            _ if t < 0.0 => None,
            FDivKind::Kl => Some(xlogx(t)),
            FDivKind::ReverseKl => (t > 0.0).then(|| -t.ln()),
            FDivKind::SquaredHellinger => Some((t.sqrt() - 1.0).powi(2)),
            FDivKind::JensenShannon => Some(-(t + 1.0) * ((1.0 + t) / 2.0).ln() + xlogx(t)),
            FDivKind::Gan => Some(xlogx(t) - (t + 1.0) * (t + 1.0).ln()),
        }
    }

    /// `f'(t)`; the conjugate maximiser at `v = f'(t)` is `t`.
    pub fn primal_derivative(self, t: f64) -> Option<f64> {
        match self {
            FDivKind::PearsonChi2 => Some(2.0 * (t - 1.0)),
            _ if t <= 0.0 => None,
            FDivKind::Kl => Some(t.ln() + 1.0),
            FDivKind::ReverseKl => Some(-1.0 / t),
            FDivKind::SquaredHellinger => Some(1.0 - 1.0 / t.sqrt()),
            FDivKind::JensenShannon => Some((2.0 * t / (1.0 + t)).ln()),
            FDivKind::Gan => Some((t / (t + 1.0)).ln()),
        }
    }

    fn check_domain(self, v: f64) -> Result<()> {
        if self.in_conjugate_domain(v) {
            Ok(())
        } else {
            Err(Error::Domain {
                kind: self.name(),
                value: v,
            })
        }
    }

    /// `f*(v)` in the closed form of the table above.
    pub fn conjugate(self, v: f64) -> Result<f64> {
        self.check_domain(v)?;
        Ok(match self {
            FDivKind::Kl => (v - 1.0).exp(),
            FDivKind::ReverseKl => (-1.0 / v).ln() - 1.0,
            FDivKind::PearsonChi2 => v * v / 4.0 + v,
            FDivKind::SquaredHellinger => v / (1.0 - v),
            FDivKind::JensenShannon => -(2.0 - v.exp()).ln(),
            FDivKind::Gan => -(-v.exp_m1()).ln(),
        })
    }

    pub fn conjugate_prime(self, v: f64) -> Result<f64> {
        self.check_domain(v)?;
        Ok(match self {
            FDivKind::Kl => (v - 1.0).exp(),
            FDivKind::ReverseKl => -1.0 / v,
            FDivKind::PearsonChi2 => v / 2.0 + 1.0,
            FDivKind::SquaredHellinger => (1.0 - v).powi(-2),
            FDivKind::JensenShannon => v.exp() / (2.0 - v.exp()),
            FDivKind::Gan => 1.0 / (-v).exp_m1(),
        })
    }
}

fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// `(f(v), f*(v), f*'(v))`; errors when `v` is outside `dom f*`.
pub fn conjugate_triple(kind: FDivKind, v: f64) -> Result<ConjugateTriple> {
    Ok(ConjugateTriple {
        f: kind.primal(v),
        conj: kind.conjugate(v)?,
        conj_prime: kind.conjugate_prime(v)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub lambda: f64,
    /// Softplus sharpness for the χ² hinge; `None` selects the hard hinge.
    #[serde(default)]
    pub chi2_softplus_alpha: Option<f64>,
}

impl RegParams {
    pub fn new(lambda: f64) -> Result<Self> {
        let p = Self {
            lambda,
            chi2_softplus_alpha: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_softplus(mut self, alpha: f64) -> Result<Self> {
        self.chi2_softplus_alpha = Some(alpha);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if let Some(a) = self.chi2_softplus_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParam(format!("softplus alpha must be > 0, got {a}")));
            }
        }
        Ok(())
    }
}

/// Compatibility value at one violation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompatValue {
    pub m: f64,
    /// `d log M / dv`; infinite when `saturated`.
    pub dlogm_dv: f64,
    /// `M = 0` (hard χ² hinge): the log-gradient does not exist.
    pub saturated: bool,
}

/// A divergence together with its regularization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compatibility {
    pub kind: FDivKind,
    pub params: RegParams,
}

impl Compatibility {
    pub fn new(kind: FDivKind, params: RegParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { kind, params })
    }

    pub fn kl(lambda: f64) -> Result<Self> {
        Self::new(FDivKind::Kl, RegParams::new(lambda)?)
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    /// Strong-convexity modulus of the primal objective in l1 norm.
    pub fn primal_modulus(&self) -> f64 {
        self.params.lambda * self.kind.strong_convexity().unwrap_or(1.0)
    }

    fn softplus_alpha(&self) -> Option<f64> {
        match self.kind {
            FDivKind::PearsonChi2 => self.params.chi2_softplus_alpha,
            _ => None,
        }
    }

    /// `H*(v) = λ f*(v/λ)`, with the hinged (or softplus) χ² conjugate.
    pub fn penalty(&self, v: f64) -> Result<f64> {
        let lam = self.params.lambda;
        if self.kind == FDivKind::PearsonChi2 {
            if !v.is_finite() {
                return Err(Error::Domain { kind: "chi2", value: v });
            }
            let u = v / (2.0 * lam) + 1.0;
            return Ok(match self.softplus_alpha() {
                None => lam * (u.max(0.0).powi(2) - 1.0),
                Some(a) => 2.0 * lam * softplus_antiderivative(a * u) / (a * a) - lam,
            });
        }
        Ok(lam * self.kind.conjugate(v / lam)?)
    }

    /// `M(v)` and `d log M / dv`.
    pub fn eval(&self, v: f64) -> Result<CompatValue> {
        let lam = self.params.lambda;
        let w = v / lam;
        if self.kind == FDivKind::PearsonChi2 {
            if !v.is_finite() {
                return Err(Error::Domain { kind: "chi2", value: v });
            }
            let u = w / 2.0 + 1.0;
            return Ok(match self.softplus_alpha() {
                None if u > 0.0 => CompatValue {
                    m: u,
                    dlogm_dv: 1.0 / (2.0 * lam * u),
                    saturated: false,
                },
                None => CompatValue {
                    m: 0.0,
                    dlogm_dv: f64::INFINITY,
                    saturated: true,
                },
                Some(a) => {
                    let s = a * u;
                    CompatValue {
                        m: softplus(s) / a,
                        dlogm_dv: a * sigmoid_over_softplus(s) / (2.0 * lam),
                        saturated: false,
                    }
                }
            });
        }
        self.kind.check_domain(w)?;
        let m = self.kind.conjugate_prime(w)?;
        let dlog_dw = match self.kind {
            FDivKind::Kl => 1.0,
            FDivKind::ReverseKl => -1.0 / w,
            FDivKind::SquaredHellinger => 2.0 / (1.0 - w),
            FDivKind::JensenShannon => 1.0 + w.exp() / (2.0 - w.exp()),
            FDivKind::Gan => -1.0 / w.exp_m1(),
            FDivKind::PearsonChi2 => unreachable!(),
        };
        Ok(CompatValue {
            m,
            dlogm_dv: dlog_dw / lam,
            saturated: false,
        })
    }

    pub fn m(&self, v: f64) -> Result<f64> {
        Ok(self.eval(v)?.m)
    }

    /// `dM/dv`, zero inside the hard hinge's flat region.
    pub fn m_prime(&self, v: f64) -> Result<f64> {
        let c = self.eval(v)?;
        Ok(if c.saturated { 0.0 } else { c.m * c.dlogm_dv })
    }

    /// Penalty and its derivative for stochastic training. Outside a bounded
    /// conjugate domain the violation is clamped just inside the boundary and
    /// the returned flag is set instead of failing.
    pub fn penalty_soft(&self, v: f64) -> (f64, f64, bool) {
        let lam = self.params.lambda;
        let (v, clamped) = match self.kind.conjugate_upper() {
            Some(b) if v / lam >= b - 1e-6 => (lam * (b - 1e-6), true),
            _ => (v, false),
        };
        match (self.penalty(v), self.eval(v)) {
            (Ok(h), Ok(c)) => (h, c.m, clamped),
            _ => (f64::NAN, f64::NAN, true),
        }
    }
}

/// `dual_penalty(kind, params, v)`.
pub fn dual_penalty(kind: FDivKind, params: RegParams, v: f64) -> Result<f64> {
    Compatibility::new(kind, params)?.penalty(v)
}

/// `compatibility(kind, params, v)`.
pub fn compatibility(kind: FDivKind, params: RegParams, v: f64) -> Result<CompatValue> {
    Compatibility::new(kind, params)?.eval(v)
}

/// `D_f(plan || product) = Σ q f(p/q)` over cells with `q > 0`.
pub fn h_regularizer(kind: FDivKind, plan: &TransportPlan, product: &TransportPlan) -> Result<f64> {
    if plan.shape() != product.shape() {
        return Err(Error::Shape(format!("plan {:?} vs product {:?}", plan.shape(), product.shape())));
    }
    let mut total = 0.0;
    for (p, q) in plan.entries().iter().zip(product.entries()) {
        if *q <= 0.0 {
            if *p != 0.0 {
                return Err(Error::Support(format!("mass {p} where the product measure is zero")));
            }
            continue;
        }
        let t = p / q;
        let ft = kind.primal(t).ok_or(Error::Domain {
            kind: kind.name(),
            value: t,
        })?;
        total += q * ft;
    }
    Ok(total)
}

fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

fn sigmoid_over_softplus(s: f64) -> f64 {
    if s < -700.0 {
        // both sides are exp(s) to leading order
        return 1.0;
    }
    let sig = if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    };
    sig / softplus(s)
}

/// `B_{2k} / (2k+1)!` for k = 1..10.
const DILOG_COEFFS: [f64; 10] = [
    1.0 / 36.0,
    -1.0 / 3600.0,
    1.0 / 211_680.0,
    -1.0 / 10_886_400.0,
    1.0 / 526_901_760.0,
    -4.064_761_645_144_226e-11,
    8.921_691_020_456_453e-13,
    -1.993_929_586_072_108e-14,
    4.518_980_029_619_918e-16,
    -1.035_651_761_218_125e-17,
];

/// Real dilogarithm on `[-1, 0]` via the Bernoulli series in `-log(1-x)`.
fn dilog_neg(x: f64) -> f64 {
    debug_assert!((-1.0..=0.0).contains(&x));
    let w = -(-x).ln_1p();
    let w2 = w * w;
    let mut term = w * w2;
    let mut acc = w - w2 / 4.0;
    for c in DILOG_COEFFS {
        acc += c * term;
        term *= w2;
    }
    acc
}

/// `∫_{-∞}^s softplus(r) dr = -Li2(-e^s)`.
fn softplus_antiderivative(s: f64) -> f64 {
    if s <= 0.0 {
        -dilog_neg(-s.exp())
    } else {
        PI * PI / 6.0 + s * s / 2.0 + dilog_neg(-(-s).exp())
    }
}
