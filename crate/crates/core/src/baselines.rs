//! Barycentric projection baseline.
//!
//! The map `T` regresses targets onto sources under the learned
//! compatibility: it minimizes `Σ a_i b_j M(V(x_i, y_j)) ‖T(x_i) − y_j‖²`
//! over all cross pairs of each batch, whose pointwise minimizer is the
//! `M`-weighted mean of the batch targets.

use serde::{Deserialize, Serialize};

use crate::dual::{draw_batch, full_data, DataSource, DualPair};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::{Activation, Mlp, MlpSpec, Optimizer, OptimizerConfig, Tape};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaryConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    /// Samples per side per step; `None` uses the full data set.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for BaryConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            optimizer: OptimizerConfig::adam(1e-3),
            iterations: 5000,
            batch_size: Some(256),
            seed: 0,
        }
    }
}

/// Trained deterministic map `x ↦ T(x)`.
#[derive(Clone, Debug)]
pub struct BaryMap {
    pub net: Mlp,
}

impl BaryMap {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn init(source_dim: usize, target_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![source_dim];
        widths.extend_from_slice(hidden);
        widths.push(target_dim);
        let spec = MlpSpec::new(widths, Activation::Linear)?;
        Ok(Self::new(Mlp::init(spec, seed)?))
    }

    pub fn source_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn target_dim(&self) -> usize {
        self.net.output_dim()
    }
}

/// Fits `T` against the compatibility of a trained pair.
pub fn train_barycentric(
    pair: &DualPair,
    source: &dyn DataSource,
    target: &dyn DataSource,
    config: &BaryConfig,
) -> Result<BaryMap> {
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
    let mut map = BaryMap::init(
        source.dim(),
        target.dim(),
        &config.hidden,
        Rng::derive_seed(config.seed, "bary-init", 0),
    )?;
    let mut rng = Rng::substream(config.seed, "bary", 0);
    let mut opt = Optimizer::new(config.optimizer, map.net.params.data.len());
    let mut grad = vec![0.0; map.net.params.data.len()];
    let dy = target.dim();
    let mut tape = Tape::default();
    let mut ptape = Tape::default();
    let mut up = vec![0.0; dy];
    let mut compat_row = Vec::new();

    for step in 0..config.iterations {
        let batch = draw_batch(source, target, &full, config.batch_size, &mut rng);
        let psis = pair.psi.forward_batch(&batch.ys)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..batch.xs.rows() {
            let xi = batch.xs.row(i);
            let phi = pair.phi_at(xi, &mut ptape);
            compat_row.clear();
            for (k, q) in psis.as_slice().iter().enumerate() {
                let v = phi + q - pair.cost.eval(xi, batch.ys.row(k));
                compat_row.push(batch.b[k] * pair.compat.penalty_soft(v).1);
            }
            let t = map.net.forward_tape(xi, &mut tape);
            // ∂/∂T(x_i) of a_i Σ_k b_k M_ik ‖T(x_i) − y_k‖²
            up.iter_mut().for_each(|u| *u = 0.0);
            for (k, w) in compat_row.iter().enumerate() {
                for ((u, ti), yk) in up.iter_mut().zip(t).zip(batch.ys.row(k)) {
                    *u += 2.0 * batch.a[i] * w * (ti - yk);
                }
            }
            map.net.backward_tape(&mut tape, &up, Some(&mut grad), None);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("barycentric training diverged at step {step}")));
        }
        opt.descend(&mut map.net.params.data, &grad);
    }
    Ok(map)
}

/// Row-wise `T(x)`.
pub fn bary_map_eval(map: &BaryMap, xs: &Matrix) -> Result<Matrix> {
    if xs.rows() == 0 {
        return Ok(Matrix::zeros(0, map.target_dim()));
    }
    if xs.cols() != map.source_dim() {
        return Err(Error::Shape(format!(
            "map expects inputs of dimension {}, got {}",
            map.source_dim(),
            xs.cols()
        )));
    }
    map.net.forward_batch(xs)
}
