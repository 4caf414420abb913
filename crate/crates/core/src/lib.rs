//! Neural f-divergence regularized optimal transport with score-based
//! conditional sampling.

pub mod baselines;
pub mod checkpoint;
pub mod cost;
pub mod discrete;
pub mod dual;
pub mod error;
pub mod fdiv;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod mlp;
pub mod rng;
pub mod sampler;
pub mod score;

pub use cost::CostKind;
pub use error::{Error, Result};
pub use fdiv::{Compatibility, FDivKind, RegParams};
pub use linalg::Matrix;
pub use rng::Rng;
