use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground cost `c(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `‖x − y‖²`
    SqEuclidean,
    /// `‖x − y‖² / d`
    MeanSqEuclidean,
    /// `0`; only useful for tests.
    Zero,
}

impl CostKind {
    pub fn name(self) -> &'static str {
        match self {
            CostKind::SqEuclidean => "sq-euclidean",
            CostKind::MeanSqEuclidean => "mean-sq-euclidean",
            CostKind::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sq-euclidean" => Ok(CostKind::SqEuclidean),
            "mean-sq-euclidean" => Ok(CostKind::MeanSqEuclidean),
            "zero" => Ok(CostKind::Zero),
            _ => Err(Error::InvalidParam(format!("unknown cost '{s}'"))),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            CostKind::SqEuclidean => 0,
            CostKind::MeanSqEuclidean => 1,
            CostKind::Zero => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CostKind::SqEuclidean),
            1 => Some(CostKind::MeanSqEuclidean),
            2 => Some(CostKind::Zero),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            CostKind::Zero => 0.0,
            CostKind::SqEuclidean => sq_dist(x, y),
            CostKind::MeanSqEuclidean => sq_dist(x, y) / x.len() as f64,
        }
    }

    /// Writes `∇_y c(x, y)` into `out`.
    #[inline]
    pub fn grad_y(self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let scale = match self {
            CostKind::Zero => 0.0,
            CostKind::SqEuclidean => 2.0,
            CostKind::MeanSqEuclidean => 2.0 / x.len() as f64,
        };
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = scale * (yi - xi);
        }
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
