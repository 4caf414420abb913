//! Benchmark fixtures shared by the criterion targets.

use scones_core::cost::CostKind;
use scones_core::dual::DualPair;
use scones_core::gaussian::{random_instance, ProblemInstance};
use scones_core::Compatibility;

/// Random Gaussian instance with an untrained pair of the benchmark width.
pub fn gaussian_fixture(dim: usize, width: usize) -> (ProblemInstance, DualPair) {
    let inst = random_instance(dim, 1).expect("valid dimension");
    let pair = DualPair::init(
        dim,
        dim,
        &[width, width],
        Compatibility::kl(inst.lambda).expect("positive lambda"),
        CostKind::SqEuclidean,
        2,
    )
    .expect("valid widths");
    (inst, pair)
}
