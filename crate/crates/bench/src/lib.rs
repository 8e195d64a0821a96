//! Shared fixtures for the pipeline benchmarks.

use quadwit::elementary::optimize_radial;
use quadwit::sampler::{sample_joint, sample_per_cut};
use quadwit::{CutDistribution, CutPlan, ElementaryTestSpec, JointSampleStream, KernelSpec, QuadratureDataset, StateModel};

/// Seed used by every fixture.
pub const SEED: u64 = 7;

/// Kernel close to the optimum for one million single-photon measurements.
pub fn reference_kernel() -> KernelSpec {
    KernelSpec::new(0.4743, 1.0, 1e-8)
}

/// Optimal elementary test of degree `n` on `n + 1` cuts.
pub fn optimal_spec(n: usize, total: usize) -> ElementaryTestSpec {
    optimize_radial(&StateModel::single_photon(), n, n + 1, total)
        .expect("optimization converges")
        .0
}

/// Single-photon data on `m` uniform cuts.
pub fn per_cut_dataset(m: usize, per_cut: usize) -> QuadratureDataset {
    sample_per_cut(&StateModel::single_photon(), &CutPlan::uniform(m, per_cut), SEED).expect("valid plan")
}

/// Single-photon joint stream under the uniform phase distribution.
pub fn joint_stream(count: usize) -> JointSampleStream {
    sample_joint(&StateModel::single_photon(), CutDistribution::Uniform, count, SEED).expect("valid stream")
}
