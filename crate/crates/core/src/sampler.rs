//! Seeded generation of simulated homodyne outcomes.
//!
//! Every cut (or chunk of a joint stream) draws from its own ChaCha20 stream:
//! the generator is seeded with the master seed and `set_stream(index)` selects
//! the stream, where `index` is the cut index for per-cut datasets and the chunk
//! index (chunks of [`JOINT_CHUNK`] pairs) for joint streams. Results are
//! therefore independent of how the work is scheduled across threads.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{scale_u, BaseDensity, StateModel};

/// Number of knots of the inverse-CDF tables.
pub const TABLE_KNOTS: usize = 1 << 16;
/// Half-width of the tabulated support.
pub const TABLE_SUPPORT: f64 = 8.0;
/// Number of pairs generated per RNG stream in joint sampling.
pub const JOINT_CHUNK: usize = 1 << 16;

/// Tabulated inverse CDF with monotone cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct InverseCdfTable {
    cdf: Vec<f64>,
    knots: Vec<f64>,
    slopes: Vec<f64>,
}

impl InverseCdfTable {
    /// Tabulates a symmetric base density on `[-8, 8]`.
    pub fn new(base: BaseDensity) -> Self {
        let mut cdf = Vec::with_capacity(TABLE_KNOTS);
        let mut knots = Vec::with_capacity(TABLE_KNOTS);
        let step = 2.0 * TABLE_SUPPORT / (TABLE_KNOTS - 1) as f64;
        for k in 0..TABLE_KNOTS {
            let s = -TABLE_SUPPORT + k as f64 * step;
            let f = base.cdf(s);
            if cdf.last().is_none_or(|&last| f > last) {
                cdf.push(f);
                knots.push(s);
            }
        }
        let n = cdf.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|k| (knots[k + 1] - knots[k]) / (cdf[k + 1] - cdf[k]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for k in 1..n - 1 {
            slopes[k] = 2.0 / (1.0 / secants[k - 1] + 1.0 / secants[k]);
        }
        Self { cdf, knots, slopes }
    }

    /// Shared table for a base density.
    pub fn for_base(base: BaseDensity) -> &'static InverseCdfTable {
        static PHOTON: OnceLock<InverseCdfTable> = OnceLock::new();
        static VACUUM: OnceLock<InverseCdfTable> = OnceLock::new();
        match base {
            BaseDensity::SinglePhoton => PHOTON.get_or_init(|| InverseCdfTable::new(base)),
            BaseDensity::Vacuum => VACUUM.get_or_init(|| InverseCdfTable::new(base)),
        }
    }

    fn lower_inverse(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        if u <= self.cdf[0] {
            return self.knots[0];
        }
        let k = self.cdf.partition_point(|&f| f <= u).min(n - 1) - 1;
        let h = self.cdf[k + 1] - self.cdf[k];
        let t = (u - self.cdf[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.knots[k] + h10 * h * self.slopes[k] + h01 * self.knots[k + 1] + h11 * h * self.slopes[k + 1]
    }

    /// Quantile at `u ∈ [0, 1)`; the upper half is mirrored from the lower
    /// tail of the symmetric density.
    pub fn quantile(&self, u: f64) -> f64 {
        if u < 0.5 {
            self.lower_inverse(u)
        } else {
            -self.lower_inverse(1.0 - u)
        }
    }
}

/// Phase cuts with the number of measurements at each cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPlan {
    pub cuts: Vec<f64>,
    pub per_cut_counts: Vec<usize>,
}

impl CutPlan {
    pub fn new(cuts: Vec<f64>, per_cut_counts: Vec<usize>) -> Self {
        Self {
            cuts,
            per_cut_counts,
        }
    }

    /// `m` uniform cuts `jπ/m` with `per_cut` samples each.
    pub fn uniform(m: usize, per_cut: usize) -> Self {
        let cuts = (0..m).map(|j| j as f64 * PI / m as f64).collect();
        Self::new(cuts, vec![per_cut; m])
    }

    pub fn validate(&self) -> Result<()> {
        if self.cuts.is_empty() {
            return Err(Error::invalid("a cut plan needs at least one cut"));
        }
        if self.cuts.len() != self.per_cut_counts.len() {
            return Err(Error::invalid(format!(
                "{} cuts but {} per-cut counts",
                self.cuts.len(),
                self.per_cut_counts.len()
            )));
        }
        if let Some(j) = self.per_cut_counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("cut {j} has a zero measurement count")));
        }
        for (j, &t) in self.cuts.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::invalid(format!("cut {j} is not finite")));
            }
            if self.cuts[..j].contains(&t) {
                return Err(Error::invalid(format!("cut {j} duplicates an earlier angle")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.per_cut_counts.iter().sum()
    }
}

/// Samples of one phase cut.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSamples {
    pub theta: f64,
    pub samples: Vec<f64>,
}

/// Quadrature samples grouped by phase cut.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDataset {
    pub entries: Vec<CutSamples>,
    pub seed: u64,
    pub model: StateModel,
}

impl QuadratureDataset {
    pub fn cuts(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.theta).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.samples.len()).collect()
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.samples.len()).sum()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `count` samples of `Q_θ` for a model from RNG stream `stream`.
pub fn sample_cut(model: &StateModel, theta: f64, count: usize, seed: u64, stream: u64) -> Vec<f64> {
    let table = InverseCdfTable::for_base(model.base());
    let scale = model.quadrature_scale(theta);
    let mut rng = stream_rng(seed, stream);
    (0..count)
        .map(|_| scale * table.quantile(rng.random::<f64>()))
        .collect()
}

/// Per-cut i.i.d. samples of the model's marginals.
pub fn sample_per_cut(model: &StateModel, plan: &CutPlan, seed: u64) -> Result<QuadratureDataset> {
    model.validate()?;
    plan.validate()?;
    let entries = plan
        .cuts
        .par_iter()
        .zip(plan.per_cut_counts.par_iter())
        .enumerate()
        .map(|(j, (&theta, &count))| CutSamples {
            theta,
            samples: sample_cut(model, theta, count, seed, j as u64),
        })
        .collect();
    Ok(QuadratureDataset {
        entries,
        seed,
        model: *model,
    })
}

/// Probability density `C(θ)` of the measured phase on `[-π/2, π/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutDistribution {
    /// `C(θ) = 1/π`.
    Uniform,
    /// `C(θ) = 1/(π u²(λ, θ))`.
    Optimal { lambda: f64 },
}

impl CutDistribution {
    /// Builds a distribution from its configuration name.
    pub fn from_name(name: &str, lambda: f64) -> Result<Self> {
        match name {
            "uniform" => Ok(CutDistribution::Uniform),
            "optimal" => Ok(CutDistribution::Optimal { lambda }),
            other => Err(Error::UnknownDistribution(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CutDistribution::Uniform => "uniform",
            CutDistribution::Optimal { .. } => "optimal",
        }
    }

    pub fn density(&self, theta: f64) -> f64 {
        match *self {
            CutDistribution::Uniform => 1.0 / PI,
            CutDistribution::Optimal { lambda } => {
                let u = scale_u(lambda, theta);
                1.0 / (PI * u * u)
            }
        }
    }

    /// Cumulative distribution on `[-π/2, π/2)`.
    pub fn cdf(&self, theta: f64) -> f64 {
        match *self {
            CutDistribution::Uniform => (theta + FRAC_PI_2) / PI,
            CutDistribution::Optimal { lambda } => {
                if lambda == 1.0 {
                    return (theta + FRAC_PI_2) / PI;
                }
                0.5 + (lambda * lambda * theta.tan()).atan() / PI
            }
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let uniform = PI * (u - 0.5);
        match *self {
            CutDistribution::Uniform => uniform,
            CutDistribution::Optimal { lambda } => {
                if lambda == 1.0 {
                    uniform
                } else {
                    (uniform.tan() / (lambda * lambda)).atan()
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let CutDistribution::Optimal { lambda } = *self {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::invalid("cut distribution needs a positive squeezing parameter"));
            }
        }
        Ok(())
    }
}

/// Pairs `(θ_i, s_i)` drawn from `RW_λ(θ, s) C(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSampleStream {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    pub distribution: CutDistribution,
    pub model: StateModel,
    pub seed: u64,
}

impl JointSampleStream {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.thetas.iter().copied().zip(self.values.iter().copied())
    }
}

/// Draws `count` joint pairs: θ from the cut distribution, then `s` from the
/// conditional marginal.
pub fn sample_joint(
    model: &StateModel,
    distribution: CutDistribution,
    count: usize,
    seed: u64,
) -> Result<JointSampleStream> {
    model.validate()?;
    distribution.validate()?;
    if count == 0 {
        return Err(Error::invalid("joint sampling needs at least one pair"));
    }
    let table = InverseCdfTable::for_base(model.base());
    let chunks = count.div_ceil(JOINT_CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = JOINT_CHUNK.min(count - c * JOINT_CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            let mut thetas = Vec::with_capacity(len);
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                let theta = distribution.quantile(rng.random::<f64>());
                let s = model.quadrature_scale(theta) * table.quantile(rng.random::<f64>());
                thetas.push(theta);
                values.push(s);
            }
            (thetas, values)
        })
        .collect();
    let mut thetas = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for (t, v) in parts {
        thetas.extend(t);
        values.extend(v);
    }
    Ok(JointSampleStream {
        thetas,
        values,
        distribution,
        model: *model,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for base in [BaseDensity::SinglePhoton, BaseDensity::Vacuum] {
            let table = InverseCdfTable::new(base);
            for &u in &[1e-9, 0.01, 0.2, 0.4999, 0.5, 0.73, 0.99, 1.0 - 1e-9] {
                let s = table.quantile(u);
                assert!((base.cdf(s) - u).abs() < 1e-10, "{base:?} u={u} s={s}");
            }
        }
    }

    #[test]
    fn quantile_is_monotone() {
        let table = InverseCdfTable::new(BaseDensity::SinglePhoton);
        let mut last = f64::NEG_INFINITY;
        for k in 1..20_000 {
            let s = table.quantile(k as f64 / 20_000.0);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn optimal_quantile_matches_cdf() {
        let d = CutDistribution::Optimal { lambda: 5.0 };
        for &u in &[0.01, 0.3, 0.5, 0.8, 0.999] {
            assert!((d.cdf(d.quantile(u)) - u).abs() < 1e-12);
        }
    }
}
