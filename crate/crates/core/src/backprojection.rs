//! Filtered back-projection of quadrature marginals onto a disc filter:
//! the kernel solving `R†ω = F`, its excised and stretched variants, analytic
//! and Monte Carlo estimates, finite-cut quadrature plans and the comparison
//! with the elementary test.

use std::cell::OnceCell;
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elementary::TestOutcome;
use crate::error::{Error, Result};
use crate::phase_space::{scale_u, BaseDensity, PhasePoint, StateModel};
use crate::quadrature::{CompensatedSum, Quadrature};
use crate::sampler::{CutDistribution, JointSampleStream, JOINT_CHUNK};

/// Bin width used to estimate the maximum of a measured marginal.
pub const MARGINAL_BIN_WIDTH: f64 = 0.05;
/// Support of the empirical marginal histogram.
pub const MARGINAL_SUPPORT: f64 = 8.0;

/// Normalized characteristic function of a (stretched, translated) disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub a: f64,
    pub l: f64,
    #[serde(default)]
    pub center: PhasePoint,
}

impl FilterSpec {
    pub fn new(a: f64, l: f64) -> Self {
        Self {
            a,
            l,
            center: PhasePoint::default(),
        }
    }
}

/// Back-projection kernel with disc radius `a`, stretch `λ` and excision width `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub a: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl KernelSpec {
    pub fn new(a: f64, lambda: f64, epsilon: f64) -> Self {
        Self { a, lambda, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::invalid("kernel radius must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("kernel stretch must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("excision width must be non-negative"));
        }
        Ok(())
    }
}

/// Monte Carlo (or analytic) estimate of the filtered phase-space average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    /// Variance of the estimated mean.
    pub variance: f64,
    pub delta_bound: f64,
    #[serde(rename = "M")]
    pub total: usize,
    pub ratio: f64,
}

impl MCEstimate {
    pub fn new(mean: f64, variance: f64, delta_bound: f64, total: usize) -> Self {
        Self {
            mean,
            variance,
            delta_bound,
            total,
            ratio: mean / (variance.sqrt() + delta_bound),
        }
    }

    /// Statistical plus systematic error.
    pub fn total_error(&self) -> f64 {
        self.variance.sqrt() + self.delta_bound
    }
}

/// `F_{a,l}(x, p)`: `1/(πa²)` inside the stretched disc, 0 outside.
pub fn filter_eval(f: &FilterSpec, pt: PhasePoint) -> f64 {
    let x = f.l * (pt.x - f.center.x);
    let p = (pt.p - f.center.p) / f.l;
    if x * x + p * p <= f.a * f.a {
        1.0 / (PI * f.a * f.a)
    } else {
        0.0
    }
}

/// Unstretched kernel `ω_{a,ε}(t)`.
pub fn omega(a: f64, epsilon: f64, t: f64) -> f64 {
    let c = 1.0 / (PI * a * a);
    let at = t.abs();
    if at <= a {
        c
    } else if at < a + epsilon {
        0.0
    } else {
        let ratio = a / at;
        c * (1.0 - 1.0 / (1.0 - ratio * ratio).sqrt())
    }
}

/// Stretched, excised kernel `ω_{a,λ,ε}(θ, s) = ω_{a,ε}(s/u)/u²`.
pub fn kernel_eval(k: &KernelSpec, theta: f64, s: f64) -> f64 {
    let u = scale_u(k.lambda, theta);
    omega(k.a, k.epsilon, s / u) / (u * u)
}

/// Kernel for a filter translated to `center`.
pub fn kernel_eval_centered(k: &KernelSpec, center: PhasePoint, theta: f64, s: f64) -> f64 {
    kernel_eval(k, theta, s - center.quadrature(theta))
}

fn find_roots<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let step = (hi - lo) / samples as f64;
    let mut x0 = lo;
    let mut g0 = g(x0);
    for i in 1..=samples {
        let x1 = lo + i as f64 * step;
        let g1 = g(x1);
        if g0 == 0.0 {
            roots.push(x0);
        } else if g0 * g1 < 0.0 {
            let (mut a, mut b, mut ga) = (x0, x1, g0);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                let gm = g(mid);
                if gm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if (gm < 0.0) == (ga < 0.0) {
                    a = mid;
                    ga = gm;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        x0 = x1;
        g0 = g1;
    }
    roots
}

/// Applies the adjoint Radon transform `(1/π)∫ ω(θ, x cosθ + p sinθ) dθ` to the kernel.
pub fn adjoint_radon(k: &KernelSpec, center: PhasePoint, pt: PhasePoint) -> Result<f64> {
    k.validate()?;
    let shifted = PhasePoint::new(pt.x - center.x, pt.p - center.p);
    let reduced = |theta: f64| shifted.quadrature(theta).abs() / scale_u(k.lambda, theta);
    let mut breaks = vec![-FRAC_PI_2, FRAC_PI_2];
    let mut singular = find_roots(|t| reduced(t) - k.a, -FRAC_PI_2, FRAC_PI_2, 4096);
    breaks.extend(singular.iter().copied());
    if k.epsilon > 0.0 {
        breaks.extend(find_roots(|t| reduced(t) - k.a - k.epsilon, -FRAC_PI_2, FRAC_PI_2, 4096));
        singular.clear();
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let integrand = |theta: f64| kernel_eval(k, theta, shifted.quadrature(theta));
    let quad = Quadrature::with_tolerance(1e-12, 1e-10);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let outer = reduced(0.5 * (lo + hi)) > k.a;
        let sing_lo = outer && singular.contains(&lo);
        let sing_hi = outer && singular.contains(&hi);
        total += quad.integrate_sqrt_endpoints(integrand, lo, hi, sing_lo, sing_hi)?.value;
    }
    Ok(total / PI)
}

/// Maximum of `|R†ω − F|` over a grid of points away from the filter boundary.
pub fn adjoint_radon_check(k: &KernelSpec, f: &FilterSpec) -> Result<f64> {
    if k.epsilon != 0.0 {
        return Err(Error::invalid("the adjoint check applies to the unexcised kernel"));
    }
    if (k.a - f.a).abs() > 0.0 || (k.lambda - f.l).abs() > 0.0 {
        return Err(Error::invalid("kernel and filter must share radius and stretch"));
    }
    let steps = 16;
    let mut points = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            let xs = -2.0 * f.a + 4.0 * f.a * i as f64 / steps as f64;
            let ps = -2.0 * f.a + 4.0 * f.a * j as f64 / steps as f64;
            let radius = (xs * xs + ps * ps).sqrt();
            if (radius - f.a).abs() < 0.05 * f.a {
                continue;
            }
            points.push(PhasePoint::new(xs / f.l + f.center.x, ps * f.l + f.center.p));
        }
    }
    let residuals = points
        .par_iter()
        .map(|&pt| adjoint_radon(k, f.center, pt).map(|v| (v - filter_eval(f, pt)).abs()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

/// `v_ε` with `a cosh v_ε = a + ε`.
fn edge_parameter(a: f64, epsilon: f64) -> f64 {
    2.0 * (epsilon / (2.0 * a)).sqrt().asinh()
}

/// `∫_a^{a+ε} |ω_a(t)| dt`, integrated after the substitution `t = a cosh v`.
pub fn edge_band_integral(a: f64, epsilon: f64) -> Result<f64> {
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    let v_eps = edge_parameter(a, epsilon);
    let quad = Quadrature::with_tolerance(1e-16, 1e-13);
    Ok(quad.integrate(|v| (-v).exp() / (PI * a), 0.0, v_eps)?.value)
}

/// Bound `Δ_a(ε)` on the bias from excising both bands `a < |t| < a + ε`,
/// given the maximum of the (unsqueezed) marginal.
pub fn systematic_error_bound(k: &KernelSpec, marginal_max: f64) -> Result<f64> {
    k.validate()?;
    if k.epsilon == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * marginal_max * edge_band_integral(k.a, k.epsilon)?)
}

/// `∫ m(ρt) ω_{a,ε}(t)^power dt` for a base marginal `m`.
pub fn kernel_moment(base: BaseDensity, rho: f64, a: f64, epsilon: f64, power: u32) -> Result<f64> {
    let c = 1.0 / (PI * a * a);
    let inner = c.powi(power as i32) * (base.cdf(rho * a) - base.cdf(-rho * a)) / rho;
    let reach = 12.0 / rho;
    if reach <= a + epsilon {
        return Ok(inner);
    }
    let v_max = (reach / a).acosh();
    let quad = Quadrature::with_tolerance(1e-17, 1e-12);
    let outer = match power {
        1 => {
            let f = |v: f64| -base.pdf(rho * a * v.cosh()) * (-v).exp() / (PI * a);
            if epsilon == 0.0 {
                quad.integrate(f, 0.0, v_max)?.value
            } else {
                let v_eps = edge_parameter(a, epsilon);
                quad.integrate(|w: f64| f(w.exp()) * w.exp(), v_eps.ln(), v_max.ln())?
                    .value
            }
        }
        2 => {
            if epsilon == 0.0 {
                return Ok(f64::INFINITY);
            }
            let v_eps = edge_parameter(a, epsilon);
            let f = |v: f64| base.pdf(rho * a * v.cosh()) * (-2.0 * v).exp() / v.sinh() / (PI * PI * a * a * a);
            quad.integrate(|w: f64| f(w.exp()) * w.exp(), v_eps.ln(), v_max.ln())?
                .value
        }
        _ => return Err(Error::invalid("kernel moments are available for powers 1 and 2")),
    };
    Ok(inner + 2.0 * outer)
}

fn theta_breaks(lambdas: &[f64]) -> Vec<f64> {
    let mut breaks = vec![-FRAC_PI_2, 0.0, FRAC_PI_2];
    for &l in lambdas {
        if l != 1.0 {
            for scale in [0.25, 1.0, 4.0] {
                let t = (scale / (l * l)).atan();
                breaks.push(t);
                breaks.push(-t);
                let t = (scale * l * l).atan();
                breaks.push(t);
                breaks.push(-t);
            }
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    breaks
}

struct KernelMoments {
    base: BaseDensity,
    k: KernelSpec,
    model_lambda: f64,
    unit: [OnceCell<Result<f64>>; 2],
}

impl KernelMoments {
    fn new(model: &StateModel, k: &KernelSpec) -> Self {
        Self {
            base: model.base(),
            k: *k,
            model_lambda: model.effective_lambda(),
            unit: [OnceCell::new(), OnceCell::new()],
        }
    }

    /// Returns `(ρ, u_k, u_m)` at `θ`.
    fn geometry(&self, theta: f64) -> (f64, f64, f64) {
        let uk = scale_u(self.k.lambda, theta);
        let um = scale_u(self.model_lambda, theta);
        (uk / um, uk, um)
    }

    fn moment(&self, rho: f64, power: u32) -> Result<f64> {
        if (rho - 1.0).abs() < 1e-14 {
            let cell = &self.unit[power as usize - 1];
            return match cell.get_or_init(|| kernel_moment(self.base, 1.0, self.k.a, self.k.epsilon, power)) {
                Ok(v) => Ok(*v),
                Err(e) => Err(Error::NonConvergence(e.to_string())),
            };
        }
        kernel_moment(self.base, rho, self.k.a, self.k.epsilon, power)
    }

    fn integrate<F: Fn(f64) -> Result<f64>>(&self, f: F) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let wrapped = |theta: f64| match f(theta) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        let breaks = theta_breaks(&[self.k.lambda, self.model_lambda]);
        let value = Quadrature::with_tolerance(1e-15, 1e-11).integrate_breaks(wrapped, &breaks)?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(value.value)
    }
}

/// Angular function `g(θ) = ∫ RW(θ, s) ω_{a,λ,ε}(θ, s) ds` of a model.
pub fn angular_function(model: &StateModel, k: &KernelSpec, theta: f64) -> Result<f64> {
    let km = KernelMoments::new(model, k);
    let (rho, uk, um) = km.geometry(theta);
    Ok(km.moment(rho, 1)? / (uk * um))
}

/// Second moment `∫ RW(θ, s) ω_{a,λ,ε}(θ, s)² ds`.
pub fn angular_second_moment(model: &StateModel, k: &KernelSpec, theta: f64) -> Result<f64> {
    let km = KernelMoments::new(model, k);
    let (rho, uk, um) = km.geometry(theta);
    Ok(km.moment(rho, 2)? / (um * uk * uk * uk))
}

/// Exact filtered average `(1/π)∫ g(θ) dθ` under a model.
pub fn analytic_mean(model: &StateModel, k: &KernelSpec) -> Result<f64> {
    model.validate()?;
    k.validate()?;
    let km = KernelMoments::new(model, k);
    let value = km.integrate(|theta| {
        let (rho, uk, um) = km.geometry(theta);
        Ok(km.moment(rho, 1)? / (uk * um))
    })?;
    Ok(value / PI)
}

/// Second moment `E[I²]` of the Monte Carlo integrand `I = ω/(π C(θ))` for a
/// phase density `density`.
pub fn analytic_second_moment_for_density<D: Fn(f64) -> f64>(
    model: &StateModel,
    k: &KernelSpec,
    density: D,
) -> Result<f64> {
    model.validate()?;
    k.validate()?;
    let km = KernelMoments::new(model, k);
    let value = km.integrate(|theta| {
        let (rho, uk, um) = km.geometry(theta);
        Ok(km.moment(rho, 2)? / (density(theta) * um * uk * uk * uk))
    })?;
    Ok(value / (PI * PI))
}

/// Population-level Monte Carlo estimate for `total` pairs drawn from `distribution`,
/// with the analytic maximum of the marginal in the systematic bound.
pub fn analytic_mc(
    model: &StateModel,
    k: &KernelSpec,
    distribution: CutDistribution,
    total: usize,
) -> Result<MCEstimate> {
    distribution.validate()?;
    if total < 2 {
        return Err(Error::InsufficientSamples { cut: 0, count: total });
    }
    let mean = analytic_mean(model, k)?;
    let second = analytic_second_moment_for_density(model, k, |t| distribution.density(t))?;
    let per_sample = second - mean * mean;
    let delta = systematic_error_bound(k, model.base().pdf_max())?;
    Ok(MCEstimate::new(mean, per_sample / (total as f64 - 1.0), delta, total))
}

/// `C_o(θ) = 1/(π u²(λ, θ))`.
pub fn optimal_cut_distribution(lambda: f64) -> Result<CutDistribution> {
    let d = CutDistribution::Optimal { lambda };
    d.validate()?;
    Ok(d)
}

/// Histogram estimate of the maximum of a marginal from reduced samples `t = s/u`.
pub fn empirical_marginal_max<I: IntoIterator<Item = f64>>(reduced: I) -> f64 {
    let bins = (2.0 * MARGINAL_SUPPORT / MARGINAL_BIN_WIDTH).round() as usize;
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for t in reduced {
        total += 1;
        let idx = ((t + MARGINAL_SUPPORT) / MARGINAL_BIN_WIDTH).floor();
        if idx >= 0.0 && (idx as usize) < bins {
            counts[idx as usize] += 1;
        }
    }
    let max = counts.into_iter().max().unwrap_or(0);
    if total == 0 {
        return 0.0;
    }
    max as f64 / (total as f64 * MARGINAL_BIN_WIDTH)
}

#[derive(Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn from_slice(values: &[f64]) -> Self {
        let count = values.len() as f64;
        if values.is_empty() {
            return Self::default();
        }
        let mean = values.iter().copied().collect::<CompensatedSum>().value() / count;
        let m2 = values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .collect::<CompensatedSum>()
            .value();
        Self { count, mean, m2 }
    }

    fn merge(self, other: Self) -> Self {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count / count;
        let m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / count;
        Self { count, mean, m2 }
    }
}

/// Monte Carlo estimate `(1/M) Σ ω(θ_i, s_i)/(π C(θ_i))` from a joint stream.
pub fn mc_estimate(stream: &JointSampleStream, k: &KernelSpec, distribution: CutDistribution) -> Result<MCEstimate> {
    k.validate()?;
    distribution.validate()?;
    if stream.distribution != distribution {
        return Err(Error::invalid(format!(
            "stream was drawn from the {} distribution, not {}",
            stream.distribution.name(),
            distribution.name()
        )));
    }
    let total = stream.len();
    if total < 2 {
        return Err(Error::InsufficientSamples { cut: 0, count: total });
    }
    let chunks: Vec<Moments> = stream
        .thetas
        .par_chunks(JOINT_CHUNK)
        .zip(stream.values.par_chunks(JOINT_CHUNK))
        .map(|(thetas, values)| {
            let integrand: Vec<f64> = thetas
                .iter()
                .zip(values)
                .map(|(&t, &s)| kernel_eval(k, t, s) / (PI * distribution.density(t)))
                .collect();
            Moments::from_slice(&integrand)
        })
        .collect();
    let moments = chunks.into_iter().fold(Moments::default(), Moments::merge);
    let n = moments.count;
    let variance = moments.m2 / (n - 1.0) / n;
    let marginal_max = empirical_marginal_max(stream.pairs().map(|(t, s)| s / scale_u(k.lambda, t)));
    let delta = systematic_error_bound(k, marginal_max)?;
    Ok(MCEstimate::new(moments.mean, variance, delta, total))
}

/// Disc average `(1/(πa²)) ∬_{r≤a} W dx dp` of the single-photon Wigner function,
/// by quadrature.
pub fn disc_average_oracle(a: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid("disc radius must be positive"));
    }
    let base = BaseDensity::SinglePhoton;
    let quad = Quadrature::with_tolerance(1e-18, 1e-13);
    let radial = quad.integrate(|r| base.wigner(r * r) * r, 0.0, a)?.value;
    Ok(2.0 * PI * radial / (PI * a * a))
}

/// Closed form `[1 − (2a² + 1) e^{−a²}]/(πa²)` of [`disc_average_oracle`].
pub fn disc_average_closed_form(a: f64) -> f64 {
    (1.0 - (2.0 * a * a + 1.0) * (-a * a).exp()) / (PI * a * a)
}

/// Middle-point quadrature plan over `[-π/2, π/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCutPlan {
    pub lambda: f64,
    pub boundaries: Vec<f64>,
    /// Middle points `θ̃_j`.
    pub cuts: Vec<f64>,
    /// Widths `Δθ_j`.
    pub widths: Vec<f64>,
    /// `w_j = Δθ_j/π`.
    pub weights: Vec<f64>,
    /// `W_j = w_j/u²(λ, θ̃_j)`.
    pub scaled_weights: Vec<f64>,
    /// `𝓔 = |1 − Σ_j W_j|`.
    pub numerical_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
}

/// Signed middle-point defect `1 − (1/π) Σ Δθ_j/u²(θ̃_j)`.
fn midpoint_defect(lambda: f64, boundaries: &[f64]) -> f64 {
    let sum: CompensatedSum = boundaries
        .windows(2)
        .map(|w| {
            let u = scale_u(lambda, 0.5 * (w[0] + w[1]));
            (w[1] - w[0]) / (u * u)
        })
        .collect();
    1.0 - sum.value() / PI
}

impl FiniteCutPlan {
    /// Builds a plan from full partition boundaries `-π/2 = b_0 < … < b_m = π/2`.
    pub fn from_boundaries(lambda: f64, boundaries: Vec<f64>) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid("squeezing parameter must be positive"));
        }
        if boundaries.len() < 2 || boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("partition boundaries must be strictly increasing"));
        }
        let span = boundaries[boundaries.len() - 1] - boundaries[0];
        if (span - PI).abs() > 1e-12 {
            return Err(Error::invalid("partition must cover an interval of length π"));
        }
        let cuts: Vec<f64> = boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths: Vec<f64> = boundaries.windows(2).map(|w| w[1] - w[0]).collect();
        let weights: Vec<f64> = widths.iter().map(|w| w / PI).collect();
        let scaled_weights = weights
            .iter()
            .zip(&cuts)
            .map(|(w, &t)| {
                let u = scale_u(lambda, t);
                w / (u * u)
            })
            .collect();
        let numerical_error = midpoint_defect(lambda, &boundaries).abs();
        Ok(Self {
            lambda,
            boundaries,
            cuts,
            widths,
            weights,
            scaled_weights,
            numerical_error,
            counts: None,
        })
    }

    /// Uniform partition into `m` intervals.
    pub fn uniform(lambda: f64, m: usize) -> Result<Self> {
        let boundaries = (0..=m).map(|j| -FRAC_PI_2 + PI * j as f64 / m as f64).collect();
        Self::from_boundaries(lambda, boundaries)
    }

    pub fn m(&self) -> usize {
        self.cuts.len()
    }

    /// The cuts as angles in `[0, π)`, suitable for per-cut sampling.
    pub fn sampling_angles(&self) -> Vec<f64> {
        self.cuts.iter().map(|t| t.rem_euclid(PI)).collect()
    }
}

fn symmetric_boundaries(half: &[f64]) -> Vec<f64> {
    let mut full: Vec<f64> = half.iter().rev().map(|b| -b).collect();
    full.extend_from_slice(&half[1..]);
    full
}

fn half_defect(lambda: f64, half: &[f64]) -> f64 {
    let sum: CompensatedSum = half
        .windows(2)
        .map(|w| {
            let u = scale_u(lambda, 0.5 * (w[0] + w[1]));
            (w[1] - w[0]) / (u * u)
        })
        .collect();
    1.0 - 2.0 * sum.value() / PI
}

fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, iterations: usize) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iterations {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Options of the finite-cut optimizer.
#[derive(Debug, Clone, Copy)]
pub struct FiniteCutOptions {
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for FiniteCutOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20_000,
            tolerance: 1e-15,
        }
    }
}

/// Symmetric partition of `[-π/2, π/2]` into `m` intervals (with `θ = 0` a
/// boundary) minimizing the middle-point error `𝓔`, by coordinate descent
/// from the equal-mass partition of `1/u²`.
pub fn finite_cut_plan(lambda: f64, m: usize) -> Result<FiniteCutPlan> {
    finite_cut_plan_with(lambda, m, &FiniteCutOptions::default())
}

pub fn finite_cut_plan_with(lambda: f64, m: usize, options: &FiniteCutOptions) -> Result<FiniteCutPlan> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("squeezing parameter must be positive"));
    }
    if m < 2 || m % 2 == 1 {
        return Err(Error::invalid("finite-cut plans need an even number of cuts, at least 2"));
    }
    let h = m / 2;
    let l2 = lambda * lambda;
    let mut half: Vec<f64> = (0..=h)
        .map(|k| {
            if k == h {
                FRAC_PI_2
            } else {
                ((k as f64 * FRAC_PI_2 / h as f64).tan() / l2).atan()
            }
        })
        .collect();
    let objective = |b: &[f64]| {
        let d = half_defect(lambda, b);
        d * d
    };
    let mut current = objective(&half);
    let mut converged = h == 1 || lambda == 1.0;
    if lambda == 1.0 {
        half = (0..=h).map(|k| k as f64 * FRAC_PI_2 / h as f64).collect();
        current = objective(&half);
    }
    let mut sweep = 0;
    while !converged && sweep < options.max_sweeps {
        sweep += 1;
        let before = current;
        for k in 1..h {
            let lo = half[k - 1];
            let hi = half[k + 1];
            let mut trial = half.clone();
            let best = golden_section(
                |x| {
                    trial[k] = x;
                    objective(&trial)
                },
                lo,
                hi,
                80,
            );
            let mut candidate = half.clone();
            candidate[k] = best;
            let value = objective(&candidate);
            if value < current {
                half = candidate;
                current = value;
            }
        }
        if before - current <= options.tolerance * before.max(f64::MIN_POSITIVE) || current == 0.0 {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "finite-cut optimization for m = {m} after {sweep} sweeps"
        )));
    }
    FiniteCutPlan::from_boundaries(lambda, symmetric_boundaries(&half))
}

/// Largest-remainder allocation with `M_j − 1 ∝ W_j` and `Σ M_j = M`.
pub fn allocate_counts(scaled_weights: &[f64], total: usize) -> Result<Vec<usize>> {
    let m = scaled_weights.len();
    if m == 0 || total <= m {
        return Err(Error::invalid("allocation needs M > m ≥ 1"));
    }
    if scaled_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("allocation weights must be positive"));
    }
    let sum: f64 = scaled_weights.iter().sum();
    let free = (total - m) as f64;
    let shares: Vec<f64> = scaled_weights.iter().map(|w| free * w / sum).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        let ri = shares[i] - shares[i].floor();
        let rj = shares[j] - shares[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &j in order.iter().take(total - m - assigned) {
        counts[j] += 1;
    }
    Ok(counts.into_iter().map(|c| c + 1).collect())
}

/// Counts `M_j` for a plan, with `M_j − 1 ∝ W_j`.
pub fn allocate_measurements(plan: &FiniteCutPlan, total: usize) -> Result<Vec<usize>> {
    allocate_counts(&plan.scaled_weights, total)
}

/// `Σ_j W_j² σ²_a / (M_j − 1)` for real-valued `M_j − 1`.
pub fn allocation_variance(scaled_weights: &[f64], counts_minus_one: &[f64], sigma2: f64) -> f64 {
    scaled_weights
        .iter()
        .zip(counts_minus_one)
        .map(|(w, c)| w * w * sigma2 / c)
        .sum()
}

/// Finite-cut estimate of the filtered average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteCutEstimate {
    pub mean: f64,
    pub variance: f64,
    pub delta_bound: f64,
    pub numerical_error: f64,
    pub total_error: f64,
    pub ratio: f64,
    #[serde(rename = "M")]
    pub total: usize,
}

impl FiniteCutEstimate {
    fn new(mean: f64, variance: f64, delta_bound: f64, numerical_error: f64, total: usize) -> Self {
        let total_error = variance.sqrt() + delta_bound + numerical_error * mean.abs();
        Self {
            mean,
            variance,
            delta_bound,
            numerical_error,
            total_error,
            ratio: mean / total_error,
            total,
        }
    }
}

/// Weighted middle-point estimate `Σ_j w_j ĝ(θ_j)` from per-cut samples aligned with the plan.
pub fn finite_cut_estimate(samples: &[Vec<f64>], plan: &FiniteCutPlan, k: &KernelSpec) -> Result<FiniteCutEstimate> {
    k.validate()?;
    if samples.len() != plan.m() {
        return Err(Error::CutMismatch(format!(
            "{} sample sets for a plan of {} cuts",
            samples.len(),
            plan.m()
        )));
    }
    if let Some((j, s)) = samples.iter().enumerate().find(|(_, s)| s.len() < 2) {
        return Err(Error::InsufficientSamples { cut: j, count: s.len() });
    }
    let per_cut: Vec<(f64, f64)> = samples
        .par_iter()
        .zip(plan.cuts.par_iter())
        .map(|(values, &theta)| {
            let omegas: Vec<f64> = values.iter().map(|&s| kernel_eval(k, theta, s)).collect();
            let mom = Moments::from_slice(&omegas);
            (mom.mean, mom.m2 / (mom.count * (mom.count - 1.0)))
        })
        .collect();
    let mut mean = CompensatedSum::new();
    let mut variance = CompensatedSum::new();
    for ((g, var), w) in per_cut.iter().zip(&plan.weights) {
        mean.add(w * g);
        variance.add(w * w * var);
    }
    let marginal_max = empirical_marginal_max(
        samples
            .iter()
            .zip(&plan.cuts)
            .flat_map(|(values, &theta)| {
                let u = scale_u(k.lambda, theta);
                values.iter().map(move |s| s / u)
            }),
    );
    let delta = systematic_error_bound(k, marginal_max)?;
    let total = samples.iter().map(Vec::len).sum();
    Ok(FiniteCutEstimate::new(
        mean.value(),
        variance.value(),
        delta,
        plan.numerical_error,
        total,
    ))
}

/// Finite-cut estimate with the exact angular function substituted for the
/// per-cut sample means; the variance uses the plan's counts when present.
pub fn finite_cut_analytic(model: &StateModel, plan: &FiniteCutPlan, k: &KernelSpec) -> Result<FiniteCutEstimate> {
    model.validate()?;
    k.validate()?;
    let mut mean = CompensatedSum::new();
    let mut variance = CompensatedSum::new();
    for (j, (&theta, &w)) in plan.cuts.iter().zip(&plan.weights).enumerate() {
        let g = angular_function(model, k, theta)?;
        mean.add(w * g);
        if let Some(counts) = &plan.counts {
            if k.epsilon > 0.0 {
                let second = angular_second_moment(model, k, theta)?;
                variance.add(w * w * (second - g * g) / (counts[j] as f64 - 1.0));
            }
        }
    }
    let delta = systematic_error_bound(k, model.base().pdf_max())?;
    let total = plan.counts.as_ref().map_or(0, |c| c.iter().sum());
    Ok(FiniteCutEstimate::new(
        mean.value(),
        variance.value(),
        delta,
        plan.numerical_error,
        total,
    ))
}

/// Ratio of the significance of the elementary test to that of the
/// back-projection estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    #[serde(rename = "R")]
    pub r: f64,
    /// True when both means are negative.
    pub valid: bool,
}

/// `𝓡 = (⟨𝓕⟩/σ_𝓕) · (σ_F + Δ)/⟨F⟩`.
pub fn compare_r(elementary: &TestOutcome, radon: &MCEstimate) -> Comparison {
    let r = elementary.mean / elementary.variance.sqrt() * radon.total_error() / radon.mean;
    Comparison {
        r,
        valid: elementary.mean < 0.0 && radon.mean < 0.0,
    }
}

/// Search grid over kernel radius and excision width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterGrid {
    pub a_min: f64,
    pub a_max: f64,
    pub a_points: usize,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub epsilon_points: usize,
    pub refine_points: usize,
}

impl Default for ParameterGrid {
    fn default() -> Self {
        Self {
            a_min: 0.2,
            a_max: 2.0,
            a_points: 25,
            epsilon_min: 1e-10,
            epsilon_max: 1e-1,
            epsilon_points: 46,
            refine_points: 9,
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Back-projection kernel minimizing the ratio `mean/(σ + Δ)` at budget `total`,
/// searched on a log grid in `(a, ε)` and refined once around the best cell.
pub fn optimize_backprojection(
    model: &StateModel,
    distribution: CutDistribution,
    total: usize,
    grid: &ParameterGrid,
) -> Result<(KernelSpec, MCEstimate)> {
    let lambda = model.effective_lambda();
    let evaluate = |a_values: &[f64], e_values: &[f64]| -> Result<(usize, usize, KernelSpec, MCEstimate)> {
        let cells: Vec<(usize, usize)> = (0..a_values.len())
            .flat_map(|i| (0..e_values.len()).map(move |j| (i, j)))
            .collect();
        let results = cells
            .par_iter()
            .map(|&(i, j)| {
                let k = KernelSpec::new(a_values[i], lambda, e_values[j]);
                analytic_mc(model, &k, distribution, total).map(|est| (i, j, k, est))
            })
            .collect::<Result<Vec<_>>>()?;
        results
            .into_iter()
            .filter(|r| r.3.ratio.is_finite())
            .min_by(|x, y| x.3.ratio.total_cmp(&y.3.ratio))
            .ok_or_else(|| Error::NonConvergence("back-projection parameter search".into()))
    };
    let a_values = log_space(grid.a_min, grid.a_max, grid.a_points);
    let e_values = log_space(grid.epsilon_min, grid.epsilon_max, grid.epsilon_points);
    let (i, j, _, _) = evaluate(&a_values, &e_values)?;
    let a_lo = a_values[i.saturating_sub(1)];
    let a_hi = a_values[(i + 1).min(a_values.len() - 1)];
    let e_lo = e_values[j.saturating_sub(1)];
    let e_hi = e_values[(j + 1).min(e_values.len() - 1)];
    let (_, _, k, est) = evaluate(
        &log_space(a_lo, a_hi, grid.refine_points),
        &log_space(e_lo, e_hi, grid.refine_points),
    )?;
    Ok((k, est))
}
