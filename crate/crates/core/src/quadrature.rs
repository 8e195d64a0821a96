//! One-dimensional numerical integration: adaptive Gauss–Kronrod (10/21) with
//! breakpoints and infinite ranges, plus Gauss–Hermite rules.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_067_532_212,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Result of a numerical integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    for (k, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(10).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Adaptive Gauss–Kronrod integrator with global error control.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_segments: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_segments: 20_000,
        }
    }
}

impl Quadrature {
    pub fn with_tolerance(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Integral> {
        self.integrate_breaks(f, &[a, b])
    }

    /// Integrates `f` over `[points[0], points[last]]`, starting from the
    /// segments delimited by `points` (which must be non-decreasing).
    pub fn integrate_breaks<F: Fn(f64) -> f64>(&self, f: F, points: &[f64]) -> Result<Integral> {
        if points.len() < 2 {
            return Err(Error::invalid("integration needs at least two points"));
        }
        let mut heap = BinaryHeap::new();
        let mut value = 0.0;
        let mut error = 0.0;
        for w in points.windows(2) {
            if w[1] < w[0] {
                return Err(Error::invalid("integration breakpoints must be sorted"));
            }
            if w[1] == w[0] {
                continue;
            }
            let seg = kronrod21(&f, w[0], w[1]);
            value += seg.value;
            error += seg.error;
            heap.push(seg);
        }
        while error > self.abs_tol.max(self.rel_tol * value.abs()) {
            if heap.len() >= self.max_segments {
                return Err(Error::NonConvergence(format!(
                    "adaptive quadrature (estimated error {error:.3e})"
                )));
            }
            let Some(worst) = heap.pop() else { break };
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                heap.push(worst);
                break;
            }
            let left = kronrod21(&f, worst.a, mid);
            let right = kronrod21(&f, mid, worst.b);
            value += left.value + right.value - worst.value;
            error += left.error + right.error - worst.error;
            heap.push(left);
            heap.push(right);
        }
        let value: f64 = heap.iter().map(|s| s.value).sum();
        let abs_error: f64 = heap.iter().map(|s| s.error).sum();
        if !value.is_finite() {
            return Err(Error::NonConvergence("adaptive quadrature (non-finite value)".into()));
        }
        if abs_error > self.abs_tol.max(self.rel_tol * value.abs()) {
            return Err(Error::NonConvergence(format!(
                "adaptive quadrature (estimated error {abs_error:.3e})"
            )));
        }
        Ok(Integral { value, abs_error })
    }

    /// Integrates `f` over `[a, ∞)` through the map `x = a + t/(1-t)`.
    pub fn integrate_to_infinity<F: Fn(f64) -> f64>(&self, f: F, a: f64) -> Result<Integral> {
        let g = |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let one_minus = 1.0 - t;
            let x = a + t / one_minus;
            let v = f(x) / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        };
        self.integrate(g, 0.0, 1.0)
    }

    /// Integrates `f` over the whole real line.
    pub fn integrate_real_line<F: Fn(f64) -> f64>(&self, f: F) -> Result<Integral> {
        let right = self.integrate_to_infinity(&f, 0.0)?;
        let left = self.integrate_to_infinity(|x| f(-x), 0.0)?;
        Ok(Integral {
            value: right.value + left.value,
            abs_error: right.abs_error + left.abs_error,
        })
    }

    /// Integrates over `[a, b]` an integrand with integrable inverse-square-root
    /// singularities at the flagged endpoints, using `x = a + τ²` (or `b - τ²`).
    pub fn integrate_sqrt_endpoints<F: Fn(f64) -> f64>(
        &self,
        f: F,
        a: f64,
        b: f64,
        singular_a: bool,
        singular_b: bool,
    ) -> Result<Integral> {
        if b <= a {
            return Ok(Integral {
                value: 0.0,
                abs_error: 0.0,
            });
        }
        let mid = 0.5 * (a + b);
        let half = |lo: f64, hi: f64, singular_lo: bool, singular_hi: bool| -> Result<Integral> {
            if singular_lo {
                let span = (hi - lo).sqrt();
                self.integrate(|t| 2.0 * t * f(lo + t * t), 0.0, span)
            } else if singular_hi {
                let span = (hi - lo).sqrt();
                self.integrate(|t| 2.0 * t * f(hi - t * t), 0.0, span)
            } else {
                self.integrate(&f, lo, hi)
            }
        };
        let left = half(a, mid, singular_a, false)?;
        let right = half(mid, b, false, singular_b)?;
        Ok(Integral {
            value: left.value + right.value,
            abs_error: left.abs_error + right.abs_error,
        })
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Gauss–Hermite rule for the weight `exp(-x²)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal Hermite polynomials `p_0..p_{n}` at `x`, for the weight `exp(-x²)`.
fn orthonormal_hermite(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(std::f64::consts::PI.powf(-0.25));
    if n >= 1 {
        p.push(std::f64::consts::SQRT_2 * x * p[0]);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p[k] - (kf / (kf + 1.0)).sqrt() * p[k - 1];
        p.push(next);
    }
    p
}

impl GaussHermite {
    /// Builds the `n`-point rule via Golub–Welsch, refining each node by Newton
    /// iteration on the orthonormal recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let p = orthonormal_hermite(n, *x);
                let dp = (2.0 * n as f64).sqrt() * p[n - 1];
                if dp == 0.0 {
                    break;
                }
                let step = p[n] / dp;
                *x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let p = orthonormal_hermite(n - 1, *x);
            let norm: f64 = p.iter().map(|v| v * v).sum();
            weights.push(1.0 / norm);
        }
        Self { nodes, weights }
    }

    /// Shared cached rule with `n` nodes.
    pub fn cached(n: usize) -> Arc<GaussHermite> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(GaussHermite::new(n)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_polynomial_is_exact() {
        let q = Quadrature::default();
        let r = q.integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, -1.0, 2.0).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn infinite_range_gaussian() {
        let q = Quadrature::default();
        let r = q.integrate_real_line(|x| (-x * x).exp()).unwrap();
        assert!((r.value - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sqrt_endpoint_singularity() {
        let q = Quadrature::default();
        let r = q
            .integrate_sqrt_endpoints(|x| 1.0 / (1.0 - x * x).sqrt(), -1.0, 1.0, true, true)
            .unwrap();
        assert!((r.value - std::f64::consts::PI).abs() < 1e-11);
    }

    #[test]
    fn hermite_rule_moments() {
        let rule = GaussHermite::new(40);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let total: f64 = rule.weights.iter().sum();
        assert!((total - sqrt_pi).abs() < 1e-13);
        let m2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x * x)
            .sum();
        assert!((m2 - sqrt_pi / 2.0).abs() < 1e-13);
        let m20: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(20))
            .sum();
        // (19)!! / 2^10 · √π
        let exact = 654_729_075.0 / 1024.0 * sqrt_pi;
        assert!((m20 / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }
}
