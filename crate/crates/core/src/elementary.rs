//! Elementary polynomial non-classicality tests: construction, reconstruction
//! from phase cuts, evaluation on data, analytic outcomes, optimization of the
//! radial family and the squeeze transform.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat as Dd;

use crate::error::{Error, Result};
use crate::phase_space::{BaseDensity, PhasePoint, StateModel};
use crate::quadrature::CompensatedSum;
use crate::sampler::QuadratureDataset;

/// Largest test degree parameter `N` accepted by default.
pub const DEFAULT_MAX_DEGREE: usize = 24;
/// Tolerance on the reconstruction constraint of a valid specification.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-10;
/// Tolerance when matching dataset angles to specification angles.
pub const ANGLE_TOLERANCE: f64 = 1e-12;

fn unit() -> f64 {
    1.0
}

fn is_unit(x: &f64) -> bool {
    *x == 1.0
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut value = 1.0;
    for j in 0..k {
        value = value * (n - j) as f64 / (j + 1) as f64;
    }
    value.round()
}

/// `κ_n = 4ⁿ / binom(2n, n)`.
pub fn kappa(n: usize) -> f64 {
    let mut value = 1.0;
    for k in 1..=n {
        value *= 2.0 * k as f64 / (2.0 * k as f64 - 1.0);
    }
    value
}

/// Coefficients of a test: the radial family `(1 + Σ dᵢ r_λ^{2i})²` with
/// `r_λ² = λ²x² + p²/λ²`, or the general family `(1 + Σ D_{i;k} x^{i-k} p^k)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TestCoefficients {
    Radial {
        /// `d_1..d_{⌊N/2⌋}`.
        d: Vec<f64>,
        /// `t_{i;j}` for `i = 1..2⌊N/2⌋`, one row per `i`.
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
        #[serde(default = "unit", skip_serializing_if = "is_unit")]
        lambda: f64,
    },
    General {
        /// `D_{i;k}` for `i = 1..N`, row `i` holding `k = 0..i`.
        #[serde(rename = "D")]
        d: Vec<Vec<f64>>,
        /// `T_{i;k,j}` for `i = 1..2N`, indexed `[i-1][k][j]`.
        #[serde(rename = "T")]
        t: Vec<Vec<Vec<f64>>>,
    },
}

/// A complete elementary test: degree, phase cuts and reconstruction coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementaryTestSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub cuts: Vec<f64>,
    #[serde(flatten)]
    pub coefficients: TestCoefficients,
}

/// Strategy for the under-determined general reconstruction constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStrategy {
    /// Minimum Euclidean norm solution.
    LeastNorm,
    /// Closed-form solution for uniformly spaced cuts.
    EqualWeight,
}

/// Expanded coefficients and the per-cut polynomials `𝓗_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCoeffs {
    /// Radial `c_1..c_{2⌊N/2⌋}` (empty for general tests).
    pub c: Vec<f64>,
    /// General `C_{i;k}` for `i = 1..2N` (empty for radial tests).
    pub big_c: Vec<Vec<f64>>,
    /// `𝓗_j` coefficients by power, `h[j][power]`, with zero constant term.
    pub h: Vec<Vec<f64>>,
}

/// Evaluates a polynomial given by ascending coefficients.
pub fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Evaluates a polynomial in double-double arithmetic.
pub fn horner_dd(coeffs: &[f64], x: f64) -> Dd {
    let x = Dd::from(x);
    coeffs
        .iter()
        .rev()
        .fold(Dd::from(0.0), |acc, &c| acc * x + Dd::from(c))
}

impl DerivedCoeffs {
    /// `1 + Σ_j 𝓗_j(Q_{θ_j}(x, p))`.
    pub fn reconstruct(&self, cuts: &[f64], pt: PhasePoint) -> f64 {
        let mut sum = CompensatedSum::new();
        sum.add(1.0);
        for (h, &theta) in self.h.iter().zip(cuts) {
            sum.add(horner(h, pt.quadrature(theta)));
        }
        sum.value()
    }
}

/// Outcome of a test: estimated mean, variance and figure of merit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub mean: f64,
    pub variance: f64,
    pub g_stat: Option<f64>,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    #[serde(rename = "M")]
    pub total: usize,
    pub m: usize,
}

impl TestOutcome {
    pub fn new(mean: f64, variance: f64, total: usize, m: usize) -> Self {
        let g_stat = (variance > 0.0).then(|| mean / variance.sqrt());
        let g = g_stat.filter(|_| total > m).map(|gs| gs / ((total - m) as f64).sqrt());
        Self {
            mean,
            variance,
            g_stat,
            g,
            total,
            m,
        }
    }

    /// Violation significance in standard deviations (positive when the mean is negative).
    pub fn significance(&self) -> Option<f64> {
        self.g_stat.map(|g| -g)
    }
}

/// `binom(2n, n)⁻¹ 4ⁿ / m`, the uniform-cut coefficient of the radial identity.
pub fn radial_t_coefficient(n: usize, m: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("radial coefficient order must be at least 1"));
    }
    if m < n + 1 {
        return Err(Error::InsufficientCuts {
            required: n + 1,
            got: m,
        });
    }
    Ok(kappa(n) / m as f64)
}

/// Uniform cuts `θ_j = jπ/m`, `j = 0..m`.
pub fn uniform_cuts(m: usize) -> Vec<f64> {
    (0..m).map(|j| j as f64 * PI / m as f64).collect()
}

/// Maximum relative residual of `r^{2n} = t Σ_j Q_{θ_j}^{2n}` over `points`,
/// with uniform cuts and `t = κ_n/m`.
pub fn verify_radial_identity(n: usize, m: usize, points: &[PhasePoint]) -> f64 {
    let t = kappa(n) / m as f64;
    let cuts = uniform_cuts(m);
    points
        .iter()
        .map(|pt| {
            let lhs = pt.r2().powi(n as i32);
            let rhs: CompensatedSum = cuts.iter().map(|&th| pt.quadrature(th).powi(2 * n as i32)).collect();
            (lhs - t * rhs.value()).abs() / lhs.max(1.0)
        })
        .fold(0.0, f64::max)
}

fn constraint_row(i: usize, theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    (0..=i)
        .map(|k| binomial(i, k) * c.powi((i - k) as i32) * s.powi(k as i32))
        .collect()
}

fn constraint_matrix(i: usize, cuts: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(i + 1, cuts.len());
    for (j, &theta) in cuts.iter().enumerate() {
        for (k, v) in constraint_row(i, theta).into_iter().enumerate() {
            a[(k, j)] = v;
        }
    }
    a
}

fn double_factorial_odd(k: usize) -> f64 {
    // (2k-1)!!
    (1..=k).map(|j| (2 * j - 1) as f64).product()
}

fn uniform_spacing(cuts: &[f64]) -> bool {
    let m = cuts.len();
    let mut reduced: Vec<f64> = cuts.iter().map(|t| t.rem_euclid(PI)).collect();
    reduced.sort_by(|a, b| a.total_cmp(b));
    let step = PI / m as f64;
    let gaps_ok = reduced.windows(2).all(|w| (w[1] - w[0] - step).abs() < 1e-9);
    let wrap = reduced[0] + PI - reduced[m - 1];
    gaps_ok && (wrap - step).abs() < 1e-9
}

/// Solves the reconstruction constraint `Σ_j binom(i,k') cos^{i-k'}θ_j sin^{k'}θ_j T_{i;k,j} = δ_{k,k'}`
/// for `i = 1..2N`, returning `T[i-1][k][j]`.
pub fn solve_general_constraint(
    n: usize,
    cuts: &[f64],
    strategy: ConstraintStrategy,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let m = cuts.len();
    if m < 2 * n + 1 {
        return Err(Error::InsufficientCuts {
            required: 2 * n + 1,
            got: m,
        });
    }
    if strategy == ConstraintStrategy::EqualWeight && !uniform_spacing(cuts) {
        return Err(Error::invalid("the equal-weight strategy needs uniformly spaced cuts"));
    }
    let mut out = Vec::with_capacity(2 * n);
    for i in 1..=2 * n {
        let a = constraint_matrix(i, cuts);
        let x = match strategy {
            ConstraintStrategy::LeastNorm => {
                let svd = a.clone().svd(true, true);
                let smax = svd.singular_values.max();
                let smin = svd.singular_values.min();
                if smin.is_nan() || smin <= 1e-10 * smax {
                    return Err(Error::RankDeficient { order: i });
                }
                svd.pseudo_inverse(0.0)
                    .map_err(|_| Error::RankDeficient { order: i })?
            }
            ConstraintStrategy::EqualWeight => {
                let gram = DMatrix::from_fn(i + 1, i + 1, |k, l| {
                    let sin_pow = k + l;
                    if sin_pow % 2 == 1 {
                        return 0.0;
                    }
                    let beta = sin_pow / 2;
                    let alpha = i - beta;
                    let mean = double_factorial_odd(alpha) * double_factorial_odd(beta)
                        / (1..=i).map(|j| (2 * j) as f64).product::<f64>();
                    binomial(i, k) * binomial(i, l) * mean
                });
                let chol = gram.cholesky().ok_or(Error::RankDeficient { order: i })?;
                let inv = chol.inverse();
                a.transpose() * inv / m as f64
            }
        };
        let t: Vec<Vec<f64>> = (0..=i).map(|k| (0..m).map(|j| x[(j, k)]).collect()).collect();
        out.push(t);
    }
    let residual = general_constraint_residual(cuts, &out);
    if residual > CONSTRAINT_TOLERANCE {
        return Err(Error::RankDeficient { order: 2 * n });
    }
    Ok(out)
}

/// `Σ_j row_j[kp] t_j` and `Σ_j |row_j[kp] t_j|`.
fn weighted_row_sum(rows: &[Vec<f64>], t: &[f64], kp: usize) -> (f64, f64) {
    let mut sum = CompensatedSum::new();
    let mut size = 0.0;
    for (row, &tv) in rows.iter().zip(t) {
        sum.add(row[kp] * tv);
        size += (row[kp] * tv).abs();
    }
    (sum.value(), size)
}

fn general_constraint_residual(cuts: &[f64], t: &[Vec<Vec<f64>>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (idx, ti) in t.iter().enumerate() {
        let i = idx + 1;
        let rows: Vec<Vec<f64>> = cuts.iter().map(|&th| constraint_row(i, th)).collect();
        for (k, tk) in ti.iter().enumerate() {
            for kp in 0..=i {
                let (lhs, size) = weighted_row_sum(&rows, tk, kp);
                let target = if k == kp { 1.0 } else { 0.0 };
                worst = worst.max((lhs - target).abs() / size.max(1.0));
            }
        }
    }
    worst
}

fn radial_constraint_residual(cuts: &[f64], t: &[Vec<f64>], lambda: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (idx, ti) in t.iter().enumerate() {
        let i = idx + 1;
        let rows: Vec<Vec<f64>> = cuts.iter().map(|&th| constraint_row(2 * i, th)).collect();
        for kp in 0..=2 * i {
            let (lhs, size) = weighted_row_sum(&rows, ti, kp);
            let target = if kp % 2 == 1 {
                0.0
            } else {
                let l = kp / 2;
                binomial(i, l) * lambda.powi(2 * (i as i32 - l as i32))
                    * lambda.powi(-2 * l as i32)
            };
            worst = worst.max((lhs - target).abs() / size.max(target.abs()).max(1.0));
        }
    }
    worst
}

fn self_convolve(v: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; 2 * v.len() - 1];
    for (a, &va) in v.iter().enumerate() {
        for (b, &vb) in v.iter().enumerate() {
            e[a + b] += va * vb;
        }
    }
    e
}

/// Radial expanded coefficients `c_i = 2d_i + Σ_{a+a'=i} d_a d_{a'}` for `i = 1..2K`.
pub fn radial_expanded(d: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(d.len() + 1);
    v.push(1.0);
    v.extend_from_slice(d);
    self_convolve(&v)[1..].to_vec()
}

/// General expanded coefficients `C_{i;k}` for `i = 1..2N`.
pub fn general_expanded(n: usize, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut full: Vec<Vec<f64>> = (0..=n).map(|i| vec![0.0; i + 1]).collect();
    full[0][0] = 1.0;
    for (idx, row) in d.iter().enumerate() {
        full[idx + 1][..row.len()].copy_from_slice(row);
    }
    let mut c: Vec<Vec<f64>> = (0..=2 * n).map(|i| vec![0.0; i + 1]).collect();
    for (a, ra) in full.iter().enumerate() {
        for (b, &da) in ra.iter().enumerate() {
            if da == 0.0 {
                continue;
            }
            for (a2, ra2) in full.iter().enumerate() {
                for (b2, &db) in ra2.iter().enumerate() {
                    c[a + a2][b + b2] += da * db;
                }
            }
        }
    }
    c.remove(0);
    c
}

impl ElementaryTestSpec {
    /// Radial test with uniform cuts `jπ/m` and the uniform-cut coefficients.
    pub fn radial_uniform(n: usize, d: Vec<f64>, m: usize) -> Result<Self> {
        if d.len() != n / 2 {
            return Err(Error::invalid(format!(
                "a radial test of degree parameter {n} takes {} coefficients, got {}",
                n / 2,
                d.len()
            )));
        }
        if m < n + 1 {
            return Err(Error::InsufficientCuts {
                required: n + 1,
                got: m,
            });
        }
        let t = (1..=2 * d.len())
            .map(|i| radial_t_coefficient(i, m).map(|v| vec![v; m]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            cuts: uniform_cuts(m),
            coefficients: TestCoefficients::Radial { d, t, lambda: 1.0 },
        })
    }

    /// General test with reconstruction coefficients solved for `cuts`.
    pub fn general(n: usize, d: Vec<Vec<f64>>, cuts: Vec<f64>, strategy: ConstraintStrategy) -> Result<Self> {
        let t = solve_general_constraint(n, &cuts, strategy)?;
        let spec = Self {
            n,
            cuts,
            coefficients: TestCoefficients::General { d, t },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn m(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.coefficients, TestCoefficients::Radial { .. })
    }

    /// Checks dimensions, the cut-count bound, the degree cap and the constraint.
    pub fn validate(&self) -> Result<()> {
        self.validate_with_max_degree(DEFAULT_MAX_DEGREE)
    }

    pub fn validate_with_max_degree(&self, max_degree: usize) -> Result<()> {
        let n = self.n;
        let m = self.m();
        if n == 0 {
            return Err(Error::invalid("degree parameter N must be at least 1"));
        }
        if n > max_degree {
            return Err(Error::OrderTooLarge {
                order: 2 * n,
                max: 2 * max_degree,
            });
        }
        if self.cuts.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("cut angles must be finite"));
        }
        match &self.coefficients {
            TestCoefficients::Radial { d, t, lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::invalid("radial squeeze parameter must be positive"));
                }
                if m < n + 1 {
                    return Err(Error::InsufficientCuts {
                        required: n + 1,
                        got: m,
                    });
                }
                if d.len() != n / 2 {
                    return Err(Error::invalid(format!(
                        "radial test expects {} coefficients d, got {}",
                        n / 2,
                        d.len()
                    )));
                }
                if t.len() != 2 * d.len() || t.iter().any(|row| row.len() != m) {
                    return Err(Error::invalid(format!(
                        "radial T must have {} rows of {m} entries",
                        2 * d.len()
                    )));
                }
                let residual = radial_constraint_residual(&self.cuts, t, *lambda);
                if residual > CONSTRAINT_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "radial reconstruction constraint violated (residual {residual:.3e})"
                    )));
                }
            }
            TestCoefficients::General { d, t } => {
                if m < 2 * n + 1 {
                    return Err(Error::InsufficientCuts {
                        required: 2 * n + 1,
                        got: m,
                    });
                }
                if d.len() != n || d.iter().enumerate().any(|(i, row)| row.len() != i + 2) {
                    return Err(Error::invalid("general D must have N rows, row i holding i+1 entries"));
                }
                let dims_ok = t.len() == 2 * n
                    && t.iter().enumerate().all(|(i, ti)| {
                        ti.len() == i + 2 && ti.iter().all(|row| row.len() == m)
                    });
                if !dims_ok {
                    return Err(Error::invalid("general T must be indexed [i][k][j] with i = 1..2N"));
                }
                let residual = general_constraint_residual(&self.cuts, t);
                if residual > CONSTRAINT_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "general reconstruction constraint violated (residual {residual:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Value of the test function `𝓕(x, p)`.
    pub fn test_function(&self, pt: PhasePoint) -> f64 {
        match &self.coefficients {
            TestCoefficients::Radial { d, lambda, .. } => {
                let x = lambda * pt.x;
                let p = pt.p / lambda;
                let r2 = x * x + p * p;
                let inner = 1.0 + r2 * horner(d, r2);
                inner * inner
            }
            TestCoefficients::General { d, .. } => {
                let mut inner = 1.0;
                for (idx, row) in d.iter().enumerate() {
                    let i = idx + 1;
                    for (k, &coef) in row.iter().enumerate() {
                        inner += coef * pt.x.powi((i - k) as i32) * pt.p.powi(k as i32);
                    }
                }
                inner * inner
            }
        }
    }
}

/// Expands the test into the per-cut polynomials `𝓗_j`.
pub fn build_h(spec: &ElementaryTestSpec) -> DerivedCoeffs {
    let m = spec.m();
    match &spec.coefficients {
        TestCoefficients::Radial { d, t, .. } => {
            let c = radial_expanded(d);
            let h = (0..m)
                .map(|j| {
                    let mut coeffs = vec![0.0; 2 * c.len() + 1];
                    for (idx, &ci) in c.iter().enumerate() {
                        coeffs[2 * (idx + 1)] = ci * t[idx][j];
                    }
                    coeffs
                })
                .collect();
            DerivedCoeffs {
                c,
                big_c: Vec::new(),
                h,
            }
        }
        TestCoefficients::General { d, t } => {
            let big_c = general_expanded(spec.n, d);
            let h = (0..m)
                .map(|j| {
                    let mut coeffs = vec![0.0; big_c.len() + 1];
                    for (idx, ci) in big_c.iter().enumerate() {
                        coeffs[idx + 1] = ci.iter().zip(&t[idx]).map(|(c, tk)| c * tk[j]).sum();
                    }
                    coeffs
                })
                .collect();
            DerivedCoeffs {
                c: Vec::new(),
                big_c,
                h,
            }
        }
    }
}

/// Estimates mean and variance of the test from a dataset.
pub fn evaluate_test(dataset: &QuadratureDataset, spec: &ElementaryTestSpec) -> Result<TestOutcome> {
    spec.validate()?;
    if dataset.entries.len() != spec.m() {
        return Err(Error::CutMismatch(format!(
            "dataset has {} cuts, specification has {}",
            dataset.entries.len(),
            spec.m()
        )));
    }
    let mut matched = Vec::with_capacity(spec.m());
    for (j, &theta) in spec.cuts.iter().enumerate() {
        let entry = dataset
            .entries
            .iter()
            .find(|e| (e.theta - theta).abs() <= ANGLE_TOLERANCE)
            .ok_or_else(|| Error::CutMismatch(format!("no dataset cut matches angle {theta} (cut {j})")))?;
        if entry.samples.len() < 2 {
            return Err(Error::InsufficientSamples {
                cut: j,
                count: entry.samples.len(),
            });
        }
        matched.push(entry);
    }
    let derived = build_h(spec);
    let per_cut: Vec<(f64, f64)> = matched
        .par_iter()
        .zip(derived.h.par_iter())
        .map(|(entry, h)| {
            let values: Vec<f64> = entry.samples.iter().map(|&q| f64::from(horner_dd(h, q))).collect();
            let count = values.len() as f64;
            let mean = values.iter().copied().collect::<CompensatedSum>().value() / count;
            let ss = values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .collect::<CompensatedSum>()
                .value();
            (mean, ss / (count * (count - 1.0)))
        })
        .collect();
    let mut mean = CompensatedSum::new();
    mean.add(1.0);
    let mut variance = CompensatedSum::new();
    for &(mu, var) in &per_cut {
        mean.add(mu);
        variance.add(var);
    }
    Ok(TestOutcome::new(mean.value(), variance.value(), dataset.total(), spec.m()))
}

fn hermite_points_for(spec: &ElementaryTestSpec) -> usize {
    2 * spec.n + 6
}

/// Population mean and variance of the test under a model, with equal counts `M/m` per cut.
pub fn analytic_outcome(model: &StateModel, spec: &ElementaryTestSpec, total: usize) -> Result<TestOutcome> {
    model.validate()?;
    spec.validate()?;
    let m = spec.m();
    if total <= m {
        return Err(Error::invalid(format!(
            "the analytic outcome needs more measurements ({total}) than cuts ({m})"
        )));
    }
    let per_cut = total as f64 / m as f64;
    let (nodes, weights) = model.base().hermite_rule(hermite_points_for(spec));
    let derived = build_h(spec);
    let weights: Vec<Dd> = weights.into_iter().map(Dd::from).collect();
    let mut mean = Dd::from(1.0);
    let mut variance = CompensatedSum::new();
    for (h, &theta) in derived.h.iter().zip(&spec.cuts) {
        let u = model.quadrature_scale(theta);
        let values: Vec<Dd> = nodes.iter().map(|&x| horner_dd(h, u * x)).collect();
        let mu = values
            .iter()
            .zip(&weights)
            .fold(Dd::from(0.0), |acc, (&v, &w)| acc + v * w);
        let var = values.iter().zip(&weights).fold(Dd::from(0.0), |acc, (&v, &w)| {
            let dev = v - mu;
            acc + w * dev * dev
        });
        mean += mu;
        variance.add(f64::from(var) / (per_cut - 1.0));
    }
    Ok(TestOutcome::new(f64::from(mean), variance.value(), total, m))
}

/// Maps a test for the state `W` into the equivalent test for `W_λ(x,p) = W(λx, p/λ)`.
pub fn squeeze_transform(spec: &ElementaryTestSpec, lambda: f64) -> Result<ElementaryTestSpec> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("squeezing parameter must be positive"));
    }
    if lambda == 1.0 {
        return Ok(spec.clone());
    }
    let l2 = lambda * lambda;
    let mut cuts = Vec::with_capacity(spec.m());
    let mut rho = Vec::with_capacity(spec.m());
    for &theta in &spec.cuts {
        let (s, c) = theta.sin_cos();
        let mut mapped = s.atan2(l2 * c);
        if mapped < 0.0 {
            mapped += PI;
        }
        if mapped >= PI {
            mapped -= PI;
        }
        cuts.push(mapped);
        rho.push((l2 * c * c + s * s / l2).sqrt());
    }
    let coefficients = match &spec.coefficients {
        TestCoefficients::Radial { d, t, lambda: l0 } => TestCoefficients::Radial {
            d: d.clone(),
            t: t
                .iter()
                .enumerate()
                .map(|(idx, row)| {
                    let i = idx as i32 + 1;
                    row.iter().zip(&rho).map(|(v, r)| v * r.powi(2 * i)).collect()
                })
                .collect(),
            lambda: l0 * lambda,
        },
        TestCoefficients::General { d, t } => TestCoefficients::General {
            d: d.iter()
                .enumerate()
                .map(|(idx, row)| {
                    let i = idx as i32 + 1;
                    row.iter()
                        .enumerate()
                        .map(|(k, v)| v * lambda.powi(i - 2 * k as i32))
                        .collect()
                })
                .collect(),
            t: t.iter()
                .enumerate()
                .map(|(idx, ti)| {
                    let i = idx as i32 + 1;
                    ti.iter()
                        .enumerate()
                        .map(|(k, row)| {
                            let factor = lambda.powi(2 * k as i32 - i);
                            row.iter().zip(&rho).map(|(v, r)| v * factor * r.powi(i)).collect()
                        })
                        .collect()
                })
                .collect(),
        },
    };
    Ok(ElementaryTestSpec {
        n: spec.n,
        cuts,
        coefficients,
    })
}

/// Variance `½ Σ_j Σ_{i,i'} g^{ii'} T_{i;j} T_{i';j} / (M_j − 1)` of a measurement split.
pub fn split_variance(g: &DMatrix<f64>, t: &[Vec<f64>], counts: &[f64]) -> f64 {
    let mut total = CompensatedSum::new();
    for (j, &mj) in counts.iter().enumerate() {
        let tj = DVector::from_iterator(t.len(), t.iter().map(|row| row[j]));
        total.add(0.5 * tj.dot(&(g * &tj)) / (mj - 1.0));
    }
    total.value()
}

/// Optimal coefficients `T_{i;j} = K_i (M_j − 1)/(M − m)` for a given split and the
/// resulting minimum variance `½ Σ g^{ii'} K_i K_{i'} / (M − m)`.
pub fn optimal_split_for_counts(k: &[f64], g: &DMatrix<f64>, counts: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
    if g.nrows() != k.len() || g.ncols() != k.len() {
        return Err(Error::invalid("covariance matrix dimension does not match the constants"));
    }
    let m = counts.len() as f64;
    let total: f64 = counts.iter().sum();
    if total <= m {
        return Err(Error::invalid("the optimal split needs M > m"));
    }
    let t = k
        .iter()
        .map(|&ki| counts.iter().map(|&mj| ki * (mj - 1.0) / (total - m)).collect())
        .collect();
    let kv = DVector::from_column_slice(k);
    let variance = 0.5 * kv.dot(&(g * &kv)) / (total - m);
    Ok((t, variance))
}

/// Optimal coefficients with equal counts `M/m`, i.e. `T_{i;j} = K_i/m`.
pub fn optimal_measurement_split(
    k: &[f64],
    g: &DMatrix<f64>,
    total: usize,
    m: usize,
) -> Result<(Vec<Vec<f64>>, f64)> {
    if m == 0 || total <= m {
        return Err(Error::invalid("the optimal split needs M > m ≥ 1"));
    }
    let counts = vec![total as f64 / m as f64; m];
    optimal_split_for_counts(k, g, &counts)
}

/// Figure of merit of the radial family for a rotationally symmetric base density,
/// with gradient and Hessian in the scaled coordinates `y_a = d_a ‖κ_a s^{2a}‖`,
/// where the norm is taken in the marginal's L² space.
///
/// All sums run in double-double arithmetic: the polynomial `Σ e_n κ_n s^{2n}`
/// cancels heavily at high degree.
#[derive(Debug, Clone)]
pub struct RadialObjective {
    k: usize,
    weights: Vec<Dd>,
    /// `κ_n s^{2n}` per node, `n = 0..=2K`.
    powers: Vec<Vec<Dd>>,
    scale: Vec<f64>,
}

/// Value, gradient and Hessian of the radial objective.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn dd_sum<I: IntoIterator<Item = Dd>>(iter: I) -> Dd {
    iter.into_iter().fold(Dd::from(0.0), |acc, x| acc + x)
}

impl RadialObjective {
    pub fn new(base: BaseDensity, k: usize) -> Self {
        let (nodes, weights) = base.hermite_rule(4 * k + 8);
        let kappas: Vec<f64> = (0..=2 * k).map(kappa).collect();
        let powers = nodes
            .iter()
            .map(|&x| {
                let s2 = Dd::from(x) * Dd::from(x);
                let mut p = Vec::with_capacity(2 * k + 1);
                let mut acc = Dd::from(1.0);
                for &kap in &kappas {
                    p.push(acc * Dd::from(kap));
                    acc *= s2;
                }
                p
            })
            .collect();
        let scale = (1..=k)
            .map(|a| kappa(a) * base.moment(4 * a).sqrt())
            .collect();
        Self {
            k,
            weights: weights.into_iter().map(Dd::from).collect(),
            powers,
            scale,
        }
    }

    pub fn dimension(&self) -> usize {
        self.k
    }

    pub fn to_scaled(&self, d: &[f64]) -> Vec<f64> {
        d.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }

    pub fn from_scaled(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    fn full(&self, d: &[f64]) -> Vec<Dd> {
        let mut v = Vec::with_capacity(self.k + 1);
        v.push(Dd::from(1.0));
        v.extend(d.iter().map(|&x| Dd::from(x)));
        v
    }

    fn y_values(&self, v: &[Dd]) -> Vec<Dd> {
        let mut e = vec![Dd::from(0.0); 2 * v.len() - 1];
        for (a, &va) in v.iter().enumerate() {
            for (b, &vb) in v.iter().enumerate() {
                e[a + b] += va * vb;
            }
        }
        self.powers
            .iter()
            .map(|p| dd_sum(e.iter().zip(p).map(|(&a, &b)| a * b)))
            .collect()
    }

    fn mean_and_variance(&self, y: &[Dd]) -> (Dd, Dd) {
        let mu = dd_sum(y.iter().zip(&self.weights).map(|(&a, &w)| a * w));
        let var = dd_sum(y.iter().zip(&self.weights).map(|(&a, &w)| {
            let dev = a - mu;
            w * dev * dev
        }));
        (mu, var)
    }

    /// `⟨𝓕⟩ / sd(𝓕)` at coefficients `d`.
    pub fn value(&self, d: &[f64]) -> f64 {
        let y = self.y_values(&self.full(d));
        let (mu, var) = self.mean_and_variance(&y);
        f64::from(mu) / f64::from(var).sqrt()
    }

    /// Value, scaled gradient and scaled Hessian at coefficients `d`.
    pub fn evaluate(&self, d: &[f64]) -> ObjectiveEval {
        let k = self.k;
        let two = Dd::from(2.0);
        let v = self.full(d);
        let y = self.y_values(&v);
        let ya: Vec<Vec<Dd>> = self
            .powers
            .iter()
            .map(|p| {
                (1..=k)
                    .map(|a| two * dd_sum((0..=k).map(|b| v[b] * p[a + b])))
                    .collect()
            })
            .collect();
        let w = &self.weights;
        let (mu, var) = self.mean_and_variance(&y);
        let mu_a: Vec<Dd> = (0..k)
            .map(|a| dd_sum(ya.iter().zip(w).map(|(r, &w)| w * r[a])))
            .collect();
        let dev: Vec<Dd> = y.iter().map(|&v| v - mu).collect();
        let v_a: Vec<Dd> = (0..k)
            .map(|a| two * dd_sum(dev.iter().zip(&ya).zip(w).map(|((&dv, r), &w)| w * dv * r[a])))
            .collect();
        let mut mu_ab = vec![vec![Dd::from(0.0); k]; k];
        let mut v_ab = vec![vec![Dd::from(0.0); k]; k];
        for a in 0..k {
            for b in a..k {
                let mut m = Dd::from(0.0);
                let mut s = Dd::from(0.0);
                for (q, r) in ya.iter().enumerate() {
                    let yab = two * self.powers[q][a + b + 2];
                    m += w[q] * yab;
                    s += w[q] * ((r[a] - mu_a[a]) * (r[b] - mu_a[b]) + dev[q] * yab);
                }
                mu_ab[a][b] = m;
                mu_ab[b][a] = m;
                v_ab[a][b] = two * s;
                v_ab[b][a] = two * s;
            }
        }
        let varf = f64::from(var);
        let sd = varf.sqrt();
        let value = f64::from(mu) / sd;
        let half = Dd::from(0.5);
        let gradient = DVector::from_fn(k, |a, _| {
            let numerator = mu_a[a] * var - half * mu * v_a[a];
            f64::from(numerator) / (varf * sd) / self.scale[a]
        });
        let var2 = var * var;
        let hessian = DMatrix::from_fn(k, k, |a, b| {
            let numerator = mu_ab[a][b] * var2 - half * var * (mu_a[a] * v_a[b] + mu_a[b] * v_a[a])
                - half * mu * var * v_ab[a][b]
                + Dd::from(0.75) * mu * v_a[a] * v_a[b];
            f64::from(numerator) / (varf * varf * sd) / (self.scale[a] * self.scale[b])
        });
        ObjectiveEval {
            value,
            gradient,
            hessian,
        }
    }
}

/// Iteration controls of the radial optimizer.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub initial_d1: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            initial_d1: -0.3,
        }
    }
}

/// Result of a radial optimization.
#[derive(Debug, Clone)]
pub struct RadialOptimum {
    pub spec: ElementaryTestSpec,
    pub outcome: TestOutcome,
    /// Figure of merit `⟨𝓕⟩/(σ_𝓕 √(M−m))`, `None` when the test is constant.
    pub g: Option<f64>,
    /// Gradient norm at the optimum, in the coordinates scaled by the basis norms of [`RadialObjective`].
    pub gradient_norm: f64,
    pub iterations: usize,
}

fn newton_minimize(
    objective: &RadialObjective,
    d0: Vec<f64>,
    options: &OptimizerOptions,
) -> Result<(Vec<f64>, f64, usize)> {
    let k = objective.dimension();
    let mut y = objective.to_scaled(&d0);
    let mut damping = 0.0f64;
    let mut eval = objective.evaluate(&objective.from_scaled(&y));
    let mut iterations = 0;
    let target = 0.01 * options.gradient_tolerance;
    while iterations < options.max_iterations {
        if !eval.value.is_finite() {
            return Err(Error::NonConvergence("radial test optimization (non-finite objective)".into()));
        }
        if eval.gradient.norm() < target {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while damping < 1e30 {
            let mut h = eval.hessian.clone();
            for i in 0..k {
                h[(i, i)] += damping;
            }
            if let Some(chol) = h.cholesky() {
                let step = chol.solve(&(-&eval.gradient));
                let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let trial_eval = objective.evaluate(&objective.from_scaled(&trial));
                let slack = 1e-14 * eval.value.abs().max(1.0);
                if trial_eval.value.is_finite() && trial_eval.value <= eval.value + slack {
                    let progress = trial_eval.gradient.norm() < eval.gradient.norm()
                        || trial_eval.value < eval.value - slack;
                    y = trial;
                    eval = trial_eval;
                    damping = if damping < 1e-12 { 0.0 } else { damping * 0.1 };
                    accepted = progress;
                    break;
                }
            }
            damping = if damping == 0.0 {
                1e-8 * (1.0 + eval.hessian.diagonal().amax())
            } else {
                damping * 10.0
            };
        }
        if !accepted {
            break;
        }
    }
    let norm = eval.gradient.norm();
    if norm >= options.gradient_tolerance {
        return Err(Error::NonConvergence(format!(
            "radial test optimization (gradient norm {norm:.3e} after {iterations} iterations)"
        )));
    }
    Ok((objective.from_scaled(&y), norm, iterations))
}

/// Minimizes the figure of merit of the radial test `(1 + Σ dᵢ r^{2i})²` with `m`
/// uniform cuts, continuing from lower degrees.
pub fn optimize_radial_with(
    model: &StateModel,
    n: usize,
    m: usize,
    total: usize,
    options: &OptimizerOptions,
) -> Result<RadialOptimum> {
    model.validate()?;
    if model.effective_lambda() != 1.0 {
        return Err(Error::invalid(
            "the radial optimizer needs a rotationally symmetric model; squeeze the optimum afterwards",
        ));
    }
    if n == 0 {
        return Err(Error::invalid("degree parameter N must be at least 1"));
    }
    if n > DEFAULT_MAX_DEGREE {
        return Err(Error::OrderTooLarge {
            order: 2 * n,
            max: 2 * DEFAULT_MAX_DEGREE,
        });
    }
    if m < n + 1 {
        return Err(Error::InsufficientCuts {
            required: n + 1,
            got: m,
        });
    }
    let k_target = n / 2;
    let mut d: Vec<f64> = Vec::new();
    let mut gradient_norm = 0.0;
    let mut iterations = 0;
    for k in 1..=k_target {
        if d.is_empty() {
            d.push(options.initial_d1);
        } else {
            d.push(0.0);
        }
        let objective = RadialObjective::new(model.base(), k);
        let (next, norm, iters) = newton_minimize(&objective, d, options)?;
        d = next;
        gradient_norm = norm;
        iterations += iters;
    }
    let spec = ElementaryTestSpec::radial_uniform(n, d, m)?;
    let outcome = analytic_outcome(model, &spec, total)?;
    Ok(RadialOptimum {
        spec,
        g: outcome.g,
        outcome,
        gradient_norm,
        iterations,
    })
}

/// [`optimize_radial_with`] using default options.
pub fn optimize_radial(
    model: &StateModel,
    n: usize,
    m: usize,
    total: usize,
) -> Result<(ElementaryTestSpec, TestOutcome)> {
    let opt = optimize_radial_with(model, n, m, total, &OptimizerOptions::default())?;
    Ok((opt.spec, opt.outcome))
}

impl ElementaryTestSpec {
    /// Radial coefficients `d`, or an empty slice for general tests.
    pub fn coefficients_d(&self) -> &[f64] {
        match &self.coefficients {
            TestCoefficients::Radial { d, .. } => d,
            TestCoefficients::General { .. } => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(6, 3), 20.0);
        assert_eq!(binomial(40, 20), 137_846_528_820.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn kappa_matches_definition() {
        for n in 0..12 {
            let direct = 4f64.powi(n as i32) / binomial(2 * n, n);
            assert!((kappa(n) / direct - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn radial_expansion_small() {
        assert_eq!(radial_expanded(&[-1.0]), vec![-2.0, 1.0]);
        assert_eq!(radial_expanded(&[2.0, 3.0]), vec![4.0, 4.0 + 6.0, 12.0, 9.0]);
    }

    #[test]
    fn general_expansion_small() {
        // (1 + x)^2 = 1 + 2x + x^2
        let c = general_expanded(1, &[vec![1.0, 0.0]]);
        assert_eq!(c, vec![vec![2.0, 0.0], vec![1.0, 0.0, 0.0]]);
    }

    #[test]
    fn objective_derivatives_match_finite_differences() {
        let obj = RadialObjective::new(BaseDensity::SinglePhoton, 3);
        let d = [-0.8, 0.15, -0.01];
        let eval = obj.evaluate(&d);
        let y = obj.to_scaled(&d);
        let h = 1e-6;
        for a in 0..3 {
            let mut up = y.clone();
            let mut dn = y.clone();
            up[a] += h;
            dn[a] -= h;
            let fd = (obj.value(&obj.from_scaled(&up)) - obj.value(&obj.from_scaled(&dn))) / (2.0 * h);
            assert!((fd - eval.gradient[a]).abs() < 1e-7, "gradient {a}");
            let gu = obj.evaluate(&obj.from_scaled(&up)).gradient;
            let gd = obj.evaluate(&obj.from_scaled(&dn)).gradient;
            for b in 0..3 {
                let fd = (gu[b] - gd[b]) / (2.0 * h);
                assert!((fd - eval.hessian[(a, b)]).abs() < 1e-6, "hessian {a} {b}");
            }
        }
    }
}
