//! Independent numerical oracles shared by the integration tests.
//!
//! They deliberately avoid the library's adaptive quadrature: the trapezoid
//! rule is spectrally accurate for smooth integrands that decay fast or are
//! periodic over the integration window, which covers every oracle below.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Trapezoid rule with `n` panels on `[a, b]`.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = 0.5 * (f(a) + f(b));
    for i in 1..n {
        sum += f(a + h * i as f64);
    }
    sum * h
}

/// Tensor trapezoid rule on a rectangle.
pub fn trapezoid_2d<F: Fn(f64, f64) -> f64>(f: F, x: (f64, f64), p: (f64, f64), n: usize) -> f64 {
    trapezoid(|xv| trapezoid(|pv| f(xv, pv), p.0, p.1, n), x.0, x.1, n)
}

/// Composite Gauss–Legendre rule (5 points per panel) on `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        let mid = a + h * (k as f64 + 0.5);
        for (x, w) in X.iter().zip(W) {
            sum += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * sum
}

/// Single-photon Wigner function written out directly.
pub fn single_photon_wigner(x: f64, p: f64) -> f64 {
    let r2 = x * x + p * p;
    (2.0 * r2 - 1.0) * (-r2).exp() / PI
}

/// Single-photon marginal written out directly.
pub fn single_photon_marginal(s: f64) -> f64 {
    2.0 / PI.sqrt() * s * s * (-s * s).exp()
}

/// Uniformly spread pseudo-random points in a square, from a fixed linear congruential sequence.
pub fn scattered_points(count: usize, half_width: f64, seed: u64) -> Vec<(f64, f64)> {
    let mut state = seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
    let mut next = || {
        state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    (0..count).map(|_| (half_width * next(), half_width * next())).collect()
}

/// Kolmogorov–Smirnov distance between sorted samples and a CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let c = cdf(s);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Upper-tail probability of a χ² statistic with `dof` degrees of freedom.
pub fn chi_squared_p_value(statistic: f64, dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic)
}
