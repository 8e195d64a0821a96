//! Analytic phase-space models: Wigner functions, their Radon marginals,
//! quadrature moments and the squeeze scale factor `u(λ, θ)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;

/// Default maximum moment order accepted by [`quadrature_moment`].
pub const DEFAULT_MAX_MOMENT_ORDER: usize = 64;

fn sqrt_pi() -> f64 {
    PI.sqrt()
}

/// A point of the phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(x: f64, p: f64) -> Self {
        Self { x, p }
    }

    pub fn r2(&self) -> f64 {
        self.x * self.x + self.p * self.p
    }

    /// The rotated quadrature `cos θ · x + sin θ · p`.
    pub fn quadrature(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        c * self.x + s * self.p
    }
}

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    SinglePhoton,
    SqueezedSinglePhoton,
    VacuumControl,
}

fn unit() -> f64 {
    1.0
}

/// Analytic phase-space distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateModel {
    pub kind: StateKind,
    #[serde(default = "unit")]
    pub lambda: f64,
}

/// The rotationally symmetric density from which a model is obtained by squeezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseDensity {
    SinglePhoton,
    Vacuum,
}

impl BaseDensity {
    /// Marginal density of any quadrature.
    pub fn pdf(self, s: f64) -> f64 {
        match self {
            BaseDensity::SinglePhoton => 2.0 / sqrt_pi() * s * s * (-s * s).exp(),
            BaseDensity::Vacuum => (-s * s).exp() / sqrt_pi(),
        }
    }

    /// Marginal cumulative distribution.
    pub fn cdf(self, s: f64) -> f64 {
        match self {
            BaseDensity::SinglePhoton => 0.5 * (1.0 + erf(s)) - s * (-s * s).exp() / sqrt_pi(),
            BaseDensity::Vacuum => 0.5 * (1.0 + erf(s)),
        }
    }

    /// Maximum of the marginal density.
    pub fn pdf_max(self) -> f64 {
        match self {
            BaseDensity::SinglePhoton => 2.0 / (std::f64::consts::E * sqrt_pi()),
            BaseDensity::Vacuum => 1.0 / sqrt_pi(),
        }
    }

    /// Wigner function at squared radius `r2`.
    pub fn wigner(self, r2: f64) -> f64 {
        match self {
            BaseDensity::SinglePhoton => (2.0 * r2 - 1.0) * (-r2).exp() / PI,
            BaseDensity::Vacuum => (-r2).exp() / PI,
        }
    }

    /// Moment `⟨Q^order⟩` of the marginal.
    pub fn moment(self, order: usize) -> f64 {
        if order % 2 == 1 {
            return 0.0;
        }
        let k = order / 2;
        let mut j = match self {
            BaseDensity::SinglePhoton => 2 * k as i64 + 1,
            BaseDensity::Vacuum => 2 * k as i64 - 1,
        };
        let mut value = 1.0;
        while j > 1 {
            value *= j as f64;
            j -= 2;
        }
        value / 2f64.powi(k as i32)
    }

    /// Quadrature nodes and weights integrating polynomials against the
    /// marginal density, exact to degree `2n - 3`.
    pub fn hermite_rule(self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let rule = GaussHermite::cached(n);
        let weights = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| match self {
                BaseDensity::SinglePhoton => w * 2.0 * x * x / sqrt_pi(),
                BaseDensity::Vacuum => w / sqrt_pi(),
            })
            .collect();
        (rule.nodes.clone(), weights)
    }
}

impl StateModel {
    pub fn single_photon() -> Self {
        Self {
            kind: StateKind::SinglePhoton,
            lambda: 1.0,
        }
    }

    pub fn squeezed_single_photon(lambda: f64) -> Self {
        Self {
            kind: StateKind::SqueezedSinglePhoton,
            lambda,
        }
    }

    pub fn vacuum_control() -> Self {
        Self {
            kind: StateKind::VacuumControl,
            lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!(
                "squeezing parameter must be positive and finite, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn base(&self) -> BaseDensity {
        match self.kind {
            StateKind::SinglePhoton | StateKind::SqueezedSinglePhoton => BaseDensity::SinglePhoton,
            StateKind::VacuumControl => BaseDensity::Vacuum,
        }
    }

    /// The squeezing actually applied to the base density.
    pub fn effective_lambda(&self) -> f64 {
        match self.kind {
            StateKind::SqueezedSinglePhoton => self.lambda,
            StateKind::SinglePhoton | StateKind::VacuumControl => 1.0,
        }
    }

    /// Scale of the quadrature `Q_θ` relative to the base density.
    pub fn quadrature_scale(&self, theta: f64) -> f64 {
        scale_u(self.effective_lambda(), theta)
    }
}

/// Squeeze scale factor `u(λ, θ) = √(cos²θ/λ² + λ² sin²θ)`.
pub fn scale_u(lambda: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    (c * c / (lambda * lambda) + lambda * lambda * s * s).sqrt()
}

/// Wigner function `W_λ(x, p) = W(λx, p/λ)` of the model.
pub fn eval_wigner(model: &StateModel, pt: PhasePoint) -> f64 {
    let l = model.effective_lambda();
    let x = l * pt.x;
    let p = pt.p / l;
    model.base().wigner(x * x + p * p)
}

/// Marginal distribution of `Q_θ` under a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub theta: f64,
    pub base: BaseDensity,
    pub scale: f64,
}

impl Marginal {
    pub fn density(&self, s: f64) -> f64 {
        self.base.pdf(s / self.scale) / self.scale
    }

    pub fn cdf(&self, s: f64) -> f64 {
        self.base.cdf(s / self.scale)
    }

    pub fn max_density(&self) -> f64 {
        self.base.pdf_max() / self.scale
    }
}

/// Radon marginal `RW_λ(θ, ·)`.
pub fn radon_marginal(model: &StateModel, theta: f64) -> Marginal {
    Marginal {
        theta,
        base: model.base(),
        scale: model.quadrature_scale(theta),
    }
}

/// Moment `⟨Q_θ^order⟩` with the default order limit.
pub fn quadrature_moment(model: &StateModel, theta: f64, order: usize) -> Result<f64> {
    quadrature_moment_with_limit(model, theta, order, DEFAULT_MAX_MOMENT_ORDER)
}

/// Moment `⟨Q_θ^order⟩`, refusing orders above `max_order`.
pub fn quadrature_moment_with_limit(
    model: &StateModel,
    theta: f64,
    order: usize,
    max_order: usize,
) -> Result<f64> {
    if order > max_order {
        return Err(Error::OrderTooLarge {
            order,
            max: max_order,
        });
    }
    let u = model.quadrature_scale(theta);
    Ok(u.powi(order as i32) * model.base().moment(order))
}

/// Covariance matrix `g^{ii'} = 2(⟨Q^{i+i'}⟩ − ⟨Q^i⟩⟨Q^{i'}⟩)` for `1 ≤ i, i' ≤ max_order`,
/// stored zero-based.
pub fn covariance_matrix(model: &StateModel, theta: f64, max_order: usize) -> Result<DMatrix<f64>> {
    let mut moments = Vec::with_capacity(2 * max_order + 1);
    for k in 0..=2 * max_order {
        moments.push(quadrature_moment(model, theta, k)?);
    }
    Ok(DMatrix::from_fn(max_order, max_order, |r, c| {
        let (i, j) = (r + 1, c + 1);
        2.0 * (moments[i + j] - moments[i] * moments[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_moments_closed_form() {
        assert_eq!(BaseDensity::SinglePhoton.moment(0), 1.0);
        assert_eq!(BaseDensity::SinglePhoton.moment(2), 1.5);
        assert_eq!(BaseDensity::SinglePhoton.moment(4), 15.0 / 4.0);
        assert_eq!(BaseDensity::Vacuum.moment(2), 0.5);
        assert_eq!(BaseDensity::Vacuum.moment(4), 0.75);
        assert_eq!(BaseDensity::Vacuum.moment(3), 0.0);
    }

    #[test]
    fn cdf_limits() {
        for base in [BaseDensity::SinglePhoton, BaseDensity::Vacuum] {
            assert!(base.cdf(-9.0) < 1e-15);
            assert!((base.cdf(9.0) - 1.0).abs() < 1e-15);
            assert!((base.cdf(0.0) - 0.5).abs() < 1e-15);
        }
    }
}
