mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use quadwit::phase_space::{
    covariance_matrix, eval_wigner, quadrature_moment, quadrature_moment_with_limit, radon_marginal, scale_u,
};
use quadwit::{Error, PhasePoint, StateModel};

use common::{single_photon_marginal, single_photon_wigner, trapezoid, trapezoid_2d};

fn models() -> Vec<StateModel> {
    vec![
        StateModel::single_photon(),
        StateModel::squeezed_single_photon(0.5),
        StateModel::squeezed_single_photon(2.0),
        StateModel::squeezed_single_photon(5.0),
        StateModel::vacuum_control(),
    ]
}

#[test]
#[allow(clippy::approx_constant)]
fn single_photon_origin_value() {
    let w = eval_wigner(&StateModel::single_photon(), PhasePoint::new(0.0, 0.0));
    assert!((w + 1.0 / PI).abs() < 1e-15);
    assert!((w + 0.318310).abs() < 1e-6);
}

#[test]
fn squeezed_wigner_is_rescaled_single_photon() {
    let squeezed = eval_wigner(&StateModel::squeezed_single_photon(2.0), PhasePoint::new(0.5, 2.0));
    let plain = eval_wigner(&StateModel::single_photon(), PhasePoint::new(1.0, 1.0));
    assert!((squeezed - plain).abs() < 1e-15);
}

#[test]
fn vacuum_origin_value_normalizes_the_gaussian() {
    let w = eval_wigner(&StateModel::vacuum_control(), PhasePoint::new(0.0, 0.0));
    assert!((w - 1.0 / PI).abs() < 1e-15);
    let mass = trapezoid_2d(|x, p| (-(x * x + p * p)).exp(), (-9.0, 9.0), (-9.0, 9.0), 360);
    assert!((w * mass - 1.0).abs() < 1e-12);
}

#[test]
fn wigner_matches_written_out_formula() {
    let model = StateModel::single_photon();
    for (x, p) in common::scattered_points(200, 3.0, 1) {
        let got = eval_wigner(&model, PhasePoint::new(x, p));
        assert!((got - single_photon_wigner(x, p)).abs() < 1e-15);
    }
}

#[test]
fn every_model_is_normalized() {
    for model in models() {
        let l = model.effective_lambda();
        let half_x = 10.0 / l;
        let half_p = 10.0 * l;
        let mass = trapezoid_2d(
            |x, p| eval_wigner(&model, PhasePoint::new(x, p)),
            (-half_x, half_x),
            (-half_p, half_p),
            400,
        );
        assert!((mass - 1.0).abs() < 1e-6, "{model:?}: {mass}");
    }
}

#[test]
fn single_photon_marginal_vanishes_at_zero() {
    for theta in [0.0, 0.3, 1.2, 2.9] {
        let m = radon_marginal(&StateModel::single_photon(), theta);
        assert_eq!(m.density(0.0), 0.0);
    }
}

#[test]
fn single_photon_marginal_is_rotation_invariant() {
    let model = StateModel::single_photon();
    let a = radon_marginal(&model, 0.0);
    let b = radon_marginal(&model, FRAC_PI_2);
    for i in -60..=60 {
        let s = 0.1 * i as f64;
        assert_eq!(a.density(s), b.density(s));
    }
}

#[test]
fn squeezed_marginal_at_zero_angle() {
    let m = radon_marginal(&StateModel::squeezed_single_photon(2.0), 0.0);
    for i in -40..=40 {
        let s = 0.05 * i as f64;
        let expected = 2.0 * single_photon_marginal(2.0 * s);
        assert!((m.density(s) - expected).abs() < 1e-14, "s = {s}");
    }
}

#[test]
fn marginal_equals_line_integral_of_wigner() {
    for model in models() {
        for theta in [0.0, 0.4, FRAC_PI_2, 2.5] {
            let marginal = radon_marginal(&model, theta);
            let (sn, cs) = theta.sin_cos();
            let reach = 12.0 * model.effective_lambda().max(1.0 / model.effective_lambda());
            for i in -30..=30 {
                let s = 0.1 * i as f64 * marginal.scale;
                let line = trapezoid(
                    |t| eval_wigner(&model, PhasePoint::new(s * cs - t * sn, s * sn + t * cs)),
                    -reach,
                    reach,
                    4000,
                );
                assert!(
                    (line - marginal.density(s)).abs() < 1e-6,
                    "{model:?} θ={theta} s={s}: {line} vs {}",
                    marginal.density(s)
                );
            }
        }
    }
}

#[test]
fn squeezed_marginal_is_rescaled_base_marginal() {
    let base = radon_marginal(&StateModel::single_photon(), 0.0);
    for lambda in [0.3, 2.0, 5.0] {
        let model = StateModel::squeezed_single_photon(lambda);
        for theta in [0.0, 0.2, 1.0, FRAC_PI_2, 2.8] {
            let u = scale_u(lambda, theta);
            let m = radon_marginal(&model, theta);
            for i in -50..=50 {
                let s = 0.1 * i as f64;
                let expected = base.density(s / u) / u;
                assert!((m.density(s) - expected).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn marginals_are_normalized_densities() {
    for model in models() {
        for theta in [0.0, 0.7, 2.0] {
            let m = radon_marginal(&model, theta);
            let reach = 12.0 * m.scale;
            let mass = trapezoid(|s| m.density(s), -reach, reach, 4000);
            assert!((mass - 1.0).abs() < 1e-10, "{model:?}: {mass}");
            assert!((m.cdf(reach) - 1.0).abs() < 1e-12);
            assert!(m.cdf(-reach) < 1e-12);
            let peak = (0..4000)
                .map(|i| m.density(-reach + 2.0 * reach * i as f64 / 4000.0))
                .fold(0.0, f64::max);
            assert!(peak <= m.max_density() * (1.0 + 1e-12));
            assert!(peak >= m.max_density() * 0.999);
        }
    }
}

#[test]
fn moment_examples() {
    let sp = StateModel::single_photon();
    assert_eq!(quadrature_moment(&sp, 0.9, 1).unwrap(), 0.0);
    let second = quadrature_moment(&sp, 0.9, 2).unwrap();
    let oracle = trapezoid(|s| s * s * single_photon_marginal(s), -12.0, 12.0, 2000);
    assert!((second - 1.5).abs() < 1e-14);
    assert!((oracle - 1.5).abs() < 1e-12);

    let sq = StateModel::squeezed_single_photon(3.0);
    let second = quadrature_moment(&sq, 0.0, 2).unwrap();
    assert!((second - 1.5 / 9.0).abs() < 1e-15);
    let m = radon_marginal(&sq, 0.0);
    let oracle = trapezoid(|s| s * s * m.density(s), -5.0, 5.0, 4000);
    assert!((oracle - 1.5 / 9.0).abs() < 1e-12);
}

#[test]
fn high_moments_match_direct_integration() {
    for model in models() {
        for theta in [0.0, 1.1] {
            let m = radon_marginal(&model, theta);
            let reach = 16.0 * m.scale;
            for order in [4, 7, 10, 20, 30] {
                let exact = quadrature_moment(&model, theta, order).unwrap();
                let oracle = trapezoid(|s| s.powi(order as i32) * m.density(s), -reach, reach, 20_000);
                let scale = m.scale.powi(order as i32) * quadrature_moment(&StateModel::single_photon(), 0.0, order + order % 2).unwrap();
                assert!((exact - oracle).abs() <= 1e-9 * scale.max(1.0), "{model:?} order {order}: {exact} vs {oracle}");
            }
        }
    }
}

#[test]
fn moment_order_is_capped() {
    let sp = StateModel::single_photon();
    assert!(quadrature_moment(&sp, 0.0, 64).is_ok());
    assert!(matches!(
        quadrature_moment(&sp, 0.0, 65),
        Err(Error::OrderTooLarge { order: 65, max: 64 })
    ));
    assert!(matches!(
        quadrature_moment_with_limit(&sp, 0.0, 12, 10),
        Err(Error::OrderTooLarge { order: 12, max: 10 })
    ));
}

#[test]
fn unsqueezed_moments_do_not_depend_on_angle() {
    for model in [StateModel::single_photon(), StateModel::vacuum_control()] {
        for order in [2, 4, 8, 16] {
            let reference = quadrature_moment(&model, 0.0, order).unwrap();
            for j in 0..32 {
                let theta = PI * j as f64 / 32.0;
                let value = quadrature_moment(&model, theta, order).unwrap();
                assert!((value - reference).abs() < 1e-9 * reference.max(1.0));
            }
        }
    }
}

#[test]
fn covariance_examples() {
    let sp = StateModel::single_photon();
    let g = covariance_matrix(&sp, 0.3, 2).unwrap();
    assert!((g[(0, 0)] - 3.0).abs() < 1e-14);
    assert_eq!(g[(0, 1)], 0.0);
    assert_eq!(g[(1, 0)], 0.0);
    assert!(matches!(covariance_matrix(&sp, 0.0, 33), Err(Error::OrderTooLarge { .. })));
}

#[test]
fn covariance_under_squeezing_scales_with_u() {
    let lambda = 2.5;
    let sq = StateModel::squeezed_single_photon(lambda);
    let theta = 0.7;
    let u = scale_u(lambda, theta);
    let g1 = covariance_matrix(&StateModel::single_photon(), theta, 6).unwrap();
    let m = radon_marginal(&sq, theta);
    let reach = 16.0 * m.scale;
    let moment = |k: i32| trapezoid(|s| s.powi(k) * m.density(s), -reach, reach, 20_000);
    for i in 1..=6 {
        for j in 1..=6 {
            let brute = 2.0 * (moment(i + j) - moment(i) * moment(j));
            let scaled = u.powi(i + j) * g1[(i as usize - 1, j as usize - 1)];
            assert!((brute - scaled).abs() < 1e-8 * scaled.abs().max(1.0), "({i},{j}): {brute} vs {scaled}");
        }
    }
}

#[test]
fn covariance_is_positive_semidefinite() {
    for model in models() {
        let g = covariance_matrix(&model, 0.4, 6).unwrap();
        let eig = g.clone().symmetric_eigenvalues();
        let scale = eig.amax();
        assert!(eig.iter().all(|&e| e >= -1e-12 * scale), "{eig:?}");
        assert!((g.clone() - g.transpose()).amax() == 0.0);
    }
}

#[test]
fn scale_u_examples() {
    for theta in [0.0, 0.5, FRAC_PI_2, 3.0] {
        assert!((scale_u(1.0, theta) - 1.0).abs() < 1e-15);
    }
    assert!((scale_u(2.0, 0.0) - 0.5).abs() < 1e-15);
    assert!((scale_u(2.0, FRAC_PI_2) - 2.0).abs() < 1e-15);
    let near = FRAC_PI_2 - 1e-8;
    let tan_form = near.cos() / 2.0 * (1.0 + 16.0 * near.tan().powi(2)).sqrt();
    assert!((tan_form - 2.0).abs() < 1e-7);
    assert!((scale_u(2.0, near) - tan_form).abs() < 1e-7);
}

#[test]
fn inverse_square_u_integrals() {
    for lambda in [0.2, 1.0, 5.0] {
        let second = trapezoid(|t| scale_u(lambda, t).powi(-2), -FRAC_PI_2, FRAC_PI_2, 20_000);
        let fourth = trapezoid(|t| scale_u(lambda, t).powi(-4), -FRAC_PI_2, FRAC_PI_2, 20_000);
        assert!((second - PI).abs() < 1e-8, "λ={lambda}: {second}");
        let expected = 0.5 * PI * (lambda * lambda + 1.0 / (lambda * lambda));
        assert!((fourth - expected).abs() < 1e-8, "λ={lambda}: {fourth} vs {expected}");
    }
}

#[test]
fn model_json_round_trip() {
    let model: StateModel = serde_json::from_str(r#"{"kind": "squeezed_single_photon", "lambda": 2.0}"#).unwrap();
    assert_eq!(model, StateModel::squeezed_single_photon(2.0));
    let text = serde_json::to_string(&StateModel::vacuum_control()).unwrap();
    assert_eq!(text, r#"{"kind":"vacuum_control","lambda":1.0}"#);
    let defaulted: StateModel = serde_json::from_str(r#"{"kind": "single_photon"}"#).unwrap();
    assert_eq!(defaulted.lambda, 1.0);
    assert!(serde_json::from_str::<StateModel>(r#"{"kind": "cat_state"}"#).is_err());
    assert!(serde_json::from_str::<StateModel>(r#"{"kind": "single_photon", "l": 2}"#).is_err());
}

#[test]
fn nonpositive_lambda_is_rejected() {
    for lambda in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(StateModel::squeezed_single_photon(lambda).validate().is_err());
    }
}

#[test]
fn vacuum_ignores_lambda() {
    let model = StateModel {
        lambda: 3.0,
        ..StateModel::vacuum_control()
    };
    assert_eq!(model.effective_lambda(), 1.0);
    assert_eq!(
        eval_wigner(&model, PhasePoint::new(0.3, -0.2)),
        eval_wigner(&StateModel::vacuum_control(), PhasePoint::new(0.3, -0.2))
    );
}

proptest! {
    #[test]
    fn squeezing_rescales_the_plane(lambda in 0.1f64..10.0, x in -4.0f64..4.0, p in -4.0f64..4.0) {
        let squeezed = eval_wigner(&StateModel::squeezed_single_photon(lambda), PhasePoint::new(x, p));
        let plain = single_photon_wigner(lambda * x, p / lambda);
        prop_assert!((squeezed - plain).abs() < 1e-14);
    }

    #[test]
    fn marginal_densities_are_nonnegative(lambda in 0.1f64..10.0, theta in 0.0f64..PI, s in -20.0f64..20.0) {
        let m = radon_marginal(&StateModel::squeezed_single_photon(lambda), theta);
        prop_assert!(m.density(s) >= 0.0);
        prop_assert!((0.0..=1.0).contains(&m.cdf(s)));
    }

    #[test]
    fn scale_u_is_symmetric_under_inversion(lambda in 0.1f64..10.0, theta in -3.0f64..3.0) {
        let direct = scale_u(lambda, theta);
        let swapped = scale_u(1.0 / lambda, theta + FRAC_PI_2);
        prop_assert!((direct - swapped).abs() < 1e-12 * direct.max(1.0));
    }
}
