use ddbar_lab::geometry::{
    ddc, integrate, ma_density, reference_form, GeometryConfig, Herm, ModelGeometry, OneOneForm, ScalarField,
};
use ddbar_lab::ma_elliptic::{c_bounds_check, continuity_path, solve_ma, MaOptions};
use ddbar_lab::Error;
use std::f64::consts::PI;

fn torus1(n: usize) -> ddbar_lab::Geometry64 {
    ModelGeometry::new(&GeometryConfig::torus1(n)).unwrap()
}

/// Periodic Poisson solve u'' = r by a direct O(n^2) Fourier transform.
fn naive_poisson(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut u = vec![0.0; n];
    for k in 1..n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &v) in r.iter().enumerate() {
            let a = 2.0 * PI * (k * j) as f64 / n as f64;
            re += v * a.cos();
            im -= v * a.sin();
        }
        let w = 2.0 * PI * k as f64;
        let (re, im) = (-re / (w * w), -im / (w * w));
        for (j, uj) in u.iter_mut().enumerate() {
            let a = 2.0 * PI * (k * j) as f64 / n as f64;
            *uj += 2.0 * (re * a.cos() - im * a.sin()) / n as f64;
        }
    }
    u
}

#[test]
fn dimension_one_constant_and_potential() {
    let g = torus1(512);
    let theta = OneOneForm::constant_matrix(&g, Herm::diag(1.3, 0.0)).unwrap();
    let omega = reference_form(&g);
    let f = ScalarField::from_fn(&g, |x| (0.3 * (2.0 * PI * x[0]).cos() + 0.1 * (6.0 * PI * x[0]).sin()).exp());
    let rep = solve_ma(&theta, &f, &omega, 1e-11).unwrap();
    let mean_f = f.values().iter().sum::<f64>() / 512.0;
    let c_exact = 1.3 / mean_f;
    assert!(((rep.c - c_exact) / c_exact).abs() < 1e-10, "c = {} vs {}", rep.c, c_exact);
    // 1.3 + u''/2 = c f
    let rhs: Vec<f64> = f.values().iter().map(|&v| 2.0 * (c_exact * v - 1.3)).collect();
    let mut u = naive_poisson(&rhs);
    let top = u.iter().cloned().fold(f64::MIN, f64::max);
    u.iter_mut().for_each(|v| *v -= top);
    let err = u.iter().zip(rep.phi.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "sup error {err}");
    assert!(rep.phi.sup().abs() < 1e-14);
    assert!(rep.mass_residual < 1e-10);
}

#[test]
fn flat_torus2_data_gives_zero_potential() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::torus2(8)).unwrap();
    let omega = reference_form(&g);
    let f = ScalarField::constant(&g, 1.0);
    let rep = solve_ma(&omega, &f, &omega, 1e-12).unwrap();
    assert!(rep.phi.sup_norm() < 1e-12);
    assert!((rep.c - 1.0).abs() < 1e-12);
    assert_eq!(rep.iterations, 0);
}

#[test]
fn torus2_solution_satisfies_equation() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::torus2(8)).unwrap();
    let omega = reference_form(&g);
    let f = ScalarField::from_fn(&g, |x| {
        (0.2 * (2.0 * PI * (x[0] + x[3])).cos() + 0.1 * (2.0 * PI * x[2]).sin()).exp()
    });
    let rep = solve_ma(&omega, &f, &omega, 1e-11).unwrap();
    let form = omega.add(&ddc(&rep.phi).unwrap()).unwrap();
    let lhs = ma_density(&form);
    let rhs = ma_density(&omega);
    for i in 0..g.len() {
        let want = rep.c * f.values()[i] * rhs.density()[i];
        assert!((lhs.density()[i] - want).abs() < 1e-9 * want.abs().max(1.0));
    }
    // closed class: the total mass is unchanged
    let ratio = integrate(&lhs) / integrate(&rhs);
    assert!((ratio - 1.0).abs() < 1e-10);
}

#[test]
fn hopf_solution_refines_consistently() {
    let run = |n: usize| {
        let g = ModelGeometry::<f64>::new(&GeometryConfig::hopf(n)).unwrap();
        let omega = reference_form(&g);
        let l = g.period();
        let f = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[0] / l).cos());
        let rep = solve_ma(&omega, &f, &omega, 1e-11).unwrap();
        (rep, g)
    };
    let (coarse, _) = run(64);
    let (fine, _) = run(256);
    assert!(((coarse.c - fine.c) / fine.c).abs() < 1e-9);
    for i in 0..64 {
        assert!((coarse.phi.values()[i] - fine.phi.values()[4 * i]).abs() < 1e-9);
    }
    assert!(coarse.positivity_margin_final > 0.0);
}

#[test]
fn blowup_solve_converges_with_pinned_slopes() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::blowup(256, 4.0, 1.0, 2.0)).unwrap();
    let omega = reference_form(&g);
    let f = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (-x[0] * x[0]).exp());
    let rep = solve_ma(&omega, &f, &omega, 1e-10).unwrap();
    assert!(rep.residual_linf <= 1e-10);
    assert!(rep.positivity_margin_final > 0.0);
    assert!(rep.c > 0.0 && rep.c < 1.0);
}

#[test]
fn c_bounds_hold_on_hopf_and_torus() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::hopf(128)).unwrap();
    let omega = reference_form(&g);
    let l = g.period();
    let f = ScalarField::from_fn(&g, |x| (0.4 * (2.0 * PI * x[0] / l).sin()).exp());
    let theta = omega.scale(1.5);
    let rep = solve_ma(&theta, &f, &omega, 1e-10).unwrap();
    let b = c_bounds_check(&rep, &theta, &omega, &f).unwrap();
    assert!(b.pass, "{b:?} c = {}", rep.c);
    assert!(b.lower <= b.upper);

    let g = torus1(128);
    let omega = reference_form(&g);
    let f = ScalarField::from_fn(&g, |x| 2.0 + (2.0 * PI * x[0]).cos());
    let rep = solve_ma(&omega, &f, &omega, 1e-12).unwrap();
    let b = c_bounds_check(&rep, &omega, &omega, &f).unwrap();
    assert!(b.pass, "{b:?}");
}

#[test]
fn continuity_path_flags_the_exceptional_end() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::blowup(256, 4.0, 1.0, 2.0)).unwrap();
    let omega = reference_form(&g);
    let theta = ddbar_lab::geometry::degenerate_blowup_class(&g).unwrap();
    let f = ScalarField::constant(&g, 1.0);
    let ladder = [0.4, 0.2, 0.1, 0.05];
    let rep = continuity_path(&theta, &f, &omega, &ladder, &MaOptions::default()).unwrap();
    assert_eq!(rep.ladder.len(), 4);
    assert!(rep.singular_region_estimate.iter().skip(g.len() / 2).all(|&m| !m));
    let err = continuity_path(&theta, &f, &omega, &[0.1, 0.2], &MaOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NonMonotoneLadder));
}

#[test]
fn invalid_inputs_are_rejected() {
    let g = torus1(64);
    let omega = reference_form(&g);
    let mut v = vec![1.0; 64];
    v[3] = -1.0;
    let f = ScalarField::new(&g, v).unwrap();
    assert!(matches!(solve_ma(&omega, &f, &omega, 1e-10), Err(Error::NonPositiveDensity)));
    let zero = OneOneForm::zero(&g);
    let one = ScalarField::constant(&g, 1.0);
    assert!(matches!(solve_ma(&zero, &one, &omega, 1e-10), Err(Error::NonPositiveTheta(_))));
    let other = torus1(32);
    let f2 = ScalarField::constant(&other, 1.0);
    assert!(matches!(solve_ma(&omega, &f2, &omega, 1e-10), Err(Error::GeometryMismatch)));
}

#[test]
fn single_precision_smoke() {
    let g = ModelGeometry::<f32>::new(&GeometryConfig::torus1(64)).unwrap();
    let omega = reference_form(&g);
    let f = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (2.0 * std::f32::consts::PI * x[0]).cos());
    let rep = solve_ma(&omega, &f, &omega, 1e-4).unwrap();
    assert!((rep.c - 1.0).abs() < 1e-4);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn mass_identity_and_positivity(c in prop::collection::vec(-0.3f64..0.3, 3), scale in 0.5f64..2.0) {
            let g = ModelGeometry::<f64>::new(&GeometryConfig::hopf(64)).unwrap();
            let omega = reference_form(&g);
            let l = g.period();
            let f = ScalarField::from_fn(&g, |x| {
                let w = 2.0 * PI * x[0] / l;
                (c[0] * w.cos() + c[1] * (2.0 * w).sin() + c[2] * (3.0 * w).cos()).exp()
            });
            let theta = omega.scale(scale);
            let rep = solve_ma(&theta, &f, &omega, 1e-10).unwrap();
            prop_assert!(rep.converged && rep.positivity_margin_final > 0.0);
            let form = theta.add(&ddc(&rep.phi).unwrap()).unwrap();
            let lhs = integrate(&ma_density(&form));
            let rhs: f64 = ma_density(&omega)
                .density()
                .iter()
                .zip(f.values())
                .map(|(d, v)| d * v)
                .sum::<f64>()
                * rep.c
                * g.weights()[0];
            prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs);
        }

        #[test]
        fn adding_a_constant_to_f_rescales_c(k in 0.1f64..3.0) {
            let g = torus1(128);
            let omega = reference_form(&g);
            let f = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).sin());
            let a = solve_ma(&omega, &f, &omega, 1e-11).unwrap();
            let b = solve_ma(&omega, &f.scale(k), &omega, 1e-11).unwrap();
            prop_assert!((b.c * k - a.c).abs() < 1e-10 * a.c);
            prop_assert!(a.phi.distance(&b.phi).unwrap() < 1e-9);
        }
    }
}
