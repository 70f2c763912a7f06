use ddbar_lab::geometry::{
    hopf_wave, integrate, ma_density, reference_form, GeometryConfig, Herm, ModelGeometry, OneOneForm, ScalarField,
    TRANSVERSE_VOLUME,
};
use ddbar_lab::volume::{
    estimate_v_bounds, gauduchon_factor, gauduchon_residual, guan_li_check, ma_volume, v_hat_minus, SamplerConfig,
};
use ddbar_lab::Error;

fn hopf(n: usize) -> ddbar_lab::Geometry64 {
    ModelGeometry::new(&GeometryConfig::hopf(n)).unwrap()
}

#[test]
fn reference_volumes() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::torus2(8)).unwrap();
    let v = ma_volume(&reference_form(&g), &ScalarField::zeros(&g)).unwrap();
    assert!((v - 1.0).abs() < 1e-14);
    let g = hopf(64);
    let v = ma_volume(&reference_form(&g), &ScalarField::zeros(&g)).unwrap();
    let want = 2.0 * TRANSVERSE_VOLUME * 2.0 * std::f64::consts::LN_2;
    assert!((v - want).abs() < 1e-12 * want);
}

#[test]
fn ma_volume_rejects_non_psh_potential() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::torus1(64)).unwrap();
    let phi = ScalarField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).cos());
    assert!(matches!(ma_volume(&reference_form(&g), &phi), Err(Error::NegativeMargin(_))));
}

#[test]
fn torus_volume_is_invariant() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::torus2(8)).unwrap();
    let omega = reference_form(&g);
    let theta = OneOneForm::constant_matrix(
        &g,
        Herm {
            a11: 1.5,
            a22: 0.8,
            a12: num_complex::Complex::new(0.2, -0.1),
        },
    )
    .unwrap();
    let cfg = SamplerConfig {
        n_samples: 50,
        refine_steps: 3,
        ..Default::default()
    };
    let rep = estimate_v_bounds(&theta, &omega, &cfg).unwrap();
    let exact = integrate(&ma_density(&theta));
    assert_eq!(rep.n_samples, 50);
    assert!((rep.v_plus_lower - exact).abs() < 1e-8 * exact);
    assert!((rep.v_minus_upper - exact).abs() < 1e-8 * exact);
    assert!(rep.samples.iter().all(|s| s.margin >= rep.margin_target));
}

#[test]
fn hopf_gauduchon_invariant_and_conformal_varies() {
    let g = hopf(128);
    let omega = reference_form(&g);
    let cfg = SamplerConfig::default();
    let rep = estimate_v_bounds(&omega, &omega, &cfg).unwrap();
    let mean = 0.5 * (rep.v_plus_lower + rep.v_minus_upper);
    assert!((rep.v_plus_lower - rep.v_minus_upper) < 1e-8 * mean);

    let h = hopf_wave(&g, 0.3, 1).unwrap();
    let conf = omega.conformal(&h).unwrap();
    let rep = estimate_v_bounds(&conf, &conf, &cfg).unwrap();
    let mean = 0.5 * (rep.v_plus_lower + rep.v_minus_upper);
    assert!(rep.v_plus_lower - rep.v_minus_upper >= 0.05 * mean, "{rep:?}");
    assert!(rep.trace.windows(2).all(|w| w[1].v_plus >= w[0].v_plus && w[1].v_minus <= w[0].v_minus));
}

#[test]
fn sampler_is_deterministic_and_monotone_in_budget() {
    let g = hopf(64);
    let h = hopf_wave(&g, 0.3, 1).unwrap();
    let conf = reference_form(&g).conformal(&h).unwrap();
    let small = SamplerConfig {
        n_samples: 10,
        refine_steps: 0,
        seed: 7,
        ..Default::default()
    };
    let big = SamplerConfig {
        n_samples: 40,
        ..small.clone()
    };
    let a = estimate_v_bounds(&conf, &conf, &small).unwrap();
    let b = estimate_v_bounds(&conf, &conf, &small).unwrap();
    assert_eq!(a, b);
    let c = estimate_v_bounds(&conf, &conf, &big).unwrap();
    assert!(c.v_plus_lower >= a.v_plus_lower && c.v_minus_upper <= a.v_minus_upper);
}

#[test]
fn guan_li_classifies_models() {
    let g = hopf(128);
    let omega = reference_form(&g);
    let gl = guan_li_check(&omega);
    assert!(gl.pass && gl.residual == 0.0);
    let conf = omega.conformal(&hopf_wave(&g, 0.3, 1).unwrap()).unwrap();
    assert!(!guan_li_check(&conf).pass);

    let t1 = ModelGeometry::<f64>::new(&GeometryConfig::torus1(32)).unwrap();
    assert!(guan_li_check(&reference_form(&t1)).pass);

    let t2 = ModelGeometry::<f64>::new(&GeometryConfig::torus2(8)).unwrap();
    let u = ScalarField::from_fn(&t2, |x| 0.01 * (2.0 * std::f64::consts::PI * (x[0] + 2.0 * x[3])).sin());
    let closed = reference_form(&t2).add(&ddbar_lab::geometry::ddc(&u).unwrap()).unwrap();
    let gl = guan_li_check(&closed);
    assert!(gl.pass, "{gl:?}");
    // a11 depending on the second variable is not closed
    let bump = ScalarField::from_fn(&t2, |x| 0.1 * (2.0 * std::f64::consts::PI * x[2]).cos());
    assert!(!guan_li_check(&reference_form(&t2).conformal(&bump).unwrap()).pass);
}

#[test]
fn gauduchon_factor_undoes_conformal_change() {
    let g = hopf(128);
    let omega = reference_form(&g);
    let gf = gauduchon_factor(&omega).unwrap();
    assert!(gf.sup_norm() < 1e-10);
    let h = hopf_wave(&g, 0.3, 1).unwrap();
    let conf = omega.conformal(&h).unwrap();
    let gf = gauduchon_factor(&conf).unwrap();
    for (gv, hv) in gf.values().iter().zip(h.values()) {
        assert!((gv + hv).abs() < 1e-10);
    }
    assert!(gauduchon_residual(&conf, &gf).unwrap() <= 1e-10);
    // a non-conformal perturbation still has a factor satisfying the equation
    let l = g.period();
    let a = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (2.0 * std::f64::consts::PI * x[0] / l).sin());
    let b = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * (4.0 * std::f64::consts::PI * x[0] / l).cos());
    let w = OneOneForm::radial(&a, &b).unwrap();
    let gf = gauduchon_factor(&w).unwrap();
    assert!(gauduchon_residual(&w, &gf).unwrap() <= 1e-10);
    assert!(gf.values().iter().sum::<f64>().abs() < 1e-10);

    let bl = ModelGeometry::<f64>::new(&GeometryConfig::blowup(64, 3.0, 1.0, 2.0)).unwrap();
    let r = gauduchon_factor(&reference_form(&bl));
    assert!(r.is_ok() || matches!(r, Err(Error::UnsupportedGeometry { .. })));
}

#[test]
fn v_hat_on_closed_and_collapsing_classes() {
    let g = ModelGeometry::<f64>::new(&GeometryConfig::torus1(64)).unwrap();
    let omega = reference_form(&g);
    let cfg = SamplerConfig {
        n_samples: 8,
        refine_steps: 2,
        ..Default::default()
    };
    let eps = [0.2, 0.1, 0.05, 0.025];
    let rep = v_hat_minus(&omega, &omega, &eps, &cfg).unwrap();
    assert!((rep.extrapolated - 1.0).abs() < 1e-10);

    let g = hopf(64);
    let omega = reference_form(&g);
    let theta_t = OneOneForm::constant_radial(&g, 0.0, 1.0).unwrap();
    let rep = v_hat_minus(&theta_t, &omega, &eps, &cfg).unwrap();
    let v0 = ma_volume(&omega, &ScalarField::zeros(&g)).unwrap();
    assert!(rep.extrapolated.abs() < 1e-2 * v0, "{rep:?}");
    assert!(rep.epsilon_ladder.windows(2).all(|w| w[1].1 <= w[0].1));
    assert!(v_hat_minus(&omega, &omega, &[0.1], &cfg).is_err());
}
