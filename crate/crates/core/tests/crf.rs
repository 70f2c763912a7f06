use ddbar_lab::crf::{
    apriori_bounds_check, apriori_spread, apriori_stable, bound_potential, coefficient_variation, exceptional_neighbourhood,
    flow_step, initial_state, jaccard, maximal_time, null_locus_comparison, predicted_time, run_flow, singularity_report,
    surgical_contraction_probe, theta_t, FlowOptions, FlowReport, NullVerdict,
};
use ddbar_lab::geometry::{reference_form, GeometryConfig, ModelGeometry, OneOneForm, ScalarField, TRANSVERSE_VOLUME};
use ddbar_lab::volume::guan_li_check;
use ddbar_lab::Error;
use std::f64::consts::{LN_2, PI};

fn hopf(n: usize) -> ddbar_lab::Geometry64 {
    ModelGeometry::new(&GeometryConfig::hopf(n)).unwrap()
}

fn blowup(n: usize) -> ddbar_lab::Geometry64 {
    ModelGeometry::new(&GeometryConfig::blowup(n, 6.0, 1.0, 40.0)).unwrap()
}

fn to_end(t_end: f64) -> FlowOptions {
    FlowOptions {
        t_end,
        ..Default::default()
    }
}

#[test]
fn flat_tori_are_fixed_points() {
    for cfg in [GeometryConfig::torus1(64), GeometryConfig::torus2(8)] {
        let g = ModelGeometry::<f64>::new(&cfg).unwrap();
        let omega = reference_form(&g);
        let rep = run_flow(&omega, &FlowOptions::default()).unwrap();
        assert!(!rep.blowup_detected);
        assert_eq!(rep.t_estimate, 1.0);
        assert_eq!(rep.t_predicted, 1.0);
        assert!(rep.trace.iter().all(|r| r.sup_abs_phi <= 1e-10));
        let sing = singularity_report(&rep, &Default::default());
        assert!(sing.z_mask.iter().chain(&sing.sigma_mask).all(|&m| !m));
        assert_eq!(sing.agreement, 1.0);
        let null = null_locus_comparison(&rep, &sing, None);
        assert_eq!(null.verdict, NullVerdict::Immortal);
        assert!(null.null_estimate.is_empty());
        let fit = apriori_bounds_check(&rep, &bound_potential(&g)).unwrap();
        assert!(fit.c_phi <= 1e-10 && fit.c_phi_dot <= 1e-10 && fit.trace_a == 0.0);
    }
}

#[test]
fn hopf_flow_collapses_at_one_half() {
    let g = hopf(256);
    let omega = reference_form(&g);
    let rep = run_flow(&omega, &FlowOptions::default()).unwrap();
    assert!((rep.t_predicted - 0.5).abs() < 1e-9, "{}", rep.t_predicted);
    assert!(rep.blowup_detected);
    assert!(rep.t_estimate >= 0.48 && rep.t_estimate <= 0.5, "{}", rep.t_estimate);
    assert!(rep.trace.iter().any(|r| r.sup_abs_r > 1e3));

    let v0 = 2.0 * TRANSVERSE_VOLUME * 2.0 * LN_2;
    for r in &rep.trace {
        let want = (1.0 - 2.0 * r.t) * v0;
        assert!((r.volumes[0] - want).abs() <= 1e-3 * want, "t = {}", r.t);
    }
    // the flow only moves the exact part of the class, and keeps the Guan-Li property
    for s in &rep.samples {
        let (a, b) = s.coefficients.as_ref().unwrap();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - (1.0 - 2.0 * s.t)).abs() < 1e-4);
        let w = OneOneForm::radial(&ScalarField::new(&g, a.clone()).unwrap(), &ScalarField::new(&g, b.clone()).unwrap()).unwrap();
        assert!(guan_li_check(&w).residual < 1e-8);
    }

    let sing = singularity_report(&rep, &Default::default());
    assert!(sing.z_mask.iter().all(|&m| m) && sing.sigma_mask.iter().all(|&m| m));
    let null = null_locus_comparison(&rep, &sing, None);
    assert_eq!(null.verdict, NullVerdict::Collapsing);
    assert_eq!(null.null_estimate, vec!["X".to_string()]);
    assert!(!null.tags[1].collapsing);
}

#[test]
fn hopf_class_time_and_theta() {
    let g = hopf(64);
    let omega = reference_form(&g);
    let th = theta_t(&omega, 0.25).unwrap();
    let (a, b) = th.radial_coefficients().unwrap();
    assert!(a.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
    assert!(b.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(theta_t(&omega, -1.0).is_err());
    assert!(matches!(
        predicted_time(&omega, (0.6, 1.0)),
        Err(Error::BracketFailure { .. })
    ));
    assert!(matches!(predicted_time(&omega, (0.2, 0.1)), Err(Error::BracketFailure { .. })));
    assert_eq!(predicted_time(&omega, (0.0, 0.3)).unwrap(), 0.3);
    let (est, pred) = maximal_time(&omega, (0.0, 1.0), &FlowOptions::default()).unwrap();
    assert!((pred - 0.5).abs() < 1e-9 && est > 0.499 && est <= 0.5);
}

#[test]
fn single_steps() {
    let g = hopf(32);
    let omega = reference_form(&g);
    let s0 = initial_state(&omega).unwrap();
    assert_eq!(s0.margin, 1.0);
    let s1 = flow_step(&omega, &s0, 0.1, &FlowOptions::default()).unwrap();
    assert!((s1.t - 0.1).abs() < 1e-15);
    // d phi/dt = log(1 - 2t) is spatially constant; one trapezoid step
    let want = 0.05 * (0.8f64).ln();
    assert!(s1.phi.values().iter().all(|&p| (p - want).abs() < 1e-12), "{} {want}", s1.phi.values()[0]);
    assert!((s1.margin - 0.8).abs() < 1e-12);
    // past the maximal time the step is halved until it fits
    let s2 = flow_step(&omega, &s1, 0.6, &FlowOptions::default()).unwrap();
    assert!(s2.t < 0.5);
    let strict = FlowOptions {
        dt_min: 0.45,
        ..Default::default()
    };
    assert!(matches!(flow_step(&omega, &s1, 0.6, &strict), Err(Error::StepFailure { .. })));
    assert!(flow_step(&omega, &s1, 0.0, &strict).is_err());
    let other = initial_state(&reference_form(&hopf(16))).unwrap();
    assert!(matches!(flow_step(&omega, &other, 0.1, &strict), Err(Error::GeometryMismatch)));
}

#[test]
fn step_doubling_is_consistent() {
    let g = blowup(256);
    let omega = reference_form(&g);
    let opts = to_end(0.5);
    let a = run_flow(&omega, &opts).unwrap();
    let b = run_flow(&omega, &opts.halved_dt()).unwrap();
    assert_eq!(a.t_estimate, 0.5);
    let d = a.final_state.phi.distance(&b.final_state.phi).unwrap();
    assert!(d <= 1e-6, "{d}");
}

fn blowup_run(n: usize) -> FlowReport<f64> {
    run_flow(&reference_form(&blowup(n)), &to_end(3.0)).unwrap()
}

#[test]
fn blowup_contracts_the_exceptional_curve() {
    let g = blowup(512);
    let rep = blowup_run(512);
    assert!(rep.blowup_detected);
    // T = a_E / lambda with lambda the Ricci pairing on E per unit curve area
    let lambda = rep.ricci_pairings[1] / (2.0 * PI);
    assert!((rep.t_predicted - 1.0 / lambda).abs() < 1e-3 * rep.t_predicted);
    assert!((rep.t_estimate - rep.t_predicted).abs() < 1e-4);

    let sing = singularity_report(&rep, &Default::default());
    let near = exceptional_neighbourhood(&g, None);
    assert!(sing.sigma_mask.iter().any(|&m| m));
    assert!(sing.agreement >= 0.9, "{}", sing.agreement);
    assert!(jaccard(&sing.z_mask, &near) >= 0.9);

    let null = null_locus_comparison(&rep, &sing, None);
    assert_eq!(null.verdict, NullVerdict::Consistent);
    assert_eq!(null.null_estimate, vec!["E".to_string()]);
    let e = &null.tags[1];
    assert!((e.slope - e.class_slope).abs() <= 0.05 * e.class_slope.abs(), "{e:?}");
    let whole = &null.tags[0];
    assert!(whole.last >= 0.5 * whole.initial);

    let far: Vec<bool> = g.coords().iter().map(|&r| r >= 1.0).collect();
    assert!(coefficient_variation(&rep, &far, 0.1) <= 0.01);

    let probe = surgical_contraction_probe(&rep, 1.0, 4.0).unwrap();
    assert!(probe.distance_variation <= 0.01, "{}", probe.distance_variation);
    let first = &probe.rows[0];
    let last = probe.rows.last().unwrap();
    assert!((first.curve_diameter - PI * 0.5f64.sqrt()).abs() < 1e-12);
    assert!(last.curve_diameter < 1e-2 * first.curve_diameter);
    // initial distance: integral of sqrt(b/2) for the logistic profile, by Simpson
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let span = sig(6.0) - sig(-6.0);
    let root = |x: f64| (39.0 * sig(x) * (1.0 - sig(x)) / span / 2.0).sqrt();
    let m = 2000;
    let h = 3.0 / m as f64;
    let want: f64 = (0..=m)
        .map(|k| {
            let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            w * root(1.0 + k as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0;
    assert!((first.distance - want).abs() < 1e-5 * want, "{} {want}", first.distance);
    assert!(matches!(
        surgical_contraction_probe(&run_flow(&reference_form(&hopf(16)), &to_end(0.1)).unwrap(), 0.0, 1.0),
        Err(Error::UnsupportedGeometry { .. })
    ));
}

#[test]
fn apriori_fits_are_stable_and_catch_corruption() {
    let base = blowup_run(512);
    let halved = run_flow(&reference_form(&blowup(512)), &to_end(3.0).halved_dt()).unwrap();
    let doubled = blowup_run(1024);
    let fits: Vec<_> = [&base, &halved, &doubled]
        .iter()
        .map(|r| apriori_bounds_check(r, &bound_potential(&r.geometry)).unwrap())
        .collect();
    assert!(apriori_stable(&fits), "{}", apriori_spread(&fits));
    assert!(fits.iter().all(|f| f.c_phi > 0.0 && f.trace_a > 0.0));

    let mut bad = base.clone();
    for v in bad.extremes.trace_max.iter_mut().take(40) {
        *v *= 50.0;
    }
    let corrupted = apriori_bounds_check(&bad, &bound_potential(&bad.geometry)).unwrap();
    assert!(!apriori_stable(&[fits[0].clone(), corrupted]));
    assert!(matches!(
        apriori_bounds_check(&base, &ScalarField::zeros(&hopf(8))),
        Err(Error::GeometryMismatch)
    ));
}
