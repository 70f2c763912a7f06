use crate::config::{build_field, build_form, Experiment, ExperimentConfig};
use ddbar_lab::crf::{
    apriori_bounds_check, apriori_spread, apriori_stable, bound_potential, coefficient_variation, null_locus_comparison,
    run_flow, singularity_report, surgical_contraction_probe, AprioriFit, FlowReport,
};
use ddbar_lab::envelope::{
    beta_ladder, contact_ma_concentration, envelope_oracle_lcp, fit_rate, laplacian_bound_check, LadderOptions,
};
use ddbar_lab::geometry::{singularity_potential, GeometryConfig, ModelGeometry, ModelKind};
use ddbar_lab::ma_elliptic::{c_bounds_check, solve_ma_with, MaOptions};
use ddbar_lab::volume::{estimate_v_bounds, gauduchon_factor, gauduchon_residual, guan_li_check, v_hat_minus};
use ddbar_lab::Geometry64;
use serde_json::{json, Value};
use std::time::Instant;

pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

pub struct Outcome {
    pub report: Value,
    pub tables: Vec<Table>,
    pub stages: Vec<Stage>,
    /// Set when the solver ran but did not meet its tolerance.
    pub unconverged: Option<String>,
}

/// Shortest round-trip text for a float.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// Finite floats as JSON numbers, the rest as strings.
fn jnum(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(num(x))
    }
}

fn coord_names(g: &Geometry64) -> Vec<String> {
    match g.kind() {
        ModelKind::Torus1 => vec!["x".into()],
        ModelKind::Torus2 => (1..=4).map(|i| format!("x{i}")).collect(),
        ModelKind::Hopf | ModelKind::BlowupCalabi => vec!["rho".into()],
    }
}

/// Table with node index and coordinates followed by `cols`.
fn node_table(name: &str, g: &Geometry64, cols: &[&str], fields: &[Vec<String>]) -> Table {
    let mut header = vec!["node".to_string()];
    header.extend(coord_names(g));
    header.extend(cols.iter().map(|s| s.to_string()));
    let rows = (0..g.len())
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(g.node_coords(i).into_iter().map(num));
            r.extend(fields.iter().map(|f| f[i].clone()));
            r
        })
        .collect();
    Table {
        name: name.into(),
        header,
        rows,
    }
}

fn col(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| num(x)).collect()
}

fn mask_col(v: &[bool]) -> Vec<String> {
    v.iter().map(|&b| flag(b)).collect()
}

/// Files written by an experiment, in order.
pub fn planned_outputs(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = vec!["config.toml".to_string(), "report.json".to_string()];
    let fields = cfg.output.fields;
    let csvs: Vec<(&str, bool)> = match cfg.experiment {
        Experiment::SolveMa => vec![("solution.csv", fields)],
        Experiment::Envelope => vec![("ladder.csv", true), ("envelope.csv", fields)],
        Experiment::Flow => vec![("trajectory.csv", true), ("final.csv", fields)],
        Experiment::Volume => vec![("samples.csv", true), ("optimizer.csv", true)],
        Experiment::NullLocus => vec![
            ("trajectory.csv", true),
            ("final.csv", fields),
            ("apriori.csv", true),
            ("probe.csv", cfg.solver.null_locus.probe.is_some()),
        ],
    };
    out.extend(csvs.into_iter().filter(|c| c.1).map(|c| c.0.to_string()));
    out.push("status.json".into());
    out
}

struct Timer {
    stages: Vec<Stage>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer {
            stages: Vec::new(),
            last: Instant::now(),
        }
    }

    fn mark(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push(Stage {
            name: name.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

pub fn run(cfg: &ExperimentConfig) -> ddbar_lab::Result<Outcome> {
    let g = ModelGeometry::<f64>::new(&cfg.geometry)?;
    match cfg.experiment {
        Experiment::SolveMa => solve_ma(cfg, &g),
        Experiment::Envelope => envelope(cfg, &g),
        Experiment::Flow => flow(cfg, &g, false),
        Experiment::Volume => volume(cfg, &g),
        Experiment::NullLocus => flow(cfg, &g, true),
    }
}

fn header(cfg: &ExperimentConfig, g: &Geometry64) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("experiment".into(), json!(cfg.experiment.name()));
    m.insert("geometry".into(), json!(g.kind().name()));
    m.insert("grid".into(), json!(g.shape()));
    m.insert("seed".into(), json!(cfg.seed));
    m
}

fn solve_ma(cfg: &ExperimentConfig, g: &Geometry64) -> ddbar_lab::Result<Outcome> {
    let mut timer = Timer::new();
    let theta = build_form(g, cfg.data.theta.as_ref())?;
    let omega = build_form(g, cfg.data.omega.as_ref())?;
    let f = build_field(g, cfg.data.f.as_ref().expect("validated"))?;
    let s = &cfg.solver.ma;
    let opts = MaOptions {
        tol: s.tol,
        max_iter: s.max_iter,
        max_halvings: s.max_halvings,
    };
    let rep = solve_ma_with(&theta, &f, &omega, &opts, None)?;
    timer.mark("solve");
    let bounds = c_bounds_check(&rep, &theta, &omega, &f).ok();
    timer.mark("c-bounds");
    let mut m = header(cfg, g);
    m.insert("c".into(), jnum(rep.c));
    m.insert("residual_linf".into(), jnum(rep.residual_linf));
    m.insert("mass_residual".into(), jnum(rep.mass_residual));
    m.insert("iterations".into(), json!(rep.iterations));
    m.insert("positivity_margin_final".into(), jnum(rep.positivity_margin_final));
    m.insert("converged".into(), json!(rep.converged));
    m.insert(
        "c_bounds".into(),
        bounds.map_or(Value::Null, |b| json!({"lower": jnum(b.lower), "upper": jnum(b.upper), "pass": b.pass})),
    );
    let mut tables = Vec::new();
    if cfg.output.fields {
        tables.push(node_table(
            "solution.csv",
            g,
            &["f", "phi"],
            &[col(f.values()), col(rep.phi.values())],
        ));
    }
    Ok(Outcome {
        report: Value::Object(m),
        tables,
        stages: timer.stages,
        unconverged: (!rep.converged).then(|| format!("residual {:e} above tolerance", rep.residual_linf)),
    })
}

fn envelope(cfg: &ExperimentConfig, g: &Geometry64) -> ddbar_lab::Result<Outcome> {
    let mut timer = Timer::new();
    let s = &cfg.solver.envelope;
    let theta = build_form(g, cfg.data.theta.as_ref())?;
    let omega = build_form(g, cfg.data.omega.as_ref())?;
    let f = build_field(g, cfg.data.obstacle.as_ref().expect("validated"))?;
    let oracle = if s.oracle {
        Some(envelope_oracle_lcp(&theta, &f)?)
    } else {
        None
    };
    timer.mark("oracle");
    let region: Option<Vec<bool>> = s
        .region_min
        .map(|r0| (0..g.len()).map(|i| g.node_coords(i)[0] >= r0).collect());
    let rep = beta_ladder(
        &theta,
        &f,
        &omega,
        &s.betas,
        &LadderOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            reference: oracle.as_ref(),
            region: region.as_deref(),
        },
    )?;
    timer.mark("ladder");
    let target = oracle.as_ref().unwrap_or(&rep.envelope_estimate);
    let contact = contact_ma_concentration(&theta, target, &f, &omega, s.contact_tol)?;
    let lap = laplacian_bound_check(&rep, &singularity_potential(g), 0.0);
    timer.mark("diagnostics");

    let errors: Vec<(f64, f64)> = rep.ladder.iter().filter_map(|e| e.error.map(|x| (e.beta, x))).collect();
    let full = fit_rate(&errors);
    let mut m = header(cfg, g);
    m.insert(
        "ladder".into(),
        json!(rep
            .ladder
            .iter()
            .map(|e| json!({
                "beta": e.beta,
                "iterations": e.iterations,
                "residual": jnum(e.residual),
                "margin": jnum(e.margin),
                "error": e.error.map_or(Value::Null, jnum),
            }))
            .collect::<Vec<_>>()),
    );
    m.insert("oracle".into(), json!(oracle.is_some()));
    m.insert(
        "final_error".into(),
        rep.ladder.last().and_then(|e| e.error).map_or(Value::Null, jnum),
    );
    m.insert(
        "rate_fit".into(),
        json!({"c": jnum(rep.rate_fit.c), "ratios": rep.rate_fit.ratios.iter().map(|&r| jnum(r)).collect::<Vec<_>>(), "pass": rep.rate_fit.pass}),
    );
    m.insert(
        "rate_fit_all".into(),
        json!({"c": jnum(full.c), "ratios": full.ratios.iter().map(|&r| jnum(r)).collect::<Vec<_>>(), "pass": full.pass}),
    );
    m.insert(
        "contact".into(),
        json!({
            "off_mass_fraction": jnum(contact.off_mass_fraction),
            "degenerate": contact.degenerate,
            "tolerance": jnum(contact.contact.tolerance),
            "contact_nodes": contact.contact.mask.iter().filter(|&&b| b).count(),
        }),
    );
    m.insert(
        "laplacian_bound".into(),
        json!({"constants": lap.constants.iter().map(|&c| jnum(c)).collect::<Vec<_>>(), "spread": jnum(lap.spread), "pass": lap.pass}),
    );

    let mut ladder = Table::new("ladder.csv", &["beta", "iterations", "residual", "margin", "error"]);
    for e in &rep.ladder {
        ladder.rows.push(vec![
            num(e.beta),
            e.iterations.to_string(),
            num(e.residual),
            num(e.margin),
            e.error.map_or(String::new(), num),
        ]);
    }
    let mut tables = vec![ladder];
    if cfg.output.fields {
        let (names, mut cols): (Vec<&str>, Vec<Vec<String>>) = (
            vec!["obstacle", "estimate", "contact"],
            vec![
                col(f.values()),
                col(rep.envelope_estimate.values()),
                mask_col(&contact.contact.mask),
            ],
        );
        let mut names = names;
        if let Some(o) = &oracle {
            names.insert(1, "oracle");
            cols.insert(1, col(o.values()));
        }
        tables.push(node_table("envelope.csv", g, &names, &cols));
    }
    Ok(Outcome {
        report: Value::Object(m),
        tables,
        stages: timer.stages,
        unconverged: None,
    })
}

fn volume(cfg: &ExperimentConfig, g: &Geometry64) -> ddbar_lab::Result<Outcome> {
    let mut timer = Timer::new();
    let theta = build_form(g, cfg.data.theta.as_ref())?;
    let omega = build_form(g, cfg.data.omega.as_ref())?;
    let sampler = cfg.solver.volume.sampler(cfg.seed);
    let rep = estimate_v_bounds(&theta, &omega, &sampler)?;
    timer.mark("sampling");
    let gl_theta = guan_li_check(&theta);
    let gl_omega = guan_li_check(&omega);
    let gauduchon = match gauduchon_factor(&omega).and_then(|gf| Ok((gauduchon_residual(&omega, &gf)?, gf))) {
        Ok((r, gf)) => json!({"sup_abs": jnum(gf.sup_norm()), "residual": jnum(r)}),
        Err(ddbar_lab::Error::UnsupportedGeometry { .. }) => Value::Null,
        Err(e) => return Err(e),
    };
    let v_hat = match &cfg.solver.volume.epsilon_ladder {
        Some(eps) => {
            let r = v_hat_minus(&theta, &omega, eps, &sampler)?;
            json!({
                "ladder": r.epsilon_ladder.iter().map(|&(e, v)| json!([e, jnum(v)])).collect::<Vec<_>>(),
                "extrapolated": jnum(r.extrapolated),
            })
        }
        None => Value::Null,
    };
    timer.mark("checks");
    let mean = 0.5 * (rep.v_plus_lower + rep.v_minus_upper);
    let mut m = header(cfg, g);
    m.insert("v_plus_lower".into(), jnum(rep.v_plus_lower));
    m.insert("v_minus_upper".into(), jnum(rep.v_minus_upper));
    m.insert("relative_gap".into(), jnum((rep.v_plus_lower - rep.v_minus_upper) / mean));
    m.insert("n_samples".into(), json!(rep.n_samples));
    m.insert("n_rejected".into(), json!(rep.n_rejected));
    m.insert("margin_target".into(), jnum(rep.margin_target));
    m.insert(
        "guan_li".into(),
        json!({
            "theta": {"pass": gl_theta.pass, "residual": jnum(gl_theta.residual)},
            "omega": {"pass": gl_omega.pass, "residual": jnum(gl_omega.residual)},
        }),
    );
    m.insert("gauduchon".into(), gauduchon);
    m.insert("v_hat_minus".into(), v_hat);

    let mut samples = Table::new("samples.csv", &["sample", "volume", "margin"]);
    for (i, s) in rep.samples.iter().enumerate() {
        samples.rows.push(vec![i.to_string(), num(s.volume), num(s.margin)]);
    }
    let mut opt = Table::new("optimizer.csv", &["step", "v_plus", "v_minus"]);
    for s in &rep.trace {
        opt.rows.push(vec![s.step.to_string(), num(s.v_plus), num(s.v_minus)]);
    }
    Ok(Outcome {
        report: Value::Object(m),
        tables: vec![samples, opt],
        stages: timer.stages,
        unconverged: None,
    })
}

fn fit_json(f: &AprioriFit) -> Value {
    json!({"c_phi": jnum(f.c_phi), "c_phi_dot": jnum(f.c_phi_dot), "trace_c": jnum(f.trace_c), "trace_a": jnum(f.trace_a)})
}

fn flow(cfg: &ExperimentConfig, g: &Geometry64, null_locus: bool) -> ddbar_lab::Result<Outcome> {
    let mut timer = Timer::new();
    let omega0 = build_form(g, cfg.data.omega.as_ref())?;
    let opts = &cfg.solver.flow;
    let rep = run_flow(&omega0, opts)?;
    timer.mark("flow");
    let sing = singularity_report(&rep, &cfg.solver.singularity);
    timer.mark("singularity");

    let mut m = header(cfg, g);
    m.insert("t_estimate".into(), jnum(rep.t_estimate));
    m.insert("t_predicted".into(), jnum(rep.t_predicted));
    m.insert("blowup_detected".into(), json!(rep.blowup_detected));
    m.insert("steps_accepted".into(), json!(rep.steps_accepted));
    m.insert("steps_rejected".into(), json!(rep.steps_rejected));
    m.insert("initial_sup_r".into(), jnum(rep.initial_sup_r));
    m.insert("max_sup_r".into(), jnum(rep.trace.iter().map(|r| r.sup_abs_r).fold(0.0, f64::max)));
    m.insert("max_sup_phi".into(), jnum(rep.trace.iter().map(|r| r.sup_abs_phi).fold(0.0, f64::max)));
    m.insert("curvature_threshold".into(), jnum(rep.curvature_threshold));
    m.insert(
        "tracked".into(),
        json!(rep
            .tracked
            .iter()
            .enumerate()
            .map(|(k, t)| json!({
                "name": t.name,
                "ricci_pairing": jnum(rep.ricci_pairings[k]),
                "initial_volume": jnum(rep.trace[0].volumes[k]),
                "final_volume": jnum(rep.trace.last().map_or(f64::NAN, |r| r.volumes[k])),
            }))
            .collect::<Vec<_>>()),
    );
    m.insert(
        "singularity".into(),
        json!({
            "z_nodes": sing.z_mask.iter().filter(|&&b| b).count(),
            "sigma_nodes": sing.sigma_mask.iter().filter(|&&b| b).count(),
            "agreement": jnum(sing.agreement),
            "insufficient_samples": sing.insufficient_samples,
        }),
    );

    let mut header_t = vec!["t", "dt", "sup_abs_phi", "sup_abs_r", "margin"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header_t.extend(rep.tracked.iter().map(|t| format!("volume_{}", t.name)));
    let trajectory = Table {
        name: "trajectory.csv".into(),
        header: header_t,
        rows: rep
            .trace
            .iter()
            .map(|r| {
                let mut row = vec![num(r.t), num(r.dt), num(r.sup_abs_phi), num(r.sup_abs_r), num(r.margin)];
                row.extend(r.volumes.iter().map(|&v| num(v)));
                row
            })
            .collect(),
    };
    let mut tables = vec![trajectory];
    if cfg.output.fields {
        let s = &rep.final_state;
        let mut names = vec!["phi", "phi_dot", "scalar_curvature", "abs_r_max", "z_statistic", "z_mask", "sigma_mask"];
        let mut cols = vec![
            col(s.phi.values()),
            col(s.phi_dot.values()),
            col(s.scalar_curvature.values()),
            col(&rep.extremes.abs_r_max),
            col(&sing.z_statistic),
            mask_col(&sing.z_mask),
            mask_col(&sing.sigma_mask),
        ];
        if let Some((a, b)) = s.omega_t.radial_coefficients() {
            names.extend(["a", "b"]);
            cols.push(col(a.values()));
            cols.push(col(b.values()));
        }
        tables.push(node_table("final.csv", g, &names, &cols));
    }

    if null_locus {
        let s = &cfg.solver.null_locus;
        let nl = null_locus_comparison(&rep, &sing, s.neighbourhood_width);
        m.insert(
            "null_locus".into(),
            json!({
                "verdict": nl.verdict,
                "null_estimate": nl.null_estimate,
                "overlap": jnum(nl.overlap),
                "tags": nl.tags.iter().map(|t| json!({
                    "name": t.name,
                    "initial": jnum(t.initial),
                    "last": jnum(t.last),
                    "slope": jnum(t.slope),
                    "intercept": jnum(t.intercept),
                    "class_slope": jnum(t.class_slope),
                    "collapsing": t.collapsing,
                })).collect::<Vec<_>>(),
            }),
        );
        if g.kind().is_radial() {
            let region: Vec<bool> = (0..g.len()).map(|i| g.node_coords(i)[0] >= s.cauchy_min).collect();
            m.insert("cauchy_variation".into(), jnum(coefficient_variation(&rep, &region, 0.1)));
        }
        timer.mark("null-locus");

        let mut fits = vec![("base".to_string(), apriori_bounds_check(&rep, &bound_potential(g))?)];
        if s.stability {
            let halved = run_flow(&omega0, &opts.halved_dt())?;
            fits.push(("halved_dt".into(), apriori_bounds_check(&halved, &bound_potential(g))?));
            timer.mark("halved-dt");
            let doubled = doubled_run(cfg, opts)?;
            fits.push((
                "doubled_grid".into(),
                apriori_bounds_check(&doubled, &bound_potential(&doubled.geometry))?,
            ));
            timer.mark("doubled-grid");
        }
        let only: Vec<AprioriFit> = fits.iter().map(|f| f.1.clone()).collect();
        m.insert(
            "apriori".into(),
            json!({
                "fits": fits.iter().map(|(n, f)| json!({"run": n, "fit": fit_json(f)})).collect::<Vec<_>>(),
                "spread": jnum(apriori_spread(&only)),
                "stable": apriori_stable(&only),
            }),
        );
        let mut ap = Table::new("apriori.csv", &["run", "c_phi", "c_phi_dot", "trace_c", "trace_a"]);
        for (n, f) in &fits {
            ap.rows.push(vec![n.clone(), num(f.c_phi), num(f.c_phi_dot), num(f.trace_c), num(f.trace_a)]);
        }
        tables.push(ap);

        if let Some([p, q]) = s.probe {
            let probe = surgical_contraction_probe(&rep, p, q)?;
            m.insert(
                "probe".into(),
                json!({
                    "p": p,
                    "q": q,
                    "distance_variation": jnum(probe.distance_variation),
                    "initial_curve_diameter": jnum(probe.rows.first().map_or(f64::NAN, |r| r.curve_diameter)),
                    "final_curve_diameter": jnum(probe.rows.last().map_or(f64::NAN, |r| r.curve_diameter)),
                }),
            );
            let mut t = Table::new("probe.csv", &["t", "distance", "curve_diameter", "neck_length"]);
            for r in &probe.rows {
                t.rows.push(vec![num(r.t), num(r.distance), num(r.curve_diameter), num(r.neck_length)]);
            }
            tables.push(t);
            timer.mark("probe");
        }
    }
    Ok(Outcome {
        report: Value::Object(m),
        tables,
        stages: timer.stages,
        unconverged: None,
    })
}

fn doubled_run(cfg: &ExperimentConfig, opts: &ddbar_lab::crf::FlowOptions) -> ddbar_lab::Result<FlowReport<f64>> {
    let gc = GeometryConfig {
        grid: cfg.geometry.grid.iter().map(|n| 2 * n).collect(),
        ..cfg.geometry.clone()
    };
    let g2 = ModelGeometry::<f64>::new(&gc)?;
    let omega = build_form(&g2, cfg.data.omega.as_ref())?;
    run_flow(&omega, opts)
}
