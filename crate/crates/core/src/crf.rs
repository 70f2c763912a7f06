//! Chern-Ricci flow through the scalar equation d phi / dt = log((theta_t + dd^c phi)^n / omega_0^n),
//! theta_t = omega_0 - t Ric(omega_0), with maximal-time prediction and singularity diagnostics.

use crate::error::{Error, Result};
use crate::geometry::{
    ddc_data, ma_data, margin_raw, reference_positive, restricted_volume_raw, ricci_data, singularity_potential,
    trace_data, FormData, Geometry, ModelGeometry, ModelKind, OneOneForm, ScalarField, SubvarietyKind, SubvarietyTag,
};
use crate::operator::{has_bc_rows, inverse_data, solve_linear, LinearOp};
use crate::scalar::{lit, max_abs, to_f64, Real};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// omega_0 - t Ric(omega_0).
pub fn theta_t<T: Real>(omega0: &OneOneForm<T>, t: T) -> Result<OneOneForm<T>> {
    if !(t >= T::zero()) {
        return Err(Error::InvalidArgument("t must be non-negative".into()));
    }
    let g = omega0.geometry();
    if !reference_positive(g, omega0.data()) {
        return Err(Error::NonPositiveForm(f64::NAN));
    }
    let ric = ricci_data(g, omega0.data());
    Ok(OneOneForm::from_raw(g, omega0.data().axpy(-t, &ric)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowOptions {
    /// Integration stops here if no singularity is met first.
    pub t_end: f64,
    pub dt0: f64,
    /// Steps below this size mean the flow has reached its maximal time.
    pub dt_min: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub margin_floor: f64,
    /// Step-doubling tolerance on the potential, relative to max(1, sup |phi|).
    pub step_tol: f64,
    pub sample_interval: f64,
    /// Keep full node fields at sample times (needed by the mask and probe diagnostics).
    pub record_samples: bool,
    /// Number of final accepted states also kept as samples.
    pub tail_samples: usize,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            t_end: 1.0,
            dt0: 1e-3,
            dt_min: 1e-7,
            dt_max: 0.05,
            newton_tol: 1e-10,
            margin_floor: 1e-6,
            step_tol: 1e-9,
            sample_interval: 0.01,
            record_samples: true,
            tail_samples: 8,
            max_steps: 200_000,
        }
    }
}

impl FlowOptions {
    /// Same run with all step sizes and the local tolerance scaled for a halved dt.
    pub fn halved_dt(&self) -> Self {
        FlowOptions {
            dt0: self.dt0 * 0.5,
            dt_max: self.dt_max * 0.5,
            step_tol: self.step_tol / 8.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowState<T: Real> {
    pub t: T,
    pub phi: ScalarField<T>,
    pub phi_dot: ScalarField<T>,
    pub omega_t: OneOneForm<T>,
    pub scalar_curvature: ScalarField<T>,
    /// positivity_margin(omega_t, omega_0)
    pub margin: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub dt: f64,
    pub sup_abs_phi: f64,
    pub sup_abs_r: f64,
    pub margin: f64,
    /// Restricted volumes in the order of `FlowReport::tracked`.
    pub volumes: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FlowSample<T> {
    pub t: T,
    pub phi: Vec<T>,
    pub phi_dot: Vec<T>,
    pub scalar_curvature: Vec<T>,
    /// tr_{omega_0} omega(t)
    pub trace0: Vec<T>,
    /// (a, b) on the radial models.
    pub coefficients: Option<(Vec<T>, Vec<T>)>,
}

/// Node-wise extremes over every accepted step.
#[derive(Clone, Debug)]
pub struct NodeExtremes<T> {
    pub phi_min: Vec<T>,
    pub phi_max: Vec<T>,
    pub phi_dot_min: Vec<T>,
    pub phi_dot_max: Vec<T>,
    pub trace_max: Vec<T>,
    pub abs_r_max: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct FlowReport<T: Real> {
    pub geometry: Geometry<T>,
    pub tracked: Vec<SubvarietyTag>,
    pub trace: Vec<TraceRow>,
    pub samples: Vec<FlowSample<T>>,
    pub extremes: NodeExtremes<T>,
    pub final_state: FlowState<T>,
    pub t_estimate: T,
    pub t_predicted: T,
    /// The flow stopped at a step failure before t_end.
    pub blowup_detected: bool,
    /// Nodes where |R| crossed `curvature_threshold`.
    pub singular_mask: Vec<bool>,
    pub curvature_threshold: T,
    pub initial_sup_r: T,
    /// Pairing of Ric(omega_0) with each tracked subvariety.
    pub ricci_pairings: Vec<f64>,
    pub limit_potential: ScalarField<T>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

struct FlowCore<'a, T: Real> {
    geom: &'a Geometry<T>,
    g: &'a ModelGeometry<T>,
    omega0: &'a FormData<T>,
    ricci0: FormData<T>,
    log_ma0: Vec<T>,
}

struct FlowEval<T> {
    form: FormData<T>,
    gv: Vec<T>,
    margin: T,
}

struct TrapResult<T> {
    phi: Vec<T>,
    eval: FlowEval<T>,
}

impl<'a, T: Real> FlowCore<'a, T> {
    fn new(omega0: &'a OneOneForm<T>) -> Result<Self> {
        let geom = omega0.geometry();
        let g = geom.as_ref();
        if !reference_positive(g, omega0.data()) {
            return Err(Error::NonPositiveForm(f64::NAN));
        }
        Ok(FlowCore {
            geom,
            g,
            omega0: omega0.data(),
            ricci0: ricci_data(g, omega0.data()),
            log_ma0: ma_data(g, omega0.data()).into_iter().map(|v| v.ln()).collect(),
        })
    }

    fn theta(&self, t: T) -> FormData<T> {
        self.omega0.axpy(-t, &self.ricci0)
    }

    fn eval(&self, t: T, phi: &[T]) -> Option<FlowEval<T>> {
        let form = self.theta(t).axpy(T::one(), &ddc_data(self.g, phi));
        let margin = margin_raw(self.g, &form, self.omega0);
        if !(margin > T::zero()) {
            return None;
        }
        let gv: Vec<T> = ma_data(self.g, &form)
            .iter()
            .zip(&self.log_ma0)
            .map(|(&d, &l)| d.ln() - l)
            .collect();
        if !gv.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(FlowEval { form, gv, margin })
    }

    fn residual(&self, phi_n: &[T], g_n: &[T], dt: T, p: &[T], e: &FlowEval<T>) -> Vec<T> {
        let half = dt * lit(0.5);
        let mut f: Vec<T> = (0..p.len())
            .map(|i| p[i] - phi_n[i] - half * (g_n[i] + e.gv[i]))
            .collect();
        if has_bc_rows(self.g) {
            let n = p.len();
            f[0] = self.g.fd1[0].apply(p);
            f[n - 1] = self.g.fd1[n - 1].apply(p);
        }
        f
    }

    /// One implicit trapezoidal step; None when Newton fails.
    fn trapezoid(&self, t: T, phi_n: &[T], g_n: &[T], dt: T, tol: T) -> Option<TrapResult<T>> {
        let n = phi_n.len();
        let t1 = t + dt;
        let predictor: Vec<T> = phi_n.iter().zip(g_n).map(|(&p, &v)| p + dt * v).collect();
        let (mut p, mut e) = match self.eval(t1, &predictor) {
            Some(e) => (predictor, e),
            None => (phi_n.to_vec(), self.eval(t1, phi_n)?),
        };
        let mut f = self.residual(phi_n, g_n, dt, &p, &e);
        let mut res = max_abs(&f);
        for _ in 0..30 {
            if res <= tol {
                return Some(TrapResult { phi: p, eval: e });
            }
            let op = LinearOp {
                g: self.g,
                c: inverse_data(self.g, &e.form).scale(-dt * lit(0.5)),
                kappa: vec![T::one(); n],
                bordered: false,
            };
            let rhs: Vec<T> = f.iter().map(|&v| -v).collect();
            let delta = solve_linear(&op, &rhs, lit(1e-13)).ok()?;
            let mut lambda = T::one();
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<T> = p.iter().zip(&delta).map(|(&x, &d)| x + lambda * d).collect();
                if let Some(te) = self.eval(t1, &trial) {
                    let tf = self.residual(phi_n, g_n, dt, &trial, &te);
                    let tr = max_abs(&tf);
                    if tr < res {
                        p = trial;
                        e = te;
                        f = tf;
                        res = tr;
                        accepted = true;
                        break;
                    }
                }
                lambda = lambda * lit(0.5);
            }
            if !accepted {
                return None;
            }
        }
        (res <= tol).then_some(TrapResult { phi: p, eval: e })
    }

    fn state(&self, t: T, phi: Vec<T>, e: FlowEval<T>) -> FlowState<T> {
        let g = self.g;
        let ric = ricci_data(g, &e.form);
        let r = trace_data(g, &ric, &e.form);
        let geom = self.geom;
        FlowState {
            t,
            phi: ScalarField::from_raw(geom, phi),
            phi_dot: ScalarField::from_raw(geom, e.gv),
            omega_t: OneOneForm::from_raw(geom, e.form),
            scalar_curvature: ScalarField::from_raw(geom, r),
            margin: e.margin,
        }
    }
}


/// Flow started at omega_0 with phi(0) = 0.
pub fn initial_state<T: Real>(omega0: &OneOneForm<T>) -> Result<FlowState<T>> {
    let core = FlowCore::new(omega0)?;
    let phi = vec![T::zero(); core.g.len()];
    let e = core.eval(T::zero(), &phi).ok_or(Error::PositivityLoss)?;
    Ok(core.state(T::zero(), phi, e))
}

/// One trapezoidal step of size dt, halving on Newton stalls or when the margin
/// falls below the floor.
pub fn flow_step<T: Real>(
    omega0: &OneOneForm<T>,
    state: &FlowState<T>,
    dt: T,
    opts: &FlowOptions,
) -> Result<FlowState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if !omega0.geometry().same_as(state.phi.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    let core = FlowCore::new(omega0)?;
    let mut dt = dt;
    loop {
        if dt < lit(opts.dt_min) {
            return Err(Error::StepFailure {
                t: to_f64(state.t),
                dt: to_f64(dt),
            });
        }
        if let Some(r) = core.trapezoid(state.t, state.phi.values(), state.phi_dot.values(), dt, lit(opts.newton_tol)) {
            if r.eval.margin >= lit(opts.margin_floor) {
                return Ok(core.state(state.t + dt, r.phi, r.eval));
            }
        }
        dt = dt * lit(0.5);
    }
}

fn row_for<T: Real>(g: &ModelGeometry<T>, tracked: &[SubvarietyTag], s: &FlowState<T>, dt: T) -> TraceRow {
    TraceRow {
        t: to_f64(s.t),
        dt: to_f64(dt),
        sup_abs_phi: to_f64(s.phi.sup_norm()),
        sup_abs_r: to_f64(s.scalar_curvature.sup_norm()),
        margin: to_f64(s.margin),
        volumes: tracked
            .iter()
            .map(|tag| to_f64(restricted_volume_raw(g, s.omega_t.data(), tag.kind)))
            .collect(),
    }
}

fn sample_of<T: Real>(g: &ModelGeometry<T>, omega0: &FormData<T>, s: &FlowState<T>) -> FlowSample<T> {
    let coefficients = match s.omega_t.data() {
        FormData::Radial { a, b } => Some((a.clone(), b.clone())),
        FormData::Matrix(_) => None,
    };
    FlowSample {
        t: s.t,
        phi: s.phi.values().to_vec(),
        phi_dot: s.phi_dot.values().to_vec(),
        scalar_curvature: s.scalar_curvature.values().to_vec(),
        trace0: trace_data(g, s.omega_t.data(), omega0),
        coefficients,
    }
}

impl<T: Real> NodeExtremes<T> {
    fn new(n: usize) -> Self {
        NodeExtremes {
            phi_min: vec![T::infinity(); n],
            phi_max: vec![T::neg_infinity(); n],
            phi_dot_min: vec![T::infinity(); n],
            phi_dot_max: vec![T::neg_infinity(); n],
            trace_max: vec![T::neg_infinity(); n],
            abs_r_max: vec![T::zero(); n],
        }
    }

    fn update(&mut self, g: &ModelGeometry<T>, omega0: &FormData<T>, s: &FlowState<T>) {
        let tr = trace_data(g, s.omega_t.data(), omega0);
        for i in 0..tr.len() {
            let p = s.phi.values()[i];
            let d = s.phi_dot.values()[i];
            self.phi_min[i] = self.phi_min[i].min(p);
            self.phi_max[i] = self.phi_max[i].max(p);
            self.phi_dot_min[i] = self.phi_dot_min[i].min(d);
            self.phi_dot_max[i] = self.phi_dot_max[i].max(d);
            self.trace_max[i] = self.trace_max[i].max(tr[i]);
            self.abs_r_max[i] = self.abs_r_max[i].max(s.scalar_curvature.values()[i].abs());
        }
    }
}

/// Integrates the flow with step-doubling error control until t_end or until the
/// step size collapses below dt_min (taken as the maximal time).
pub fn run_flow<T: Real>(omega0: &OneOneForm<T>, opts: &FlowOptions) -> Result<FlowReport<T>> {
    if !(opts.t_end > 0.0 && opts.dt0 > 0.0 && opts.dt_min > 0.0 && opts.dt_max >= opts.dt_min) {
        return Err(Error::InvalidArgument("flow step controls must be positive".into()));
    }
    let core = FlowCore::new(omega0)?;
    let g = core.g;
    let geom = core.geom;
    let tracked = g.tracked().to_vec();
    let t_end: T = lit(opts.t_end);
    let t_predicted = predicted_time(omega0, (T::zero(), t_end))?;
    let ricci_pairings = tracked
        .iter()
        .map(|tag| to_f64(restricted_volume_raw(g, &core.ricci0, tag.kind)))
        .collect();

    let mut state = initial_state(omega0)?;
    let initial_sup_r = state.scalar_curvature.sup_norm();
    let curvature_threshold = lit::<T>(100.0) * initial_sup_r.max(T::one());
    let mut extremes = NodeExtremes::new(g.len());
    extremes.update(g, core.omega0, &state);
    let mut trace = vec![row_for(g, &tracked, &state, T::zero())];
    let mut samples = Vec::new();
    if opts.record_samples {
        samples.push(sample_of(g, core.omega0, &state));
    }
    let sample_dt: T = lit(opts.sample_interval);
    let mut next_sample = sample_dt;
    let mut dt: T = lit(opts.dt0);
    let (dt_min, dt_max) = (lit::<T>(opts.dt_min), lit::<T>(opts.dt_max));
    let tol: T = lit(opts.newton_tol);
    let floor: T = lit(opts.margin_floor);
    let mut blowup_detected = false;
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut tail: VecDeque<FlowSample<T>> = VecDeque::new();
    while state.t < t_end {
        if accepted >= opts.max_steps {
            return Err(Error::MaxIterations {
                iterations: accepted,
                residual: f64::NAN,
            });
        }
        let h = dt.min(t_end - state.t);
        let phi = state.phi.values();
        let gn = state.phi_dot.values();
        let attempt = (|| {
            let big = core.trapezoid(state.t, phi, gn, h, tol)?;
            let half = h * lit(0.5);
            let mid = core.trapezoid(state.t, phi, gn, half, tol)?;
            if mid.eval.margin < floor {
                return None;
            }
            let fine = core.trapezoid(state.t + half, &mid.phi, &mid.eval.gv, half, tol)?;
            let err = big
                .phi
                .iter()
                .zip(&fine.phi)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            Some((fine, err))
        })();
        let scale = T::one().max(state.phi.sup_norm());
        let step_tol = lit::<T>(opts.step_tol) * scale;
        match attempt {
            Some((fine, err)) if fine.eval.margin >= floor && err <= step_tol => {
                state = core.state(state.t + h, fine.phi, fine.eval);
                accepted += 1;
                extremes.update(g, core.omega0, &state);
                trace.push(row_for(g, &tracked, &state, h));
                if opts.record_samples && opts.tail_samples > 0 {
                    if tail.len() == opts.tail_samples {
                        tail.pop_front();
                    }
                    tail.push_back(sample_of(g, core.omega0, &state));
                }
                if opts.record_samples && state.t >= next_sample - h * lit(1e-9) {
                    samples.push(sample_of(g, core.omega0, &state));
                    while next_sample <= state.t + h * lit(1e-9) {
                        next_sample = next_sample + sample_dt;
                    }
                }
                let grow = if err > T::zero() {
                    (lit::<T>(0.9) * (step_tol / err).powf(lit(1.0 / 3.0))).min(lit(2.0))
                } else {
                    lit(2.0)
                };
                dt = (h * grow.max(lit(0.5))).min(dt_max);
            }
            Some((_, err)) if err > step_tol => {
                rejected += 1;
                dt = h * (lit::<T>(0.9) * (step_tol / err).powf(lit(1.0 / 3.0))).clamp(lit(0.1), lit(0.5));
            }
            _ => {
                rejected += 1;
                dt = h * lit(0.5);
            }
        }
        if dt < dt_min {
            blowup_detected = true;
            break;
        }
    }
    if let Some(first) = tail.front().map(|s| s.t) {
        // the run ends with exactly the last accepted states
        samples.retain(|s| s.t < first);
        samples.extend(tail);
    }
    let singular_mask = extremes.abs_r_max.iter().map(|&r| r > curvature_threshold).collect();
    Ok(FlowReport {
        geometry: geom.clone(),
        tracked,
        trace,
        samples,
        extremes,
        t_estimate: state.t,
        t_predicted,
        blowup_detected,
        singular_mask,
        curvature_threshold,
        initial_sup_r,
        ricci_pairings,
        limit_potential: state.phi.clone(),
        final_state: state,
        steps_accepted: accepted,
        steps_rejected: rejected,
    })
}

/// Largest s such that theta + dd^c psi >= s omega_ref for some psi, over second-order
/// difference potentials: periodic on the Hopf surface, Neumann on the blow-up model.
pub fn class_margin<T: Real>(theta: &OneOneForm<T>, omega_ref: &OneOneForm<T>) -> Result<f64> {
    let g = theta.geometry();
    let ((ta, tb), (ra, rb)) = match (theta.data(), omega_ref.data()) {
        (FormData::Radial { a, b }, FormData::Radial { a: c, b: d }) => ((a, b), (c, d)),
        _ => {
            return Err(Error::UnsupportedGeometry {
                kind: g.kind(),
                op: "class_margin",
            })
        }
    };
    let n = g.len();
    let h = to_f64(g.spacing());
    let f = |v: &[T], i: usize| to_f64(v[i]);
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let periodic = g.kind() == ModelKind::Hopf;
    let psi: Vec<_> = (0..n)
        .map(|i| {
            if periodic && i == 0 {
                lp.add_var(0.0, (0.0, 0.0))
            } else {
                lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))
            }
        })
        .collect();
    let s = lp.add_var(1.0, (-1e6, 1e6));
    for i in 0..n {
        // first-derivative row: a + psi' - s a_ref >= 0
        let mut first: Vec<(minilp::Variable, f64)> = Vec::new();
        let mut second: Vec<(minilp::Variable, f64)> = Vec::new();
        if periodic {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            first.extend([(psi[r], 0.5 / h), (psi[l], -0.5 / h)]);
            second.extend([(psi[r], 1.0 / (h * h)), (psi[i], -2.0 / (h * h)), (psi[l], 1.0 / (h * h))]);
        } else if i == 0 || i == n - 1 {
            let (d, k) = if i == 0 { (1isize, 0usize) } else { (-1, n - 1) };
            let at = |m: isize| (k as isize + d * m) as usize;
            let w2 = [2.0, -5.0, 4.0, -1.0];
            for (m, w) in w2.iter().enumerate() {
                second.push((psi[at(m as isize)], w / (h * h)));
            }
            // Neumann: psi'(end) = 0
            let w1 = [-1.5, 2.0, -0.5];
            let row: Vec<_> = w1.iter().enumerate().map(|(m, w)| (psi[at(m as isize)], d as f64 * w / h)).collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 0.0);
        } else {
            first.extend([(psi[i + 1], 0.5 / h), (psi[i - 1], -0.5 / h)]);
            second.extend([(psi[i + 1], 1.0 / (h * h)), (psi[i], -2.0 / (h * h)), (psi[i - 1], 1.0 / (h * h))]);
        }
        first.push((s, -f(ra, i)));
        second.push((s, -f(rb, i)));
        lp.add_constraint(first.as_slice(), ComparisonOp::Ge, -f(ta, i));
        lp.add_constraint(second.as_slice(), ComparisonOp::Ge, -f(tb, i));
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::LinearSolver(format!("class feasibility program: {e}")))?;
    Ok(sol.objective())
}

const FEASIBLE: f64 = 1e-13;

/// Class-level maximal time sup{t : theta_t + dd^c psi > 0 for some psi}, by bisection
/// on the feasibility program. Tori return the bracket end.
pub fn predicted_time<T: Real>(omega0: &OneOneForm<T>, bracket: (T, T)) -> Result<T> {
    let g = omega0.geometry();
    let (mut lo, mut hi) = bracket;
    if !(lo >= T::zero() && hi > lo) {
        return Err(Error::BracketFailure {
            lo: to_f64(lo),
            hi: to_f64(hi),
        });
    }
    if g.kind().is_torus() {
        return Ok(hi);
    }
    let ric = ricci_data(g, omega0.data());
    let margin_at = |t: T| {
        let th = OneOneForm::from_raw(g, omega0.data().axpy(-t, &ric));
        class_margin(&th, omega0)
    };
    let lo_margin = margin_at(lo)?;
    if lo_margin <= FEASIBLE {
        return Err(Error::BracketFailure {
            lo: to_f64(lo),
            hi: to_f64(hi),
        });
    }
    if margin_at(hi)? > FEASIBLE {
        return Ok(hi);
    }
    while to_f64(hi - lo) > 1e-10 {
        let mid = (lo + hi) * lit(0.5);
        if margin_at(mid)? > FEASIBLE {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // the optimal margin is piecewise linear in t; extrapolate the last feasible piece
    let back = lo - (hi - lo) * lit(1e4);
    if back > bracket.0 {
        let (m1, m0) = (margin_at(lo)?, margin_at(back)?);
        if m0 > m1 {
            let root = to_f64(lo) + m1 * to_f64(lo - back) / (m0 - m1);
            if root >= to_f64(lo) && root <= to_f64(hi) + 1e-12 {
                return Ok(lit(root));
            }
        }
    }
    Ok(hi)
}

/// (T_estimate, T_predicted) from a flow run on the bracket and the class program.
pub fn maximal_time<T: Real>(omega0: &OneOneForm<T>, bracket: (T, T), opts: &FlowOptions) -> Result<(T, T)> {
    let opts = FlowOptions {
        t_end: to_f64(bracket.1),
        record_samples: false,
        ..opts.clone()
    };
    let predicted = predicted_time(omega0, bracket)?;
    let rep = run_flow(omega0, &opts)?;
    Ok((rep.t_estimate, predicted))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingularityThresholds {
    /// Number of trailing samples in the smooth-convergence test.
    pub window: usize,
    /// Range of log-coefficients (and their first two rho-derivatives) over the window
    /// above which a node is declared non-convergent.
    pub z_threshold: f64,
    /// A node also fails when a metric coefficient drops below this fraction of its
    /// initial value (the limit is not a metric there).
    pub degenerate_ratio: f64,
    /// |R| threshold; defaults to the run's 100 max(1, sup |R(0)|).
    pub curvature_threshold: Option<f64>,
}

impl Default for SingularityThresholds {
    fn default() -> Self {
        SingularityThresholds {
            window: 8,
            z_threshold: 100.0,
            degenerate_ratio: 1e-3,
            curvature_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularityReport {
    pub z_mask: Vec<bool>,
    pub sigma_mask: Vec<bool>,
    pub z_statistic: Vec<f64>,
    /// Jaccard index of the two masks (1 when both are empty).
    pub agreement: f64,
    pub sup_r_series: Vec<(f64, f64)>,
    /// Fewer samples than the window; the Z-mask is left empty.
    pub insufficient_samples: bool,
}

pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-node smooth-convergence statistic over the trailing window of samples.
pub fn cauchy_statistic<T: Real>(report: &FlowReport<T>, window: usize) -> Option<Vec<f64>> {
    let g = &report.geometry;
    let n = g.len();
    if report.samples.len() < window.max(2) {
        return None;
    }
    let tail = &report.samples[report.samples.len() - window.max(2)..];
    let mut lo = vec![vec![f64::INFINITY; n]; 6];
    let mut hi = vec![vec![f64::NEG_INFINITY; n]; 6];
    for s in tail {
        let fields: Vec<Vec<f64>> = match &s.coefficients {
            Some((a, b)) => {
                let la: Vec<T> = a.iter().map(|v| v.ln()).collect();
                let lb: Vec<T> = b.iter().map(|v| v.ln()).collect();
                let (a1, a2) = g.derivs_1d(&la);
                let (b1, b2) = g.derivs_1d(&lb);
                [la, lb, a1, a2, b1, b2]
                    .iter()
                    .map(|f| f.iter().map(|&v| to_f64(v)).collect())
                    .collect()
            }
            None => vec![s.trace0.iter().map(|&v| to_f64(v.ln())).collect()],
        };
        for (k, f) in fields.iter().enumerate() {
            for i in 0..n {
                lo[k][i] = lo[k][i].min(f[i]);
                hi[k][i] = hi[k][i].max(f[i]);
            }
        }
    }
    Some(
        (0..n)
            .map(|i| {
                (0..6)
                    .filter(|&k| hi[k][i].is_finite())
                    .fold(0.0, |m: f64, k| m.max(hi[k][i] - lo[k][i]))
            })
            .collect(),
    )
}

fn degenerate_nodes<T: Real>(report: &FlowReport<T>, ratio: f64) -> Vec<bool> {
    let n = report.geometry.len();
    let (Some(first), Some(last)) = (report.samples.first(), report.samples.last()) else {
        return vec![false; n];
    };
    match (&first.coefficients, &last.coefficients) {
        (Some((a0, b0)), Some((a1, b1))) => (0..n)
            .map(|i| to_f64(a1[i] / a0[i]) <= ratio || to_f64(b1[i] / b0[i]) <= ratio)
            .collect(),
        _ => vec![false; n],
    }
}

pub fn singularity_report<T: Real>(report: &FlowReport<T>, th: &SingularityThresholds) -> SingularityReport {
    let n = report.geometry.len();
    let stat = cauchy_statistic(report, th.window);
    let insufficient_samples = stat.is_none();
    let z_statistic = stat.unwrap_or_else(|| vec![0.0; n]);
    let degenerate = degenerate_nodes(report, th.degenerate_ratio);
    let z_mask: Vec<bool> = z_statistic
        .iter()
        .zip(&degenerate)
        .map(|(&s, &d)| !insufficient_samples && (s > th.z_threshold || d))
        .collect();
    let rt = th
        .curvature_threshold
        .unwrap_or_else(|| to_f64(report.curvature_threshold));
    let sigma_mask: Vec<bool> = report.extremes.abs_r_max.iter().map(|&r| to_f64(r) > rt).collect();
    SingularityReport {
        agreement: jaccard(&z_mask, &sigma_mask),
        sup_r_series: report.trace.iter().map(|r| (r.t, r.sup_abs_r)).collect(),
        z_mask,
        sigma_mask,
        z_statistic,
        insufficient_samples,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullVerdict {
    /// No tracked subvariety collapses and no singularity was met.
    Immortal,
    /// The collapsing subvarieties match the singular region.
    Consistent,
    Inconsistent,
    /// The whole manifold collapses: outside the volume hypothesis of the null-locus theorem.
    Collapsing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagTrend {
    pub name: String,
    pub initial: f64,
    pub last: f64,
    /// Linear fit over the trailing tenth of the run.
    pub slope: f64,
    pub intercept: f64,
    /// -pairing with Ric(omega_0): the exact class-level slope.
    pub class_slope: f64,
    pub collapsing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NullLocusReport {
    pub tags: Vec<TagTrend>,
    pub null_estimate: Vec<String>,
    pub verdict: NullVerdict,
    /// Jaccard index of the Z-mask with the neighbourhood of the collapsing curves.
    pub overlap: f64,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Nodes with rho within `width` of the exceptional end; by default the two grid
/// spacings reached by the difference stencils at the end node.
pub fn exceptional_neighbourhood<T: Real>(g: &ModelGeometry<T>, width: Option<f64>) -> Vec<bool> {
    let h = to_f64(g.spacing());
    let cut = -to_f64(g.radius()) + width.unwrap_or(2.0 * h) + 1e-9 * h;
    g.coords().iter().map(|&x| to_f64(x) <= cut).collect()
}

/// Tests each tracked subvariety for collapse along the run and compares the estimated
/// null locus with the Z-mask.
pub fn null_locus_comparison<T: Real>(
    report: &FlowReport<T>,
    sing: &SingularityReport,
    neighbourhood_width: Option<f64>,
) -> NullLocusReport {
    let rows = &report.trace;
    let t_end = rows.last().map_or(0.0, |r| r.t);
    let tail: Vec<&TraceRow> = rows.iter().filter(|r| r.t >= 0.9 * t_end).collect();
    let mut tags = Vec::new();
    for (k, tag) in report.tracked.iter().enumerate() {
        let xs: Vec<f64> = tail.iter().map(|r| r.t).collect();
        let ys: Vec<f64> = tail.iter().map(|r| r.volumes[k]).collect();
        let (slope, intercept) = if xs.len() >= 2 { linear_fit(&xs, &ys) } else { (0.0, 0.0) };
        let initial = rows[0].volumes[k];
        let last = rows.last().map_or(initial, |r| r.volumes[k]);
        let collapsing = report.blowup_detected && initial > 0.0 && last <= 1e-3 * initial;
        tags.push(TagTrend {
            name: tag.name.clone(),
            initial,
            last,
            slope,
            intercept,
            class_slope: -report.ricci_pairings[k],
            collapsing,
        });
    }
    let null_estimate: Vec<String> = tags.iter().filter(|t| t.collapsing).map(|t| t.name.clone()).collect();
    let whole = report
        .tracked
        .iter()
        .zip(&tags)
        .any(|(tag, t)| tag.kind == SubvarietyKind::Whole && t.collapsing);
    let curve = report
        .tracked
        .iter()
        .zip(&tags)
        .any(|(tag, t)| tag.kind == SubvarietyKind::ExceptionalCurve && t.collapsing);
    let g = &report.geometry;
    let region = if curve {
        exceptional_neighbourhood(g, neighbourhood_width)
    } else {
        vec![false; g.len()]
    };
    let overlap = jaccard(&sing.z_mask, &region);
    let verdict = if whole {
        NullVerdict::Collapsing
    } else if !report.blowup_detected && null_estimate.is_empty() {
        NullVerdict::Immortal
    } else if overlap >= 0.9 {
        NullVerdict::Consistent
    } else {
        NullVerdict::Inconsistent
    };
    NullLocusReport {
        tags,
        null_estimate,
        verdict,
        overlap,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AprioriFit {
    /// Smallest C with C >= phi >= rho_sing - C.
    pub c_phi: f64,
    /// Smallest C with C >= d phi / dt >= C rho_sing - C.
    pub c_phi_dot: f64,
    /// tr_{omega_0} omega <= c e^(-a rho_sing)
    pub trace_c: f64,
    pub trace_a: f64,
    pub sup_r_series: Vec<(f64, f64)>,
}

/// Fits the zeroth-order and trace bounds over every accepted step of the run.
pub fn apriori_bounds_check<T: Real>(report: &FlowReport<T>, rho_sing: &ScalarField<T>) -> Result<AprioriFit> {
    if !report.geometry.same_as(rho_sing.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    let ex = &report.extremes;
    let rho: Vec<f64> = rho_sing.values().iter().map(|&v| to_f64(v)).collect();
    let f = |v: &[T], i: usize| to_f64(v[i]);
    let n = rho.len();
    let mut c_phi: f64 = 0.0;
    let mut c_dot: f64 = 0.0;
    for i in 0..n {
        c_phi = c_phi.max(f(&ex.phi_max, i)).max(rho[i] - f(&ex.phi_min, i));
        c_dot = c_dot.max(f(&ex.phi_dot_max, i)).max(-f(&ex.phi_dot_min, i) / (1.0 - rho[i]));
    }
    let trace_c = (0..n)
        .filter(|&i| rho[i] >= -1.0)
        .map(|i| f(&ex.trace_max, i))
        .fold(0.0, f64::max);
    let trace_a = (0..n)
        .filter(|&i| rho[i] < -1e-12)
        .map(|i| (f(&ex.trace_max, i).ln() - trace_c.ln()) / (-rho[i]))
        .fold(0.0, f64::max);
    Ok(AprioriFit {
        c_phi,
        c_phi_dot: c_dot,
        trace_c,
        trace_a,
        sup_r_series: report.trace.iter().map(|r| (r.t, r.sup_abs_r)).collect(),
    })
}

/// Largest ratio between corresponding constants of the fits (1 when identical).
pub fn apriori_spread(fits: &[AprioriFit]) -> f64 {
    let pick = |k: usize, f: &AprioriFit| [f.c_phi, f.c_phi_dot, f.trace_c, f.trace_a][k];
    (0..4)
        .map(|k| {
            let vals: Vec<f64> = fits.iter().map(|f| pick(k, f)).collect();
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            if hi <= 1e-12 {
                1.0
            } else if lo <= 0.0 {
                f64::INFINITY
            } else {
                hi / lo
            }
        })
        .fold(1.0, f64::max)
}

/// Fits agree within a factor 2.
pub fn apriori_stable(fits: &[AprioriFit]) -> bool {
    apriori_spread(fits) <= 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub t: f64,
    pub distance: f64,
    /// Diameter of the exceptional curve, pi sqrt(a(-R) / 2).
    pub curve_diameter: f64,
    /// Radial length of {rho <= -R + 1}.
    pub neck_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Relative variation of d(p, q) over the final tenth of the run.
    pub distance_variation: f64,
}

fn radial_length(rho: &[f64], b: &[f64], from: f64, to: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..rho.len() - 1 {
        let (x0, x1) = (rho[i].max(from), rho[i + 1].min(to));
        if x1 > x0 {
            s += (x1 - x0) * 0.5 * ((b[i] / 2.0).sqrt() + (b[i + 1] / 2.0).sqrt());
        }
    }
    s
}

/// Radial distances along the recorded samples of a blow-up run.
pub fn surgical_contraction_probe<T: Real>(report: &FlowReport<T>, p: f64, q: f64) -> Result<ProbeReport> {
    let g = &report.geometry;
    if g.kind() != ModelKind::BlowupCalabi {
        return Err(Error::UnsupportedGeometry {
            kind: g.kind(),
            op: "surgical_contraction_probe",
        });
    }
    let rho: Vec<f64> = g.coords().iter().map(|&v| to_f64(v)).collect();
    let r = to_f64(g.radius());
    let (p, q) = (p.min(q), p.max(q));
    if p < -r || q > r {
        return Err(Error::InvalidArgument("probe points outside the interval".into()));
    }
    let mut rows = Vec::new();
    for s in &report.samples {
        let (a, b) = s.coefficients.as_ref().expect("radial samples");
        let b: Vec<f64> = b.iter().map(|&v| to_f64(v)).collect();
        rows.push(ProbeRow {
            t: to_f64(s.t),
            distance: radial_length(&rho, &b, p, q),
            curve_diameter: std::f64::consts::PI * (to_f64(a[0]).max(0.0) / 2.0).sqrt(),
            neck_length: radial_length(&rho, &b, -r, -r + 1.0),
        });
    }
    let t_end = rows.last().map_or(0.0, |r| r.t);
    let tail: Vec<f64> = rows.iter().filter(|r| r.t >= 0.9 * t_end).map(|r| r.distance).collect();
    let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
    let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
    let distance_variation = if tail.is_empty() { 0.0 } else { (hi - lo) / hi.abs().max(1e-300) };
    Ok(ProbeReport {
        rows,
        distance_variation,
    })
}

/// Relative variation of the metric coefficients on `region` over samples with
/// t >= (1 - fraction) * t_last.
pub fn coefficient_variation<T: Real>(report: &FlowReport<T>, region: &[bool], fraction: f64) -> f64 {
    let t_end = report.samples.last().map_or(0.0, |s| to_f64(s.t));
    let tail: Vec<&FlowSample<T>> = report
        .samples
        .iter()
        .filter(|s| to_f64(s.t) >= (1.0 - fraction) * t_end)
        .collect();
    let mut worst: f64 = 0.0;
    for i in (0..region.len()).filter(|&i| region[i]) {
        for k in 0..2 {
            let vals: Vec<f64> = tail
                .iter()
                .filter_map(|s| s.coefficients.as_ref())
                .map(|(a, b)| to_f64(if k == 0 { a[i] } else { b[i] }))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            worst = worst.max((hi - lo) / hi.abs());
        }
    }
    worst
}

/// rho_sing used by the a-priori bounds for this geometry.
pub fn bound_potential<T: Real>(g: &Geometry<T>) -> ScalarField<T> {
    singularity_potential(g)
}
