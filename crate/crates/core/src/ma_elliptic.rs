//! Elliptic complex Monge-Ampere equation (theta + dd^c phi)^n = c f omega^n.

use crate::error::{Error, Result};
use crate::geometry::{
    ddc_data, integrate_raw, ma_data, margin_raw, reference_positive, singularity_potential, trace_data,
    wedge2, FormData, ModelGeometry, ModelKind, OneOneForm, ScalarField,
};
use crate::operator::{has_bc_rows, inverse_data, solve_linear, LinearOp};
use crate::scalar::{lit, max_abs, to_f64, Real};
use crate::volume::gauduchon_factor;
use serde::Serialize;

#[derive(Clone, Copy, Debug)]
pub struct MaOptions<T> {
    /// Sup-norm tolerance on the log residual.
    pub tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl<T: Real> Default for MaOptions<T> {
    fn default() -> Self {
        MaOptions {
            tol: lit(1e-10),
            max_iter: 80,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport<T: Real> {
    pub phi: ScalarField<T>,
    pub c: T,
    pub residual_linf: T,
    pub iterations: usize,
    pub positivity_margin_final: T,
    pub converged: bool,
    /// |int (theta + dd^c phi)^n - c int f omega^n| relative to the right side.
    pub mass_residual: T,
}

#[derive(Clone, Debug)]
pub struct ContinuityPathReport<T: Real> {
    pub ladder: Vec<(T, SolveReport<T>)>,
    pub limit_phi: ScalarField<T>,
    pub singular_region_estimate: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CBounds {
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

pub(crate) fn check_density<T: Real>(f: &ScalarField<T>) -> Result<()> {
    if f.values().iter().all(|&v| v > T::zero() && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonPositiveDensity)
    }
}

pub(crate) fn check_reference<T: Real>(g: &ModelGeometry<T>, omega: &OneOneForm<T>) -> Result<()> {
    if reference_positive(g, omega.data()) {
        Ok(())
    } else {
        Err(Error::NonPositiveReference(f64::NAN))
    }
}

pub(crate) fn shift_sup_zero<T: Real>(phi: &mut [T]) {
    let s = phi.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    for v in phi.iter_mut() {
        *v = *v - s;
    }
}

struct MaProblem<'a, T: Real> {
    g: &'a ModelGeometry<T>,
    theta: &'a FormData<T>,
    omega: &'a FormData<T>,
    log_base: Vec<T>,
    mass_f: T,
    periodic: bool,
}

struct MaEval<T> {
    form: FormData<T>,
    f: Vec<T>,
    res: T,
    c: T,
    margin: T,
    mass: T,
}

impl<'a, T: Real> MaProblem<'a, T> {
    fn eval(&self, phi: &[T], c_in: T) -> Option<MaEval<T>> {
        let g = self.g;
        let form = self.theta.axpy(T::one(), &ddc_data(g, phi));
        let margin = margin_raw(g, &form, self.omega);
        if !(margin > T::zero()) {
            return None;
        }
        let dens = ma_data(g, &form);
        let mass = integrate_raw(g, &dens);
        let c = if self.periodic { mass / self.mass_f } else { c_in };
        let lc = c.ln();
        let mut f: Vec<T> = dens
            .iter()
            .zip(&self.log_base)
            .map(|(&d, &b)| d.ln() - b - lc)
            .collect();
        if has_bc_rows(g) {
            let n = f.len();
            f[0] = g.fd1[0].apply(phi);
            f[n - 1] = g.fd1[n - 1].apply(phi);
        }
        let res = max_abs(&f);
        if !res.is_finite() {
            return None;
        }
        Some(MaEval {
            form,
            f,
            res,
            c,
            margin,
            mass,
        })
    }
}

/// Newton solve of (theta + dd^c phi)^n = c f omega^n with sup phi = 0.
pub fn solve_ma<T: Real>(
    theta: &OneOneForm<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    tol: T,
) -> Result<SolveReport<T>> {
    solve_ma_with(
        theta,
        f,
        omega_ref,
        &MaOptions {
            tol,
            ..MaOptions::default()
        },
        None,
    )
}

pub fn solve_ma_with<T: Real>(
    theta: &OneOneForm<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    opts: &MaOptions<T>,
    init: Option<&ScalarField<T>>,
) -> Result<SolveReport<T>> {
    let g = theta.geometry().as_ref();
    if !g.same_as(f.geometry()) || !g.same_as(omega_ref.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    if !(opts.tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    check_reference(g, omega_ref)?;
    let m0 = margin_raw(g, theta.data(), omega_ref.data());
    if !(m0 > T::zero()) {
        return Err(Error::NonPositiveTheta(to_f64(m0)));
    }
    check_density(f)?;
    let ma_ref = ma_data(g, omega_ref.data());
    let weighted: Vec<T> = f.values().iter().zip(&ma_ref).map(|(&a, &b)| a * b).collect();
    let problem = MaProblem {
        g,
        theta: theta.data(),
        omega: omega_ref.data(),
        log_base: weighted.iter().map(|v| v.ln()).collect(),
        mass_f: integrate_raw(g, &weighted),
        periodic: g.kind() != ModelKind::BlowupCalabi,
    };
    let mut phi: Vec<T> = match init {
        Some(p) => {
            if !g.same_as(p.geometry()) {
                return Err(Error::GeometryMismatch);
            }
            p.values().to_vec()
        }
        None => vec![T::zero(); g.len()],
    };
    shift_sup_zero(&mut phi);
    let start_mass = integrate_raw(g, &ma_data(g, theta.data()));
    let c0 = start_mass / problem.mass_f;
    let mut cur = match problem.eval(&phi, c0) {
        Some(e) => e,
        None => {
            phi = vec![T::zero(); g.len()];
            problem.eval(&phi, c0).ok_or(Error::PositivityLoss)?
        }
    };
    let n = g.len();
    let mut iterations = 0;
    while cur.res > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations {
                iterations,
                residual: to_f64(cur.res),
            });
        }
        iterations += 1;
        let op = LinearOp {
            g,
            c: inverse_data(g, &cur.form),
            kappa: vec![T::zero(); n],
            bordered: true,
        };
        let mut rhs: Vec<T> = cur.f.iter().map(|&v| -v).collect();
        rhs.push(T::zero());
        let sol = solve_linear(&op, &rhs, lit(1e-12))?;
        let (delta, mu) = (&sol[..n], sol[n]);
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<T> = phi.iter().zip(delta).map(|(&p, &d)| p + lambda * d).collect();
            let c_trial = cur.c * (-lambda * mu).exp();
            if let Some(e) = problem.eval(&trial, c_trial) {
                if e.res < cur.res {
                    accepted = Some((trial, e));
                    break;
                }
            }
            lambda = lambda * lit(0.5);
        }
        let (mut trial, e) = accepted.ok_or(Error::LineSearchStall { iteration: iterations })?;
        shift_sup_zero(&mut trial);
        phi = trial;
        cur = e;
    }
    let mass_residual = ((cur.mass - cur.c * problem.mass_f) / (cur.c * problem.mass_f)).abs();
    Ok(SolveReport {
        phi: ScalarField::from_raw(theta.geometry(), phi),
        c: cur.c,
        residual_linf: cur.res,
        iterations,
        positivity_margin_final: cur.margin,
        converged: true,
        mass_residual,
    })
}

/// Solves along theta_t = theta + t omega for a strictly decreasing ladder of t,
/// warm-starting each solve from the previous one.
pub fn continuity_path<T: Real>(
    theta: &OneOneForm<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    t_ladder: &[T],
    opts: &MaOptions<T>,
) -> Result<ContinuityPathReport<T>> {
    if t_ladder.is_empty() || t_ladder.windows(2).any(|w| !(w[1] < w[0])) || t_ladder.iter().any(|&t| t < T::zero()) {
        return Err(Error::NonMonotoneLadder);
    }
    let g = theta.geometry();
    let mut ladder = Vec::with_capacity(t_ladder.len());
    let mut warm: Option<ScalarField<T>> = None;
    for &t in t_ladder {
        let theta_t = theta.add_scaled(t, omega_ref)?;
        let rep = solve_ma_with(&theta_t, f, omega_ref, opts, warm.as_ref())?;
        warm = Some(rep.phi.clone());
        ladder.push((t, rep));
    }
    let (t_last, last) = ladder.last().expect("non-empty ladder");
    let theta_t = theta.add_scaled(*t_last, omega_ref)?;
    let form = theta_t.data().axpy(T::one(), &ddc_data(g, last.phi.values()));
    let tr = trace_data(g, &form, omega_ref.data());
    let rho = singularity_potential(g);
    let regular = tr
        .iter()
        .zip(rho.values())
        .filter(|(_, &r)| r >= -T::one())
        .fold(T::zero(), |m, (&v, _)| m.max(v));
    let singular_region_estimate = tr.iter().map(|&v| v > lit::<T>(2.0) * regular).collect();
    Ok(ContinuityPathReport {
        limit_phi: last.phi.clone(),
        ladder,
        singular_region_estimate,
    })
}

/// Checks c against the bounds that follow from the arithmetic-geometric mean
/// inequality integrated against the Gauduchon factor (upper), and from the minimum
/// principle at the minimum of phi (lower).
pub fn c_bounds_check<T: Real>(
    report: &SolveReport<T>,
    theta: &OneOneForm<T>,
    omega_ref: &OneOneForm<T>,
    f: &ScalarField<T>,
) -> Result<CBounds> {
    let g = theta.geometry();
    if !g.same_as(omega_ref.geometry()) || !g.same_as(f.geometry()) || !g.same_as(report.phi.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    check_reference(g, omega_ref)?;
    let gauduchon = gauduchon_factor(omega_ref)?;
    let eg = ScalarField::from_raw(g, gauduchon.values().iter().map(|v| v.exp()).collect());
    let weighted = omega_ref.conformal(&gauduchon)?;
    let n = g.dim();
    let mixed = if n == 1 {
        match theta.data() {
            FormData::Matrix(m) => m.iter().zip(eg.values()).map(|(h, &e)| h.a11 * e).collect(),
            FormData::Radial { .. } => unreachable!(),
        }
    } else {
        wedge2(theta.data(), weighted.data())
    };
    let ma_ref = ma_data(g, omega_ref.data());
    let inv_n = T::one() / lit(n as f64);
    let denom: Vec<T> = (0..g.len())
        .map(|i| f.values()[i].powf(inv_n) * eg.values()[i] * ma_ref[i])
        .collect();
    let upper = (integrate_raw(g, &mixed) / integrate_raw(g, &denom)).powi(n as i32);
    let margin = margin_raw(g, theta.data(), omega_ref.data());
    let lower = if margin > T::zero() {
        let ma_theta = ma_data(g, theta.data());
        (0..g.len())
            .map(|i| ma_theta[i] / (f.values()[i] * ma_ref[i]))
            .fold(T::infinity(), |m, v| m.min(v))
    } else {
        T::zero()
    };
    let (lower, upper, c) = (to_f64(lower), to_f64(upper), to_f64(report.c));
    let slack = 1e-8;
    Ok(CBounds {
        lower,
        upper,
        pass: c >= lower * (1.0 - slack) && c <= upper * (1.0 + slack),
    })
}
