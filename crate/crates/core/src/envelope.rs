//! theta-psh envelopes through the beta-regularized Monge-Ampere family, with an
//! obstacle-problem oracle on the circle.

use crate::error::{Error, Result};
use crate::geometry::{
    ddc_data, ddc_fd2, integrate_raw, ma_data, margin_raw, trace_data, FormData, ModelGeometry, ModelKind,
    OneOneForm, ScalarField,
};
use crate::linalg::DenseLu;
use crate::ma_elliptic::check_reference;
use crate::operator::{has_bc_rows, inverse_data, solve_linear, LinearOp};
use crate::scalar::{lit, to_f64, Real};
use serde::Serialize;

/// 2^-beta, flushed to zero from beta = 50 on.
pub fn beta_shift<T: Real>(beta: T) -> T {
    if beta >= lit(50.0) {
        T::zero()
    } else {
        (-beta * T::LN_2()).exp()
    }
}

#[derive(Clone, Debug)]
pub struct BetaSolve<T: Real> {
    pub phi: ScalarField<T>,
    pub iterations: usize,
    /// max |MA - rhs| / max(MA(omega), MA, rhs)
    pub residual: T,
    pub margin: T,
}

#[derive(Clone, Debug)]
pub struct BetaEntry<T: Real> {
    pub beta: T,
    pub phi: ScalarField<T>,
    pub iterations: usize,
    pub residual: T,
    pub margin: T,
    /// tr_omega (theta + 2^-beta omega + dd^c phi)
    pub trace: ScalarField<T>,
    /// Sup distance to the envelope estimate on the measured region.
    pub error: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    /// Geometric mean of error * beta / log beta over the fitted entries.
    pub c: f64,
    /// error * beta / log beta divided by c, per fitted entry.
    pub ratios: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct BetaFamilyReport<T: Real> {
    pub ladder: Vec<BetaEntry<T>>,
    pub envelope_estimate: ScalarField<T>,
    pub rate_fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContactSet {
    pub mask: Vec<bool>,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContactReport {
    pub contact: ContactSet,
    pub off_mass_fraction: f64,
    /// Total mass was numerically zero; the fraction is reported as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaplacianBound {
    /// max_x tr * e^(B rho_sing) per ladder entry in the fitted range.
    pub constants: Vec<f64>,
    pub spread: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct LadderOptions<'a, T: Real> {
    pub tol: T,
    pub max_iter: usize,
    /// Envelope to measure against; without it the last rung is used.
    pub reference: Option<&'a ScalarField<T>>,
    /// Nodes where errors are measured; all nodes when absent.
    pub region: Option<&'a [bool]>,
}

impl<T: Real> Default for LadderOptions<'_, T> {
    fn default() -> Self {
        LadderOptions {
            tol: lit(1e-9),
            max_iter: 400,
            reference: None,
            region: None,
        }
    }
}

struct BetaEval<T> {
    form: FormData<T>,
    g: Vec<T>,
    res: T,
    margin: T,
}

struct BetaProblem<'a, T: Real> {
    g: &'a ModelGeometry<T>,
    theta: FormData<T>,
    omega: &'a FormData<T>,
    ma_omega: Vec<T>,
    f: &'a [T],
    beta: T,
}

impl<T: Real> BetaProblem<'_, T> {
    fn eval(&self, phi: &[T]) -> Option<BetaEval<T>> {
        let g = self.g;
        let form = self.theta.axpy(T::one(), &ddc_data(g, phi));
        let margin = margin_raw(g, &form, self.omega);
        if !(margin > T::zero()) {
            return None;
        }
        let dens = ma_data(g, &form);
        let n = phi.len();
        let bc = has_bc_rows(g);
        let mut res = T::zero();
        let mut gv = Vec::with_capacity(n);
        for i in 0..n {
            if bc && (i == 0 || i == n - 1) {
                let d = g.fd1[i].apply(phi);
                res = res.max(d.abs());
                gv.push(d);
                continue;
            }
            let lr = self.beta * (phi[i] - self.f[i]);
            let gi = (dens[i] / self.ma_omega[i]).ln() - lr;
            let rhs = lr.exp() * self.ma_omega[i];
            let scale = self.ma_omega[i].max(dens[i]).max(rhs);
            res = res.max((dens[i] - rhs).abs() / scale);
            gv.push(gi);
        }
        if !res.is_finite() {
            return None;
        }
        Some(BetaEval {
            form,
            g: gv,
            res,
            margin,
        })
    }
}

/// Solves (theta + 2^-beta omega + dd^c phi)^n = e^(beta (phi - f)) omega^n.
pub fn solve_beta<T: Real>(
    theta: &OneOneForm<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    beta: T,
    tol: T,
) -> Result<ScalarField<T>> {
    solve_beta_with(theta, f, omega_ref, beta, tol, 400, None).map(|s| s.phi)
}

pub fn solve_beta_with<T: Real>(
    theta: &OneOneForm<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    beta: T,
    tol: T,
    max_iter: usize,
    init: Option<&ScalarField<T>>,
) -> Result<BetaSolve<T>> {
    let g = theta.geometry().as_ref();
    if !g.same_as(f.geometry()) || !g.same_as(omega_ref.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    if !(beta >= T::one()) {
        return Err(Error::InvalidArgument("beta must be at least 1".into()));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if !f.values().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("obstacle"));
    }
    check_reference(g, omega_ref)?;
    let n = g.len();
    let problem = BetaProblem {
        g,
        theta: theta.data().axpy(beta_shift(beta), omega_ref.data()),
        omega: omega_ref.data(),
        ma_omega: ma_data(g, omega_ref.data()),
        f: f.values(),
        beta,
    };
    let mut phi = match init {
        Some(p) => {
            if !g.same_as(p.geometry()) {
                return Err(Error::GeometryMismatch);
            }
            p.values().to_vec()
        }
        None => {
            let dens = ma_data(g, &problem.theta);
            if !(margin_raw(g, &problem.theta, problem.omega) > T::zero()) {
                return Err(Error::PositivityLoss);
            }
            let k = (0..n).fold(T::zero(), |s, i| {
                s + f.values()[i] + (dens[i] / problem.ma_omega[i]).ln() / beta
            }) / lit(n as f64);
            vec![k; n]
        }
    };
    let mut cur = problem.eval(&phi).ok_or(Error::PositivityLoss)?;
    let mut iterations = 0;
    while cur.res > tol {
        if iterations >= max_iter {
            return Err(Error::MaxIterations {
                iterations,
                residual: to_f64(cur.res),
            });
        }
        iterations += 1;
        let op = LinearOp {
            g,
            c: inverse_data(g, &cur.form),
            kappa: vec![-beta; n],
            bordered: false,
        };
        let rhs: Vec<T> = cur.g.iter().map(|&v| -v).collect();
        let delta = solve_linear(&op, &rhs, lit(1e-12))?;
        let big = delta.iter().fold(T::zero(), |m, d| m.max(d.abs()));
        let mut lambda = T::one().min(lit::<T>(2.0) / (beta * big));
        let mut accepted = None;
        for _ in 0..=40 {
            let trial: Vec<T> = phi.iter().zip(&delta).map(|(&p, &d)| p + lambda * d).collect();
            if let Some(e) = problem.eval(&trial) {
                let gmax = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
                if e.res < cur.res || gmax(&e.g) < gmax(&cur.g) {
                    accepted = Some((trial, e));
                    break;
                }
            }
            lambda = lambda * lit(0.5);
        }
        let (trial, e) = accepted.ok_or(Error::LineSearchStall { iteration: iterations })?;
        phi = trial;
        cur = e;
    }
    Ok(BetaSolve {
        phi: ScalarField::from_raw(theta.geometry(), phi),
        iterations,
        residual: cur.res,
        margin: cur.margin,
    })
}

/// Largest discrete theta-psh function below f on the circle: the complementarity
/// system phi <= f, a + (phi_{i+1} - 2 phi_i + phi_{i-1}) / (2 h^2) >= 0 with equality
/// off the contact set. Projected SOR, then an active-set polish.
pub fn envelope_oracle_lcp<T: Real>(theta: &OneOneForm<T>, f: &ScalarField<T>) -> Result<ScalarField<T>> {
    let g = theta.geometry();
    if g.kind() != ModelKind::Torus1 {
        return Err(Error::UnsupportedGeometry {
            kind: g.kind(),
            op: "envelope_oracle_lcp",
        });
    }
    if !g.same_as(f.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    let a: Vec<T> = match theta.data() {
        FormData::Matrix(m) => m.iter().map(|h| h.a11).collect(),
        FormData::Radial { .. } => unreachable!("circle forms are matrices"),
    };
    let n = g.len();
    let h2 = g.spacing() * g.spacing();
    let fv = f.values();
    let mut phi = fv.to_vec();
    let w = lit::<T>(2.0) / (T::one() + (T::PI() / lit(n as f64)).sin());
    let gs = |phi: &[T], i: usize| {
        (phi[(i + 1) % n] + phi[(i + n - 1) % n]) * lit(0.5) + a[i] * h2
    };
    let tol = lit::<T>(1e-10);
    let mut converged = false;
    for _ in 0..200 * n {
        let mut change = T::zero();
        for i in 0..n {
            let next = fv[i].min(phi[i] + w * (gs(&phi, i) - phi[i]));
            change = change.max((next - phi[i]).abs());
            phi[i] = next;
        }
        if change <= tol * lit(0.1) {
            let res = (0..n).fold(T::zero(), |m, i| m.max((phi[i] - fv[i].min(gs(&phi, i))).abs()));
            if res <= tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::MaxIterations {
            iterations: 200 * n,
            residual: f64::NAN,
        });
    }
    // fix the contact set and solve the linear system exactly
    for _ in 0..20 {
        let active: Vec<bool> = (0..n)
            .map(|i| fv[i] - phi[i] <= lit::<T>(1e-9) && gs(&phi, i) >= fv[i] - lit::<T>(1e-9))
            .collect();
        let next = solve_active(n, &a, fv, h2, &active)?;
        let feasible = (0..n).all(|i| {
            next[i] <= fv[i] + lit(1e-12) && (active[i] || (next[i] - gs(&next, i)).abs() <= lit(1e-12))
        });
        let same = next
            .iter()
            .zip(&phi)
            .all(|(x, y)| (*x - *y).abs() <= lit(1e-9));
        if feasible {
            phi = next;
            if same {
                break;
            }
        } else {
            break;
        }
    }
    Ok(ScalarField::from_raw(g, phi))
}

/// phi = f on the active set, phi_i = gs_i elsewhere.
pub(crate) fn solve_active<T: Real>(n: usize, a: &[T], f: &[T], h2: T, active: &[bool]) -> Result<Vec<T>> {
    let mut m = vec![T::zero(); n * n];
    let mut rhs = vec![T::zero(); n];
    let half = lit::<T>(0.5);
    for i in 0..n {
        m[i * n + i] = T::one();
        if active[i] {
            rhs[i] = f[i];
        } else {
            m[i * n + (i + 1) % n] = m[i * n + (i + 1) % n] - half;
            m[i * n + (i + n - 1) % n] = m[i * n + (i + n - 1) % n] - half;
            rhs[i] = a[i] * h2;
        }
    }
    let lu = DenseLu::factor(n, m)?;
    lu.solve(&mut rhs);
    Ok(rhs)
}

fn measured_error<T: Real>(phi: &ScalarField<T>, reference: &ScalarField<T>, region: Option<&[bool]>) -> T {
    phi.values()
        .iter()
        .zip(reference.values())
        .enumerate()
        .filter(|(i, _)| region.map_or(true, |r| r[*i]))
        .fold(T::zero(), |m, (_, (a, b))| m.max((*a - *b).abs()))
}

/// Ratio test of (beta, error) pairs against C log(beta) / beta.
pub fn fit_rate(points: &[(f64, f64)]) -> RateFit {
    let scaled: Vec<f64> = points.iter().map(|&(b, e)| e * b / b.ln()).collect();
    if scaled.is_empty() || scaled.iter().any(|&s| !(s > 0.0)) {
        let tiny = scaled.iter().all(|&s| s.abs() < 1e-12);
        return RateFit {
            c: 0.0,
            ratios: vec![0.0; scaled.len()],
            pass: tiny && !scaled.is_empty(),
        };
    }
    let c = (scaled.iter().map(|s| s.ln()).sum::<f64>() / scaled.len() as f64).exp();
    let ratios: Vec<f64> = scaled.iter().map(|s| s / c).collect();
    let pass = ratios.iter().all(|&r| (1.0 / 3.0..=3.0).contains(&r));
    RateFit { c, ratios, pass }
}

/// Runs solve_beta along an increasing ladder with warm starts.
pub fn beta_ladder<T: Real>(
    theta: &OneOneForm<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    betas: &[T],
    opts: &LadderOptions<'_, T>,
) -> Result<BetaFamilyReport<T>> {
    if betas.is_empty() || betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneLadder);
    }
    let g = theta.geometry();
    if let Some(r) = opts.region {
        if r.len() != g.len() {
            return Err(Error::InvalidArgument("region mask length".into()));
        }
    }
    let mut ladder: Vec<BetaEntry<T>> = Vec::with_capacity(betas.len());
    for &beta in betas {
        let warm = ladder.last().map(|e| &e.phi);
        let s = solve_beta_with(theta, f, omega_ref, beta, opts.tol, opts.max_iter, warm)?;
        let form = theta
            .data()
            .axpy(beta_shift(beta), omega_ref.data())
            .axpy(T::one(), &ddc_data(g, s.phi.values()));
        let trace = ScalarField::from_raw(g, trace_data(g, &form, omega_ref.data()));
        ladder.push(BetaEntry {
            beta,
            phi: s.phi,
            iterations: s.iterations,
            residual: s.residual,
            margin: s.margin,
            trace,
            error: None,
        });
    }
    let (envelope_estimate, upto) = match opts.reference {
        Some(r) => {
            if !g.same_as(r.geometry()) {
                return Err(Error::GeometryMismatch);
            }
            (r.clone(), ladder.len())
        }
        None => (ladder.last().expect("non-empty").phi.clone(), ladder.len() - 1),
    };
    let mut points = Vec::new();
    for e in ladder.iter_mut().take(upto) {
        let err = measured_error(&e.phi, &envelope_estimate, opts.region);
        e.error = Some(err);
        points.push((to_f64(e.beta), to_f64(err)));
    }
    let rate_fit = fit_rate(&points[points.len() / 2..]);
    Ok(BetaFamilyReport {
        ladder,
        envelope_estimate,
        rate_fit,
    })
}

/// MA mass of theta + dd^c phi outside {phi >= f - tol}, relative to the total.
/// Three-point second differences are used where available (circle, Hopf), since
/// envelopes are only C^{1,1}.
pub fn contact_ma_concentration<T: Real>(
    theta: &OneOneForm<T>,
    phi: &ScalarField<T>,
    f: &ScalarField<T>,
    omega_ref: &OneOneForm<T>,
    tol: Option<T>,
) -> Result<ContactReport> {
    let g = theta.geometry();
    if !g.same_as(phi.geometry()) || !g.same_as(f.geometry()) || !g.same_as(omega_ref.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    let tol = tol.unwrap_or_else(|| lit::<T>(10.0) * g.spacing() * g.spacing() * f.sup_norm());
    let mask: Vec<bool> = phi
        .values()
        .iter()
        .zip(f.values())
        .map(|(&p, &q)| p >= q - tol)
        .collect();
    let dd = match g.kind() {
        ModelKind::Torus1 | ModelKind::Hopf => ddc_fd2(phi)?.into_data(),
        _ => ddc_data(g, phi.values()),
    };
    let form = theta.data().axpy(T::one(), &dd);
    let dens = ma_data(g, &form);
    let total = integrate_raw(g, &dens);
    let off: Vec<T> = dens
        .iter()
        .zip(&mask)
        .map(|(&d, &m)| if m { T::zero() } else { d })
        .collect();
    let off = integrate_raw(g, &off);
    let scale = integrate_raw(g, &ma_data(g, omega_ref.data()));
    let degenerate = !(total.abs() > T::epsilon().sqrt() * scale);
    Ok(ContactReport {
        contact: ContactSet {
            mask,
            tolerance: to_f64(tol),
        },
        off_mass_fraction: if degenerate { 0.0 } else { to_f64(off / total) },
        degenerate,
    })
}

/// Checks tr <= C e^(-B rho_sing) with C fitted per rung over the upper half of the
/// ladder, passing when the fitted constants agree within a factor 2.
pub fn laplacian_bound_check<T: Real>(
    report: &BetaFamilyReport<T>,
    rho_sing: &ScalarField<T>,
    b: T,
) -> LaplacianBound {
    let top = &report.ladder[report.ladder.len() / 2..];
    let constants: Vec<f64> = top
        .iter()
        .map(|e| {
            let c = e
                .trace
                .values()
                .iter()
                .zip(rho_sing.values())
                .fold(T::zero(), |m, (&t, &r)| m.max(t * (b * r).exp()));
            to_f64(c)
        })
        .collect();
    let hi = constants.iter().cloned().fold(f64::MIN, f64::max);
    let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
    let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    LaplacianBound {
        pass: spread.is_finite() && spread <= 2.0,
        spread,
        constants,
    }
}
