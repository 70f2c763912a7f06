//! Monge-Ampere volume functionals, Guan-Li and Gauduchon checks.

use crate::error::{Error, Result};
use crate::geometry::{
    ddc_data, integrate_raw, ma_data, margin_raw, reference_form, reference_positive, wedge2, FormData,
    ModelGeometry, ModelKind, OneOneForm, ScalarField,
};
use crate::linalg::DenseLu;
use crate::scalar::{lit, max_abs, Real};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// int (theta + dd^c phi)^n.
pub fn ma_volume<T: Real>(theta: &OneOneForm<T>, phi: &ScalarField<T>) -> Result<T> {
    let g = theta.geometry();
    if !g.same_as(phi.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    let form = theta.data().axpy(T::one(), &ddc_data(g, phi.values()));
    let omega = reference_form(g);
    let m = margin_raw(g, &form, omega.data());
    if m < -T::epsilon().sqrt() {
        return Err(Error::NegativeMargin(crate::scalar::to_f64(m)));
    }
    Ok(integrate_raw(g, &ma_data(g, &form)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_samples: usize,
    /// Number of Fourier modes (each contributes a cosine and a sine, or one cosine
    /// on the blow-up interval).
    pub n_modes: usize,
    /// Amplitude of mode k scales like k^(-decay).
    pub decay: f64,
    /// Positivity margin kept by every sample; defaults to min(0.1, margin(theta) / 2).
    pub margin_target: Option<f64>,
    /// Gradient steps used to push the extremes outward.
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_samples: 50,
            n_modes: 6,
            decay: 1.5,
            margin_target: None,
            refine_steps: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeSample<T> {
    pub volume: T,
    pub margin: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizerStep<T> {
    pub step: usize,
    pub v_plus: T,
    pub v_minus: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeReport<T> {
    /// Largest sampled volume: a lower bound for v_+.
    pub v_plus_lower: T,
    /// Smallest sampled volume: an upper bound for v_-.
    pub v_minus_upper: T,
    pub n_samples: usize,
    pub n_rejected: usize,
    pub margin_target: T,
    pub samples: Vec<VolumeSample<T>>,
    pub trace: Vec<OptimizerStep<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VHatReport<T> {
    pub epsilon_ladder: Vec<(T, T)>,
    pub extrapolated: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GuanLi<T> {
    pub pass: bool,
    pub residual: T,
}

fn basis<T: Real>(g: &ModelGeometry<T>, cfg: &SamplerConfig) -> Vec<Vec<T>> {
    let two_pi = lit::<T>(2.0) * T::PI();
    let w = |k: f64| lit::<T>(k.powf(-cfg.decay));
    let mut out = Vec::new();
    match g.kind() {
        ModelKind::Torus1 | ModelKind::Hopf => {
            let p = g.period();
            for k in 1..=cfg.n_modes {
                let kk = two_pi * lit(k as f64) / p;
                out.push(g.coords().iter().map(|&x| w(k as f64) * (kk * x).cos()).collect());
                out.push(g.coords().iter().map(|&x| w(k as f64) * (kk * x).sin()).collect());
            }
        }
        ModelKind::BlowupCalabi => {
            let r = g.radius();
            for k in 1..=2 * cfg.n_modes {
                let kk = T::PI() * lit(k as f64) / (r + r);
                out.push(g.coords().iter().map(|&x| w(k as f64) * (kk * (x + r)).cos()).collect());
            }
        }
        ModelKind::Torus2 => {
            let mut modes: Vec<[i32; 4]> = Vec::new();
            for a in -2..=2 {
                for b in -2..=2 {
                    for c in -2..=2 {
                        for d in -2..=2 {
                            let k = [a, b, c, d];
                            let first = k.iter().find(|&&v| v != 0);
                            if matches!(first, Some(&v) if v > 0) {
                                modes.push(k);
                            }
                        }
                    }
                }
            }
            modes.sort_by_key(|k| (k.iter().map(|v| v * v).sum::<i32>(), *k));
            for k in modes.into_iter().take(cfg.n_modes) {
                let norm = (k.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
                let phase = |i: usize| {
                    let x = g.node_coords(i);
                    two_pi * (0..4).fold(T::zero(), |s, a| s + lit::<T>(k[a] as f64) * x[a])
                };
                out.push((0..g.len()).map(|i| w(norm) * phase(i).cos()).collect());
                out.push((0..g.len()).map(|i| w(norm) * phase(i).sin()).collect());
            }
        }
    }
    out
}

fn combine<T: Real>(base: &FormData<T>, dirs: &[FormData<T>], c: &[T]) -> FormData<T> {
    dirs.iter().zip(c).fold(base.clone(), |acc, (d, &s)| acc.axpy(s, d))
}

/// Samples random band-limited potentials with theta + dd^c phi >= target * omega_ref,
/// then pushes the largest and smallest volumes outward by gradient steps.
/// The results are one-sided bounds, not the true supremum and infimum.
pub fn estimate_v_bounds<T: Real>(
    theta: &OneOneForm<T>,
    omega_ref: &OneOneForm<T>,
    cfg: &SamplerConfig,
) -> Result<VolumeReport<T>> {
    let g = theta.geometry().as_ref();
    if !g.same_as(omega_ref.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    if !reference_positive(g, omega_ref.data()) {
        return Err(Error::NonPositiveReference(f64::NAN));
    }
    let m_theta = margin_raw(g, theta.data(), omega_ref.data());
    let target = match cfg.margin_target {
        Some(t) => lit(t),
        None => lit::<T>(0.1).min(m_theta * lit(0.5)),
    };
    if !(m_theta >= target) || !(target >= T::zero()) {
        return Err(Error::NoAdmissibleSample);
    }
    let fields = basis(g, cfg);
    let dirs: Vec<FormData<T>> = fields.iter().map(|u| ddc_data(g, u)).collect();
    let omega = omega_ref.data();
    let volume = |c: &[T]| -> (T, T, FormData<T>) {
        let form = combine(theta.data(), &dirs, c);
        let m = margin_raw(g, &form, omega);
        (integrate_raw(g, &ma_data(g, &form)), m, form)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::new();
    let mut n_rejected = 0;
    let mut best_hi: Option<(T, Vec<T>)> = None;
    let mut best_lo: Option<(T, Vec<T>)> = None;
    for _ in 0..cfg.n_samples {
        let dir: Vec<T> = (0..dirs.len()).map(|_| lit(rng.gen_range(-1.0..1.0))).collect();
        let u: f64 = rng.gen_range(0.0..1.0);
        let at = |s: T| dir.iter().map(|&d| d * s).collect::<Vec<T>>();
        // margin along the ray is concave, so the admissible amplitudes form an interval
        let mut hi = T::one();
        while volume(&at(hi)).1 >= target && hi < lit(1e6) {
            hi = hi * lit(2.0);
        }
        let mut lo = T::zero();
        for _ in 0..60 {
            let mid = (lo + hi) * lit(0.5);
            if volume(&at(mid)).1 >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = at(lo * lit(u));
        let (v, m, _) = volume(&c);
        if !(m >= target) || !v.is_finite() {
            n_rejected += 1;
            continue;
        }
        samples.push(VolumeSample { volume: v, margin: m });
        if best_hi.as_ref().map_or(true, |(b, _)| v > *b) {
            best_hi = Some((v, c.clone()));
        }
        if best_lo.as_ref().map_or(true, |(b, _)| v < *b) {
            best_lo = Some((v, c));
        }
    }
    let (mut v_plus, mut c_plus) = best_hi.ok_or(Error::NoAdmissibleSample)?;
    let (mut v_minus, mut c_minus) = best_lo.expect("a sample exists");
    let n = g.dim();
    let gradient = |form: &FormData<T>| -> Vec<T> {
        dirs.iter()
            .map(|d| {
                let dens = if n == 1 {
                    ma_data(g, d)
                } else {
                    wedge2(form, d).into_iter().map(|v| v * lit(2.0)).collect()
                };
                integrate_raw(g, &dens)
            })
            .collect()
    };
    let mut trace = vec![OptimizerStep {
        step: 0,
        v_plus,
        v_minus,
    }];
    let step_scale = c_plus
        .iter()
        .chain(&c_minus)
        .fold(T::zero(), |m, &v| m.max(v.abs()))
        .max(lit(1e-3));
    for step in 1..=cfg.refine_steps {
        for (sign, v_best, c_best) in [
            (T::one(), &mut v_plus, &mut c_plus),
            (-T::one(), &mut v_minus, &mut c_minus),
        ] {
            let (_, _, form) = volume(c_best);
            let grad = gradient(&form);
            let gn = grad.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            if gn == T::zero() {
                continue;
            }
            let mut eta = step_scale;
            for _ in 0..30 {
                let trial: Vec<T> = c_best.iter().zip(&grad).map(|(&c, &d)| c + sign * eta * d / gn).collect();
                let (v, m, _) = volume(&trial);
                if m >= target && sign * (v - *v_best) > T::zero() {
                    *v_best = v;
                    *c_best = trial;
                    break;
                }
                eta = eta * lit(0.5);
            }
        }
        trace.push(OptimizerStep { step, v_plus, v_minus });
    }
    Ok(VolumeReport {
        v_plus_lower: v_plus,
        v_minus_upper: v_minus,
        n_samples: samples.len(),
        n_rejected,
        margin_target: target,
        samples,
        trace,
    })
}

/// v_- of (1 - eps) theta + eps omega along the ladder, extrapolated linearly to eps = 0.
pub fn v_hat_minus<T: Real>(
    theta: &OneOneForm<T>,
    omega_ref: &OneOneForm<T>,
    eps_ladder: &[T],
    cfg: &SamplerConfig,
) -> Result<VHatReport<T>> {
    if eps_ladder.len() < 2 || eps_ladder.iter().any(|&e| !(e > T::zero() && e <= T::one())) {
        return Err(Error::InvalidArgument("epsilon ladder needs at least two values in (0, 1]".into()));
    }
    let mut ladder = Vec::new();
    for &eps in eps_ladder {
        let form = theta.scale(T::one() - eps).add_scaled(eps, omega_ref)?;
        let rep = estimate_v_bounds(&form, omega_ref, cfg)?;
        ladder.push((eps, rep.v_minus_upper));
    }
    let k = lit::<T>(ladder.len() as f64);
    let mx = ladder.iter().fold(T::zero(), |s, p| s + p.0) / k;
    let my = ladder.iter().fold(T::zero(), |s, p| s + p.1) / k;
    let sxy = ladder.iter().fold(T::zero(), |s, p| s + (p.0 - mx) * (p.1 - my));
    let sxx = ladder.iter().fold(T::zero(), |s, p| s + (p.0 - mx) * (p.0 - mx));
    let slope = sxy / sxx;
    Ok(VHatReport {
        epsilon_ladder: ladder,
        extrapolated: my - slope * mx,
    })
}

/// dd^c omega = 0 test. Radial models: dd^c(a, b) = (a'' - b') V.
pub fn guan_li_check<T: Real>(omega: &OneOneForm<T>) -> GuanLi<T> {
    let g = omega.geometry();
    let residual = match (g.kind(), omega.data()) {
        (ModelKind::Torus1, _) => T::zero(),
        (ModelKind::Torus2, FormData::Matrix(m)) => torus2_ddc_of_form(g, m),
        (_, FormData::Radial { a, b }) => {
            let (_, a2) = g.derivs_1d(a);
            let (b1, _) = g.derivs_1d(b);
            let d: Vec<T> = a2.iter().zip(&b1).map(|(&x, &y)| x - y).collect();
            max_abs(&d)
        }
        _ => T::nan(),
    };
    GuanLi {
        pass: residual <= lit(1e-8),
        residual,
    }
}

/// Sup norm of the coefficient of i d dbar omega on the 4-torus.
fn torus2_ddc_of_form<T: Real>(g: &ModelGeometry<T>, m: &[crate::geometry::Herm<T>]) -> T {
    let sp = g.spectral.as_ref().expect("spectral data");
    let shape = g.shape();
    let zero = T::zero();
    let mut a11: Vec<Complex<T>> = m.iter().map(|h| Complex::new(h.a11, zero)).collect();
    let mut a22: Vec<Complex<T>> = m.iter().map(|h| Complex::new(h.a22, zero)).collect();
    let mut a12: Vec<Complex<T>> = m.iter().map(|h| h.a12).collect();
    let mut a21: Vec<Complex<T>> = m.iter().map(|h| h.a12.conj()).collect();
    for v in [&mut a11, &mut a22, &mut a12, &mut a21] {
        sp.transform(shape, v, false);
    }
    let half = lit::<T>(0.5);
    let mut out = vec![Complex::new(zero, zero); g.len()];
    crate::geometry::for_each_index4(shape, |i, j| {
        let k = |a: usize| sp.wavenumbers[a][j[a]];
        let ko = |a: usize| sp.wavenumbers_odd[a][j[a]];
        // d/dz_j -> (i kx + ky)/2, d/dzbar_j -> (i kx - ky)/2
        let dz = |x: usize, y: usize| Complex::new(ko(y), ko(x)).scale(half);
        let dzb = |x: usize, y: usize| Complex::new(-ko(y), ko(x)).scale(half);
        let lap1 = -(k(0) * k(0) + k(1) * k(1)) * lit(0.25);
        let lap2 = -(k(2) * k(2) + k(3) * k(3)) * lit(0.25);
        if (0..4).any(|a| 2 * j[a] == shape[a]) {
            return;
        }
        out[i] = a22[i].scale(lap1) + a11[i].scale(lap2) - a21[i] * dz(0, 1) * dzb(2, 3) - a12[i] * dz(2, 3) * dzb(0, 1);
    });
    sp.transform(shape, &mut out, true);
    out.iter().fold(zero, |mx, z| mx.max(z.norm()))
}

/// Normalized G (mean zero) with dd^c(e^G omega^{n-1}) = 0. On the Hopf surface this
/// is the periodic equation (e^G a)'' = (e^G b)', solved by spectral collocation.
pub fn gauduchon_factor<T: Real>(omega: &OneOneForm<T>) -> Result<ScalarField<T>> {
    let g = omega.geometry();
    if !reference_positive(g, omega.data()) {
        return Err(Error::NonPositiveForm(f64::NAN));
    }
    match (g.kind(), omega.data()) {
        (ModelKind::Torus1, _) => Ok(ScalarField::zeros(g)),
        (ModelKind::Hopf, FormData::Radial { a, b }) => {
            let n = g.len();
            let mut mat = vec![T::zero(); (n + 1) * (n + 1)];
            let mut unit = vec![T::zero(); n];
            for j in 0..n {
                unit[j] = T::one();
                let (d1, d2) = g.derivs_1d(&unit);
                unit[j] = T::zero();
                for i in 0..n {
                    mat[i * (n + 1) + j] = d2[i] * a[j] - d1[i] * b[j];
                }
            }
            for i in 0..n {
                mat[i * (n + 1) + n] = T::one();
                mat[n * (n + 1) + i] = T::one() / lit(n as f64);
            }
            let lu = DenseLu::factor(n + 1, mat)?;
            let mut rhs = vec![T::zero(); n + 1];
            rhs[n] = T::one();
            lu.solve(&mut rhs);
            if rhs[..n].iter().any(|&e| !(e > T::zero())) {
                return Err(Error::LinearSolver("Gauduchon factor is not positive".into()));
            }
            let mut gv: Vec<T> = rhs[..n].iter().map(|e| e.ln()).collect();
            let mean = gv.iter().fold(T::zero(), |s, &v| s + v) / lit(n as f64);
            for v in gv.iter_mut() {
                *v = *v - mean;
            }
            Ok(ScalarField::from_raw(g, gv))
        }
        (kind, _) => {
            if guan_li_check(omega).pass {
                Ok(ScalarField::zeros(g))
            } else {
                Err(Error::UnsupportedGeometry {
                    kind,
                    op: "gauduchon_factor for non-Gauduchon metrics",
                })
            }
        }
    }
}

/// Sup norm of (e^G a)'' - (e^G b)' for a radial periodic metric.
pub fn gauduchon_residual<T: Real>(omega: &OneOneForm<T>, gfac: &ScalarField<T>) -> Result<T> {
    let g = omega.geometry();
    match omega.data() {
        FormData::Radial { a, b } if g.kind() == ModelKind::Hopf => {
            let ea: Vec<T> = a.iter().zip(gfac.values()).map(|(&x, &s)| x * s.exp()).collect();
            let eb: Vec<T> = b.iter().zip(gfac.values()).map(|(&x, &s)| x * s.exp()).collect();
            let (_, a2) = g.derivs_1d(&ea);
            let (b1, _) = g.derivs_1d(&eb);
            Ok(max_abs(&a2.iter().zip(&b1).map(|(&x, &y)| x - y).collect::<Vec<T>>()))
        }
        _ => Err(Error::UnsupportedGeometry {
            kind: g.kind(),
            op: "gauduchon_residual",
        }),
    }
}
