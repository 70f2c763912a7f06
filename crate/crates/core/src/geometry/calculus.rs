use super::field::{ScalarField, VolumeDensity};
use super::form::{FormData, Herm, OneOneForm};
use super::model::{ModelGeometry, ModelKind, SubvarietyKind, SubvarietyTag, CURVE_AREA};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, lit, Real};
use num_complex::Complex;

/// dd^c u = i d dbar u. Spectral on periodic models, fourth-order differences on
/// the blow-up model.
pub fn ddc<T: Real>(u: &ScalarField<T>) -> Result<OneOneForm<T>> {
    if !all_finite(u.values()) {
        return Err(Error::NonFinite("ddc input"));
    }
    Ok(OneOneForm::from_raw(u.geometry(), ddc_data(u.geometry(), u.values())))
}

pub(crate) fn ddc_data<T: Real>(g: &ModelGeometry<T>, u: &[T]) -> FormData<T> {
    match g.kind() {
        ModelKind::Torus1 => {
            let (_, d2) = g.derivs_1d(u);
            let half = lit::<T>(0.5);
            FormData::Matrix(d2.into_iter().map(|x| Herm::diag(half * x, T::zero())).collect())
        }
        ModelKind::Torus2 => FormData::Matrix(ddc_torus2(g, u)),
        ModelKind::Hopf | ModelKind::BlowupCalabi => {
            let (a, b) = g.derivs_1d(u);
            FormData::Radial { a, b }
        }
    }
}

/// Symbol of dd^c on the 4-torus at node multi-index `j`: (s11, s22, s12).
pub(crate) fn torus2_symbol<T: Real>(g: &ModelGeometry<T>, j: [usize; 4]) -> (T, T, Complex<T>) {
    let sp = g.spectral.as_ref().expect("spectral data");
    let k = |a: usize| sp.wavenumbers[a][j[a]];
    let ko = |a: usize| sp.wavenumbers_odd[a][j[a]];
    let half = lit::<T>(0.5);
    let s11 = -half * (k(0) * k(0) + k(1) * k(1));
    let s22 = -half * (k(2) * k(2) + k(3) * k(3));
    let f1 = Complex::new(ko(1), ko(0));
    let f2 = Complex::new(-ko(3), ko(2));
    (s11, s22, (f1 * f2).scale(half))
}

pub(crate) fn for_each_index4(shape: &[usize], mut f: impl FnMut(usize, [usize; 4])) {
    let mut i = 0;
    for j0 in 0..shape[0] {
        for j1 in 0..shape[1] {
            for j2 in 0..shape[2] {
                for j3 in 0..shape[3] {
                    f(i, [j0, j1, j2, j3]);
                    i += 1;
                }
            }
        }
    }
}

fn ddc_torus2<T: Real>(g: &ModelGeometry<T>, u: &[T]) -> Vec<Herm<T>> {
    let sp = g.spectral.as_ref().expect("spectral data");
    let shape = g.shape();
    let zero = Complex::new(T::zero(), T::zero());
    let mut hat: Vec<Complex<T>> = u.iter().map(|&x| Complex::new(x, T::zero())).collect();
    sp.transform(shape, &mut hat, false);
    let n = hat.len();
    let mut c11 = vec![zero; n];
    let mut c22 = vec![zero; n];
    let mut c12 = vec![zero; n];
    for_each_index4(shape, |i, j| {
        let (s11, s22, s12) = torus2_symbol(g, j);
        c11[i] = hat[i].scale(s11);
        c22[i] = hat[i].scale(s22);
        c12[i] = hat[i] * s12;
    });
    sp.transform(shape, &mut c11, true);
    sp.transform(shape, &mut c22, true);
    sp.transform(shape, &mut c12, true);
    (0..n)
        .map(|i| Herm {
            a11: c11[i].re,
            a22: c22[i].re,
            a12: c12[i],
        })
        .collect()
}

/// Second-order finite-difference variant of dd^c on the 1-D periodic models.
pub fn ddc_fd2<T: Real>(u: &ScalarField<T>) -> Result<OneOneForm<T>> {
    let g = u.geometry();
    let (d1, d2) = match g.kind() {
        ModelKind::Torus1 | ModelKind::Hopf => g.derivs_fd2_periodic(u.values()),
        kind => return Err(Error::UnsupportedGeometry { kind, op: "ddc_fd2" }),
    };
    let data = if g.kind() == ModelKind::Torus1 {
        let half = lit::<T>(0.5);
        FormData::Matrix(d2.into_iter().map(|x| Herm::diag(half * x, T::zero())).collect())
    } else {
        FormData::Radial { a: d1, b: d2 }
    };
    Ok(OneOneForm::from_raw(g, data))
}

/// Top-degree product of `dim` forms, as a density against the coordinate volume
/// (tori) or against V = dd^c rho ^ d rho ^ d^c rho (radial models).
pub fn wedge_top<T: Real>(forms: &[&OneOneForm<T>]) -> Result<VolumeDensity<T>> {
    let first = forms.first().ok_or(Error::WrongArity { expected: 1, got: 0 })?;
    let g = first.geometry();
    if forms.len() != g.dim() {
        return Err(Error::WrongArity {
            expected: g.dim(),
            got: forms.len(),
        });
    }
    if forms.iter().any(|f| !f.geometry().same_as(g)) {
        return Err(Error::GeometryMismatch);
    }
    let d = match forms.len() {
        1 => match first.data() {
            FormData::Matrix(m) => m.iter().map(|h| h.a11).collect(),
            FormData::Radial { .. } => unreachable!("radial models have dimension 2"),
        },
        _ => wedge2(forms[0].data(), forms[1].data()),
    };
    Ok(VolumeDensity::from_raw(g, d))
}

pub(crate) fn wedge2<T: Real>(x: &FormData<T>, y: &FormData<T>) -> Vec<T> {
    match (x, y) {
        (FormData::Matrix(p), FormData::Matrix(q)) => p.iter().zip(q).map(|(a, b)| a.mixed(b)).collect(),
        (FormData::Radial { a, b }, FormData::Radial { a: c, b: d }) => {
            (0..a.len()).map(|i| a[i] * d[i] + b[i] * c[i]).collect()
        }
        _ => panic!("form representations differ"),
    }
}

/// alpha^n as a density.
pub fn ma_density<T: Real>(alpha: &OneOneForm<T>) -> VolumeDensity<T> {
    VolumeDensity::from_raw(alpha.geometry(), ma_data(alpha.geometry(), alpha.data()))
}

pub(crate) fn ma_data<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>) -> Vec<T> {
    match (g.dim(), x) {
        (1, FormData::Matrix(m)) => m.iter().map(|h| h.a11).collect(),
        _ => wedge2(x, x),
    }
}

/// Quadrature of a density against the model's volume weights.
pub fn integrate<T: Real>(d: &VolumeDensity<T>) -> T {
    integrate_raw(d.geometry(), d.density())
}

pub(crate) fn integrate_raw<T: Real>(g: &ModelGeometry<T>, d: &[T]) -> T {
    d.iter().zip(g.weights()).fold(T::zero(), |s, (&x, &w)| s + x * w)
}

pub(crate) fn reference_positive<T: Real>(g: &ModelGeometry<T>, r: &FormData<T>) -> bool {
    match r {
        FormData::Matrix(m) => m
            .iter()
            .all(|h| h.a11 > T::zero() && (g.dim() == 1 || (h.a22 > T::zero() && h.det() > T::zero()))),
        FormData::Radial { a, b } => a.iter().chain(b).all(|&x| x > T::zero()),
    }
}

/// Pointwise smallest generalized eigenvalue of alpha against the reference.
pub(crate) fn margin_nodes<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>, r: &FormData<T>) -> Vec<T> {
    let two = lit::<T>(2.0);
    let four = lit::<T>(4.0);
    match (x, r) {
        (FormData::Matrix(p), FormData::Matrix(q)) if g.dim() == 1 => {
            p.iter().zip(q).map(|(a, b)| a.a11 / b.a11).collect()
        }
        (FormData::Matrix(p), FormData::Matrix(q)) => p
            .iter()
            .zip(q)
            .map(|(a, b)| {
                let db = b.det();
                let m = a.mixed(b);
                let disc = (m * m - four * a.det() * db).max(T::zero());
                (m - disc.sqrt()) / (two * db)
            })
            .collect(),
        (FormData::Radial { a, b }, FormData::Radial { a: c, b: d }) => {
            (0..a.len()).map(|i| (a[i] / c[i]).min(b[i] / d[i])).collect()
        }
        _ => panic!("form representations differ"),
    }
}

pub(crate) fn margin_raw<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>, r: &FormData<T>) -> T {
    margin_nodes(g, x, r).into_iter().fold(T::infinity(), |m, v| m.min(v))
}

/// Largest s with alpha >= s * omega_ref at every node.
pub fn positivity_margin<T: Real>(alpha: &OneOneForm<T>, omega_ref: &OneOneForm<T>) -> Result<T> {
    let g = alpha.geometry();
    if !g.same_as(omega_ref.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    if !reference_positive(g, omega_ref.data()) {
        return Err(Error::NonPositiveReference(f64::NAN));
    }
    Ok(margin_raw(g, alpha.data(), omega_ref.data()))
}

fn require_positive<T: Real>(omega: &OneOneForm<T>) -> Result<()> {
    if reference_positive(omega.geometry(), omega.data()) {
        Ok(())
    } else {
        Err(Error::NonPositiveForm(f64::NAN))
    }
}

/// log det g of a positive form, relative to the model's coordinate frame.
pub(crate) fn log_det_data<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>) -> Vec<T> {
    match x {
        FormData::Matrix(m) if g.dim() == 1 => m.iter().map(|h| h.a11.ln()).collect(),
        FormData::Matrix(m) => m.iter().map(|h| h.det().ln()).collect(),
        FormData::Radial { a, b } => a.iter().zip(b).map(|(&p, &q)| (p * q).ln()).collect(),
    }
}

/// Chern-Ricci form -dd^c log det g. On the radial models det g is proportional to
/// a b e^{-2 rho}, so Ric(a, b) = 2 dd^c rho - dd^c log(a b).
pub fn ricci_form<T: Real>(omega: &OneOneForm<T>) -> Result<OneOneForm<T>> {
    require_positive(omega)?;
    Ok(OneOneForm::from_raw(omega.geometry(), ricci_data(omega.geometry(), omega.data())))
}

pub(crate) fn ricci_data<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>) -> FormData<T> {
    let l = log_det_data(g, x);
    let dl = ddc_data(g, &l);
    match dl {
        FormData::Radial { a, b } => FormData::Radial {
            a: a.into_iter().map(|v| lit::<T>(2.0) - v).collect(),
            b: b.into_iter().map(|v| -v).collect(),
        },
        m => m.scale(-T::one()),
    }
}

/// Pointwise trace of alpha with respect to omega.
pub fn trace<T: Real>(alpha: &OneOneForm<T>, omega: &OneOneForm<T>) -> Result<ScalarField<T>> {
    if !alpha.geometry().same_as(omega.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    require_positive(omega)?;
    Ok(ScalarField::from_raw(
        alpha.geometry(),
        trace_data(alpha.geometry(), alpha.data(), omega.data()),
    ))
}

pub(crate) fn trace_data<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>, w: &FormData<T>) -> Vec<T> {
    match (x, w) {
        (FormData::Matrix(p), FormData::Matrix(q)) if g.dim() == 1 => {
            p.iter().zip(q).map(|(a, b)| a.a11 / b.a11).collect()
        }
        (FormData::Matrix(p), FormData::Matrix(q)) => p.iter().zip(q).map(|(a, b)| a.mixed(b) / b.det()).collect(),
        (FormData::Radial { a, b }, FormData::Radial { a: c, b: d }) => {
            (0..a.len()).map(|i| a[i] / c[i] + b[i] / d[i]).collect()
        }
        _ => panic!("form representations differ"),
    }
}

/// Volume of omega restricted to a tracked subvariety.
///
/// The exceptional curve carries a(-R) times the area of a line; the Hopf fibre
/// class carries 2 pi times the integral of the d rho ^ d^c rho coefficient.
pub fn restricted_volume<T: Real>(omega: &OneOneForm<T>, v: &SubvarietyTag) -> Result<T> {
    let g = omega.geometry();
    if !g.tracked().contains(v) {
        return Err(Error::UntrackedSubvariety(v.name.clone()));
    }
    Ok(restricted_volume_raw(g, omega.data(), v.kind))
}

pub(crate) fn restricted_volume_raw<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>, kind: SubvarietyKind) -> T {
    match (kind, x) {
        (SubvarietyKind::Whole, _) => integrate_raw(g, &ma_data(g, x)),
        (SubvarietyKind::ExceptionalCurve, FormData::Radial { a, .. }) => a[0] * lit(CURVE_AREA),
        (SubvarietyKind::FiberClass, FormData::Radial { b, .. }) => {
            b.iter().fold(T::zero(), |s, &v| s + v) * g.spacing() * lit(CURVE_AREA)
        }
        _ => T::nan(),
    }
}

/// Pointwise maximum of two potentials.
pub fn max_glue<T: Real>(phi1: &ScalarField<T>, phi2: &ScalarField<T>) -> Result<ScalarField<T>> {
    phi1.zip_with(phi2, |a, b| a.max(b))
}
