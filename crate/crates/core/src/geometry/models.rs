use super::field::ScalarField;
use super::form::{FormData, Herm, OneOneForm};
use super::model::{Geometry, ModelKind};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Calabi profile derivatives (u', u'') with u'(-R) = a_E, u'(R) = b_line.
fn calabi_profile<T: Real>(g: &Geometry<T>, low: T, high: T) -> (Vec<T>, Vec<T>) {
    let r = g.radius();
    let s0 = sigmoid(-r);
    let span = sigmoid(r) - s0;
    let rho = g.coords();
    let a = rho.iter().map(|&x| low + (high - low) * (sigmoid(x) - s0) / span).collect();
    let b = rho
        .iter()
        .map(|&x| {
            let s = sigmoid(x);
            (high - low) * s * (T::one() - s) / span
        })
        .collect();
    (a, b)
}

/// Reference Hermitian metric of the model: the flat metric on tori, omega_H = (1, 1)
/// on the Hopf surface and the Calabi-ansatz metric on the blow-up model.
pub fn reference_form<T: Real>(g: &Geometry<T>) -> OneOneForm<T> {
    let n = g.len();
    let data = match g.kind() {
        ModelKind::Torus1 => FormData::Matrix(vec![Herm::diag(T::one(), T::zero()); n]),
        ModelKind::Torus2 => FormData::Matrix(vec![Herm::identity(); n]),
        ModelKind::Hopf => FormData::Radial {
            a: vec![T::one(); n],
            b: vec![T::one(); n],
        },
        ModelKind::BlowupCalabi => {
            let (lo, hi) = g.slopes();
            let (a, b) = calabi_profile(g, lo, hi);
            FormData::Radial { a, b }
        }
    };
    OneOneForm::from_raw(g, data)
}

/// Nef class on the blow-up model that vanishes on the exceptional curve:
/// the Calabi profile with u'(-R) = 0.
pub fn degenerate_blowup_class<T: Real>(g: &Geometry<T>) -> Result<OneOneForm<T>> {
    if g.kind() != ModelKind::BlowupCalabi {
        return Err(Error::UnsupportedGeometry {
            kind: g.kind(),
            op: "degenerate_blowup_class",
        });
    }
    let (_, hi) = g.slopes();
    let (a, b) = calabi_profile(g, T::zero(), hi);
    Ok(OneOneForm::from_raw(g, FormData::Radial { a, b }))
}

/// Potential with analytic singularities along the tracked curve: rho - log(1 + e^rho)
/// on the blow-up model (so it tends to 0 away from E), zero elsewhere.
pub fn singularity_potential<T: Real>(g: &Geometry<T>) -> ScalarField<T> {
    match g.kind() {
        ModelKind::BlowupCalabi => {
            let v = g
                .coords()
                .iter()
                .map(|&x| x - (T::one() + x.exp()).ln())
                .collect();
            ScalarField::from_raw(g, v)
        }
        _ => ScalarField::zeros(g),
    }
}

/// h = amplitude * sin(2 pi mode rho / L) on the Hopf surface.
pub fn hopf_wave<T: Real>(g: &Geometry<T>, amplitude: T, mode: usize) -> Result<ScalarField<T>> {
    if g.kind() != ModelKind::Hopf {
        return Err(Error::UnsupportedGeometry {
            kind: g.kind(),
            op: "hopf_wave",
        });
    }
    let k = lit::<T>(2.0 * mode as f64) * T::PI() / g.period();
    Ok(ScalarField::from_raw(
        g,
        g.coords().iter().map(|&x| amplitude * (k * x).sin()).collect(),
    ))
}
