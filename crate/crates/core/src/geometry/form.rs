use super::field::ScalarField;
use super::model::{Geometry, ModelKind};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};
use num_complex::Complex;
use std::sync::Arc;

/// Hermitian 2x2 matrix [[a11, a12], [conj(a12), a22]]. In complex dimension one
/// only `a11` is used.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Herm<T> {
    pub a11: T,
    pub a22: T,
    pub a12: Complex<T>,
}

impl<T: Real> Herm<T> {
    pub fn diag(a11: T, a22: T) -> Self {
        Herm {
            a11,
            a22,
            a12: Complex::new(T::zero(), T::zero()),
        }
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one())
    }

    pub fn det(&self) -> T {
        self.a11 * self.a22 - self.a12.norm_sqr()
    }

    /// Mixed form: det(A+B) - det(A) - det(B).
    pub fn mixed(&self, b: &Self) -> T {
        self.a11 * b.a22 + self.a22 * b.a11 - (self.a12 * b.a12.conj()).re * (T::one() + T::one())
    }

    /// Real trace pairing tr(A B).
    pub fn pair(&self, b: &Self) -> T {
        self.a11 * b.a11 + self.a22 * b.a22 + (self.a12 * b.a12.conj()).re * (T::one() + T::one())
    }

    pub fn inverse(&self) -> Self {
        let d = self.det();
        Herm {
            a11: self.a22 / d,
            a22: self.a11 / d,
            a12: -self.a12 / d,
        }
    }

    pub fn add(&self, b: &Self) -> Self {
        Herm {
            a11: self.a11 + b.a11,
            a22: self.a22 + b.a22,
            a12: self.a12 + b.a12,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Herm {
            a11: self.a11 * s,
            a22: self.a22 * s,
            a12: self.a12 * s,
        }
    }

    fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a22.is_finite() && self.a12.re.is_finite() && self.a12.im.is_finite()
    }
}

/// Coefficients of a real (1,1)-form.
#[derive(Clone, Debug, PartialEq)]
pub enum FormData<T> {
    /// Hermitian matrix per node, alpha = sum A_jk (i/2) dz_j ^ dzbar_k.
    Matrix(Vec<Herm<T>>),
    /// alpha = a dd^c rho + b d rho ^ d^c rho.
    Radial { a: Vec<T>, b: Vec<T> },
}

impl<T: Real> FormData<T> {
    pub(crate) fn len(&self) -> usize {
        match self {
            FormData::Matrix(m) => m.len(),
            FormData::Radial { a, .. } => a.len(),
        }
    }

    pub(crate) fn axpy(&self, s: T, other: &Self) -> Self {
        match (self, other) {
            (FormData::Matrix(x), FormData::Matrix(y)) => {
                FormData::Matrix(x.iter().zip(y).map(|(p, q)| p.add(&q.scale(s))).collect())
            }
            (FormData::Radial { a, b }, FormData::Radial { a: c, b: d }) => FormData::Radial {
                a: a.iter().zip(c).map(|(&x, &y)| x + s * y).collect(),
                b: b.iter().zip(d).map(|(&x, &y)| x + s * y).collect(),
            },
            _ => panic!("form representations differ"),
        }
    }

    pub(crate) fn scale(&self, s: T) -> Self {
        match self {
            FormData::Matrix(x) => FormData::Matrix(x.iter().map(|p| p.scale(s)).collect()),
            FormData::Radial { a, b } => FormData::Radial {
                a: a.iter().map(|&x| x * s).collect(),
                b: b.iter().map(|&x| x * s).collect(),
            },
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            FormData::Matrix(m) => m.iter().all(|h| h.is_finite()),
            FormData::Radial { a, b } => all_finite(a) && all_finite(b),
        }
    }
}

/// Real (1,1)-form on a model geometry.
#[derive(Clone)]
pub struct OneOneForm<T: Real> {
    geometry: Geometry<T>,
    data: FormData<T>,
}

impl<T: Real> std::fmt::Debug for OneOneForm<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OneOneForm")
            .field("kind", &self.geometry.kind())
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> OneOneForm<T> {
    pub fn new(geometry: &Geometry<T>, data: FormData<T>) -> Result<Self> {
        let ok = match (&data, geometry.kind().is_radial()) {
            (FormData::Matrix(m), false) => m.len() == geometry.len(),
            (FormData::Radial { a, b }, true) => a.len() == geometry.len() && b.len() == geometry.len(),
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "form representation does not fit a {:?} grid",
                geometry.kind()
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("(1,1)-form"));
        }
        Ok(Self::from_raw(geometry, data))
    }

    pub(crate) fn from_raw(geometry: &Geometry<T>, data: FormData<T>) -> Self {
        OneOneForm {
            geometry: Arc::clone(geometry),
            data,
        }
    }

    /// The same Hermitian matrix at every node (tori).
    pub fn constant_matrix(geometry: &Geometry<T>, m: Herm<T>) -> Result<Self> {
        let m = if geometry.dim() == 1 {
            Herm::diag(m.a11, T::zero())
        } else {
            m
        };
        Self::new(geometry, FormData::Matrix(vec![m; geometry.len()]))
    }

    /// Constant coefficient pair (a, b) (radial models).
    pub fn constant_radial(geometry: &Geometry<T>, a: T, b: T) -> Result<Self> {
        let n = geometry.len();
        Self::new(geometry, FormData::Radial { a: vec![a; n], b: vec![b; n] })
    }

    pub fn radial(a: &ScalarField<T>, b: &ScalarField<T>) -> Result<Self> {
        a.check_same(b)?;
        Self::new(
            a.geometry(),
            FormData::Radial {
                a: a.values().to_vec(),
                b: b.values().to_vec(),
            },
        )
    }

    pub fn zero(geometry: &Geometry<T>) -> Self {
        let n = geometry.len();
        let data = if geometry.kind().is_radial() {
            FormData::Radial {
                a: vec![T::zero(); n],
                b: vec![T::zero(); n],
            }
        } else {
            FormData::Matrix(vec![Herm::default(); n])
        };
        Self::from_raw(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn data(&self) -> &FormData<T> {
        &self.data
    }

    pub fn into_data(self) -> FormData<T> {
        self.data
    }

    pub fn kind(&self) -> ModelKind {
        self.geometry.kind()
    }

    /// Radial coefficient fields (a, b); `None` on tori.
    pub fn radial_coefficients(&self) -> Option<(ScalarField<T>, ScalarField<T>)> {
        match &self.data {
            FormData::Radial { a, b } => Some((
                ScalarField::from_raw(&self.geometry, a.clone()),
                ScalarField::from_raw(&self.geometry, b.clone()),
            )),
            FormData::Matrix(_) => None,
        }
    }

    /// self + s * other
    pub fn add_scaled(&self, s: T, other: &Self) -> Result<Self> {
        if !self.geometry.same_as(&other.geometry) {
            return Err(Error::GeometryMismatch);
        }
        Ok(Self::from_raw(&self.geometry, self.data.axpy(s, &other.data)))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(T::one(), other)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_raw(&self.geometry, self.data.scale(s))
    }

    /// Pointwise multiplication by e^h.
    pub fn conformal(&self, h: &ScalarField<T>) -> Result<Self> {
        if !self.geometry.same_as(h.geometry()) {
            return Err(Error::GeometryMismatch);
        }
        let e: Vec<T> = h.values().iter().map(|x| x.exp()).collect();
        let data = match &self.data {
            FormData::Matrix(m) => FormData::Matrix(m.iter().zip(&e).map(|(p, &s)| p.scale(s)).collect()),
            FormData::Radial { a, b } => FormData::Radial {
                a: a.iter().zip(&e).map(|(&x, &s)| x * s).collect(),
                b: b.iter().zip(&e).map(|(&x, &s)| x * s).collect(),
            },
        };
        Ok(Self::from_raw(&self.geometry, data))
    }
}
