use super::model::Geometry;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};
use std::sync::Arc;

/// Real-valued grid function on a model geometry.
#[derive(Clone)]
pub struct ScalarField<T: Real> {
    geometry: Geometry<T>,
    values: Vec<T>,
}

impl<T: Real> std::fmt::Debug for ScalarField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("kind", &self.geometry.kind())
            .field("len", &self.values.len())
            .finish()
    }
}

impl<T: Real> ScalarField<T> {
    pub fn new(geometry: &Geometry<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                geometry.len()
            )));
        }
        if !all_finite(&values) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(ScalarField {
            geometry: Arc::clone(geometry),
            values,
        })
    }

    pub(crate) fn from_raw(geometry: &Geometry<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), geometry.len());
        ScalarField {
            geometry: Arc::clone(geometry),
            values,
        }
    }

    pub fn zeros(geometry: &Geometry<T>) -> Self {
        Self::constant(geometry, T::zero())
    }

    pub fn constant(geometry: &Geometry<T>, c: T) -> Self {
        Self::from_raw(geometry, vec![c; geometry.len()])
    }

    /// Evaluates `f` at the physical coordinates of every node.
    pub fn from_fn(geometry: &Geometry<T>, f: impl Fn(&[T]) -> T) -> Self {
        let values = (0..geometry.len()).map(|i| f(&geometry.node_coords(i))).collect();
        Self::from_raw(geometry, values)
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(&self.geometry, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self::from_raw(
            &self.geometry,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn shift(&self, s: T) -> Self {
        self.map(|x| x + s)
    }

    pub fn sup(&self) -> T {
        crate::scalar::max_of(&self.values)
    }

    pub fn inf(&self) -> T {
        crate::scalar::min_of(&self.values)
    }

    pub fn sup_norm(&self) -> T {
        crate::scalar::max_abs(&self.values)
    }

    /// Sup-norm distance to another field on the same geometry.
    pub fn distance(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        if self.geometry.same_as(&other.geometry) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch)
        }
    }
}

/// Top-degree form as a density against the reference volume element.
#[derive(Clone)]
pub struct VolumeDensity<T: Real> {
    geometry: Geometry<T>,
    density: Vec<T>,
}

impl<T: Real> std::fmt::Debug for VolumeDensity<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VolumeDensity")
            .field("kind", &self.geometry.kind())
            .field("len", &self.density.len())
            .finish()
    }
}

impl<T: Real> VolumeDensity<T> {
    pub fn new(geometry: &Geometry<T>, density: Vec<T>) -> Result<Self> {
        if density.len() != geometry.len() {
            return Err(Error::InvalidArgument("density length does not match grid".into()));
        }
        if !all_finite(&density) {
            return Err(Error::NonFinite("volume density"));
        }
        Ok(VolumeDensity {
            geometry: Arc::clone(geometry),
            density,
        })
    }

    pub(crate) fn from_raw(geometry: &Geometry<T>, density: Vec<T>) -> Self {
        VolumeDensity {
            geometry: Arc::clone(geometry),
            density,
        }
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn density(&self) -> &[T] {
        &self.density
    }

    pub fn into_density(self) -> Vec<T> {
        self.density
    }
}
