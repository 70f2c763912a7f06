//! Numerical laboratory for degenerate complex Monge-Ampere equations, psh envelopes
//! and the Chern-Ricci flow on symmetry-reduced model Hermitian manifolds.

pub mod error;
pub mod geometry;
pub(crate) mod linalg;
pub(crate) mod operator;
pub mod crf;
pub mod envelope;
pub mod ma_elliptic;
pub mod volume;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Geometry64 = geometry::Geometry<f64>;
pub type ScalarField64 = geometry::ScalarField<f64>;
pub type OneOneForm64 = geometry::OneOneForm<f64>;
pub type Geometry32 = geometry::Geometry<f32>;
pub type ScalarField32 = geometry::ScalarField<f32>;
pub type OneOneForm32 = geometry::OneOneForm<f32>;
