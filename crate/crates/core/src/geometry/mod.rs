//! Model geometries, grid fields, the dd^c calculus and positivity tests.

mod calculus;
mod field;
mod form;
mod model;
mod models;

pub use calculus::{
    ddc, ddc_fd2, integrate, ma_density, max_glue, positivity_margin, restricted_volume, ricci_form, trace,
    wedge_top,
};
pub use field::{ScalarField, VolumeDensity};
pub use form::{FormData, Herm, OneOneForm};
pub use model::{
    Geometry, GeometryConfig, ModelGeometry, ModelKind, SubvarietyKind, SubvarietyTag, CURVE_AREA,
    TRANSVERSE_VOLUME,
};
pub use models::{degenerate_blowup_class, hopf_wave, reference_form, singularity_potential};

pub(crate) use calculus::{
    ddc_data, for_each_index4, integrate_raw, ma_data, margin_raw, reference_positive, ricci_data,
    restricted_volume_raw, torus2_symbol, trace_data, wedge2,
};
