use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Integral of dd^c rho ^ d rho ^ d^c rho over the transverse (sphere) directions,
/// per unit of rho. Checked against a Monte Carlo evaluation in the test suite.
pub const TRANSVERSE_VOLUME: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// Area of a projective line for the form dd^c log|z|^2.
pub const CURVE_AREA: f64 = 2.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Torus1,
    Torus2,
    Hopf,
    BlowupCalabi,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Torus1,
        ModelKind::Torus2,
        ModelKind::Hopf,
        ModelKind::BlowupCalabi,
    ];

    /// Complex dimension of the model.
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Torus1 => 1,
            _ => 2,
        }
    }

    pub fn is_radial(self) -> bool {
        matches!(self, ModelKind::Hopf | ModelKind::BlowupCalabi)
    }

    pub fn is_torus(self) -> bool {
        matches!(self, ModelKind::Torus1 | ModelKind::Torus2)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Torus1 => "torus1",
            ModelKind::Torus2 => "torus2",
            ModelKind::Hopf => "hopf",
            ModelKind::BlowupCalabi => "blowup-calabi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubvarietyKind {
    /// The rho = -R end of the blow-up model.
    ExceptionalCurve,
    /// Elliptic fibre of the Hopf surface.
    FiberClass,
    Whole,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubvarietyTag {
    pub name: String,
    pub kind: SubvarietyKind,
}

impl SubvarietyTag {
    pub fn new(name: &str, kind: SubvarietyKind) -> Self {
        SubvarietyTag {
            name: name.to_string(),
            kind,
        }
    }

    pub fn whole() -> Self {
        Self::new("X", SubvarietyKind::Whole)
    }

    fn allowed_on(&self, kind: ModelKind) -> bool {
        match self.kind {
            SubvarietyKind::Whole => true,
            SubvarietyKind::FiberClass => kind == ModelKind::Hopf,
            SubvarietyKind::ExceptionalCurve => kind == ModelKind::BlowupCalabi,
        }
    }
}

/// Text-serializable description of a model geometry.
///
/// Keys: `kind`, `grid`, `period`, `interval`, `slopes`, `tracked`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: ModelKind,
    /// Grid points per coordinate. Torus2 accepts one entry (used for all four
    /// real coordinates) or four.
    pub grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Half-width R of the radial interval [-R, R] (blow-up model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<f64>,
    /// Asymptotic slopes (a_E, b_line) of the Calabi profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracked: Vec<SubvarietyTag>,
}

impl GeometryConfig {
    pub fn torus1(n: usize) -> Self {
        Self::bare(ModelKind::Torus1, vec![n])
    }

    pub fn torus2(n: usize) -> Self {
        Self::bare(ModelKind::Torus2, vec![n])
    }

    pub fn hopf(n: usize) -> Self {
        Self::bare(ModelKind::Hopf, vec![n])
    }

    pub fn blowup(n: usize, radius: f64, a_e: f64, b_line: f64) -> Self {
        GeometryConfig {
            interval: Some(radius),
            slopes: Some([a_e, b_line]),
            ..Self::bare(ModelKind::BlowupCalabi, vec![n])
        }
    }

    fn bare(kind: ModelKind, grid: Vec<usize>) -> Self {
        GeometryConfig {
            kind,
            grid,
            period: None,
            interval: None,
            slopes: None,
            tracked: Vec::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("geometry config serializes")
    }

    /// Range and consistency checks; returns the normalized grid shape.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        let shape = match (self.kind, self.grid.len()) {
            (ModelKind::Torus2, 1) => vec![self.grid[0]; 4],
            (ModelKind::Torus2, 4) => self.grid.clone(),
            (ModelKind::Torus2, k) => return bad(format!("torus2 needs 1 or 4 grid sizes, got {k}")),
            (_, 1) => self.grid.clone(),
            (kind, k) => return bad(format!("{} needs 1 grid size, got {k}", kind.name())),
        };
        if let Some(&n) = shape.iter().find(|&&n| n < 8) {
            return bad(format!("grid size {n} is below the minimum of 8"));
        }
        if self.kind != ModelKind::BlowupCalabi && shape.iter().any(|n| n % 2 != 0) {
            return bad("periodic grids must have even size".into());
        }
        match self.kind {
            ModelKind::Torus1 | ModelKind::Torus2 => {
                if let Some(p) = self.period {
                    if p != 1.0 {
                        return bad(format!("torus period is fixed to 1, got {p}"));
                    }
                }
            }
            ModelKind::Hopf => {
                if let Some(p) = self.period {
                    if !(p.is_finite() && p > 0.0) {
                        return bad(format!("hopf period must be positive, got {p}"));
                    }
                }
            }
            ModelKind::BlowupCalabi => {
                match self.interval {
                    Some(r) if r.is_finite() && r > 0.0 => {}
                    Some(r) => return bad(format!("interval half-width must be positive, got {r}")),
                    None => return bad("blowup-calabi requires `interval`".into()),
                }
                match self.slopes {
                    Some([a, b]) if a > 0.0 && a < b && b.is_finite() => {}
                    Some([a, b]) => return bad(format!("slopes must satisfy 0 < a_E < b_line, got ({a}, {b})")),
                    None => return bad("blowup-calabi requires `slopes`".into()),
                }
            }
        }
        if self.kind != ModelKind::BlowupCalabi && (self.interval.is_some() || self.slopes.is_some()) {
            return bad(format!("`interval`/`slopes` only apply to blowup-calabi, not {}", self.kind.name()));
        }
        for tag in &self.tracked {
            if !tag.allowed_on(self.kind) {
                return bad(format!("subvariety `{}` ({:?}) does not exist on {}", tag.name, tag.kind, self.kind.name()));
            }
        }
        Ok(shape)
    }
}

impl FromStr for GeometryConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: GeometryConfig = toml::from_str(s).map_err(|e| Error::InvalidGeometry(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) struct Stencil<T> {
    pub start: usize,
    pub w: Vec<T>,
}

impl<T: Real> Stencil<T> {
    #[inline]
    pub fn apply(&self, u: &[T]) -> T {
        self.w
            .iter()
            .zip(&u[self.start..self.start + self.w.len()])
            .fold(T::zero(), |s, (&w, &x)| s + w * x)
    }
}

/// Finite-difference weights for derivatives 0..=m at `x0` on nodes `xs` (Fornberg).
pub(crate) fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c
}

/// Fourth-order stencils on a uniform non-periodic grid, one-sided at the ends.
fn fd4_stencils<T: Real>(n: usize, h: f64, order: usize) -> Vec<Stencil<T>> {
    let width = if order == 1 { 5 } else { 6 };
    (0..n)
        .map(|i| {
            let start = if i >= 2 && i + 2 < n {
                i - 2
            } else if i < 2 {
                0
            } else {
                n - width
            };
            let len = if i >= 2 && i + 2 < n { 5 } else { width };
            let xs: Vec<f64> = (start..start + len).map(|j| j as f64).collect();
            let c = fornberg(i as f64, &xs, order);
            let scale = h.powi(order as i32);
            Stencil {
                start,
                w: c.iter().map(|row| lit(row[order] / scale)).collect(),
            }
        })
        .collect()
}

type Plan<T> = Arc<dyn Fft<T>>;

pub(crate) struct Spectral<T: Real> {
    /// forward and inverse plans per axis
    plans: Vec<(Plan<T>, Plan<T>)>,
    /// angular wavenumbers per axis (rad per unit length)
    pub wavenumbers: Vec<Vec<T>>,
    /// same, with the Nyquist mode zeroed (for odd-order factors)
    pub wavenumbers_odd: Vec<Vec<T>>,
}

impl<T: Real> Spectral<T> {
    fn new(shape: &[usize], period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let mut plans = Vec::new();
        let mut wavenumbers = Vec::new();
        let mut wavenumbers_odd = Vec::new();
        for &n in shape {
            plans.push((planner.plan_fft_forward(n), planner.plan_fft_inverse(n)));
            let base = 2.0 * std::f64::consts::PI / period;
            let k: Vec<f64> = (0..n)
                .map(|j| if j <= n / 2 { j as f64 } else { j as f64 - n as f64 })
                .collect();
            wavenumbers.push(k.iter().map(|&f| lit(base * f)).collect());
            wavenumbers_odd.push(
                k.iter()
                    .enumerate()
                    .map(|(j, &f)| if 2 * j == n { T::zero() } else { lit(base * f) })
                    .collect(),
            );
        }
        Spectral {
            plans,
            wavenumbers,
            wavenumbers_odd,
        }
    }

    /// In-place n-dimensional transform over a row-major array.
    pub fn transform(&self, shape: &[usize], data: &mut [Complex<T>], inverse: bool) {
        let d = shape.len();
        let mut scratch = Vec::new();
        for axis in 0..d {
            let n = shape[axis];
            let plan = if inverse { &self.plans[axis].1 } else { &self.plans[axis].0 };
            let stride: usize = shape[axis + 1..].iter().product();
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let outer: usize = shape[..axis].iter().product();
            scratch.resize(n, Complex::new(T::zero(), T::zero()));
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for j in 0..n {
                        scratch[j] = data[base + j * stride];
                    }
                    plan.process(&mut scratch);
                    for j in 0..n {
                        data[base + j * stride] = scratch[j];
                    }
                }
            }
        }
        if inverse {
            let total: usize = shape.iter().product();
            let s = T::one() / lit::<T>(total as f64);
            for z in data.iter_mut() {
                *z = z.scale(s);
            }
        }
    }
}

/// Discretization descriptor with cached transforms, stencils and quadrature weights.
pub struct ModelGeometry<T: Real> {
    config: GeometryConfig,
    kind: ModelKind,
    shape: Vec<usize>,
    spacing: T,
    period: T,
    radius: T,
    slopes: (T, T),
    tracked: Vec<SubvarietyTag>,
    coords: Vec<T>,
    weights: Vec<T>,
    pub(crate) spectral: Option<Spectral<T>>,
    pub(crate) fd1: Vec<Stencil<T>>,
    pub(crate) fd2: Vec<Stencil<T>>,
}

pub type Geometry<T> = Arc<ModelGeometry<T>>;

impl<T: Real> fmt::Debug for ModelGeometry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGeometry")
            .field("kind", &self.kind)
            .field("shape", &self.shape)
            .field("period", &self.period)
            .field("radius", &self.radius)
            .field("slopes", &self.slopes)
            .field("tracked", &self.tracked)
            .finish()
    }
}

fn default_tracked(kind: ModelKind) -> Vec<SubvarietyTag> {
    let mut v = vec![SubvarietyTag::whole()];
    match kind {
        ModelKind::Hopf => v.push(SubvarietyTag::new("fiber", SubvarietyKind::FiberClass)),
        ModelKind::BlowupCalabi => v.push(SubvarietyTag::new("E", SubvarietyKind::ExceptionalCurve)),
        _ => {}
    }
    v
}

impl<T: Real> ModelGeometry<T> {
    pub fn new(config: &GeometryConfig) -> Result<Geometry<T>> {
        let shape = config.validate()?;
        let kind = config.kind;
        let n0 = shape[0];
        let mut tracked = config.tracked.clone();
        if tracked.is_empty() {
            tracked = default_tracked(kind);
        }
        let (period, radius, slopes) = match kind {
            ModelKind::Torus1 | ModelKind::Torus2 => (1.0, 0.0, (0.0, 0.0)),
            ModelKind::Hopf => (config.period.unwrap_or(2.0 * std::f64::consts::LN_2), 0.0, (0.0, 0.0)),
            ModelKind::BlowupCalabi => {
                let r = config.interval.unwrap_or(0.0);
                let [a, b] = config.slopes.unwrap_or([0.0, 0.0]);
                (2.0 * r, r, (a, b))
            }
        };
        let spacing = match kind {
            ModelKind::BlowupCalabi => 2.0 * radius / (n0 - 1) as f64,
            _ => period / n0 as f64,
        };
        let coords: Vec<T> = (0..n0)
            .map(|i| match kind {
                ModelKind::BlowupCalabi => lit(-radius + i as f64 * spacing),
                _ => lit(i as f64 * spacing),
            })
            .collect();
        let total: usize = shape.iter().product();
        let weights: Vec<T> = match kind {
            ModelKind::Torus1 => vec![lit(1.0 / n0 as f64); total],
            ModelKind::Torus2 => vec![lit(0.5 / total as f64); total],
            ModelKind::Hopf => vec![lit(TRANSVERSE_VOLUME * spacing); total],
            ModelKind::BlowupCalabi => {
                let end = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
                (0..n0)
                    .map(|i| {
                        let e = if i < 3 {
                            end[i]
                        } else if i + 3 >= n0 {
                            end[n0 - 1 - i]
                        } else {
                            1.0
                        };
                        lit(TRANSVERSE_VOLUME * spacing * e)
                    })
                    .collect()
            }
        };
        let spectral = match kind {
            ModelKind::BlowupCalabi => None,
            _ => Some(Spectral::new(&shape, period)),
        };
        let (fd1, fd2) = if kind == ModelKind::BlowupCalabi {
            (fd4_stencils(n0, spacing, 1), fd4_stencils(n0, spacing, 2))
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Arc::new(ModelGeometry {
            config: config.clone(),
            kind,
            shape,
            spacing: lit(spacing),
            period: lit(period),
            radius: lit(radius),
            slopes: (lit(slopes.0), lit(slopes.1)),
            tracked,
            coords,
            weights,
            spectral,
            fd1,
            fd2,
        }))
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Grid spacing along each coordinate (uniform).
    pub fn spacing(&self) -> T {
        self.spacing
    }

    /// Period in the periodic coordinate; the interval length 2R on the blow-up model.
    pub fn period(&self) -> T {
        self.period
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn slopes(&self) -> (T, T) {
        self.slopes
    }

    pub fn tracked(&self) -> &[SubvarietyTag] {
        &self.tracked
    }

    /// Coordinates along the first axis (x on tori, rho on radial models).
    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    /// Quadrature weights, including the transverse constant on radial models.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Multi-index of node `i` (row-major).
    pub fn index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for (a, &n) in self.shape.iter().enumerate().rev() {
            idx[a] = i % n;
            i /= n;
        }
        idx
    }

    /// Physical coordinates of node `i`.
    pub fn node_coords(&self, i: usize) -> Vec<T> {
        self.index(i)
            .iter()
            .map(|&j| match self.kind {
                ModelKind::BlowupCalabi => self.coords[j],
                _ => lit::<T>(j as f64) * self.spacing,
            })
            .collect()
    }

    pub fn same_as(&self, other: &ModelGeometry<T>) -> bool {
        std::ptr::eq(self, other) || (self.kind == other.kind && self.shape == other.shape && self.config == other.config)
    }

    /// First and second derivative along the single axis of a 1-D model.
    pub(crate) fn derivs_1d(&self, u: &[T]) -> (Vec<T>, Vec<T>) {
        match self.kind {
            ModelKind::BlowupCalabi => (
                self.fd1.iter().map(|s| s.apply(u)).collect(),
                self.fd2.iter().map(|s| s.apply(u)).collect(),
            ),
            ModelKind::Torus1 | ModelKind::Hopf => {
                let sp = self.spectral.as_ref().expect("periodic model");
                let mut hat: Vec<Complex<T>> = u.iter().map(|&x| Complex::new(x, T::zero())).collect();
                sp.transform(&self.shape, &mut hat, false);
                let k = &sp.wavenumbers[0];
                let ko = &sp.wavenumbers_odd[0];
                let mut d1: Vec<Complex<T>> = hat.iter().zip(ko).map(|(z, &k)| z * Complex::new(T::zero(), k)).collect();
                let mut d2: Vec<Complex<T>> = hat.iter().zip(k).map(|(z, &k)| z.scale(-k * k)).collect();
                sp.transform(&self.shape, &mut d1, true);
                sp.transform(&self.shape, &mut d2, true);
                (d1.iter().map(|z| z.re).collect(), d2.iter().map(|z| z.re).collect())
            }
            ModelKind::Torus2 => panic!("derivs_1d on a 4-dimensional grid"),
        }
    }

    /// Second-order periodic finite differences (3-point) along the single axis.
    pub(crate) fn derivs_fd2_periodic(&self, u: &[T]) -> (Vec<T>, Vec<T>) {
        let n = u.len();
        let h = self.spacing;
        let two = lit::<T>(2.0);
        let mut d1 = vec![T::zero(); n];
        let mut d2 = vec![T::zero(); n];
        for i in 0..n {
            let l = u[(i + n - 1) % n];
            let r = u[(i + 1) % n];
            d1[i] = (r - l) / (two * h);
            d2[i] = (r - two * u[i] + l) / (h * h);
        }
        (d1, d2)
    }
}
