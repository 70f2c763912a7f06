use anyhow::{anyhow, bail, Result};
use ddbar_lab::crf::{FlowOptions, SingularityThresholds};
use ddbar_lab::geometry::{
    degenerate_blowup_class, hopf_wave, reference_form, GeometryConfig, Herm, ModelKind, OneOneForm, ScalarField,
};
use ddbar_lab::volume::SamplerConfig;
use ddbar_lab::Geometry64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SolveMa,
    Envelope,
    Flow,
    Volume,
    NullLocus,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SolveMa => "solve-ma",
            Experiment::Envelope => "envelope",
            Experiment::Flow => "flow",
            Experiment::Volume => "volume",
            Experiment::NullLocus => "null-locus",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Class representative; defaults to the reference form.
    pub theta: Option<FormPreset>,
    /// Reference (or initial) metric; defaults to the reference form.
    pub omega: Option<FormPreset>,
    /// Density of the Monge-Ampere equation.
    pub f: Option<FieldPreset>,
    /// Obstacle of the envelope problem.
    pub obstacle: Option<FieldPreset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum FormPreset {
    Reference,
    Scaled { factor: f64 },
    /// Nef class vanishing on the exceptional curve (blow-up model).
    DegenerateBlowup,
    /// e^h omega_H with h = amplitude sin(2 pi mode rho / L) (Hopf surface).
    Conformal { amplitude: f64, mode: usize },
    ConstantRadial { a: f64, b: f64 },
    ConstantMatrix {
        a11: f64,
        a22: f64,
        #[serde(default)]
        a12_re: f64,
        #[serde(default)]
        a12_im: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum FieldPreset {
    Constant {
        value: f64,
    },
    /// Sum of modes in the first coordinate, optionally exponentiated.
    Fourier {
        modes: Vec<Mode>,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        exponential: bool,
    },
    /// -amplitude max(cos(2 pi (x - shift)), 0).
    Bump {
        amplitude: f64,
        #[serde(default)]
        shift: f64,
    },
    /// 1 + amplitude exp(-(x / width)^2).
    Gaussian { amplitude: f64, width: f64 },
    Table { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for MaSettings {
    fn default() -> Self {
        MaSettings {
            tol: 1e-10,
            max_iter: 80,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeSettings {
    pub betas: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Measure the ladder against the exact discrete envelope (Torus1 only).
    pub oracle: bool,
    /// Contact tolerance; the default is 10 h^2 sup |f|.
    pub contact_tol: Option<f64>,
    /// Nodes with rho >= this value form the error region (blow-up model).
    pub region_min: Option<f64>,
}

impl Default for EnvelopeSettings {
    fn default() -> Self {
        EnvelopeSettings {
            betas: (4..=10).map(|k| f64::from(1u32 << k)).collect(),
            tol: 1e-9,
            max_iter: 400,
            oracle: false,
            contact_tol: None,
            region_min: None,
        }
    }
}

/// Sampler settings; the sampler is seeded with the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeSettings {
    pub n_samples: usize,
    pub n_modes: usize,
    pub decay: f64,
    pub margin_target: Option<f64>,
    pub refine_steps: usize,
    /// When set, also extrapolates the volume of theta + eps omega to eps = 0.
    pub epsilon_ladder: Option<Vec<f64>>,
}

impl Default for VolumeSettings {
    fn default() -> Self {
        let s = SamplerConfig::default();
        VolumeSettings {
            n_samples: s.n_samples,
            n_modes: s.n_modes,
            decay: s.decay,
            margin_target: s.margin_target,
            refine_steps: s.refine_steps,
            epsilon_ladder: None,
        }
    }
}

impl VolumeSettings {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_samples: self.n_samples,
            n_modes: self.n_modes,
            decay: self.decay,
            margin_target: self.margin_target,
            refine_steps: self.refine_steps,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullLocusSettings {
    /// Rerun with halved dt and a doubled grid to test the a-priori fits.
    pub stability: bool,
    /// Radial points for the distance probe (blow-up model).
    pub probe: Option<[f64; 2]>,
    /// Width of the exceptional neighbourhood; two grid spacings when absent.
    pub neighbourhood_width: Option<f64>,
    /// Lower end of the region tested for Cauchy convergence.
    pub cauchy_min: f64,
}

impl Default for NullLocusSettings {
    fn default() -> Self {
        NullLocusSettings {
            stability: false,
            probe: None,
            neighbourhood_width: None,
            cauchy_min: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub ma: MaSettings,
    pub envelope: EnvelopeSettings,
    pub flow: FlowOptions,
    pub singularity: SingularityThresholds,
    pub volume: VolumeSettings,
    #[serde(rename = "null-locus")]
    pub null_locus: NullLocusSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Per-node fields of the final state / solution.
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            fields: true,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("{}", e.to_string().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range and consistency checks without computation.
    pub fn validate(&self) -> Result<()> {
        let shape = self.geometry.validate()?;
        let kind = self.geometry.kind;
        let len: usize = shape.iter().product();
        let need = |key: &str| anyhow!("missing key `{key}` required by {}", self.experiment.name());
        match self.experiment {
            Experiment::SolveMa => {
                self.data.f.as_ref().ok_or_else(|| need("data.f"))?;
            }
            Experiment::Envelope => {
                self.data.obstacle.as_ref().ok_or_else(|| need("data.obstacle"))?;
                let e = &self.solver.envelope;
                if e.betas.is_empty() {
                    bail!("`solver.envelope.betas` is empty");
                }
                if e.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) || e.betas.windows(2).any(|w| w[1] <= w[0]) {
                    bail!("`solver.envelope.betas` must be positive and strictly increasing");
                }
                if e.oracle && kind != ModelKind::Torus1 {
                    bail!("`solver.envelope.oracle` needs a torus1 geometry");
                }
            }
            Experiment::Flow | Experiment::NullLocus => {
                let f = &self.solver.flow;
                let pos = [f.t_end, f.dt0, f.dt_min, f.dt_max, f.newton_tol, f.step_tol, f.sample_interval];
                if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    bail!("`solver.flow` step controls must be positive");
                }
                if f.dt_min > f.dt_max {
                    bail!("`solver.flow.dt_min` exceeds `dt_max`");
                }
                if self.experiment == Experiment::NullLocus && kind.is_torus() && self.solver.null_locus.probe.is_some() {
                    bail!("`solver.null-locus.probe` needs the blow-up model");
                }
            }
            Experiment::Volume => {
                let v = &self.solver.volume;
                if v.n_samples == 0 {
                    bail!("`solver.volume.n_samples` must be positive");
                }
                if let Some(l) = &v.epsilon_ladder {
                    if l.len() < 2 || l.iter().any(|e| !(*e > 0.0)) {
                        bail!("`solver.volume.epsilon_ladder` needs at least two positive entries");
                    }
                }
            }
        }
        let m = &self.solver.ma;
        if !(m.tol > 0.0) {
            bail!("`solver.ma.tol` must be positive");
        }
        for (key, p) in [("data.theta", &self.data.theta), ("data.omega", &self.data.omega)] {
            if let Some(p) = p {
                check_form(key, p, kind)?;
            }
        }
        for (key, p) in [("data.f", &self.data.f), ("data.obstacle", &self.data.obstacle)] {
            if let Some(FieldPreset::Table { values }) = p {
                if values.len() != len {
                    bail!("`{key}` table has {} values, the grid has {len}", values.len());
                }
            }
        }
        if let Some(FieldPreset::Gaussian { width, .. }) = &self.data.f {
            if !(*width > 0.0) {
                bail!("`data.f.width` must be positive");
            }
        }
        if self.output.dir.is_empty() {
            bail!("`output.dir` is empty");
        }
        Ok(())
    }
}

fn check_form(key: &str, p: &FormPreset, kind: ModelKind) -> Result<()> {
    let ok = match p {
        FormPreset::Reference => true,
        FormPreset::Scaled { factor } => *factor > 0.0,
        FormPreset::DegenerateBlowup => kind == ModelKind::BlowupCalabi,
        FormPreset::Conformal { mode, .. } => kind == ModelKind::Hopf && *mode > 0,
        FormPreset::ConstantRadial { .. } => kind.is_radial(),
        FormPreset::ConstantMatrix { .. } => kind.is_torus(),
    };
    if ok {
        Ok(())
    } else {
        Err(anyhow!("preset in `{key}` does not apply to {}", kind.name()))
    }
}

pub fn build_form(g: &Geometry64, p: Option<&FormPreset>) -> ddbar_lab::Result<OneOneForm<f64>> {
    match p.unwrap_or(&FormPreset::Reference) {
        FormPreset::Reference => Ok(reference_form(g)),
        FormPreset::Scaled { factor } => Ok(reference_form(g).scale(*factor)),
        FormPreset::DegenerateBlowup => degenerate_blowup_class(g),
        FormPreset::Conformal { amplitude, mode } => reference_form(g).conformal(&hopf_wave(g, *amplitude, *mode)?),
        FormPreset::ConstantRadial { a, b } => OneOneForm::constant_radial(g, *a, *b),
        FormPreset::ConstantMatrix {
            a11,
            a22,
            a12_re,
            a12_im,
        } => OneOneForm::constant_matrix(
            g,
            Herm {
                a11: *a11,
                a22: *a22,
                a12: num_complex::Complex::new(*a12_re, *a12_im),
            },
        ),
    }
}

pub fn build_field(g: &Geometry64, p: &FieldPreset) -> ddbar_lab::Result<ScalarField<f64>> {
    let period = if g.kind() == ModelKind::BlowupCalabi { 1.0 } else { g.period() };
    Ok(match p {
        FieldPreset::Constant { value } => ScalarField::constant(g, *value),
        FieldPreset::Fourier {
            modes,
            offset,
            exponential,
        } => ScalarField::from_fn(g, |x| {
            let w = 2.0 * PI * x[0] / period;
            let s = offset
                + modes
                    .iter()
                    .map(|m| m.cos * (f64::from(m.k) * w).cos() + m.sin * (f64::from(m.k) * w).sin())
                    .sum::<f64>();
            if *exponential {
                s.exp()
            } else {
                s
            }
        }),
        FieldPreset::Bump { amplitude, shift } => {
            ScalarField::from_fn(g, |x| -amplitude * (2.0 * PI * (x[0] / period - shift)).cos().max(0.0))
        }
        FieldPreset::Gaussian { amplitude, width } => {
            ScalarField::from_fn(g, |x| 1.0 + amplitude * (-(x[0] / width).powi(2)).exp())
        }
        FieldPreset::Table { values } => ScalarField::new(g, values.clone())?,
    })
}
