//! JSON run configuration. Lengths are millimeters, frequencies hertz.

use std::path::Path;

use permeameter_core::cavity::{self, CavitySpec, ModeSpec};
use permeameter_core::perturbation::{ComplexPermeability, FactorModel, InteractionChoice, ModelTag, SampleSpec};
use permeameter_core::traceio::{
    DataFormat, Resonance, ResonanceMethod, DEFAULT_PROMINENCE_DB, DEFAULT_WINDOW_BANDWIDTHS,
};
use permeameter_core::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const MM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cavity: CavitySection,
    pub sample: SampleSection,
    pub mode: ModeSection,
    #[serde(default)]
    pub extraction: ExtractionSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    /// Physical width when a via fence is given, electrical width otherwise.
    pub width_mm: f64,
    pub length_mm: f64,
    pub height_mm: f64,
    pub eps_r: f64,
    #[serde(default = "one")]
    pub mu_rs_re: f64,
    #[serde(default)]
    pub mu_rs_im: f64,
    #[serde(default)]
    pub via_diameter_mm: Option<f64>,
    #[serde(default)]
    pub via_pitch_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    /// Bar extent across the cavity width.
    pub extent_x_mm: f64,
    /// Bar extent along the cavity length.
    pub extent_z_mm: f64,
    /// Defaults to the full substrate height.
    #[serde(default)]
    pub thickness_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub n: u32,
    /// Highest mode index listed by `modes` and considered when matching
    /// measured resonances to modes.
    #[serde(default = "default_max_n")]
    pub max_n: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMethod {
    ThreeDb,
    #[default]
    LorentzianFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSection {
    pub q_method: QMethod,
    pub interaction: InteractionChoice,
    /// Geometry factor used to synthesize loaded traces.
    pub forward_model: ModelTag,
    /// Geometry factor used by the modified-formula inversion.
    pub inversion_model: ModelTag,
    pub quadrature_cells: usize,
    pub min_prominence_db: f64,
    pub window_bandwidths: f64,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            q_method: QMethod::LorentzianFit,
            interaction: InteractionChoice::TransverseHz,
            forward_model: ModelTag::Quadrature,
            inversion_model: ModelTag::Derived,
            quadrature_cells: 64,
            min_prominence_db: DEFAULT_PROMINENCE_DB,
            window_bandwidths: DEFAULT_WINDOW_BANDWIDTHS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Empty-cavity resonance; defaults to the analytic TE₁₀ₙ frequency.
    pub f0_hz: Option<f64>,
    /// Empty-cavity unloaded Q. The default of 800 is arbitrary.
    pub q0: f64,
    pub il_linear: f64,
    pub n_points: usize,
    /// Half-span around the resonances, in widest loaded bandwidths, used
    /// when `f_start_hz`/`f_stop_hz` are not given.
    pub span_bandwidths: f64,
    pub f_start_hz: Option<f64>,
    pub f_stop_hz: Option<f64>,
    pub noise_floor_db: Option<f64>,
    pub seed: u64,
    pub format: DataFormat,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            f0_hz: None,
            q0: 800.0,
            il_linear: 0.5,
            n_points: 1001,
            span_bandwidths: 10.0,
            f_start_hz: None,
            f_stop_hz: None,
            noise_floor_db: None,
            seed: 1,
            format: DataFormat::RI,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_max_n() -> u32 {
    8
}

impl Default for RunConfig {
    /// 30 mm × 60 mm × 1.57 mm cavity on ε_r = 2.2, 10 mm × 2 mm bar, TE₁₀₄.
    fn default() -> Self {
        RunConfig {
            cavity: CavitySection {
                width_mm: 30.0,
                length_mm: 60.0,
                height_mm: 1.57,
                eps_r: 2.2,
                mu_rs_re: 1.0,
                mu_rs_im: 0.0,
                via_diameter_mm: None,
                via_pitch_mm: None,
            },
            sample: SampleSection {
                extent_x_mm: 10.0,
                extent_z_mm: 2.0,
                thickness_mm: None,
            },
            mode: ModeSection { n: 4, max_n: 8 },
            extraction: ExtractionSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Validated configuration in SI units.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cavity: CavitySpec,
    pub sample: SampleSpec,
    pub mode: ModeSpec,
    pub max_n: u32,
    pub extraction: ExtractionSection,
    pub synth: SynthSection,
}

impl Resolved {
    pub fn forward_model(&self) -> FactorModel {
        FactorModel {
            tag: self.extraction.forward_model,
            choice: self.extraction.interaction,
            cells: self.extraction.quadrature_cells,
        }
    }

    pub fn inversion_model(&self) -> FactorModel {
        FactorModel {
            tag: self.extraction.inversion_model,
            ..self.forward_model()
        }
    }

    pub fn empty_resonance(&self) -> Result<Resonance, CliError> {
        let f0 = self
            .synth
            .f0_hz
            .unwrap_or_else(|| cavity::resonant_frequency(&self.cavity, self.mode));
        Resonance::from_unloaded(f0, self.synth.q0, self.synth.il_linear, ResonanceMethod::Model)
            .map_err(|e| CliError::Config(format!("synth: {e}")))
    }
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{field} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let c = &self.cavity;
        let width = positive("cavity.width_mm", c.width_mm)? * MM;
        let length = positive("cavity.length_mm", c.length_mm)? * MM;
        let height = positive("cavity.height_mm", c.height_mm)? * MM;
        if !(c.eps_r >= 1.0) {
            return Err(CliError::Config(format!("cavity.eps_r must be >= 1, got {}", c.eps_r)));
        }
        let geometry = |e: cavity::CavityError| CliError::Config(format!("cavity: {e}"));
        let base = match (c.via_diameter_mm, c.via_pitch_mm) {
            (None, None) => CavitySpec::new(width, length, height, c.eps_r).map_err(geometry)?,
            (Some(d), Some(p)) => {
                let d = positive("cavity.via_diameter_mm", d)? * MM;
                let p = positive("cavity.via_pitch_mm", p)? * MM;
                CavitySpec::from_siw(width, length, height, c.eps_r, d, p).map_err(geometry)?
            }
            _ => {
                return Err(CliError::Config(
                    "cavity.via_diameter_mm and cavity.via_pitch_mm must be given together".into(),
                ))
            }
        };
        let cavity = base
            .with_mu_rs(Complex64::new(c.mu_rs_re, c.mu_rs_im))
            .map_err(geometry)?;

        let s = &self.sample;
        let thickness = match s.thickness_mm {
            Some(t) => positive("sample.thickness_mm", t)? * MM,
            None => cavity.height_h,
        };
        let sample = SampleSpec::new(
            positive("sample.extent_x_mm", s.extent_x_mm)? * MM,
            positive("sample.extent_z_mm", s.extent_z_mm)? * MM,
            thickness,
        )
        .map_err(|e| CliError::Config(format!("sample: {e}")))?;
        sample
            .validate_in(&cavity)
            .map_err(|e| CliError::Config(format!("sample: {e}")))?;

        let mode = ModeSpec::new(self.mode.n).map_err(|e| CliError::Config(format!("mode.n: {e}")))?;
        if self.mode.max_n < 1 {
            return Err(CliError::Config("mode.max_n must be >= 1".into()));
        }

        let x = &self.extraction;
        if x.quadrature_cells < 8 {
            return Err(CliError::Config(format!(
                "extraction.quadrature_cells must be >= 8, got {}",
                x.quadrature_cells
            )));
        }
        positive("extraction.min_prominence_db", x.min_prominence_db)?;
        if !(x.window_bandwidths >= 3.0) {
            return Err(CliError::Config(format!(
                "extraction.window_bandwidths must be >= 3, got {}",
                x.window_bandwidths
            )));
        }

        let y = &self.synth;
        positive("synth.q0", y.q0)?;
        if !(y.il_linear > 0.0 && y.il_linear < 1.0) {
            return Err(CliError::Config(format!(
                "synth.il_linear must lie in (0, 1), got {}",
                y.il_linear
            )));
        }
        if y.n_points < 101 {
            return Err(CliError::Config(format!(
                "synth.n_points must be >= 101, got {}",
                y.n_points
            )));
        }
        positive("synth.span_bandwidths", y.span_bandwidths)?;
        if let Some(f) = y.f0_hz {
            positive("synth.f0_hz", f)?;
        }
        if y.f_start_hz.is_some() != y.f_stop_hz.is_some() {
            return Err(CliError::Config(
                "synth.f_start_hz and synth.f_stop_hz must be given together".into(),
            ));
        }
        if let Some(db) = y.noise_floor_db {
            if !(db < -20.0) {
                return Err(CliError::Config(format!(
                    "synth.noise_floor_db must be below -20, got {db}"
                )));
            }
        }

        Ok(Resolved {
            cavity,
            sample,
            mode,
            max_n: self.mode.max_n,
            extraction: x.clone(),
            synth: y.clone(),
        })
    }
}

/// One material of a synthesis roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    pub mu_re: f64,
    pub tan_dm: f64,
    /// Leave the loss tangent out of pass/fail summaries; it is still
    /// synthesized and reported.
    #[serde(default)]
    pub exclude_tan_dm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialTable {
    #[serde(default = "default_campaign")]
    pub campaign: String,
    pub materials: Vec<Material>,
}

fn default_campaign() -> String {
    "campaign".into()
}

impl MaterialTable {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read materials {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid materials file {}: {e}", path.display())))
    }

    pub fn permeabilities(&self) -> Result<Vec<(String, ComplexPermeability)>, CliError> {
        self.materials
            .iter()
            .map(|m| {
                ComplexPermeability::from_loss_tangent(m.mu_re, m.tan_dm)
                    .map(|mu| (m.name.clone(), mu))
                    .map_err(|e| CliError::Config(format!("material {}: {e}", m.name)))
            })
            .collect()
    }
}
