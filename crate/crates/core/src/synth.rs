//! Forward model: known permeability in, loaded resonance and synthetic
//! Touchstone traces out.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::{CavitySpec, ModeSpec};
use crate::perturbation::{fractional_shift_closed, ComplexPermeability, FactorModel, PerturbationError, SampleSpec};
use crate::traceio::{write_touchstone, DataFormat, FrequencyTrace, Resonance, ResonanceMethod, TraceError};

/// Minimum distance from a resonance to either trace edge, in bandwidths.
pub const EDGE_MARGIN_BANDWIDTHS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("perturbation model breaks down: fractional shift {0} is not small")]
    ModelBreakdown(f64),
    #[error("invalid synthesis configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub f_start: f64,
    pub f_stop: f64,
    pub n_points: usize,
    /// Additive complex Gaussian noise RMS in dB (relative to |S21| = 1).
    pub noise_floor_db: Option<f64>,
    pub seed: u64,
    pub il_linear: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(self.f_start.is_finite() && self.f_stop.is_finite() && self.f_start > 0.0 && self.f_start < self.f_stop) {
            return bad(format!(
                "need 0 < f_start < f_stop, got {} .. {}",
                self.f_start, self.f_stop
            ));
        }
        if self.n_points < 101 {
            return bad(format!("n_points must be >= 101, got {}", self.n_points));
        }
        if let Some(db) = self.noise_floor_db {
            if !(db < -20.0) {
                return bad(format!("noise_floor_db must be below -20 dB, got {db}"));
            }
        }
        if !(self.il_linear > 0.0 && self.il_linear < 1.0) {
            return bad(format!("il_linear must lie in (0, 1), got {}", self.il_linear));
        }
        Ok(())
    }

    /// Frequency span covering every resonance with `span_bandwidths` of
    /// their widest bandwidth on each side.
    pub fn span_covering(resonances: &[Resonance], span_bandwidths: f64) -> Option<(f64, f64)> {
        let widest = resonances.iter().map(Resonance::bandwidth).fold(0.0, f64::max);
        let lo = resonances.iter().map(|r| r.f0).reduce(f64::min)?;
        let hi = resonances.iter().map(|r| r.f0).reduce(f64::max)?;
        Some((lo - span_bandwidths * widest, hi + span_bandwidths * widest))
    }
}

/// Resonance of the cavity after loading a sample of permeability `mu_r`.
///
/// Coupling is assumed unchanged, so the insertion loss is copied from the
/// empty resonance.
pub fn forward_load(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    mu_r: ComplexPermeability,
    empty: &Resonance,
    model: &FactorModel,
) -> Result<Resonance, SynthError> {
    let g = model.geometry_factor(cavity, sample, mode)?;
    let delta = fractional_shift_closed(mu_r, cavity.mu_rs, g);
    if delta.re >= 1.0 {
        return Err(SynthError::ModelBreakdown(delta.re));
    }
    let f0 = empty.f0 / (1.0 - delta.re);
    // 1/Q₀' = 1/Q₀ + 2Δ.im
    let denom = 1.0 + 2.0 * delta.im * empty.q_unloaded;
    if !(denom > 0.0) {
        return Err(SynthError::ModelBreakdown(delta.im));
    }
    let q_unloaded = empty.q_unloaded / denom;
    Ok(Resonance {
        f0,
        q_loaded: empty.q_loaded / denom,
        q_unloaded,
        il_linear: empty.il_linear,
        method: ResonanceMethod::Model,
    })
}

/// Single-resonance transmission trace `IL/(1 + j·2Q_L(f - f0)/f0)`.
pub fn lorentzian_trace(res: &Resonance, cfg: &SynthConfig) -> Result<FrequencyTrace, SynthError> {
    cfg.validate()?;
    let margin = EDGE_MARGIN_BANDWIDTHS * res.bandwidth();
    if res.f0 - margin < cfg.f_start || res.f0 + margin > cfg.f_stop {
        return Err(SynthError::InvalidConfig(format!(
            "resonance at {} Hz needs {EDGE_MARGIN_BANDWIDTHS} bandwidths ({margin} Hz) of margin inside {} .. {} Hz",
            res.f0, cfg.f_start, cfg.f_stop
        )));
    }
    let step = (cfg.f_stop - cfg.f_start) / (cfg.n_points - 1) as f64;
    let freqs: Vec<f64> = (0..cfg.n_points).map(|i| cfg.f_start + step * i as f64).collect();
    let il = Complex64::new(res.il_linear, 0.0);
    let mut s21: Vec<Complex64> = freqs
        .iter()
        .map(|&f| il / Complex64::new(1.0, 2.0 * res.q_loaded * (f - res.f0) / res.f0))
        .collect();
    if let Some(db) = cfg.noise_floor_db {
        let sigma = 10f64.powf(db / 20.0) / 2f64.sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for s in &mut s21 {
            *s += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(FrequencyTrace::new(freqs, s21, None)?)
}

#[derive(Debug, Clone)]
pub struct CampaignEntry {
    pub label: String,
    pub file_name: String,
    pub resonance: Resonance,
    pub trace: FrequencyTrace,
}

/// Empty-cavity trace followed by one loaded trace per material.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub name: String,
    pub entries: Vec<CampaignEntry>,
}

fn check_label(label: &str) -> Result<(), SynthError> {
    let ok = !label.is_empty()
        && label != "empty"
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !label.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(format!(
            "label '{label}' must be non-empty ASCII [A-Za-z0-9._-] and not 'empty'"
        )))
    }
}

/// Forward-model every material and render all traces.
///
/// Entry `k` (the empty cavity is entry 0) draws noise from seed
/// `cfg.seed + k`.
#[allow(clippy::too_many_arguments)]
pub fn synth_campaign(
    name: &str,
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    materials: &[(String, ComplexPermeability)],
    empty: &Resonance,
    cfg: &SynthConfig,
    model: &FactorModel,
) -> Result<Campaign, SynthError> {
    check_label(name)?;
    for (label, _) in materials {
        check_label(label)?;
    }
    if let Some(dup) = materials
        .iter()
        .enumerate()
        .find(|(i, (l, _))| materials[..*i].iter().any(|(o, _)| o == l))
    {
        return Err(SynthError::InvalidConfig(format!(
            "duplicate material label '{}'",
            dup.1 .0
        )));
    }
    let mut resonances = vec![("empty".to_string(), *empty)];
    for (label, mu) in materials {
        resonances.push((label.clone(), forward_load(cavity, sample, mode, *mu, empty, model)?));
    }
    let entries = resonances
        .into_iter()
        .enumerate()
        .map(|(k, (label, resonance))| {
            let item_cfg = SynthConfig {
                seed: cfg.seed.wrapping_add(k as u64),
                ..*cfg
            };
            let trace = lorentzian_trace(&resonance, &item_cfg)?.with_source(format!("{name} {label}"));
            Ok(CampaignEntry {
                file_name: format!("{name}_{label}.s2p"),
                label,
                resonance,
                trace,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(Campaign {
        name: name.to_string(),
        entries,
    })
}

impl Campaign {
    /// Write one Touchstone file per entry into `dir`.
    pub fn write(&self, dir: &Path, format: DataFormat) -> Result<Vec<PathBuf>, SynthError> {
        self.entries
            .iter()
            .map(|e| {
                let path = dir.join(&e.file_name);
                fs::write(&path, write_touchstone(&e.trace, format)).map_err(|source| SynthError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(path)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavity::resonant_frequency;
    use crate::perturbation::{
        complex_shift_from_resonances, geometry_factor_derived, GeometryFactor, InteractionChoice, ModelTag, Provenance,
    };
    use crate::traceio::{find_resonances, fit_lorentzian, to_csv};
    use approx::assert_relative_eq;

    const MM: f64 = 1e-3;

    fn cavity() -> CavitySpec {
        CavitySpec::new(30.0 * MM, 60.0 * MM, 1.57 * MM, 2.2).unwrap()
    }

    fn sample() -> SampleSpec {
        SampleSpec::new(10.0 * MM, 2.0 * MM, 1.57 * MM).unwrap()
    }

    fn mode() -> ModeSpec {
        ModeSpec::new(4).unwrap()
    }

    fn empty() -> Resonance {
        Resonance::from_unloaded(
            resonant_frequency(&cavity(), mode()),
            800.0,
            0.5,
            ResonanceMethod::Model,
        )
        .unwrap()
    }

    fn cfg_around(r: &Resonance) -> SynthConfig {
        let (f_start, f_stop) = SynthConfig::span_covering(&[*r], 10.0).unwrap();
        SynthConfig {
            f_start,
            f_stop,
            n_points: 1001,
            noise_floor_db: None,
            seed: 7,
            il_linear: 0.5,
        }
    }

    /// Fixed geometry factor, for checking the forward arithmetic alone.
    fn worked_g() -> FactorModel {
        FactorModel {
            tag: ModelTag::Derived,
            choice: InteractionChoice::AxialHx,
            cells: 64,
        }
    }

    #[test]
    fn identity_material_leaves_resonance_unchanged() {
        let e = empty();
        let mu = ComplexPermeability::new(1.0, 0.0).unwrap();
        let loaded = forward_load(&cavity(), &sample(), mode(), mu, &e, &FactorModel::default()).unwrap();
        assert_eq!(loaded.f0, e.f0);
        assert_eq!(loaded.q_unloaded, e.q_unloaded);
        assert_eq!(loaded.q_loaded, e.q_loaded);
    }

    #[test]
    fn sample_x_forward_arithmetic() {
        // Δ for g = 1.464e-3 fed straight through the forward update
        let e = empty();
        let g = GeometryFactor {
            value: 1.464e-3,
            provenance: Provenance::Printed,
        };
        let mu = ComplexPermeability::from_loss_tangent(1.5, 0.05).unwrap();
        let d = fractional_shift_closed(mu, Complex64::new(1.0, 0.0), g);
        let f = e.f0 / (1.0 - d.re);
        let q = 1.0 / (1.0 / e.q_unloaded + 2.0 * d.im);
        assert!(((e.f0 - f) - 2.76e6).abs() < 0.01e6, "{}", e.f0 - f);
        assert!((q - 735.4).abs() < 0.5, "{q}");
    }

    #[test]
    fn forward_then_measured_shift_reproduces_model() {
        let e = empty();
        let model = worked_g();
        let g = geometry_factor_derived(&cavity(), &sample(), mode(), model.choice).unwrap();
        let mu = ComplexPermeability::from_loss_tangent(1.6, 0.1).unwrap();
        let loaded = forward_load(&cavity(), &sample(), mode(), mu, &e, &model).unwrap();
        let measured = complex_shift_from_resonances(&e, &loaded).unwrap().shift;
        let expected = fractional_shift_closed(mu, Complex64::new(1.0, 0.0), g);
        assert_relative_eq!(measured.re, expected.re, max_relative = 1e-12);
        assert_relative_eq!(measured.im, expected.im, max_relative = 1e-12);
    }

    #[test]
    fn loss_only_changes_q() {
        let e = empty();
        let model = worked_g();
        let mut prev_q = f64::INFINITY;
        let mut f = None;
        for tan in [0.0, 0.02, 0.05, 0.1, 0.2] {
            let mu = ComplexPermeability::from_loss_tangent(1.5, tan).unwrap();
            let r = forward_load(&cavity(), &sample(), mode(), mu, &e, &model).unwrap();
            assert!(r.q_unloaded < prev_q || tan == 0.0);
            prev_q = r.q_unloaded;
            if let Some(f) = f {
                assert_eq!(r.f0, f);
            }
            f = Some(r.f0);
        }
    }

    #[test]
    fn breakdown_detected() {
        // a lossless sample in a lossy substrate raises Q; far enough and the
        // first-order update goes through infinity
        let c = cavity().with_mu_rs(Complex64::new(1.0, -0.9)).unwrap();
        let s = SampleSpec::full_height(c.width_a, c.length_l, &c).unwrap();
        let model = FactorModel {
            tag: ModelTag::Derived,
            choice: InteractionChoice::BothComponents,
            cells: 64,
        };
        let mu = ComplexPermeability::new(1.0, 0.0).unwrap();
        assert!(matches!(
            forward_load(&c, &s, mode(), mu, &empty(), &model),
            Err(SynthError::ModelBreakdown(_))
        ));
    }

    #[test]
    fn trace_shape() {
        let e = empty();
        let cfg = SynthConfig {
            n_points: 1001,
            ..cfg_around(&e)
        };
        let mut centered = cfg;
        // put f0 exactly on the grid
        centered.f_start = e.f0 - 500.0 * (cfg.f_stop - cfg.f_start) / 1000.0;
        centered.f_stop = e.f0 + 500.0 * (cfg.f_stop - cfg.f_start) / 1000.0;
        let t = lorentzian_trace(&e, &centered).unwrap();
        let peak = t.s21()[500];
        assert!((peak.norm() - e.il_linear).abs() < 1e-12);
        let hp = Resonance { ..e };
        let f_half = hp.f0 + hp.f0 / (2.0 * hp.q_loaded);
        let x = 2.0 * hp.q_loaded * (f_half - hp.f0) / hp.f0;
        let v = Complex64::new(hp.il_linear, 0.0) / Complex64::new(1.0, x);
        assert_relative_eq!(v.norm(), hp.il_linear / 2f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(v.arg(), -x.atan(), max_relative = 1e-12);
    }

    #[test]
    fn margin_enforced() {
        let e = empty();
        let cfg = SynthConfig {
            f_start: e.f0 - 2.0 * e.bandwidth(),
            f_stop: e.f0 + 10.0 * e.bandwidth(),
            n_points: 501,
            noise_floor_db: None,
            seed: 0,
            il_linear: 0.5,
        };
        assert!(matches!(lorentzian_trace(&e, &cfg), Err(SynthError::InvalidConfig(_))));
        let bad_noise = SynthConfig {
            noise_floor_db: Some(-10.0),
            ..cfg_around(&e)
        };
        assert!(lorentzian_trace(&e, &bad_noise).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let e = empty();
        let cfg = SynthConfig {
            noise_floor_db: Some(-60.0),
            ..cfg_around(&e)
        };
        let a = lorentzian_trace(&e, &cfg).unwrap();
        let b = lorentzian_trace(&e, &cfg).unwrap();
        assert_eq!(to_csv(&a), to_csv(&b));
        let c = lorentzian_trace(&e, &SynthConfig { seed: 8, ..cfg }).unwrap();
        let q = |t: &FrequencyTrace| {
            let k = find_resonances(t, 3.0)
                .into_iter()
                .max_by(|&i, &j| t.s21()[i].norm().total_cmp(&t.s21()[j].norm()))
                .unwrap();
            fit_lorentzian(t, k, 5.0).unwrap().q_loaded
        };
        assert_ne!(q(&a), q(&c));
    }

    #[test]
    fn campaign_layout() {
        let e = empty();
        let cfg = cfg_around(&e);
        let materials: Vec<(String, ComplexPermeability)> = [("U", 1.2, 0.04), ("V", 1.4, 0.06)]
            .iter()
            .map(|&(n, m, t)| (n.to_string(), ComplexPermeability::from_loss_tangent(m, t).unwrap()))
            .collect();
        let model = FactorModel::default();
        let c = synth_campaign("run", &cavity(), &sample(), mode(), &materials, &e, &cfg, &model).unwrap();
        let names: Vec<_> = c.entries.iter().map(|e| e.file_name.as_str()).collect();
        assert_eq!(names, ["run_empty.s2p", "run_U.s2p", "run_V.s2p"]);
        let only_empty = synth_campaign("run", &cavity(), &sample(), mode(), &[], &e, &cfg, &model).unwrap();
        assert_eq!(only_empty.entries.len(), 1);
        let clash = vec![("empty".to_string(), materials[0].1)];
        assert!(synth_campaign("run", &cavity(), &sample(), mode(), &clash, &e, &cfg, &model).is_err());
        let dup = vec![materials[0].clone(), materials[0].clone()];
        assert!(synth_campaign("run", &cavity(), &sample(), mode(), &dup, &e, &cfg, &model).is_err());
    }
}
