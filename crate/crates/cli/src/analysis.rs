//! Resonance measurement, empty/loaded pairing and inversion.

use permeameter_core::cavity::{self, ModeSpec};
use permeameter_core::perturbation::{
    complex_shift_from_resonances, invert_conventional, invert_permeability, ComplexPermeability, FactorModel,
    GeometryFactor, ModelTag, PerturbationError,
};
use permeameter_core::traceio::{
    find_resonances, fit_lorentzian, q_3db, FrequencyTrace, Resonance, TraceError, NEAR_CRITICAL_IL,
};
use serde::Serialize;

use crate::config::{QMethod, Resolved};

/// Largest relative frequency difference accepted when pairing an empty
/// resonance with a loaded one.
pub const PAIRING_GUARD: f64 = 0.10;

/// A resonance found in a trace, with any warnings raised measuring it.
#[derive(Debug, Clone)]
pub struct Measured {
    pub resonance: Resonance,
    pub warnings: Vec<String>,
}

/// Measure every resonance in `trace`. Peaks whose Q cannot be determined
/// are skipped and reported in the returned warnings.
pub fn measure_trace(trace: &FrequencyTrace, cfg: &Resolved) -> (Vec<Measured>, Vec<String>) {
    let mut found = Vec::new();
    let mut skipped = Vec::new();
    for k in find_resonances(trace, cfg.extraction.min_prominence_db) {
        let f = trace.freqs()[k];
        let mut warnings = Vec::new();
        let result = match cfg.extraction.q_method {
            QMethod::ThreeDb => q_3db(trace, k),
            QMethod::LorentzianFit => match fit_lorentzian(trace, k, cfg.extraction.window_bandwidths) {
                Err(TraceError::FitFailure {
                    reason,
                    fallback: Some(r),
                }) => {
                    warnings.push(format!("lorentzian fit failed ({reason}); using the 3-dB estimate"));
                    Ok(r)
                }
                other => other,
            },
        };
        match result {
            Ok(resonance) => {
                if resonance.il_linear > NEAR_CRITICAL_IL {
                    warnings.push(format!(
                        "insertion loss {:.3} is near critical coupling; Q0 is poorly conditioned",
                        resonance.il_linear
                    ));
                }
                found.push(Measured { resonance, warnings });
            }
            Err(e) => skipped.push(format!("peak near {f:.6e} Hz skipped: {e}")),
        }
    }
    (found, skipped)
}

/// Greedy nearest-frequency pairing within [`PAIRING_GUARD`]; each loaded
/// resonance is used once.
pub fn pair_resonances(empty: &[Measured], loaded: &[Measured]) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in empty.iter().enumerate() {
        for (j, l) in loaded.iter().enumerate() {
            let rel = ((l.resonance.f0 - e.resonance.f0) / e.resonance.f0).abs();
            if rel <= PAIRING_GUARD {
                candidates.push((rel, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; empty.len()];
    let mut used_l = vec![false; loaded.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_e[i] && !used_l[j] {
            used_e[i] = true;
            used_l[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort();
    pairs
}

/// Mode index whose analytic frequency is closest to `f`.
pub fn identify_mode(cfg: &Resolved, f: f64) -> ModeSpec {
    (1..=cfg.max_n)
        .map(|n| ModeSpec::new(n).expect("n >= 1"))
        .min_by(|a, b| {
            let da = (cavity::resonant_frequency(&cfg.cavity, *a) - f).abs();
            let db = (cavity::resonant_frequency(&cfg.cavity, *b) - f).abs();
            da.total_cmp(&db)
        })
        .expect("max_n >= 1")
}

#[derive(Debug, Clone, Serialize)]
pub struct Permeability {
    pub mu_re: f64,
    pub mu_im: f64,
    pub tan_dm: f64,
}

impl From<ComplexPermeability> for Permeability {
    fn from(m: ComplexPermeability) -> Self {
        Permeability {
            mu_re: m.mu_re,
            mu_im: m.mu_im,
            tan_dm: m.tan_dm(),
        }
    }
}

/// Outcome of one inversion; the error text is kept when it fails.
#[derive(Debug, Clone, Serialize)]
pub struct Inversion {
    pub g: f64,
    pub provenance: &'static str,
    pub result: Option<Permeability>,
    pub error: Option<String>,
    #[serde(skip)]
    pub unphysical: bool,
}

impl Inversion {
    fn from_result(g: GeometryFactor, r: Result<ComplexPermeability, PerturbationError>) -> Self {
        let unphysical = matches!(r, Err(PerturbationError::Unphysical { .. }));
        let (result, error) = match r {
            Ok(m) => (Some(m.into()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Inversion {
            g: g.value,
            provenance: g.provenance.as_str(),
            result,
            error,
            unphysical,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Pairing {
    pub mode_n: u32,
    pub f0_hz: f64,
    pub q0: f64,
    pub q_loaded_empty: f64,
    pub il_empty: f64,
    pub f_s_hz: f64,
    pub q_s: f64,
    pub q_loaded_sample: f64,
    pub il_sample: f64,
    pub q_method: &'static str,
    pub shift_re: f64,
    pub shift_im: f64,
    pub modified: Inversion,
    pub conventional: Inversion,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Extraction {
    pub empty_resonances: usize,
    pub loaded_resonances: usize,
    pub pairings: Vec<Pairing>,
    pub warnings: Vec<String>,
}

impl Extraction {
    pub fn any_unphysical(&self) -> bool {
        self.pairings.iter().any(|p| p.modified.unphysical)
    }
}

fn modified_factor(
    cfg: &Resolved,
    mode: ModeSpec,
    warnings: &mut Vec<String>,
) -> Result<GeometryFactor, PerturbationError> {
    let model = cfg.inversion_model();
    match model.geometry_factor(&cfg.cavity, &cfg.sample, mode) {
        Err(PerturbationError::UnsupportedMode(n)) if model.tag != ModelTag::Quadrature => {
            warnings.push(format!(
                "closed-form factor needs an even mode, got n = {n}; using quadrature"
            ));
            FactorModel {
                tag: ModelTag::Quadrature,
                ..model
            }
            .geometry_factor(&cfg.cavity, &cfg.sample, mode)
        }
        other => other,
    }
}

fn invert_pair(cfg: &Resolved, empty: &Measured, loaded: &Measured) -> Result<Pairing, PerturbationError> {
    let (e, l) = (&empty.resonance, &loaded.resonance);
    let mut warnings: Vec<String> = empty
        .warnings
        .iter()
        .map(|w| format!("empty: {w}"))
        .chain(loaded.warnings.iter().map(|w| format!("loaded: {w}")))
        .collect();
    let measurement = complex_shift_from_resonances(e, l)?;
    if measurement.suspicious_pairing {
        warnings.push("loaded resonance is far above the empty one; check the mode pairing".into());
    }
    let shift = measurement.shift;
    let mode = identify_mode(cfg, e.f0);

    let g = modified_factor(cfg, mode, &mut warnings)?;
    let modified = Inversion::from_result(g, invert_permeability(shift, g, cfg.cavity.mu_rs));

    let gc = permeameter_core::perturbation::conventional_factor(&cfg.cavity, &cfg.sample, mode)?;
    let conventional = Inversion::from_result(
        gc,
        invert_conventional(shift, &cfg.cavity, &cfg.sample, mode, cfg.cavity.mu_rs),
    );

    Ok(Pairing {
        mode_n: mode.n,
        f0_hz: e.f0,
        q0: e.q_unloaded,
        q_loaded_empty: e.q_loaded,
        il_empty: e.il_linear,
        f_s_hz: l.f0,
        q_s: l.q_unloaded,
        q_loaded_sample: l.q_loaded,
        il_sample: l.il_linear,
        q_method: l.method.as_str(),
        shift_re: shift.re,
        shift_im: shift.im,
        modified,
        conventional,
        warnings,
    })
}

/// Measure both traces, pair their resonances and invert each pair.
pub fn extract(
    cfg: &Resolved,
    empty: &FrequencyTrace,
    loaded: &FrequencyTrace,
) -> Result<Extraction, PerturbationError> {
    let (e_found, e_skipped) = measure_trace(empty, cfg);
    let (l_found, l_skipped) = measure_trace(loaded, cfg);
    let mut warnings: Vec<String> = e_skipped
        .into_iter()
        .map(|w| format!("empty: {w}"))
        .chain(l_skipped.into_iter().map(|w| format!("loaded: {w}")))
        .collect();
    let pairs = pair_resonances(&e_found, &l_found);
    let unpaired = e_found.len() - pairs.len();
    if unpaired > 0 && !pairs.is_empty() {
        warnings.push(format!("{unpaired} empty resonance(s) had no loaded partner"));
    }
    let pairings = pairs
        .into_iter()
        .map(|(i, j)| invert_pair(cfg, &e_found[i], &l_found[j]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Extraction {
        empty_resonances: e_found.len(),
        loaded_resonances: l_found.len(),
        pairings,
        warnings,
    })
}
