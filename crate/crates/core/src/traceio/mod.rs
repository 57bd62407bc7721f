//! Measurement-facing side: Touchstone traces, resonance detection and
//! Q-factor extraction.

mod fit;
mod peaks;
mod touchstone;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{fit_lorentzian, DEFAULT_WINDOW_BANDWIDTHS, FIT_MAX_ITERATIONS, FIT_TOLERANCE};
pub use peaks::{find_resonances, q_3db, unload_q, UnloadedQ, DEFAULT_PROMINENCE_DB, HALF_POWER_DB, NEAR_CRITICAL_IL};
pub use touchstone::{parse_touchstone, to_csv, write_touchstone, CSV_HEADER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("insufficient span: no half-power crossing on the {0} side of the peak")]
    InsufficientSpan(Side),
    #[error("peak index {0} is not an interior point of the trace")]
    BadPeakIndex(usize),
    #[error("over-coupled resonator: insertion loss {0} must be < 1")]
    OverCoupled(f64),
    #[error("invalid resonance: {0}")]
    InvalidResonance(String),
    #[error("lorentzian fit failed: {reason}")]
    FitFailure {
        reason: String,
        /// 3-dB estimate, when one could be made.
        fallback: Option<Resonance>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lower => "lower-frequency",
            Side::Upper => "upper-frequency",
        })
    }
}

/// Touchstone complex-number format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DataFormat {
    #[default]
    RI,
    MA,
    DB,
}

impl DataFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataFormat::RI => "RI",
            DataFormat::MA => "MA",
            DataFormat::DB => "DB",
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RI" => Ok(DataFormat::RI),
            "MA" => Ok(DataFormat::MA),
            "DB" => Ok(DataFormat::DB),
            other => Err(format!("unknown data format '{other}'")),
        }
    }
}

/// Two-port transmission trace on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrace {
    freqs: Vec<f64>,
    s21: Vec<Complex64>,
    s11: Option<Vec<Complex64>>,
    pub z0: f64,
    pub format: DataFormat,
    pub source: String,
}

impl FrequencyTrace {
    pub fn new(freqs: Vec<f64>, s21: Vec<Complex64>, s11: Option<Vec<Complex64>>) -> Result<Self, TraceError> {
        if freqs.is_empty() {
            return Err(TraceError::InvalidTrace("trace has no points".into()));
        }
        if s21.len() != freqs.len() {
            return Err(TraceError::InvalidTrace(format!(
                "{} frequencies but {} s21 samples",
                freqs.len(),
                s21.len()
            )));
        }
        if let Some(s11) = &s11 {
            if s11.len() != freqs.len() {
                return Err(TraceError::InvalidTrace(format!(
                    "{} frequencies but {} s11 samples",
                    freqs.len(),
                    s11.len()
                )));
            }
        }
        if freqs.iter().any(|f| !f.is_finite()) {
            return Err(TraceError::InvalidTrace("non-finite frequency".into()));
        }
        if let Some(i) = freqs.windows(2).position(|w| w[1] <= w[0]) {
            return Err(TraceError::InvalidTrace(format!(
                "frequencies not strictly increasing at index {}",
                i + 1
            )));
        }
        let finite = |v: &Complex64| v.re.is_finite() && v.im.is_finite();
        if !s21.iter().all(finite) || !s11.iter().flatten().all(finite) {
            return Err(TraceError::InvalidTrace("non-finite S-parameter sample".into()));
        }
        Ok(FrequencyTrace {
            freqs,
            s21,
            s11,
            z0: 50.0,
            format: DataFormat::RI,
            source: String::new(),
        })
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn s21(&self) -> &[Complex64] {
        &self.s21
    }

    pub fn s11(&self) -> Option<&[Complex64]> {
        self.s11.as_deref()
    }

    /// `20·log10|S21|` per sample.
    pub fn s21_db(&self) -> Vec<f64> {
        self.s21.iter().map(|s| 20.0 * s.norm().log10()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResonanceMethod {
    ThreeDb,
    LorentzianFit,
    /// Produced by a forward model rather than measured.
    Model,
}

impl ResonanceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResonanceMethod::ThreeDb => "three-db",
            ResonanceMethod::LorentzianFit => "lorentzian-fit",
            ResonanceMethod::Model => "model",
        }
    }
}

/// One resonant feature of a transmission trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub f0: f64,
    pub q_loaded: f64,
    pub q_unloaded: f64,
    pub il_linear: f64,
    pub method: ResonanceMethod,
}

impl Resonance {
    /// From a loaded Q; the unloaded Q follows from the symmetric-coupling
    /// rule `Q₀ = Q_L/(1 - IL)`.
    pub fn new(f0: f64, q_loaded: f64, il_linear: f64, method: ResonanceMethod) -> Result<Self, TraceError> {
        Self::check(f0, q_loaded, il_linear)?;
        let q_unloaded = unload_q(q_loaded, il_linear)?.q0;
        Ok(Resonance {
            f0,
            q_loaded,
            q_unloaded,
            il_linear,
            method,
        })
    }

    /// From an unloaded Q and the coupling insertion loss.
    pub fn from_unloaded(
        f0: f64,
        q_unloaded: f64,
        il_linear: f64,
        method: ResonanceMethod,
    ) -> Result<Self, TraceError> {
        Self::check(f0, q_unloaded, il_linear)?;
        Ok(Resonance {
            f0,
            q_loaded: q_unloaded * (1.0 - il_linear),
            q_unloaded,
            il_linear,
            method,
        })
    }

    fn check(f0: f64, q: f64, il_linear: f64) -> Result<(), TraceError> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(TraceError::InvalidResonance(format!("f0 must be positive, got {f0}")));
        }
        if !(q.is_finite() && q > 0.0) {
            return Err(TraceError::InvalidResonance(format!("Q must be positive, got {q}")));
        }
        if !(il_linear > 0.0 && il_linear < 1.0) {
            return Err(TraceError::InvalidResonance(format!(
                "insertion loss must lie in (0, 1), got {il_linear}"
            )));
        }
        Ok(())
    }

    /// Loaded 3-dB bandwidth `f0/Q_L`.
    pub fn bandwidth(&self) -> f64 {
        self.f0 / self.q_loaded
    }
}
