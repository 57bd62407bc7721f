//! Complex permeability extraction for bar-shaped samples loaded at the
//! center of a rectangular (substrate integrated waveguide) cavity.
//!
//! The crate is organised bottom-up:
//!
//! * [`cavity`]: TE₁₀ₙ resonant frequencies and field distribution.
//! * [`quadrature`]: composite Gauss–Legendre product rules.
//! * [`perturbation`]: geometry factors, complex frequency shifts and their
//!   inversion to a complex permeability.
//! * [`traceio`]: Touchstone I/O, resonance detection and Q extraction.
//! * [`synth`]: forward model producing synthetic loaded traces.
//!
//! All lengths are in meters and frequencies in hertz.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cavity;
pub mod perturbation;
pub mod quadrature;
pub mod synth;
pub mod traceio;

pub use cavity::{CavityError, CavitySpec, FieldPoint, ModeSpec};
pub use num_complex::Complex64;
pub use perturbation::{
    ComplexPermeability, FactorModel, FractionalShift, GeometryFactor, InteractionChoice, ModelTag, PerturbationError,
    Provenance, SampleSpec,
};
pub use synth::{Campaign, SynthConfig, SynthError};
pub use traceio::{DataFormat, FrequencyTrace, Resonance, ResonanceMethod, TraceError};
