//! Magnetic cavity perturbation for a bar sample at the cavity center.
//!
//! The complex fractional shift of the resonance is
//!
//! ```text
//! Δ = -(μ_r/μ_rs - 1)/2 · g
//! ```
//!
//! where `g` is a dimensionless geometry factor: the fraction of the stored
//! magnetic energy `∫|H₀|²` that falls inside the sample, restricted to the
//! field components the sample interacts with. `Δ.re = (f_s - f₀)/f_s` and
//! `Δ.im = (1/Q_s - 1/Q₀)/2`, so added magnetic loss yields `Δ.im > 0` with
//! `μ_r = μ' - jμ''`.
//!
//! Geometry factors are available from four routes:
//!
//! * [`geometry_factor_printed`]: the closed form with both `(1 - sinc)`
//!   terms and the `4a²/(4πa² + λ_g²)` prefactor, kept verbatim.
//! * [`geometry_factor_derived`]: exact integral of the selected `|H₀|²`
//!   components over the centered box.
//! * [`geometry_factor_quadrature`]: the same integral done numerically.
//! * [`conventional_factor`]: small sample in a uniform maximum field.
//!
//! Sample naming: `extent_x_l1` is the bar extent along `x` (paired with
//! `k_x`) and `extent_z_a1` the extent along `z` (paired with `k_z`). The
//! `a₁`/`l₁` letters look swapped relative to the cavity's `a`/`l`; the
//! pairing is intentional.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::{self, CavityError, CavitySpec, ModeSpec};
use crate::quadrature;
use crate::traceio::Resonance;

/// Relative tolerance between successive quadrature doublings.
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;
/// Maximum number of cell doublings before giving up.
pub const QUADRATURE_MAX_DOUBLINGS: usize = 3;
/// Smallest geometry factor accepted by the inversions.
pub const MIN_GEOMETRY_FACTOR: f64 = 1e-12;
/// Upward frequency move (relative) above which a pairing is suspicious.
pub const SUSPICIOUS_PAIRING_SHIFT: f64 = 0.10;
/// Negative `μ″` no larger than this fraction of `|μ_r|` is roundoff and
/// reads as lossless.
pub const LOSS_ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("closed-form geometry factors need an even mode index, got n = {0}")]
    UnsupportedMode(u32),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid permeability: {0}")]
    InvalidPermeability(String),
    #[error(transparent)]
    Cavity(#[from] CavityError),
    #[error("quadrature did not converge after {doublings} doublings (last relative delta {last_delta:e})")]
    Accuracy { doublings: usize, last_delta: f64 },
    #[error("cells_per_axis must be >= 8, got {0}")]
    TooFewCells(usize),
    #[error("degenerate geometry factor {0:e}")]
    DegenerateGeometry(f64),
    #[error("unphysical result: mu' = {mu_re}, mu'' = {mu_im}")]
    Unphysical { mu_re: f64, mu_im: f64 },
    #[error("invalid resonance: {0}")]
    InvalidResonance(String),
}

/// Bar-shaped sample centered at `(a/2, l/2)`, resting on the bottom wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub extent_x_l1: f64,
    pub extent_z_a1: f64,
    pub thickness: f64,
}

impl SampleSpec {
    pub fn new(extent_x_l1: f64, extent_z_a1: f64, thickness: f64) -> Result<Self, PerturbationError> {
        for (name, v) in [
            ("extent_x_l1", extent_x_l1),
            ("extent_z_a1", extent_z_a1),
            ("thickness", thickness),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PerturbationError::InvalidSample(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(SampleSpec {
            extent_x_l1,
            extent_z_a1,
            thickness,
        })
    }

    /// Sample spanning the full substrate height.
    pub fn full_height(extent_x_l1: f64, extent_z_a1: f64, cavity: &CavitySpec) -> Result<Self, PerturbationError> {
        SampleSpec::new(extent_x_l1, extent_z_a1, cavity.height_h)
    }

    pub fn validate_in(&self, cavity: &CavitySpec) -> Result<(), PerturbationError> {
        let checks = [
            ("extent_x_l1", self.extent_x_l1, "width_a", cavity.width_a),
            ("extent_z_a1", self.extent_z_a1, "length_l", cavity.length_l),
            ("thickness", self.thickness, "height_h", cavity.height_h),
        ];
        for (name, v, bound_name, bound) in checks {
            if !(v > 0.0 && v <= bound) {
                return Err(PerturbationError::InvalidSample(format!(
                    "{name} ({v}) must lie in (0, {bound_name} = {bound}]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_full_height(&self, cavity: &CavitySpec) -> bool {
        self.thickness == cavity.height_h
    }

    pub fn volume(&self) -> f64 {
        self.extent_x_l1 * self.extent_z_a1 * self.thickness
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SampleSpec {
            extent_x_l1: self.extent_x_l1 * factor,
            extent_z_a1: self.extent_z_a1 * factor,
            thickness: self.thickness * factor,
        }
    }

    fn x_range(&self, cavity: &CavitySpec) -> (f64, f64) {
        let c = 0.5 * cavity.width_a;
        (c - 0.5 * self.extent_x_l1, c + 0.5 * self.extent_x_l1)
    }

    fn z_range(&self, cavity: &CavitySpec) -> (f64, f64) {
        let c = 0.5 * cavity.length_l;
        (c - 0.5 * self.extent_z_a1, c + 0.5 * self.extent_z_a1)
    }
}

/// Relative complex permeability `μ' - jμ''`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexPermeability {
    pub mu_re: f64,
    pub mu_im: f64,
}

impl ComplexPermeability {
    pub fn new(mu_re: f64, mu_im: f64) -> Result<Self, PerturbationError> {
        if !(mu_re.is_finite() && mu_re > 0.0) {
            return Err(PerturbationError::InvalidPermeability(format!(
                "mu' must be positive, got {mu_re}"
            )));
        }
        if !(mu_im.is_finite() && mu_im >= 0.0) {
            return Err(PerturbationError::InvalidPermeability(format!(
                "mu'' must be non-negative, got {mu_im}"
            )));
        }
        Ok(ComplexPermeability { mu_re, mu_im })
    }

    pub fn from_loss_tangent(mu_re: f64, tan_dm: f64) -> Result<Self, PerturbationError> {
        ComplexPermeability::new(mu_re, mu_re * tan_dm)
    }

    /// Magnetic loss tangent `μ''/μ'`.
    pub fn tan_dm(&self) -> f64 {
        self.mu_im / self.mu_re
    }

    /// `μ' - jμ''` as a complex number.
    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.mu_re, -self.mu_im)
    }
}

/// Complex fractional shift of the resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalShift {
    /// `(f_s - f₀)/f_s`
    pub re: f64,
    /// `(1/Q_s - 1/Q₀)/2`
    pub im: f64,
}

impl FractionalShift {
    pub const ZERO: FractionalShift = FractionalShift { re: 0.0, im: 0.0 };

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Printed,
    DerivedAxial,
    DerivedTransverse,
    DerivedBoth,
    Quadrature,
    Conventional,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Printed => "printed",
            Provenance::DerivedAxial => "derived-axial",
            Provenance::DerivedTransverse => "derived-transverse",
            Provenance::DerivedBoth => "derived-both",
            Provenance::Quadrature => "quadrature",
            Provenance::Conventional => "conventional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryFactor {
    pub value: f64,
    pub provenance: Provenance,
}

/// Which magnetic field components couple to the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionChoice {
    /// `H_x`, the component that peaks at the cavity center for even `n`.
    AxialHx,
    /// `H_z`, the component whose centered-box integral has the
    /// `(1 - sinc)(1 - sinc)` structure.
    #[default]
    TransverseHz,
    BothComponents,
}

impl InteractionChoice {
    pub const ALL: [InteractionChoice; 3] = [
        InteractionChoice::AxialHx,
        InteractionChoice::TransverseHz,
        InteractionChoice::BothComponents,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InteractionChoice::AxialHx => "axial-hx",
            InteractionChoice::TransverseHz => "transverse-hz",
            InteractionChoice::BothComponents => "both-components",
        }
    }

    fn derived_provenance(&self) -> Provenance {
        match self {
            InteractionChoice::AxialHx => Provenance::DerivedAxial,
            InteractionChoice::TransverseHz => Provenance::DerivedTransverse,
            InteractionChoice::BothComponents => Provenance::DerivedBoth,
        }
    }

    fn weight(&self, h_x: f64, h_z: f64) -> f64 {
        match self {
            InteractionChoice::AxialHx => h_x * h_x,
            InteractionChoice::TransverseHz => h_z * h_z,
            InteractionChoice::BothComponents => h_x * h_x + h_z * h_z,
        }
    }
}

impl std::str::FromStr for InteractionChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InteractionChoice::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown interaction choice '{s}'"))
    }
}

/// Unnormalized cardinal sine, `sinc(0) = 1`.
pub fn sinc(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        u.sin() / u
    }
}

/// `1 - sinc(u)` without cancellation for small `u`.
pub fn one_minus_sinc(u: f64) -> f64 {
    if u.abs() < 0.1 {
        let u2 = u * u;
        u2 / 6.0 * (1.0 - u2 / 20.0 * (1.0 - u2 / 42.0 * (1.0 - u2 / 72.0)))
    } else {
        1.0 - u.sin() / u
    }
}

fn require_even(mode: ModeSpec) -> Result<(), PerturbationError> {
    if mode.is_even() {
        Ok(())
    } else {
        Err(PerturbationError::UnsupportedMode(mode.n))
    }
}

fn check_inputs(cavity: &CavitySpec, sample: &SampleSpec) -> Result<(), PerturbationError> {
    cavity.validate()?;
    sample.validate_in(cavity)
}

/// Closed-form factor `4a²(1 - sinc(k_z a₁))(4πa² + λ_g²)⁻¹(1 - sinc(k_x l₁))`.
pub fn geometry_factor_printed(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
) -> Result<GeometryFactor, PerturbationError> {
    require_even(mode)?;
    check_inputs(cavity, sample)?;
    let a = cavity.width_a;
    let lambda_g = cavity::guided_wavelength(cavity, mode);
    let prefactor = 4.0 * a * a / (4.0 * std::f64::consts::PI * a * a + lambda_g * lambda_g);
    let value = prefactor
        * one_minus_sinc(cavity.kz(mode) * sample.extent_z_a1)
        * one_minus_sinc(cavity.kx() * sample.extent_x_l1);
    Ok(GeometryFactor {
        value,
        provenance: Provenance::Printed,
    })
}

/// Exact `∫_sample |H₀|²_selected / ∫_cavity |H₀|²` for a centered box.
pub fn geometry_factor_derived(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    choice: InteractionChoice,
) -> Result<GeometryFactor, PerturbationError> {
    require_even(mode)?;
    check_inputs(cavity, sample)?;
    let kx = cavity.kx();
    let kz = cavity.kz(mode);
    let (l1, a1) = (sample.extent_x_l1, sample.extent_z_a1);
    let (ux, uz) = (kx * l1, kz * a1);

    // sin² / cos² integrals across the centered extents
    let axial = || kz * kz * (0.5 * l1 * (1.0 + sinc(ux))) * (0.5 * a1 * (1.0 + sinc(uz)));
    let transverse = || kx * kx * (0.5 * l1 * one_minus_sinc(ux)) * (0.5 * a1 * one_minus_sinc(uz));
    let in_plane = match choice {
        InteractionChoice::AxialHx => axial(),
        InteractionChoice::TransverseHz => transverse(),
        InteractionChoice::BothComponents => axial() + transverse(),
    };
    let value = sample.thickness * in_plane / cavity::stored_field_norm(cavity, mode);
    Ok(GeometryFactor {
        value,
        provenance: choice.derived_provenance(),
    })
}

/// Uniform-field, small-sample factor `4k_z²V_s/(V_c(k_x² + k_z²))`.
pub fn conventional_factor(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
) -> Result<GeometryFactor, PerturbationError> {
    check_inputs(cavity, sample)?;
    let kx = cavity.kx();
    let kz = cavity.kz(mode);
    let value = 4.0 * kz * kz * sample.volume() / (cavity.volume() * (kx * kx + kz * kz));
    Ok(GeometryFactor {
        value,
        provenance: Provenance::Conventional,
    })
}

/// Numerical `∫_sample |H₀|²_selected dv` at a fixed resolution.
///
/// TE₁₀ₙ fields do not vary along `y`, so the box integral is the in-plane
/// product-rule integral times the sample thickness. Works for any `n`.
pub fn sample_integral_quadrature(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    choice: InteractionChoice,
    cells_per_axis: usize,
) -> Result<f64, PerturbationError> {
    if cells_per_axis < 8 {
        return Err(PerturbationError::TooFewCells(cells_per_axis));
    }
    check_inputs(cavity, sample)?;
    let in_plane = quadrature::integrate_2d(
        |x, z| {
            let p = cavity::field_unchecked(cavity, mode, x, z);
            choice.weight(p.h_x, p.h_z)
        },
        sample.x_range(cavity),
        sample.z_range(cavity),
        cells_per_axis,
    );
    Ok(in_plane * sample.thickness)
}

/// Geometry factor from [`sample_integral_quadrature`], refined by doubling
/// the cell count until successive values agree to
/// [`QUADRATURE_TOLERANCE`].
pub fn geometry_factor_quadrature(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    choice: InteractionChoice,
    cells_per_axis: usize,
) -> Result<GeometryFactor, PerturbationError> {
    let mut cells = cells_per_axis;
    let mut prev = sample_integral_quadrature(cavity, sample, mode, choice, cells)?;
    let mut last_delta = f64::INFINITY;
    for _ in 0..QUADRATURE_MAX_DOUBLINGS {
        cells *= 2;
        let next = sample_integral_quadrature(cavity, sample, mode, choice, cells)?;
        last_delta = if next == prev {
            0.0
        } else {
            ((next - prev) / next).abs()
        };
        prev = next;
        if last_delta < QUADRATURE_TOLERANCE {
            return Ok(GeometryFactor {
                value: next / cavity::stored_field_norm(cavity, mode),
                provenance: Provenance::Quadrature,
            });
        }
    }
    Err(PerturbationError::Accuracy {
        doublings: QUADRATURE_MAX_DOUBLINGS,
        last_delta,
    })
}

/// Route used to compute a geometry factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    Printed,
    Derived,
    #[default]
    Quadrature,
}

impl ModelTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelTag::Printed => "printed",
            ModelTag::Derived => "derived",
            ModelTag::Quadrature => "quadrature",
        }
    }
}

/// A geometry-factor route together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorModel {
    pub tag: ModelTag,
    pub choice: InteractionChoice,
    /// Starting resolution for the quadrature route.
    pub cells: usize,
}

impl Default for FactorModel {
    fn default() -> Self {
        FactorModel {
            tag: ModelTag::Quadrature,
            choice: InteractionChoice::TransverseHz,
            cells: 64,
        }
    }
}

impl FactorModel {
    pub fn geometry_factor(
        &self,
        cavity: &CavitySpec,
        sample: &SampleSpec,
        mode: ModeSpec,
    ) -> Result<GeometryFactor, PerturbationError> {
        match self.tag {
            ModelTag::Printed => geometry_factor_printed(cavity, sample, mode),
            ModelTag::Derived => geometry_factor_derived(cavity, sample, mode, self.choice),
            ModelTag::Quadrature => geometry_factor_quadrature(cavity, sample, mode, self.choice, self.cells),
        }
    }
}

/// Fractional shift computed with a numerically integrated geometry factor.
pub fn fractional_shift_quadrature(
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    mu_r: ComplexPermeability,
    choice: InteractionChoice,
    cells_per_axis: usize,
) -> Result<FractionalShift, PerturbationError> {
    let g = geometry_factor_quadrature(cavity, sample, mode, choice, cells_per_axis)?;
    Ok(fractional_shift_closed(mu_r, cavity.mu_rs, g))
}

/// `Δ = -(μ_r/(2μ_rs) - 1/2)·g`.
pub fn fractional_shift_closed(mu_r: ComplexPermeability, mu_rs: Complex64, g: GeometryFactor) -> FractionalShift {
    let delta = -(mu_r.as_complex() / (2.0 * mu_rs) - 0.5) * g.value;
    FractionalShift {
        re: delta.re,
        im: delta.im,
    }
}

/// Complex shift between two measured resonances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftMeasurement {
    pub shift: FractionalShift,
    /// Loaded resonance sits more than 10% above the empty one; the two are
    /// probably different modes.
    pub suspicious_pairing: bool,
}

pub fn complex_shift_from_resonances(
    empty: &Resonance,
    loaded: &Resonance,
) -> Result<ShiftMeasurement, PerturbationError> {
    for (label, r) in [("empty", empty), ("loaded", loaded)] {
        if !(r.f0 > 0.0 && r.q_unloaded > 0.0) {
            return Err(PerturbationError::InvalidResonance(format!(
                "{label} resonance needs f0 > 0 and Q0 > 0 (f0 = {}, Q0 = {})",
                r.f0, r.q_unloaded
            )));
        }
    }
    let shift = FractionalShift {
        re: (loaded.f0 - empty.f0) / loaded.f0,
        im: 0.5 * (1.0 / loaded.q_unloaded - 1.0 / empty.q_unloaded),
    };
    Ok(ShiftMeasurement {
        shift,
        suspicious_pairing: (loaded.f0 - empty.f0) / empty.f0 > SUSPICIOUS_PAIRING_SHIFT,
    })
}

/// Solve `Δ = -(μ_r/μ_rs - 1)·g/2` for `μ_r`.
pub fn invert_permeability(
    shift: FractionalShift,
    g: GeometryFactor,
    mu_rs: Complex64,
) -> Result<ComplexPermeability, PerturbationError> {
    if !(g.value.is_finite() && g.value > MIN_GEOMETRY_FACTOR) {
        return Err(PerturbationError::DegenerateGeometry(g.value));
    }
    let mu = mu_rs * (1.0 - 2.0 * shift.as_complex() / g.value);
    let (mu_re, mut mu_im) = (mu.re, -mu.im);
    if mu_im < 0.0 && -mu_im <= LOSS_ROUNDOFF * mu.norm() {
        mu_im = 0.0;
    }
    if !(mu_re > 0.0 && mu_im >= 0.0) {
        return Err(PerturbationError::Unphysical { mu_re, mu_im });
    }
    Ok(ComplexPermeability { mu_re, mu_im })
}

/// Inversion with the uniform-field [`conventional_factor`].
pub fn invert_conventional(
    shift: FractionalShift,
    cavity: &CavitySpec,
    sample: &SampleSpec,
    mode: ModeSpec,
    mu_rs: Complex64,
) -> Result<ComplexPermeability, PerturbationError> {
    let g = conventional_factor(cavity, sample, mode)?;
    invert_permeability(shift, g, mu_rs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traceio::ResonanceMethod;
    use approx::assert_relative_eq;

    const MM: f64 = 1e-3;

    fn cavity() -> CavitySpec {
        CavitySpec::new(30.0 * MM, 60.0 * MM, 1.57 * MM, 2.2).unwrap()
    }

    fn sample() -> SampleSpec {
        SampleSpec::new(10.0 * MM, 2.0 * MM, 1.57 * MM).unwrap()
    }

    fn m(n: u32) -> ModeSpec {
        ModeSpec::new(n).unwrap()
    }

    fn unit() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn sinc_helpers() {
        assert_eq!(sinc(0.0), 1.0);
        for u in [1e-6f64, 1e-3, 0.05, 0.0999, 0.1, 0.5, 2.0] {
            let direct = 1.0 - u.sin() / u;
            let stable = one_minus_sinc(u);
            if u >= 1e-3 {
                assert_relative_eq!(stable, direct, max_relative = 1e-9);
            }
            assert!(stable > 0.0);
        }
        assert_relative_eq!(one_minus_sinc(1e-6), 1e-12 / 6.0, max_relative = 1e-10);
    }

    #[test]
    fn printed_factor_worked_value() {
        let g = geometry_factor_printed(&cavity(), &sample(), m(4)).unwrap();
        assert_eq!(g.provenance, Provenance::Printed);
        // hand evaluation: 0.294840 · 0.0289947 · 0.173007
        assert!((g.value - 1.4787e-3).abs() < 1e-7, "{}", g.value);
    }

    #[test]
    fn printed_factor_vanishes_with_extent() {
        let c = cavity();
        for s in [
            SampleSpec::new(1e-9, 2.0 * MM, 1.57 * MM).unwrap(),
            SampleSpec::new(10.0 * MM, 1e-9, 1.57 * MM).unwrap(),
        ] {
            assert!(geometry_factor_printed(&c, &s, m(4)).unwrap().value < 1e-12);
        }
    }

    #[test]
    fn printed_factor_increasing_in_extents() {
        let c = cavity();
        let mode = m(4);
        let max_x = std::f64::consts::PI / c.kx();
        let max_z = (std::f64::consts::PI / c.kz(mode)).min(c.length_l);
        let mut prev = 0.0;
        for i in 1..=20 {
            let s = SampleSpec::new(max_x * i as f64 / 20.0, 2.0 * MM, 1.57 * MM).unwrap();
            let v = geometry_factor_printed(&c, &s, mode).unwrap().value;
            assert!(v > prev);
            prev = v;
        }
        prev = 0.0;
        for i in 1..=20 {
            let s = SampleSpec::new(10.0 * MM, max_z * i as f64 / 20.0, 1.57 * MM).unwrap();
            let v = geometry_factor_printed(&c, &s, mode).unwrap().value;
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn closed_forms_reject_odd_modes() {
        let (c, s) = (cavity(), sample());
        assert_eq!(
            geometry_factor_printed(&c, &s, m(3)),
            Err(PerturbationError::UnsupportedMode(3))
        );
        assert_eq!(
            geometry_factor_derived(&c, &s, m(1), InteractionChoice::AxialHx),
            Err(PerturbationError::UnsupportedMode(1))
        );
        // quadrature is fine for odd n
        assert!(geometry_factor_quadrature(&c, &s, m(3), InteractionChoice::BothComponents, 16).is_ok());
    }

    #[test]
    fn sample_must_fit_inside_cavity() {
        let c = cavity();
        let s = SampleSpec::new(31.0 * MM, 2.0 * MM, 1.0 * MM).unwrap();
        assert!(matches!(
            geometry_factor_derived(&c, &s, m(4), InteractionChoice::AxialHx),
            Err(PerturbationError::InvalidSample(_))
        ));
        assert!(SampleSpec::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn derived_factor_full_cavity_is_one() {
        let c = cavity();
        let s = SampleSpec::full_height(c.width_a, c.length_l, &c).unwrap();
        for n in [2, 4, 6] {
            let g = geometry_factor_derived(&c, &s, m(n), InteractionChoice::BothComponents).unwrap();
            assert_relative_eq!(g.value, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn derived_axial_small_sample_limit() {
        let c = cavity();
        let mode = m(4);
        let s = SampleSpec::new(1e-7, 1e-7, 1.0 * MM).unwrap();
        let derived = geometry_factor_derived(&c, &s, mode, InteractionChoice::AxialHx).unwrap();
        let conventional = conventional_factor(&c, &s, mode).unwrap();
        assert_relative_eq!(derived.value, conventional.value, max_relative = 1e-10);
    }

    /// Midpoint rule on the in-plane integrand at two resolutions, combined
    /// with one Richardson step (midpoint error is even in the cell size).
    fn midpoint_richardson(c: &CavitySpec, s: &SampleSpec, mode: ModeSpec, choice: InteractionChoice) -> f64 {
        let midpoint = |cells: usize| {
            let (x0, x1) = (0.5 * (c.width_a - s.extent_x_l1), 0.5 * (c.width_a + s.extent_x_l1));
            let (z0, z1) = (0.5 * (c.length_l - s.extent_z_a1), 0.5 * (c.length_l + s.extent_z_a1));
            let (dx, dz) = ((x1 - x0) / cells as f64, (z1 - z0) / cells as f64);
            let mut total = 0.0;
            for i in 0..cells {
                let x = x0 + (i as f64 + 0.5) * dx;
                for k in 0..cells {
                    let z = z0 + (k as f64 + 0.5) * dz;
                    let p = cavity::mode_field(c, mode, x, z).unwrap();
                    total += match choice {
                        InteractionChoice::AxialHx => p.h_x * p.h_x,
                        InteractionChoice::TransverseHz => p.h_z * p.h_z,
                        InteractionChoice::BothComponents => p.h_magnitude_sq(),
                    };
                }
            }
            total * dx * dz * s.thickness
        };
        let coarse = midpoint(400);
        let fine = midpoint(800);
        (4.0 * fine - coarse) / 3.0 / cavity::stored_field_norm(c, mode)
    }

    #[test]
    fn derived_factor_matches_midpoint_oracle() {
        let (c, s) = (cavity(), sample());
        for choice in InteractionChoice::ALL {
            let derived = geometry_factor_derived(&c, &s, m(4), choice).unwrap().value;
            let oracle = midpoint_richardson(&c, &s, m(4), choice);
            assert!(
                ((derived - oracle) / oracle).abs() < 1e-9,
                "{choice:?}: {derived} vs {oracle}"
            );
        }
    }

    #[test]
    fn quadrature_matches_closed_form_for_worked_case() {
        let (c, s) = (cavity(), sample());
        let mu = ComplexPermeability::from_loss_tangent(1.5, 0.05).unwrap();
        for choice in InteractionChoice::ALL {
            let q = fractional_shift_quadrature(&c, &s, m(4), mu, choice, 64).unwrap();
            let g = geometry_factor_derived(&c, &s, m(4), choice).unwrap();
            let closed = fractional_shift_closed(mu, c.mu_rs, g);
            let err = (q.as_complex() - closed.as_complex()).norm() / closed.as_complex().norm();
            assert!(err < 1e-8, "{choice:?}: {err}");
        }
    }

    #[test]
    fn quadrature_identity_material_gives_zero_shift() {
        let (c, s) = (cavity(), sample());
        let mu = ComplexPermeability::new(1.0, 0.0).unwrap();
        let d = fractional_shift_quadrature(&c, &s, m(4), mu, InteractionChoice::TransverseHz, 16).unwrap();
        assert_eq!(d, FractionalShift { re: 0.0, im: 0.0 });
    }

    #[test]
    fn quadrature_rejects_coarse_grids() {
        let (c, s) = (cavity(), sample());
        assert_eq!(
            sample_integral_quadrature(&c, &s, m(4), InteractionChoice::AxialHx, 7),
            Err(PerturbationError::TooFewCells(7))
        );
    }

    #[test]
    fn quadrature_is_bitwise_deterministic() {
        let (c, s) = (cavity(), sample());
        let a = sample_integral_quadrature(&c, &s, m(4), InteractionChoice::BothComponents, 64).unwrap();
        let b = sample_integral_quadrature(&c, &s, m(4), InteractionChoice::BothComponents, 64).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn lossless_heavier_sample_moves_resonance_down() {
        let (c, s) = (cavity(), sample());
        let mu = ComplexPermeability::new(1.8, 0.0).unwrap();
        let d = fractional_shift_quadrature(&c, &s, m(4), mu, InteractionChoice::AxialHx, 32).unwrap();
        assert!(d.re < 0.0);
        assert_eq!(d.im, 0.0);
    }

    #[test]
    fn closed_shift_examples() {
        let g = GeometryFactor {
            value: 0.1,
            provenance: Provenance::Printed,
        };
        let same = fractional_shift_closed(ComplexPermeability::new(1.0, 0.0).unwrap(), unit(), g);
        assert_eq!(same, FractionalShift::ZERO);
        let d = fractional_shift_closed(ComplexPermeability::new(2.0, 0.0).unwrap(), unit(), g);
        assert_relative_eq!(d.re, -0.05, max_relative = 1e-15);
        assert_eq!(d.im, 0.0);

        let g = GeometryFactor {
            value: 1.464e-3,
            provenance: Provenance::Printed,
        };
        let x = ComplexPermeability::new(1.5, 0.075).unwrap();
        let d = fractional_shift_closed(x, unit(), g);
        assert!((d.re + 3.659e-4).abs() < 2e-7, "{}", d.re);
        assert!((d.im - 5.49e-5).abs() < 1e-7, "{}", d.im);
    }

    fn res(f0: f64, q0: f64) -> Resonance {
        Resonance::from_unloaded(f0, q0, 0.5, ResonanceMethod::Model).unwrap()
    }

    #[test]
    fn shift_from_resonances_examples() {
        let a = res(7.533e9, 800.0);
        let m0 = complex_shift_from_resonances(&a, &a).unwrap();
        assert_eq!(m0.shift, FractionalShift::ZERO);
        assert!(!m0.suspicious_pairing);

        let loaded = res(7.53024e9, 735.4);
        let d = complex_shift_from_resonances(&a, &loaded).unwrap().shift;
        assert!((d.re + 3.66e-4).abs() < 1e-6, "{}", d.re);
        assert!((d.im - 5.49e-5).abs() < 1e-7, "{}", d.im);

        let half = res(7.533e9, 400.0);
        let d = complex_shift_from_resonances(&a, &half).unwrap().shift;
        assert_eq!(d.re, 0.0);
        assert_relative_eq!(d.im, 1.0 / 1600.0, max_relative = 1e-14);

        let far = res(7.533e9 * 1.2, 800.0);
        assert!(complex_shift_from_resonances(&a, &far).unwrap().suspicious_pairing);
    }

    #[test]
    fn inversion_examples() {
        let g = GeometryFactor {
            value: 1.464e-3,
            provenance: Provenance::Printed,
        };
        let mu = invert_permeability(FractionalShift::ZERO, g, unit()).unwrap();
        assert_eq!(mu, ComplexPermeability::new(1.0, 0.0).unwrap());

        let mu = invert_permeability(
            FractionalShift {
                re: -3.66e-4,
                im: 5.49e-5,
            },
            g,
            unit(),
        )
        .unwrap();
        assert!((mu.mu_re - 1.5).abs() < 1e-3, "{}", mu.mu_re);
        assert!((mu.tan_dm() - 0.05).abs() < 1e-3, "{}", mu.tan_dm());

        let substrate = Complex64::new(1.2, -0.01);
        let mu = invert_permeability(FractionalShift::ZERO, g, substrate).unwrap();
        assert_eq!((mu.mu_re, mu.mu_im), (1.2, 0.01));
    }

    #[test]
    fn inversion_errors() {
        let tiny = GeometryFactor {
            value: 1e-13,
            provenance: Provenance::DerivedTransverse,
        };
        assert!(matches!(
            invert_permeability(FractionalShift { re: -1e-3, im: 0.0 }, tiny, unit()),
            Err(PerturbationError::DegenerateGeometry(_))
        ));
        let g = GeometryFactor {
            value: 0.01,
            provenance: Provenance::DerivedTransverse,
        };
        assert!(matches!(
            invert_permeability(FractionalShift { re: 0.01, im: 0.0 }, g, unit()),
            Err(PerturbationError::Unphysical { .. })
        ));
        // gain, not roundoff
        assert!(matches!(
            invert_permeability(FractionalShift { re: -1e-3, im: -1e-4 }, g, unit()),
            Err(PerturbationError::Unphysical { .. })
        ));
        let lossless = invert_permeability(FractionalShift { re: -1e-3, im: -1e-18 }, g, unit()).unwrap();
        assert_eq!(lossless.mu_im, 0.0);
    }

    #[test]
    fn conventional_inversion_small_sample_matches_axial() {
        let c = cavity();
        let mode = m(4);
        let s = SampleSpec::new(1e-6, 1e-6, 1.0 * MM).unwrap();
        let g_axial = geometry_factor_derived(&c, &s, mode, InteractionChoice::AxialHx).unwrap();
        let mu = ComplexPermeability::from_loss_tangent(1.4, 0.06).unwrap();
        let shift = fractional_shift_closed(mu, unit(), g_axial);
        let conventional = invert_conventional(shift, &c, &s, mode, unit()).unwrap();
        let modified = invert_permeability(shift, g_axial, unit()).unwrap();
        assert_relative_eq!(conventional.mu_re, modified.mu_re, max_relative = 1e-8);
        assert_relative_eq!(conventional.mu_im, modified.mu_im, max_relative = 1e-8);
        assert_eq!(
            invert_conventional(FractionalShift::ZERO, &c, &sample(), mode, unit()).unwrap(),
            ComplexPermeability::new(1.0, 0.0).unwrap()
        );
    }

    #[test]
    fn scale_invariance() {
        let (c, s) = (cavity(), sample());
        let mode = m(4);
        for factor in [0.1, 3.7] {
            let (cs, ss) = (c.scaled(factor), s.scaled(factor));
            let pairs = [
                (
                    geometry_factor_printed(&c, &s, mode).unwrap().value,
                    geometry_factor_printed(&cs, &ss, mode).unwrap().value,
                ),
                (
                    conventional_factor(&c, &s, mode).unwrap().value,
                    conventional_factor(&cs, &ss, mode).unwrap().value,
                ),
            ];
            for (a, b) in pairs {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
            for choice in InteractionChoice::ALL {
                assert_relative_eq!(
                    geometry_factor_derived(&c, &s, mode, choice).unwrap().value,
                    geometry_factor_derived(&cs, &ss, mode, choice).unwrap().value,
                    max_relative = 1e-12
                );
            }
        }
    }
}
