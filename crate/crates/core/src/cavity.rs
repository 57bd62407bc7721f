//! Analytic model of the rectangular cavity.
//!
//! Axis convention: `x` runs across the broad width `a`, `y` through the
//! substrate height `h`, and `z` along the length `l`. The longitudinal mode
//! index `n` counts half wavelengths along `z`. Every other module follows
//! this convention.
//!
//! Fields are relative: the TE₁₀ₙ magnetic components carry the `k_z`/`k_x`
//! prefactors produced by the curl of a unit-amplitude `E_y`,
//!
//! ```text
//! E_y ∝  sin(k_x x) sin(k_z z)
//! H_x ∝ -k_z sin(k_x x) cos(k_z z)
//! H_z ∝  k_x cos(k_x x) sin(k_z z)
//! ```
//!
//! Perturbation ratios do not depend on the common amplitude.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CavityError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid material constant: {0}")]
    InvalidMaterial(String),
    #[error("mode index must be >= 1, got {0}")]
    InvalidMode(u32),
    #[error("point (x = {x} m, z = {z} m) lies outside the cavity")]
    OutsideCavity { x: f64, z: f64 },
}

/// Via fence of a substrate integrated waveguide side wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViaFence {
    pub diameter: f64,
    pub pitch: f64,
}

/// Effective rectangular cavity plus substrate constants.
///
/// `width_a` is always the *electrical* width used by the field model. When
/// the cavity is built from an SIW layout with [`CavitySpec::from_siw`] the
/// via fence is kept for reference and `width_a` holds the corrected width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySpec {
    pub width_a: f64,
    pub length_l: f64,
    pub height_h: f64,
    pub eps_r: f64,
    pub mu_rs: Complex64,
    pub vias: Option<ViaFence>,
}

impl CavitySpec {
    /// Nonmagnetic substrate (`mu_rs = 1`), no via fence.
    pub fn new(width_a: f64, length_l: f64, height_h: f64, eps_r: f64) -> Result<Self, CavityError> {
        let spec = CavitySpec {
            width_a,
            length_l,
            height_h,
            eps_r,
            mu_rs: Complex64::new(1.0, 0.0),
            vias: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Cavity whose broad wall is a via fence; the width is reduced with
    /// [`effective_width`].
    pub fn from_siw(
        physical_width: f64,
        length_l: f64,
        height_h: f64,
        eps_r: f64,
        via_diameter: f64,
        via_pitch: f64,
    ) -> Result<Self, CavityError> {
        let width_a = effective_width(physical_width, via_diameter, via_pitch)?;
        let mut spec = CavitySpec::new(width_a, length_l, height_h, eps_r)?;
        spec.vias = Some(ViaFence {
            diameter: via_diameter,
            pitch: via_pitch,
        });
        Ok(spec)
    }

    pub fn with_mu_rs(mut self, mu_rs: Complex64) -> Result<Self, CavityError> {
        self.mu_rs = mu_rs;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        let lengths = [
            ("width_a", self.width_a),
            ("length_l", self.length_l),
            ("height_h", self.height_h),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(CavityError::InvalidGeometry(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.height_h >= self.width_a {
            return Err(CavityError::InvalidGeometry(format!(
                "height_h ({}) must be smaller than width_a ({})",
                self.height_h, self.width_a
            )));
        }
        if !(self.eps_r.is_finite() && self.eps_r >= 1.0) {
            return Err(CavityError::InvalidMaterial(format!(
                "eps_r must be >= 1, got {}",
                self.eps_r
            )));
        }
        if !(self.mu_rs.re.is_finite() && self.mu_rs.im.is_finite() && self.mu_rs.re >= 1.0) {
            return Err(CavityError::InvalidMaterial(format!(
                "real part of mu_rs must be >= 1, got {}",
                self.mu_rs
            )));
        }
        if let Some(v) = self.vias {
            if !(v.diameter > 0.0 && v.diameter < v.pitch) {
                return Err(CavityError::InvalidGeometry(format!(
                    "via fence requires 0 < diameter < pitch, got d = {}, p = {}",
                    v.diameter, v.pitch
                )));
            }
        }
        Ok(())
    }

    /// Cavity volume `a·l·h`.
    pub fn volume(&self) -> f64 {
        self.width_a * self.length_l * self.height_h
    }

    /// Transverse wavenumber `π/a`.
    pub fn kx(&self) -> f64 {
        PI / self.width_a
    }

    /// Longitudinal wavenumber `nπ/l`.
    pub fn kz(&self, mode: ModeSpec) -> f64 {
        mode.n as f64 * PI / self.length_l
    }

    /// Copy with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        CavitySpec {
            width_a: self.width_a * factor,
            length_l: self.length_l * factor,
            height_h: self.height_h * factor,
            vias: self.vias.map(|v| ViaFence {
                diameter: v.diameter * factor,
                pitch: v.pitch * factor,
            }),
            ..*self
        }
    }
}

/// TE₁₀ₙ mode selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSpec {
    pub n: u32,
}

impl ModeSpec {
    pub fn new(n: u32) -> Result<Self, CavityError> {
        if n == 0 {
            return Err(CavityError::InvalidMode(n));
        }
        Ok(ModeSpec { n })
    }

    pub fn is_even(&self) -> bool {
        self.n.is_multiple_of(2)
    }
}

/// Relative field values at one point of the `x`–`z` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub h_x: f64,
    pub h_z: f64,
    pub e_y_rel: f64,
}

impl FieldPoint {
    pub fn h_magnitude_sq(&self) -> f64 {
        self.h_x * self.h_x + self.h_z * self.h_z
    }
}

/// SIW equivalent width `w - d²/(0.95 p)`.
///
/// A zero via diameter means a solid wall and returns the width unchanged.
pub fn effective_width(physical_width: f64, via_diameter: f64, via_pitch: f64) -> Result<f64, CavityError> {
    if !(via_diameter >= 0.0 && via_diameter < via_pitch) {
        return Err(CavityError::InvalidGeometry(format!(
            "via fence requires 0 < via_diameter < via_pitch, got d = {via_diameter}, p = {via_pitch}"
        )));
    }
    let correction = via_diameter * via_diameter / (0.95 * via_pitch);
    let width = physical_width - correction;
    if !(width > 0.0) {
        return Err(CavityError::InvalidGeometry(format!(
            "physical_width ({physical_width}) must exceed via_diameter²/(0.95·via_pitch) ({correction})"
        )));
    }
    Ok(width)
}

/// Resonant frequency of TE₁₀ₙ in hertz.
pub fn resonant_frequency(cavity: &CavitySpec, mode: ModeSpec) -> f64 {
    let index = (cavity.eps_r * cavity.mu_rs.re).sqrt();
    let inv_a = 1.0 / cavity.width_a;
    let n_over_l = mode.n as f64 / cavity.length_l;
    SPEED_OF_LIGHT / (2.0 * index) * (inv_a * inv_a + n_over_l * n_over_l).sqrt()
}

/// Guided wavelength `2l/n` of the resonant mode.
pub fn guided_wavelength(cavity: &CavitySpec, mode: ModeSpec) -> f64 {
    2.0 * cavity.length_l / mode.n as f64
}

pub fn mode_field(cavity: &CavitySpec, mode: ModeSpec, x: f64, z: f64) -> Result<FieldPoint, CavityError> {
    if !(0.0..=cavity.width_a).contains(&x) || !(0.0..=cavity.length_l).contains(&z) {
        return Err(CavityError::OutsideCavity { x, z });
    }
    Ok(field_unchecked(cavity, mode, x, z))
}

/// `(sin πt, cos πt)`, exact at multiples of one half.
fn sin_cos_pi(t: f64) -> (f64, f64) {
    let r = t.rem_euclid(2.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 0.5 {
        (1.0, 0.0)
    } else if r == 1.0 {
        (0.0, -1.0)
    } else if r == 1.5 {
        (-1.0, 0.0)
    } else {
        (PI * r).sin_cos()
    }
}

#[inline]
pub(crate) fn field_unchecked(cavity: &CavitySpec, mode: ModeSpec, x: f64, z: f64) -> FieldPoint {
    let (kx, kz) = (cavity.kx(), cavity.kz(mode));
    let (sx, cx) = sin_cos_pi(x / cavity.width_a);
    let (sz, cz) = sin_cos_pi(mode.n as f64 * (z / cavity.length_l));
    FieldPoint {
        h_x: -kz * sx * cz,
        h_z: kx * cx * sz,
        e_y_rel: sx * sz,
    }
}

/// Exact volume integral of `|H|²` over the whole cavity,
/// `h·(a·l/4)·(k_x² + k_z²)`.
pub fn stored_field_norm(cavity: &CavitySpec, mode: ModeSpec) -> f64 {
    let kx = cavity.kx();
    let kz = cavity.kz(mode);
    cavity.height_h * (cavity.width_a * cavity.length_l / 4.0) * (kx * kx + kz * kz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const MM: f64 = 1e-3;

    fn worked() -> CavitySpec {
        CavitySpec::new(30.0 * MM, 60.0 * MM, 1.57 * MM, 2.2).unwrap()
    }

    fn mode(n: u32) -> ModeSpec {
        ModeSpec::new(n).unwrap()
    }

    #[test]
    fn effective_width_examples() {
        let w = effective_width(30.45 * MM, 0.8 * MM, 1.5 * MM).unwrap();
        assert!((w / MM - 30.001).abs() < 5e-4, "{}", w / MM);
        assert_eq!(effective_width(30.0 * MM, 0.0, 1.5 * MM).unwrap(), 30.0 * MM);
        let err = effective_width(0.5 * MM, 0.8 * MM, 1.0 * MM).unwrap_err();
        assert!(matches!(err, CavityError::InvalidGeometry(ref m) if m.contains("physical_width")));
        assert!(effective_width(30.0 * MM, 1.6 * MM, 1.5 * MM).is_err());
    }

    #[test]
    fn siw_cavity_uses_effective_width() {
        let c = CavitySpec::from_siw(30.45 * MM, 60.0 * MM, 1.57 * MM, 2.2, 0.8 * MM, 1.5 * MM).unwrap();
        assert!((c.width_a / MM - 30.001).abs() < 5e-4);
        assert!(c.vias.is_some());
    }

    #[test]
    fn invalid_cavities_are_rejected() {
        assert!(CavitySpec::new(-30.0 * MM, 60.0 * MM, 1.57 * MM, 2.2).is_err());
        assert!(CavitySpec::new(1.0 * MM, 60.0 * MM, 1.57 * MM, 2.2).is_err());
        assert!(CavitySpec::new(30.0 * MM, 60.0 * MM, 1.57 * MM, 0.5).is_err());
        assert!(worked().with_mu_rs(Complex64::new(0.5, 0.0)).is_err());
        assert!(ModeSpec::new(0).is_err());
    }

    #[test]
    fn resonant_frequency_examples() {
        let c = worked();
        assert!((resonant_frequency(&c, mode(1)) - 3.766e9).abs() < 1e6);
        assert!((resonant_frequency(&c, mode(4)) - 7.533e9).abs() < 1e6);
        let half = c.scaled(0.5);
        for n in 1..=6 {
            assert_relative_eq!(
                resonant_frequency(&half, mode(n)),
                2.0 * resonant_frequency(&c, mode(n)),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn guided_wavelength_examples() {
        let c = worked();
        assert_relative_eq!(guided_wavelength(&c, mode(4)), 30.0 * MM, max_relative = 1e-15);
        assert_relative_eq!(guided_wavelength(&c, mode(2)), 60.0 * MM, max_relative = 1e-15);
        let c45 = CavitySpec::new(30.0 * MM, 45.0 * MM, 1.57 * MM, 2.2).unwrap();
        assert_relative_eq!(guided_wavelength(&c45, mode(3)), 30.0 * MM, max_relative = 1e-15);
    }

    #[test]
    fn mode_field_examples() {
        let c = worked();
        let m4 = mode(4);
        let center = mode_field(&c, m4, c.width_a / 2.0, c.length_l / 2.0).unwrap();
        assert_eq!(center.h_z, 0.0);
        assert_eq!(center.e_y_rel, 0.0);
        assert_relative_eq!(center.h_x.abs(), c.kz(m4), max_relative = 1e-12);

        let wall = mode_field(&c, m4, 0.0, 17.0 * MM).unwrap();
        assert_eq!(wall.h_x, -0.0);

        let p = mode_field(&c, mode(2), 7.5 * MM, 7.5 * MM).unwrap();
        assert!((p.h_x + 52.36).abs() < 5e-3, "{}", p.h_x);
        assert!((p.h_z - 52.36).abs() < 5e-3, "{}", p.h_z);

        assert!(matches!(
            mode_field(&c, m4, -1e-6, 0.0),
            Err(CavityError::OutsideCavity { .. })
        ));
        assert!(mode_field(&c, m4, 0.0, 61.0 * MM).is_err());
    }

    #[test]
    fn stored_field_norm_worked_value() {
        let n = stored_field_norm(&worked(), mode(4));
        assert!((n - 0.03874).abs() < 1e-5, "{n}");
    }

    #[test]
    fn stored_field_norm_square_symmetric_case() {
        // a = l/n gives k_x = k_z
        let c = CavitySpec::new(20.0 * MM, 40.0 * MM, 1.0 * MM, 2.2).unwrap();
        let m = mode(2);
        let k = c.kx();
        assert_relative_eq!(c.kz(m), k, max_relative = 1e-15);
        let expected = c.height_h * c.width_a * c.length_l * k * k / 2.0;
        assert_relative_eq!(stored_field_norm(&c, m), expected, max_relative = 1e-14);
    }

    /// Brute-force midpoint rule over the full cavity volume.
    fn midpoint_norm(c: &CavitySpec, m: ModeSpec, cells: usize) -> f64 {
        let (dx, dy, dz) = (
            c.width_a / cells as f64,
            c.height_h / cells as f64,
            c.length_l / cells as f64,
        );
        let mut total = 0.0;
        for _iy in 0..cells {
            let mut layer = 0.0;
            for ix in 0..cells {
                let x = (ix as f64 + 0.5) * dx;
                for iz in 0..cells {
                    let z = (iz as f64 + 0.5) * dz;
                    layer += mode_field(c, m, x, z).unwrap().h_magnitude_sq();
                }
            }
            total += layer * dx * dz * dy;
        }
        total
    }

    #[test]
    fn stored_field_norm_matches_midpoint_oracle() {
        let c = worked();
        for n in 1..=4 {
            let m = mode(n);
            let numeric = midpoint_norm(&c, m, 200);
            let exact = stored_field_norm(&c, m);
            assert!(((numeric - exact) / exact).abs() < 1e-9, "n={n}: {numeric} vs {exact}");
        }
    }

    #[test]
    fn resonant_frequency_monotonicity() {
        let c = worked();
        let mut prev = 0.0;
        for n in 1..=12 {
            let f = resonant_frequency(&c, mode(n));
            assert!(f > prev);
            prev = f;
        }
        let m = mode(3);
        let f = resonant_frequency(&c, m);
        let wider = CavitySpec {
            width_a: c.width_a * 1.01,
            ..c
        };
        let longer = CavitySpec {
            length_l: c.length_l * 1.01,
            ..c
        };
        let denser = CavitySpec {
            eps_r: c.eps_r * 1.01,
            ..c
        };
        assert!(resonant_frequency(&wider, m) < f);
        assert!(resonant_frequency(&longer, m) < f);
        assert!(resonant_frequency(&denser, m) < f);
    }

    proptest! {
        #[test]
        fn mirror_symmetry(n in 1u32..=6, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let c = worked();
            let m = mode(n);
            let (x, z) = (u * c.width_a, v * c.length_l);
            let base = mode_field(&c, m, x, z).unwrap().h_magnitude_sq();
            let mx = mode_field(&c, m, c.width_a - x, z).unwrap().h_magnitude_sq();
            let mz = mode_field(&c, m, x, c.length_l - z).unwrap().h_magnitude_sq();
            let scale = c.kx().powi(2) + c.kz(m).powi(2);
            prop_assert!((base - mx).abs() <= 1e-10 * scale);
            prop_assert!((base - mz).abs() <= 1e-10 * scale);
        }

        #[test]
        fn field_bounds(n in 1u32..=6, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let c = worked();
            let m = mode(n);
            let p = mode_field(&c, m, u * c.width_a, v * c.length_l).unwrap();
            let kmax = c.kx().max(c.kz(m));
            prop_assert!(p.h_x.abs() <= kmax && p.h_z.abs() <= kmax);
            prop_assert!(p.e_y_rel.abs() <= 1.0);
        }
    }
}
