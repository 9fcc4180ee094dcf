//! Physical and dimensionless parameters, refraction at the free surface, and
//! the phototaxis response.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Refractive index of water.
pub const WATER_REFRACTIVE_INDEX: f64 = 1.333;

/// Upper end of the intensity range scanned for the taxis sign change.
pub const CRITICAL_INTENSITY_SCAN_MAX: f64 = 10.0;

/// Default bracket for the taxis shape parameter when calibrating to a
/// target critical intensity.
pub const UPSILON_BRACKET: (f64, f64) = (0.01, 5.0);

/// Dimensional properties of a suspension (CGS units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// cm^2/s
    pub kinematic_viscosity: f64,
    /// cm^2/s
    pub cell_diffusivity: f64,
    /// cells/cm^3
    pub mean_concentration: f64,
    /// cm/s
    pub cell_swim_speed: f64,
    /// cm^3
    pub cell_volume: f64,
    /// relative cell excess density
    pub density_ratio: f64,
    /// cm
    pub cell_radius: f64,
    /// cm/s^2
    pub gravity: f64,
    /// g/cm^3
    pub fluid_density: f64,
    /// layer depth, cm
    pub depth: f64,
}

impl PhysicalParams {
    /// Typical values for a *Chlamydomonas* suspension of the given depth.
    pub fn chlamydomonas(depth: f64) -> Self {
        PhysicalParams {
            kinematic_viscosity: 1e-2,
            cell_diffusivity: 5e-4,
            mean_concentration: 1e6,
            cell_swim_speed: 1e-2,
            cell_volume: 5e-10,
            density_ratio: 5e-2,
            cell_radius: 1e-3,
            gravity: 981.0,
            fluid_density: 1.0,
            depth,
        }
    }

    /// Checks positivity. Returns a warning string when the excess density is
    /// not small compared with the fluid density (Boussinesq regime).
    pub fn validate(&self) -> Result<Option<String>> {
        let fields = [
            ("kinematic_viscosity", self.kinematic_viscosity),
            ("cell_diffusivity", self.cell_diffusivity),
            ("mean_concentration", self.mean_concentration),
            ("cell_swim_speed", self.cell_swim_speed),
            ("cell_volume", self.cell_volume),
            ("density_ratio", self.density_ratio),
            ("cell_radius", self.cell_radius),
            ("gravity", self.gravity),
            ("fluid_density", self.fluid_density),
            ("depth", self.depth),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok((self.density_ratio > 0.2).then(|| {
            format!(
                "density ratio {} is not small; Boussinesq approximation is questionable",
                self.density_ratio
            )
        }))
    }
}

/// Dimensionless groups derivable from [`PhysicalParams`] alone. The optical
/// depth needs optical data and is supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessGroups {
    pub schmidt: f64,
    pub swim_speed: f64,
    pub rayleigh: f64,
}

pub fn physical_to_dimensionless(p: &PhysicalParams) -> Result<DimensionlessGroups> {
    p.validate()?;
    let dynamic_viscosity = p.fluid_density * p.kinematic_viscosity;
    let excess_density = p.density_ratio * p.fluid_density;
    Ok(DimensionlessGroups {
        schmidt: p.kinematic_viscosity / p.cell_diffusivity,
        swim_speed: p.cell_swim_speed * p.depth / p.cell_diffusivity,
        rayleigh: p.mean_concentration * p.cell_volume * excess_density * p.gravity
            * p.depth.powi(3)
            / (dynamic_viscosity * p.cell_diffusivity),
    })
}

/// Refraction angle (radians) for an incidence angle given in degrees.
pub fn snell_refract(incidence_deg: f64, refractive_index: f64) -> Result<f64> {
    if !(0.0..90.0).contains(&incidence_deg) {
        return Err(Error::Domain(format!(
            "incidence angle {incidence_deg} deg outside [0, 90)"
        )));
    }
    if !(refractive_index >= 1.0) {
        return Err(Error::Domain(format!(
            "refractive index {refractive_index} below 1"
        )));
    }
    Ok(((incidence_deg * PI / 180.0).sin() / refractive_index).asin())
}

fn taxis_argument(g: f64, upsilon: f64) -> f64 {
    0.4 * g * (upsilon * (2.5 - g)).exp()
}

/// Phototaxis response `T(G)`; positive below the critical intensity.
pub fn taxis_value(g: f64, upsilon: f64) -> f64 {
    let phi = taxis_argument(g, upsilon);
    0.8 * (1.5 * PI * phi).sin() - 0.1 * (0.5 * PI * phi).sin()
}

/// Analytic `dT/dG`.
pub fn taxis_derivative(g: f64, upsilon: f64) -> f64 {
    let phi = taxis_argument(g, upsilon);
    let dphi = 0.4 * (upsilon * (2.5 - g)).exp() * (1.0 - upsilon * g);
    (0.8 * 1.5 * PI * (1.5 * PI * phi).cos() - 0.1 * 0.5 * PI * (0.5 * PI * phi).cos()) * dphi
}

/// First positive zero of the taxis response as a function of `phi`.
fn first_taxis_zero_in_phi() -> f64 {
    let t = |phi: f64| 0.8 * (1.5 * PI * phi).sin() - 0.1 * (0.5 * PI * phi).sin();
    let step = 1e-3;
    let mut lo = step;
    while t(lo + step) > 0.0 {
        lo += step;
    }
    bisect(t, lo, lo + step, 1e-15)
}

/// Smallest positive intensity at which the taxis response changes sign.
///
/// `phi(G)` rises on `[0, 1/upsilon]` and decays beyond, while the response
/// is positive for `phi` below its first zero, so the first sign change is
/// where the rising branch of `phi` reaches that zero.
pub fn calibrate_critical_intensity(upsilon: f64) -> Result<f64> {
    if !(upsilon > 0.0) {
        return Err(Error::Domain(format!("upsilon must be positive, got {upsilon}")));
    }
    let phi_zero = first_taxis_zero_in_phi();
    let phi = |g: f64| 0.4 * g * (upsilon * (2.5 - g)).exp();
    let peak = (1.0 / upsilon).min(CRITICAL_INTENSITY_SCAN_MAX);
    if phi(peak) <= phi_zero {
        return Err(Error::NoRoot(format!(
            "taxis response keeps its sign on (0, {CRITICAL_INTENSITY_SCAN_MAX}] for upsilon = {upsilon}"
        )));
    }
    Ok(bisect(|g| phi(g) - phi_zero, 0.0, peak, 1e-13))
}

/// Inverse of [`calibrate_critical_intensity`] over [`UPSILON_BRACKET`].
pub fn calibrate_upsilon(target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::Domain(format!("target critical intensity {target}")));
    }
    let (lo, hi) = UPSILON_BRACKET;
    let samples = 400;
    let upsilon_at = |k: usize| lo * (hi / lo).powf(k as f64 / samples as f64);
    let miss = |u: f64| calibrate_critical_intensity(u).map(|g| g - target);
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..=samples {
        let u = upsilon_at(k);
        let Ok(r) = miss(u) else {
            prev = None;
            continue;
        };
        if r == 0.0 {
            return Ok(u);
        }
        if let Some((pu, pr)) = prev {
            if pr.signum() != r.signum() {
                let (mut a, mut b) = (pu, u);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let rm = miss(m)?;
                    if rm.signum() == pr.signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-13 {
                        break;
                    }
                }
                return Ok(0.5 * (a + b));
            }
        }
        prev = Some((u, r));
    }
    Err(Error::NoRoot(format!(
        "no upsilon in [{lo}, {hi}] gives critical intensity {target}"
    )))
}

pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// How the taxis shape parameter is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxisSpec {
    Upsilon(f64),
    CriticalIntensity(f64),
}

/// Form of the collimated source term in the flux integral equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollimatedFluxForm {
    /// Flux of the beam is intensity times its direction cosine.
    #[default]
    Projected,
    /// Drops the direction cosine, matching the printed integral equation.
    Unprojected,
}

/// Fully resolved dimensionless control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspensionParams {
    pub schmidt: f64,
    pub swim_speed: f64,
    pub rayleigh: f64,
    pub optical_depth: f64,
    pub albedo: f64,
    pub aniso: f64,
    pub incidence_deg: f64,
    /// Refraction angle in radians, derived from `incidence_deg`.
    pub refraction_angle: f64,
    /// Beam azimuth in radians.
    pub beam_azimuth: f64,
    pub intensity: f64,
    pub upsilon: f64,
    /// Critical intensity implied by `upsilon`; a label for reporting.
    pub critical_intensity: f64,
    pub collimated_flux: CollimatedFluxForm,
}

/// Builder input for [`SuspensionParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuspensionInput {
    pub schmidt: f64,
    pub swim_speed: f64,
    pub rayleigh: f64,
    pub optical_depth: f64,
    pub albedo: f64,
    pub aniso: f64,
    pub incidence_deg: f64,
    pub beam_azimuth_deg: f64,
    pub intensity: f64,
    pub taxis: TaxisSpec,
    pub collimated_flux: CollimatedFluxForm,
}

impl Default for SuspensionInput {
    fn default() -> Self {
        SuspensionInput {
            schmidt: 20.0,
            swim_speed: 10.0,
            rayleigh: 0.0,
            optical_depth: 0.5,
            albedo: 0.5,
            aniso: 0.0,
            incidence_deg: 0.0,
            beam_azimuth_deg: 0.0,
            intensity: 1.0,
            taxis: TaxisSpec::Upsilon(0.4),
            collimated_flux: CollimatedFluxForm::Projected,
        }
    }
}

impl SuspensionInput {
    pub fn resolve(&self) -> Result<SuspensionParams> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::InvalidParams(msg)) };
        check(self.schmidt > 0.0, format!("Schmidt number {}", self.schmidt))?;
        check(self.swim_speed >= 0.0, format!("swimming speed {}", self.swim_speed))?;
        check(self.rayleigh.is_finite(), format!("Rayleigh number {}", self.rayleigh))?;
        check(self.optical_depth >= 0.0, format!("optical depth {}", self.optical_depth))?;
        check((0.0..=1.0).contains(&self.albedo), format!("albedo {}", self.albedo))?;
        check((-1.0..=1.0).contains(&self.aniso), format!("anisotropy {}", self.aniso))?;
        check(
            (0.0..=80.0).contains(&self.incidence_deg),
            format!("incidence angle {} deg outside [0, 80]", self.incidence_deg),
        )?;
        check(self.intensity > 0.0, format!("intensity {}", self.intensity))?;
        let (upsilon, critical_intensity) = match self.taxis {
            TaxisSpec::Upsilon(u) => (u, calibrate_critical_intensity(u)?),
            TaxisSpec::CriticalIntensity(g) => {
                let u = calibrate_upsilon(g)?;
                (u, calibrate_critical_intensity(u)?)
            }
        };
        Ok(SuspensionParams {
            schmidt: self.schmidt,
            swim_speed: self.swim_speed,
            rayleigh: self.rayleigh,
            optical_depth: self.optical_depth,
            albedo: self.albedo,
            aniso: self.aniso,
            incidence_deg: self.incidence_deg,
            refraction_angle: snell_refract(self.incidence_deg, WATER_REFRACTIVE_INDEX)?,
            beam_azimuth: self.beam_azimuth_deg.to_radians(),
            intensity: self.intensity,
            upsilon,
            critical_intensity,
            collimated_flux: self.collimated_flux,
        })
    }
}

impl SuspensionParams {
    /// Offset in the swimming-direction denominator; zero for collimated light.
    pub const IOTA: f64 = 0.0;

    pub fn taxis(&self, g: f64) -> f64 {
        taxis_value(g, self.upsilon)
    }

    pub fn taxis_slope(&self, g: f64) -> f64 {
        taxis_derivative(g, self.upsilon)
    }

    /// Cosine of the refracted beam angle.
    pub fn beam_cosine(&self) -> f64 {
        self.refraction_angle.cos()
    }

    pub fn with_rayleigh(mut self, rayleigh: f64) -> Self {
        self.rayleigh = rayleigh;
        self
    }
}

/// Discretization and solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub mesh_points: usize,
    pub tau_quadrature_points: usize,
    pub ordinates_per_hemisphere: usize,
    pub azimuthal_points: usize,
    pub picard_tol: f64,
    pub picard_relaxation: f64,
    pub picard_max_iter: usize,
    pub eigen_tol: f64,
    pub neutral_tol: f64,
    /// Direction of the perturbation wavevector relative to the x1 axis, degrees.
    pub wavevector_angle_deg: f64,
    /// Reuse the solution at azimuth `-zeta` for `zeta`.
    pub azimuthal_symmetry: bool,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            mesh_points: 101,
            tau_quadrature_points: 101,
            ordinates_per_hemisphere: 16,
            azimuthal_points: 16,
            picard_tol: 1e-8,
            picard_relaxation: 0.5,
            picard_max_iter: 500,
            eigen_tol: 1e-8,
            neutral_tol: 1e-5,
            wavevector_angle_deg: 0.0,
            azimuthal_symmetry: true,
        }
    }
}

impl NumericsConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        if self.mesh_points < 51 {
            return fail(format!("mesh_points = {} (need at least 51)", self.mesh_points));
        }
        if self.tau_quadrature_points < 3 || self.tau_quadrature_points.is_multiple_of(2) {
            return fail(format!(
                "tau_quadrature_points = {} (need an odd count >= 3)",
                self.tau_quadrature_points
            ));
        }
        if self.ordinates_per_hemisphere == 0 || self.azimuthal_points == 0 {
            return fail("ordinate counts must be positive".into());
        }
        if !(self.picard_relaxation > 0.0 && self.picard_relaxation <= 1.0) {
            return fail(format!("picard_relaxation = {}", self.picard_relaxation));
        }
        if !(self.picard_tol > 0.0 && self.eigen_tol > 0.0 && self.neutral_tol > 0.0) {
            return fail("tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn with_mesh(mut self, mesh_points: usize) -> Self {
        self.mesh_points = mesh_points;
        self
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn snell_round_trip(deg in 0.0f64..=80.0) {
            let a0 = snell_refract(deg, WATER_REFRACTIVE_INDEX).unwrap();
            prop_assert!((WATER_REFRACTIVE_INDEX * a0.sin() - deg.to_radians().sin()).abs() < 1e-12);
            prop_assert!((0.0..PI / 2.0).contains(&a0));
        }

        #[test]
        fn taxis_bounded(g in 0.0f64..50.0, u in 0.01f64..5.0) {
            prop_assert!(taxis_value(g, u).abs() <= 0.9 + 1e-12);
        }

        #[test]
        fn taxis_derivative_matches_finite_difference(g in 0.0f64..5.0, u in 0.05f64..2.0) {
            let h = 1e-5;
            let fd = (taxis_value(g + h, u) - taxis_value(g - h, u)) / (2.0 * h);
            let an = taxis_derivative(g, u);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
        }

        #[test]
        fn upsilon_calibration_inverts(u in 0.02f64..4.0) {
            let g = calibrate_critical_intensity(u).unwrap();
            let back = calibrate_upsilon(g).unwrap();
            prop_assert!((calibrate_critical_intensity(back).unwrap() - g).abs() < 1e-6);
        }
    }
}
