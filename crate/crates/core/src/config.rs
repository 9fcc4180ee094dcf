//! TOML run configuration.
//!
//! ```toml
//! [suspension]
//! sc = 20.0
//! us = 20.0
//! tau_h = 1.0
//! omega = 0.605
//! aniso_a = 0.38
//! alpha_i_deg = 40.0
//! i0 = 1.0
//! g_c = 1.0          # or: upsilon = 0.316
//!
//! [numerics]
//! mesh_points = 101
//!
//! [stability]
//! a_min = 0.1
//! a_max = 10.0
//! a_points = 60
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{CollimatedFluxForm, NumericsConfig, SuspensionInput, SuspensionParams, TaxisSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuspensionSection {
    pub sc: f64,
    pub us: f64,
    pub tau_h: f64,
    pub omega: f64,
    pub aniso_a: f64,
    pub alpha_i_deg: f64,
    pub i0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_c: Option<f64>,
    #[serde(default)]
    pub ra: f64,
    #[serde(default)]
    pub beam_azimuth_deg: f64,
    #[serde(default)]
    pub collimated_flux: CollimatedFluxForm,
}

/// Wavenumber scan used by the neutral-curve and critical-point stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub a_min: f64,
    pub a_max: f64,
    pub a_points: usize,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { a_min: 0.1, a_max: 10.0, a_points: 60 }
    }
}

impl StabilitySection {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_min > 0.0 && self.a_max <= 20.0 && self.a_min <= self.a_max) {
            return Err(Error::InvalidParams(format!(
                "wavenumber range [{}, {}] must lie in (0, 20]",
                self.a_min, self.a_max
            )));
        }
        if self.a_points == 0 {
            return Err(Error::InvalidParams("a_points must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub suspension: SuspensionSection,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub stability: StabilitySection,
}

impl SuspensionSection {
    pub fn input(&self) -> Result<SuspensionInput> {
        let taxis = match (self.upsilon, self.g_c) {
            (Some(u), None) => TaxisSpec::Upsilon(u),
            (None, Some(g)) => TaxisSpec::CriticalIntensity(g),
            _ => {
                return Err(Error::Config(
                    "[suspension] needs exactly one of `upsilon` or `g_c`".into(),
                ))
            }
        };
        Ok(SuspensionInput {
            schmidt: self.sc,
            swim_speed: self.us,
            rayleigh: self.ra,
            optical_depth: self.tau_h,
            albedo: self.omega,
            aniso: self.aniso_a,
            incidence_deg: self.alpha_i_deg,
            beam_azimuth_deg: self.beam_azimuth_deg,
            intensity: self.i0,
            taxis,
            collimated_flux: self.collimated_flux,
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.numerics.validate()?;
        cfg.stability.validate()?;
        cfg.suspension.input()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolved dimensionless parameters (calibrating the taxis if needed).
    pub fn params(&self) -> Result<SuspensionParams> {
        self.suspension.input()?.resolve()
    }
}
