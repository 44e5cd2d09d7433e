//! Scenario files.
//!
//! A scenario is a TOML document whose keys carry their SI unit as a suffix
//! (`length_m`, `pt_fundamental_hz`). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::helium::{CondensationModel, CondensationScenario, HeliumConstants, ShiftModel};
use crate::resonator::{max_slope_probe, KineticModel, Probe, ResonanceParams, ResonatorGeometry};
use crate::spectral::{DetectionParams, WelchParams};
use crate::synthesis::{FluctuationScenario, GeophoneModel, MeasurementNoise};

/// Environment variable naming the directory searched for relative
/// scenario paths that do not exist as given.
pub const CONFIG_DIR_ENV: &str = "HECPW_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorSection {
    pub geometry: ResonatorGeometry,
    /// Measured lineshape; `f_r_hz` is the empty-cell resonance.
    pub resonance: ResonanceParams,
    #[serde(default)]
    pub kinetic: Option<KineticModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeliumSection {
    #[serde(default)]
    pub constants: HeliumConstants,
    #[serde(default)]
    pub shift: ShiftModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Fixed probe tone; the maximum-slope point when absent.
    #[serde(default)]
    pub probe_frequency_hz: Option<f64>,
    /// RMS of white noise added to the recorded dB values.
    #[serde(default)]
    pub noise_db_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub welch: WelchParams,
    #[serde(default = "default_band_lo")]
    pub band_lo_hz: f64,
    #[serde(default = "default_band_hi")]
    pub band_hi_hz: f64,
    #[serde(default)]
    pub detection: DetectionParams,
}

fn default_band_lo() -> f64 {
    1.0
}

fn default_band_hi() -> f64 {
    200.0
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            welch: WelchParams::default(),
            band_lo_hz: default_band_lo(),
            band_hi_hz: default_band_hi(),
            detection: DetectionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeophoneSection {
    #[serde(default)]
    pub model: GeophoneModel,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Deconvolution cutoff; a quarter of the natural frequency when absent.
    #[serde(default)]
    pub cutoff_hz: Option<f64>,
    #[serde(default = "default_geophone_segment")]
    pub segment_length: usize,
    /// Motion of the plate the sensor sits on.
    pub vibration: FluctuationScenario,
}

fn default_geophone_segment() -> usize {
    8192
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub resonator: ResonatorSection,
    #[serde(default = "default_helium")]
    pub helium: HeliumSection,
    #[serde(default)]
    pub condensation: Option<CondensationScenario>,
    pub fluctuation: FluctuationScenario,
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub geophone: Option<GeophoneSection>,
}

fn default_helium() -> HeliumSection {
    HeliumSection {
        constants: HeliumConstants::default(),
        shift: ShiftModel::default(),
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ScenarioConfig {
    /// Parses and validates; `origin` only labels diagnostics.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(src, span.start);
                    Error::Config(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => Error::Config(format!("{origin}: {msg}")),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.resonator.geometry.validate()?;
        self.resonator.resonance.validate()?;
        if let Some(k) = &self.resonator.kinetic {
            k.validate()?;
        }
        self.helium.constants.validate()?;
        self.helium.shift.validate()?;
        if let Some(c) = &self.condensation {
            c.validate()?;
        }
        let acq = &self.acquisition;
        if !(acq.sample_rate_hz > 0.0 && acq.duration_s > 0.0) {
            return Err(Error::Config(
                "acquisition.sample_rate_hz and acquisition.duration_s must be > 0".into(),
            ));
        }
        if !(acq.noise_db_rms >= 0.0) {
            return Err(Error::Config("acquisition.noise_db_rms must be >= 0".into()));
        }
        if let Some(f) = acq.probe_frequency_hz {
            if !(f > 0.0) {
                return Err(Error::Config("acquisition.probe_frequency_hz must be > 0".into()));
            }
        }
        self.fluctuation.validate()?;
        self.fluctuation.check_nyquist(acq.sample_rate_hz)?;
        let an = &self.analysis;
        if !(an.band_lo_hz >= 0.0 && an.band_hi_hz > an.band_lo_hz) {
            return Err(Error::InvalidBand(format!(
                "analysis band [{}, {}] is empty",
                an.band_lo_hz, an.band_hi_hz
            )));
        }
        if let Some(g) = &self.geophone {
            g.model.validate()?;
            g.vibration.validate()?;
            g.vibration.check_nyquist(g.sample_rate_hz)?;
            if !(g.duration_s > 0.0) {
                return Err(Error::Config("geophone.duration_s must be > 0".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, so formatting and comments in the
    /// source file do not change it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Probe tone from the acquisition policy.
    pub fn probe(&self) -> Result<Probe> {
        let params = &self.resonator.resonance;
        match self.acquisition.probe_frequency_hz {
            Some(f) => Ok(Probe { frequency_hz: f, slope_db_per_hz: params.slope_db_per_hz(f) }),
            None => max_slope_probe(params),
        }
    }

    pub fn measurement_noise(&self, seed: u64) -> Option<MeasurementNoise> {
        (self.acquisition.noise_db_rms > 0.0).then_some(MeasurementNoise {
            rms_db: self.acquisition.noise_db_rms,
            seed,
        })
    }

    /// Condensation model with the configured schedule; empty cell
    /// resonance from the geometry.
    pub fn condensation_model(&self, base_f_r_hz: f64) -> Result<CondensationModel> {
        let scenario = self
            .condensation
            .clone()
            .ok_or_else(|| Error::Config("scenario has no [condensation] section".into()))?;
        let model = CondensationModel {
            scenario,
            constants: self.helium.constants,
            geometry: self.resonator.geometry,
            shift: self.helium.shift.clone(),
            base_f_r_hz,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Resolves a scenario path: as given if it exists, otherwise relative to
/// `config_dir` (normally the value of [`CONFIG_DIR_ENV`]).
pub fn resolve_config_path(path: &Path, config_dir: Option<&Path>) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match config_dir {
        Some(dir) if dir.join(path).exists() => dir.join(path),
        _ => path.to_path_buf(),
    }
}
