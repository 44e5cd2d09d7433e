//! Closed-form electrodynamics of a half-wave CPW resonator.
//!
//! Covers the quasi-static effective permittivity of the line, the resonant
//! frequency that follows from it, the kinetic-inductance temperature shift,
//! the notch-type reflection lineshape and the choice of a fixed probe tone on
//! the steepest flank of that lineshape.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_10, PI};

use crate::elliptic::ellipk_ratio;
use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// dB per neper of amplitude: 20 / ln 10.
const DB_PER_NEPER: f64 = 20.0 / LN_10;

/// Temperatures whose reduced fourth power exceeds this are refused.
const KINETIC_DOMAIN_LIMIT: f64 = 1.0 - 1e-6;

/// Physical layout of the coplanar waveguide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorGeometry {
    pub length_m: f64,
    pub strip_width_m: f64,
    pub gap_m: f64,
    /// Metal thickness, which is also the depth of the helium microchannel.
    pub film_thickness_m: f64,
    pub substrate_eps_r: f64,
    /// `None` for an effectively infinite substrate.
    pub substrate_thickness_m: Option<f64>,
    /// Carried for reporting; Q_c is an independent parameter.
    pub coupling_capacitance_f: f64,
}

impl ResonatorGeometry {
    /// The aluminium-on-silicon device: 10 µm strip, 5 µm gaps, 45.54 mm,
    /// 230 nm film, 0.12 pF coupling capacitor.
    pub fn reference_device() -> Self {
        Self {
            length_m: 45.54e-3,
            strip_width_m: 10e-6,
            gap_m: 5e-6,
            film_thickness_m: 230e-9,
            substrate_eps_r: 11.7,
            substrate_thickness_m: None,
            coupling_capacitance_f: 0.12e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length_m", self.length_m),
            ("strip_width_m", self.strip_width_m),
            ("gap_m", self.gap_m),
            ("film_thickness_m", self.film_thickness_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGeometry(format!("{name} must be > 0, got {v}")));
            }
        }
        if let Some(t) = self.substrate_thickness_m {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "substrate_thickness_m must be > 0, got {t}"
                )));
            }
        }
        if !(self.substrate_eps_r >= 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "substrate_eps_r must be >= 1, got {}",
                self.substrate_eps_r
            )));
        }
        if !(self.coupling_capacitance_f >= 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "coupling_capacitance_f must be >= 0, got {}",
                self.coupling_capacitance_f
            )));
        }
        Ok(())
    }
}

/// Quasi-static effective permittivity of the CPW from conformal mapping.
///
/// With `k0 = s/(s + 2w)` and, for a substrate of thickness `t`,
/// `k1 = sinh(πs/4t) / sinh(π(s + 2w)/4t)`, the filling factor is
/// `q = ½ · [K(k1)/K(k1')] / [K(k0)/K(k0')]` and `ε_eff = 1 + (ε_r − 1)·q`.
/// An infinite substrate gives `k1 = k0` and therefore `(ε_r + 1)/2`.
pub fn effective_permittivity(geom: &ResonatorGeometry) -> Result<f64> {
    geom.validate()?;
    let s = geom.strip_width_m;
    let w = geom.gap_m;
    let k0 = s / (s + 2.0 * w);
    let q = match geom.substrate_thickness_m {
        None => 0.5,
        Some(t) => {
            let a = PI * s / (4.0 * t);
            let b = PI * (s + 2.0 * w) / (4.0 * t);
            // sinh ratio written to stay finite for very thin substrates
            let k1 = if b > 300.0 {
                (a - b).exp()
            } else {
                a.sinh() / b.sinh()
            };
            0.5 * ellipk_ratio(k1) / ellipk_ratio(k0)
        }
    };
    Ok(1.0 + (geom.substrate_eps_r - 1.0) * q)
}

/// Half-wave fundamental `c / (2 l √ε_eff)`.
pub fn fundamental_frequency(geom: &ResonatorGeometry, eps_eff: f64) -> Result<f64> {
    if !(eps_eff >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "effective permittivity must be >= 1, got {eps_eff}"
        )));
    }
    if !(geom.length_m > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "length_m must be > 0, got {}",
            geom.length_m
        )));
    }
    Ok(SPEED_OF_LIGHT / (2.0 * geom.length_m * eps_eff.sqrt()))
}

/// Lumped kinetic-inductance model of the resonance temperature dependence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticModel {
    pub tc_k: f64,
    /// L_k(0) / L_m.
    pub lk_over_lm: f64,
    /// Zero-temperature resonance.
    pub f_r0_hz: f64,
}

impl KineticModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.tc_k > 0.0 && self.tc_k.is_finite()) {
            return Err(Error::InvalidParameter(format!("tc_k must be > 0, got {}", self.tc_k)));
        }
        if !(self.lk_over_lm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lk_over_lm must be >= 0, got {}",
                self.lk_over_lm
            )));
        }
        if !(self.f_r0_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "f_r0_hz must be > 0, got {}",
                self.f_r0_hz
            )));
        }
        Ok(())
    }

    /// `f_r(T) = f_r0 · √[(1 + r) / (1 + r / (1 − (T/Tc)⁴))]`.
    pub fn resonance_at(&self, temperature_k: f64) -> Result<f64> {
        self.validate()?;
        let u = reduced_superfluid_fraction(temperature_k, self.tc_k)?;
        let r = self.lk_over_lm;
        Ok(self.f_r0_hz * ((1.0 + r) / (1.0 + r / u)).sqrt())
    }
}

/// `1 − (T/Tc)⁴`, rejecting temperatures at or too close to Tc.
pub(crate) fn reduced_superfluid_fraction(temperature_k: f64, tc_k: f64) -> Result<f64> {
    if !(temperature_k >= 0.0) {
        return Err(Error::OutOfDomain(format!(
            "temperature must be >= 0 K, got {temperature_k}"
        )));
    }
    let t4 = (temperature_k / tc_k).powi(4);
    if t4 > KINETIC_DOMAIN_LIMIT {
        return Err(Error::OutOfDomain(format!(
            "temperature {temperature_k} K is at or above Tc = {tc_k} K"
        )));
    }
    Ok(1.0 - t4)
}

/// Free-function form of [`KineticModel::resonance_at`].
pub fn resonance_vs_temperature(km: &KineticModel, temperature_k: f64) -> Result<f64> {
    km.resonance_at(temperature_k)
}

/// Parameters of the single-port notch reflection lineshape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceParams {
    pub f_r_hz: f64,
    pub q_loaded: f64,
    pub q_coupling: f64,
    /// Rotation of the resonance circle from impedance mismatch.
    pub asymmetry_rad: f64,
    pub baseline_db: f64,
}

impl ResonanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_r_hz > 0.0 && self.f_r_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!("f_r_hz must be > 0, got {}", self.f_r_hz)));
        }
        if !(self.q_loaded > 0.0 && self.q_loaded.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "q_loaded must be > 0, got {}",
                self.q_loaded
            )));
        }
        if !(self.q_coupling >= self.q_loaded) {
            return Err(Error::InvalidParameter(format!(
                "q_coupling ({}) must be >= q_loaded ({})",
                self.q_coupling, self.q_loaded
            )));
        }
        if !self.asymmetry_rad.is_finite() || !self.baseline_db.is_finite() {
            return Err(Error::InvalidParameter("non-finite asymmetry or baseline".into()));
        }
        Ok(())
    }

    /// Half width at half depth of the |S11|² dip, `f_r / 2Q_l`.
    pub fn half_linewidth_hz(&self) -> f64 {
        self.f_r_hz / (2.0 * self.q_loaded)
    }

    /// Same lineshape with the resonance moved to `f_r_hz`.
    pub fn with_resonance(&self, f_r_hz: f64) -> Self {
        Self { f_r_hz, ..*self }
    }

    fn coupling_phasor(&self) -> Complex64 {
        Complex64::from_polar(self.q_loaded / self.q_coupling, self.asymmetry_rad)
    }

    fn detuning_denominator(&self, f: f64) -> Complex64 {
        self.offset_denominator(f - self.f_r_hz)
    }

    fn offset_denominator(&self, offset_hz: f64) -> Complex64 {
        Complex64::new(1.0, 2.0 * self.q_loaded * offset_hz / self.f_r_hz)
    }

    /// `S11(f) = 1 − (Q_l/Q_c)·e^{iφ} / (1 + 2i·Q_l·(f − f_r)/f_r)`.
    pub fn s11(&self, f: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) - self.coupling_phasor() / self.detuning_denominator(f)
    }

    /// `20·log10|S11| + baseline`.
    pub fn s11_db(&self, f: f64) -> f64 {
        self.s11_db_at_offset(f - self.f_r_hz)
    }

    /// [`Self::s11_db`] at `f = f_r + offset_hz`. Callers that can form the
    /// offset exactly avoid the rounding of `f − f_r` near 1 GHz.
    pub fn s11_db_at_offset(&self, offset_hz: f64) -> f64 {
        let s = Complex64::new(1.0, 0.0) - self.coupling_phasor() / self.offset_denominator(offset_hz);
        DB_PER_NEPER * s.norm().ln() + self.baseline_db
    }

    /// Complex derivative ∂S11/∂f.
    pub fn ds11_df(&self, f: f64) -> Complex64 {
        let d = self.detuning_denominator(f);
        let dx_df = 2.0 * self.q_loaded / self.f_r_hz;
        self.coupling_phasor() * Complex64::new(0.0, dx_df) / (d * d)
    }

    /// ∂(|S11| in dB)/∂f in dB/Hz.
    pub fn slope_db_per_hz(&self, f: f64) -> f64 {
        DB_PER_NEPER * (self.ds11_df(f) / self.s11(f)).re
    }

    /// Gradient of [`Self::s11_db`] with respect to
    /// `(f_r, Q_l, Q_c, φ, baseline)`.
    pub fn s11_db_gradient(&self, f: f64) -> [f64; 5] {
        self.s11_db_gradient_at_offset(f - self.f_r_hz)
    }

    /// [`Self::s11_db_gradient`] at `f = f_r + offset_hz`.
    pub fn s11_db_gradient_at_offset(&self, offset_hz: f64) -> [f64; 5] {
        let a = self.coupling_phasor();
        let d = self.offset_denominator(offset_hz);
        let s = Complex64::new(1.0, 0.0) - a / d;
        let i = Complex64::new(0.0, 1.0);
        let x = d.im;
        let ql = self.q_loaded;
        let fr = self.f_r_hz;

        let dx_dfr = -2.0 * ql / fr * (1.0 + offset_hz / fr);
        let ds_dfr = a * i * dx_dfr / (d * d);
        let ds_dql = -(a / ql) / d + a * i * (x / ql) / (d * d);
        let ds_dqc = a / (self.q_coupling * d);
        let ds_dphi = -i * a / d;

        let db = |ds: Complex64| DB_PER_NEPER * (ds / s).re;
        [db(ds_dfr), db(ds_dql), db(ds_dqc), db(ds_dphi), 1.0]
    }

    /// Largest |S11| reachable on the resonance circle. Equals 1 for φ = 0
    /// when Q_c ≥ Q_l, and exceeds 1 slightly for any rotated circle.
    pub fn max_reflection_magnitude(&self) -> f64 {
        let a = self.coupling_phasor();
        (Complex64::new(1.0, 0.0) - 0.5 * a).norm() + 0.5 * a.norm()
    }
}

/// Free-function form of [`ResonanceParams::s11`].
pub fn s11(params: &ResonanceParams, f: f64) -> Complex64 {
    params.s11(f)
}

/// Operating point for fixed-frequency acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub frequency_hz: f64,
    /// Signed ∂(|S11| in dB)/∂f at the probe frequency.
    pub slope_db_per_hz: f64,
}

const PROBE_GRID_POINTS: usize = 4001;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Frequency of steepest |S11| in dB and the slope there.
///
/// Scans ±5 linewidths around f_r, then refines the best grid cell by
/// golden-section search to `f_r·1e-10`. Ties between mirror-image flanks
/// resolve to the lower frequency.
pub fn max_slope_probe(params: &ResonanceParams) -> Result<Probe> {
    params.validate()?;
    let span = 5.0 * params.f_r_hz / params.q_loaded;
    let lo = params.f_r_hz - span;
    let step = 2.0 * span / (PROBE_GRID_POINTS - 1) as f64;
    let objective = |f: f64| params.slope_db_per_hz(f).abs();

    let values: Vec<f64> = (0..PROBE_GRID_POINTS)
        .map(|i| objective(lo + step * i as f64))
        .collect();
    let best = values.iter().cloned().fold(f64::MIN, f64::max);
    let idx = values
        .iter()
        .position(|&v| v >= best * (1.0 - 1e-9))
        .unwrap_or(0);

    let mut a = lo + step * idx.saturating_sub(1) as f64;
    let mut b = lo + step * (idx + 1).min(PROBE_GRID_POINTS - 1) as f64;
    let tol = params.f_r_hz * 1e-10;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = objective(d);
        }
    }
    let f0 = 0.5 * (a + b);
    Ok(Probe {
        frequency_hz: f0,
        slope_db_per_hz: params.slope_db_per_hz(f0),
    })
}
