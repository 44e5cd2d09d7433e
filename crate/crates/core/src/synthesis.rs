//! Seeded synthesis of helium-surface displacement, the fixed-tone
//! reflection trace it produces, and geophone voltages.
//!
//! Every stochastic term draws from its own ChaCha stream keyed by the
//! scenario seed, so toggling one term never perturbs the others. Noise
//! terms are built in the frequency domain, which makes each trace periodic
//! over its duration and lets the velocity be taken exactly.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fourier;
use crate::helium::ShiftModel;
use crate::resonator::ResonanceParams;
use crate::trace::{sample_count, TimeTrace, Unit};

const STREAM_BUILDING: u64 = 1;
const STREAM_WHITE: u64 = 2;
const STREAM_MEASUREMENT: u64 = 3;

/// Small-signal guard: peak frequency excursion as a fraction of the half linewidth.
pub const SMALL_SIGNAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub n: u32,
    pub amplitude_m: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingBand {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub band_rms_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineNoise {
    pub frequency_hz: f64,
    pub amplitude_m: f64,
}

/// Spectral content of the surface motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationScenario {
    pub pt_fundamental_hz: f64,
    pub pt_harmonics: Vec<Harmonic>,
    pub building_band: BuildingBand,
    pub line_noise: LineNoise,
    /// One-sided amplitude spectral density of the broadband floor, m/√Hz.
    pub white_floor_m_per_rthz: f64,
    pub pt_on: bool,
    pub seed: u64,
}

impl FluctuationScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.pt_fundamental_hz > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "pt_fundamental_hz must be > 0, got {}",
                self.pt_fundamental_hz
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for h in &self.pt_harmonics {
            if h.n == 0 || !seen.insert(h.n) {
                return Err(Error::InvalidScenario(format!(
                    "harmonic index {} is zero or repeated",
                    h.n
                )));
            }
            if !(h.amplitude_m >= 0.0) || !h.phase_rad.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "harmonic {} has invalid amplitude/phase",
                    h.n
                )));
            }
        }
        let b = &self.building_band;
        if !(b.f_lo_hz >= 0.0 && b.f_lo_hz < b.f_hi_hz) || !(b.band_rms_m >= 0.0) {
            return Err(Error::InvalidScenario(format!(
                "building band needs 0 <= f_lo < f_hi and rms >= 0, got [{}, {}] rms {}",
                b.f_lo_hz, b.f_hi_hz, b.band_rms_m
            )));
        }
        if !(self.line_noise.frequency_hz > 0.0 && self.line_noise.amplitude_m >= 0.0) {
            return Err(Error::InvalidScenario("line noise needs f > 0 and amplitude >= 0".into()));
        }
        if !(self.white_floor_m_per_rthz >= 0.0) {
            return Err(Error::InvalidScenario("white floor must be >= 0".into()));
        }
        Ok(())
    }

    /// Highest frequency any term of the scenario can put into a trace.
    pub fn max_frequency(&self) -> f64 {
        let comb = self
            .pt_harmonics
            .iter()
            .map(|h| h.n as f64 * self.pt_fundamental_hz)
            .fold(0.0, f64::max);
        comb.max(self.building_band.f_hi_hz).max(self.line_noise.frequency_hz)
    }

    pub fn check_nyquist(&self, sample_rate_hz: f64) -> Result<()> {
        let fmax = self.max_frequency();
        if !(sample_rate_hz > 2.0 * fmax) {
            return Err(Error::InvalidScenario(format!(
                "sample rate {sample_rate_hz} Sa/s does not exceed twice the highest scenario frequency {fmax} Hz"
            )));
        }
        Ok(())
    }

    /// Variance the scenario is designed to produce (comb and line exact over
    /// whole periods, noise terms in expectation).
    pub fn expected_variance(&self, sample_rate_hz: f64) -> f64 {
        let comb: f64 = if self.pt_on {
            self.pt_harmonics.iter().map(|h| 0.5 * h.amplitude_m * h.amplitude_m).sum()
        } else {
            0.0
        };
        let line = 0.5 * self.line_noise.amplitude_m * self.line_noise.amplitude_m;
        let band = self.building_band.band_rms_m * self.building_band.band_rms_m;
        let white = self.white_floor_m_per_rthz * self.white_floor_m_per_rthz * sample_rate_hz / 2.0;
        comb + line + band + white
    }
}

/// The additive terms of a synthesized trace, kept apart for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthComponents {
    pub pt_comb: Vec<f64>,
    pub building: Vec<f64>,
    pub line: Vec<f64>,
    pub white: Vec<f64>,
}

impl SynthComponents {
    pub fn total(&self) -> Vec<f64> {
        (0..self.pt_comb.len())
            .map(|i| self.pt_comb[i] + self.building[i] + self.line[i] + self.white[i])
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Gaussian noise confined to `[f_lo, f_hi]` with expected RMS `rms`.
/// With `derivative` the same draws are returned as a time derivative.
fn band_noise(
    rng: &mut ChaCha8Rng,
    n: usize,
    sample_rate: f64,
    f_lo: f64,
    f_hi: f64,
    rms: f64,
    derivative: bool,
) -> Vec<f64> {
    // bins strictly between DC and Nyquist
    let bins: Vec<usize> = (1..=(n.saturating_sub(1)) / 2)
        .filter(|&k| {
            let f = fourier::bin_frequency(k, n, sample_rate);
            f >= f_lo && f <= f_hi
        })
        .collect();
    if bins.is_empty() || rms == 0.0 {
        return vec![0.0; n];
    }
    let scale = rms * n as f64 / (2.0 * (bins.len() as f64).sqrt());
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for &k in &bins {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let mut c = Complex64::new(re, im) * scale;
        if derivative {
            c *= Complex64::new(0.0, 2.0 * PI * fourier::bin_frequency(k, n, sample_rate));
        }
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    fourier::inverse_real(spec)
}

fn sinusoid(n: usize, sample_rate: f64, freq: f64, amp: f64, phase: f64, derivative: bool) -> impl Iterator<Item = f64> {
    let w = 2.0 * PI * freq;
    (0..n).map(move |i| {
        let t = i as f64 / sample_rate;
        if derivative {
            amp * w * (w * t + phase).cos()
        } else {
            amp * (w * t + phase).sin()
        }
    })
}

/// Per-term synthesis; `derivative` selects displacement or velocity.
pub fn synth_components(
    scn: &FluctuationScenario,
    sample_rate_hz: f64,
    duration_s: f64,
    derivative: bool,
) -> Result<SynthComponents> {
    scn.validate()?;
    scn.check_nyquist(sample_rate_hz)?;
    let n = sample_count(sample_rate_hz, duration_s);
    if n < 2 {
        return Err(Error::InvalidScenario(format!(
            "{sample_rate_hz} Sa/s over {duration_s} s gives fewer than two samples"
        )));
    }

    let mut pt_comb = vec![0.0; n];
    if scn.pt_on {
        for h in &scn.pt_harmonics {
            let f = h.n as f64 * scn.pt_fundamental_hz;
            for (acc, v) in pt_comb
                .iter_mut()
                .zip(sinusoid(n, sample_rate_hz, f, h.amplitude_m, h.phase_rad, derivative))
            {
                *acc += v;
            }
        }
    }

    let b = &scn.building_band;
    let building = band_noise(
        &mut stream(scn.seed, STREAM_BUILDING),
        n,
        sample_rate_hz,
        b.f_lo_hz,
        b.f_hi_hz,
        b.band_rms_m,
        derivative,
    );

    let line: Vec<f64> = sinusoid(
        n,
        sample_rate_hz,
        scn.line_noise.frequency_hz,
        scn.line_noise.amplitude_m,
        0.0,
        derivative,
    )
    .collect();

    let white_rms = scn.white_floor_m_per_rthz * (sample_rate_hz / 2.0).sqrt();
    let white = band_noise(
        &mut stream(scn.seed, STREAM_WHITE),
        n,
        sample_rate_hz,
        0.0,
        sample_rate_hz / 2.0,
        white_rms,
        derivative,
    );

    Ok(SynthComponents { pt_comb, building, line, white })
}

/// Helium-surface displacement h(t) in metres.
pub fn synth_displacement(scn: &FluctuationScenario, sample_rate_hz: f64, duration_s: f64) -> Result<TimeTrace> {
    let parts = synth_components(scn, sample_rate_hz, duration_s, false)?;
    TimeTrace::new(sample_rate_hz, parts.total(), Unit::Meters)
}

/// Time derivative of [`synth_displacement`] built from the same draws.
pub fn synth_velocity(scn: &FluctuationScenario, sample_rate_hz: f64, duration_s: f64) -> Result<TimeTrace> {
    let parts = synth_components(scn, sample_rate_hz, duration_s, true)?;
    TimeTrace::new(sample_rate_hz, parts.total(), Unit::MetersPerSecond)
}

/// Additive white noise on the recorded dB values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub rms_db: f64,
    pub seed: u64,
}

/// Fixed-tone reflection magnitude in dB as the surface moves.
///
/// Each sample moves the resonance to `f_r + dfr_dh·h(t)` and records
/// `|S11(f0)|` in dB. A warning is attached when the peak excursion leaves
/// the small-signal regime.
pub fn displacement_to_s11_trace(
    h: &TimeTrace,
    params: &ResonanceParams,
    model: &ShiftModel,
    probe_hz: f64,
    noise: Option<MeasurementNoise>,
) -> Result<TimeTrace> {
    params.validate()?;
    if h.unit != Unit::Meters {
        return Err(Error::InvalidParameter(format!(
            "displacement trace must be in metres, got {}",
            h.unit
        )));
    }
    if !(probe_hz > 0.0) {
        return Err(Error::InvalidParameter(format!("probe frequency must be > 0, got {probe_hz}")));
    }
    let mut values: Vec<f64> = h
        .values
        .iter()
        .map(|&x| {
            params
                .with_resonance(params.f_r_hz + model.dfr_dh_hz_per_m * x)
                .s11_db(probe_hz)
        })
        .collect();
    if let Some(noise) = noise {
        if noise.rms_db > 0.0 {
            let mut rng = stream(noise.seed, STREAM_MEASUREMENT);
            for v in values.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += noise.rms_db * g;
            }
        }
    }
    let mut out = TimeTrace::new(h.sample_rate_hz, values, Unit::Decibels)?;
    let peak = h.values.iter().fold(0.0f64, |m, v| m.max(v.abs())) * model.sensitivity();
    let limit = SMALL_SIGNAL_FRACTION * params.half_linewidth_hz();
    if peak > limit {
        out.warnings.push(format!(
            "small-signal regime violated: peak excursion {peak:.3e} Hz exceeds {limit:.3e} Hz"
        ));
    }
    Ok(out)
}

/// Electromagnetic velocity sensor followed by a preamplifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeophoneModel {
    pub natural_frequency_hz: f64,
    pub damping_ratio: f64,
    /// Coil output per unit velocity above resonance, V·s/m.
    pub sensitivity_v_s_per_m: f64,
    pub preamp_gain: f64,
}

impl Default for GeophoneModel {
    fn default() -> Self {
        Self {
            natural_frequency_hz: 4.5,
            damping_ratio: 0.6,
            sensitivity_v_s_per_m: 28.8,
            preamp_gain: 100.0,
        }
    }
}

impl GeophoneModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.natural_frequency_hz > 0.0) {
            return Err(Error::InvalidParameter("geophone natural frequency must be > 0".into()));
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "damping ratio must lie in (0, 2), got {}",
                self.damping_ratio
            )));
        }
        if !(self.sensitivity_v_s_per_m > 0.0) {
            return Err(Error::InvalidParameter("geophone sensitivity must be > 0".into()));
        }
        if !(self.preamp_gain > 0.0) {
            return Err(Error::InvalidParameter("preamp gain must be > 0".into()));
        }
        Ok(())
    }

    /// Coil response to velocity, `S0·(−ω²)/(ω0² − ω² + 2iζω0ω)`, without the preamp.
    pub fn sensor_response(&self, f: f64) -> Complex64 {
        let w = 2.0 * PI * f;
        let w0 = 2.0 * PI * self.natural_frequency_hz;
        let den = Complex64::new(w0 * w0 - w * w, 2.0 * self.damping_ratio * w0 * w);
        Complex64::new(-self.sensitivity_v_s_per_m * w * w, 0.0) / den
    }

    /// Volts out per m/s of ground velocity, preamp included.
    pub fn response(&self, f: f64) -> Complex64 {
        self.sensor_response(f) * self.preamp_gain
    }
}

/// Geophone output voltage for a ground-velocity trace.
pub fn synth_geophone(ground_velocity: &TimeTrace, gm: &GeophoneModel) -> Result<TimeTrace> {
    gm.validate()?;
    if ground_velocity.unit != Unit::MetersPerSecond {
        return Err(Error::InvalidParameter(format!(
            "geophone input must be a velocity trace, got {}",
            ground_velocity.unit
        )));
    }
    let volts = fourier::apply_transfer(&ground_velocity.values, ground_velocity.sample_rate_hz, |f| {
        gm.response(f)
    });
    TimeTrace::new(ground_velocity.sample_rate_hz, volts, Unit::Volts)
}
