//! Geophone calibration from a known drive, and inversion of its voltage
//! record to ground displacement.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::lm::{self, LeastSquaresProblem, LmConfig};
use super::FitResult;
use crate::error::{Error, Result};
use crate::fourier;
use crate::spectral::{welch_asd, Spectrum, WelchParams};
use crate::synthesis::GeophoneModel;
use crate::trace::{TimeTrace, Unit};

pub const PARAMETER_NAMES: [&str; 3] = ["sensitivity_v_s_per_m", "natural_frequency_hz", "damping_ratio"];

/// Bins whose drive magnitude is below this fraction of the largest are
/// not used.
const EXCITATION_FLOOR: f64 = 1e-3;

/// Relative complex mismatch between the model response and measured
/// voltage/velocity ratios, split into real and imaginary rows. Parameters
/// are ordered as in [`PARAMETER_NAMES`].
pub struct ResponseProblem {
    freqs: Vec<f64>,
    ratios: Vec<Complex64>,
    gain: f64,
}

impl ResponseProblem {
    pub fn new(freqs_hz: Vec<f64>, ratios: Vec<Complex64>, preamp_gain: f64) -> Self {
        Self { freqs: freqs_hz, ratios, gain: preamp_gain }
    }

    fn model(&self, p: &[f64]) -> GeophoneModel {
        GeophoneModel {
            sensitivity_v_s_per_m: p[0],
            natural_frequency_hz: p[1],
            damping_ratio: p[2],
            preamp_gain: self.gain,
        }
    }
}

impl LeastSquaresProblem for ResponseProblem {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let gm = self.model(p);
        let mut out = Vec::with_capacity(2 * self.freqs.len());
        for (&f, &r) in self.freqs.iter().zip(&self.ratios) {
            let z = (gm.response(f) - r) / r.norm();
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let gm = self.model(p);
        let w0 = 2.0 * PI * p[1];
        let zeta = p[2];
        let mut j = DMatrix::zeros(2 * self.freqs.len(), 3);
        for (i, (&f, &r)) in self.freqs.iter().zip(&self.ratios).enumerate() {
            let w = 2.0 * PI * f;
            let h = gm.response(f);
            let d = Complex64::new(w0 * w0 - w * w, 2.0 * zeta * w0 * w);
            let scale = 1.0 / r.norm();
            let cols = [
                h / p[0],
                -h / d * Complex64::new(2.0 * w0, 2.0 * zeta * w) * (2.0 * PI),
                -h / d * Complex64::new(0.0, 2.0 * w0 * w),
            ];
            for (c, dh) in cols.iter().enumerate() {
                j[(2 * i, c)] = dh.re * scale;
                j[(2 * i + 1, c)] = dh.im * scale;
            }
        }
        j
    }

    fn is_feasible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > 0.0 && p[2] > 0.0 && p[2] < 2.0 && p.iter().all(|v| v.is_finite())
    }
}

/// Fits sensor sensitivity, natural frequency and damping from a ground
/// velocity drive and the recorded output voltage. The preamp gain of
/// `initial` is held fixed.
pub fn calibrate_geophone(drive: &TimeTrace, response: &TimeTrace, initial: &GeophoneModel) -> Result<FitResult> {
    initial.validate()?;
    if drive.unit != Unit::MetersPerSecond {
        return Err(Error::InvalidParameter(format!("drive must be in m/s, got {}", drive.unit)));
    }
    if response.unit != Unit::Volts {
        return Err(Error::InvalidParameter(format!("response must be in V, got {}", response.unit)));
    }
    if drive.len() != response.len() || drive.sample_rate_hz != response.sample_rate_hz {
        return Err(Error::InvalidParameter(
            "drive and response must share length and sample rate".into(),
        ));
    }
    let n = drive.len();
    let dspec = fourier::forward(&drive.values);
    let vspec = fourier::forward(&response.values);
    let top = (n + 1) / 2;
    let peak = dspec[1..top.max(1)].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut freqs = Vec::new();
    let mut ratios = Vec::new();
    for k in 1..top {
        if peak > 0.0 && dspec[k].norm() >= EXCITATION_FLOOR * peak {
            let ratio = vspec[k] / dspec[k];
            if ratio.norm() > 0.0 {
                freqs.push(fourier::bin_frequency(k, n, drive.sample_rate_hz));
                ratios.push(ratio);
            }
        }
    }
    if freqs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 2 excited bins, found {}",
            freqs.len()
        )));
    }
    let f0 = initial.natural_frequency_hz;
    let bracketed = freqs.iter().any(|&f| f >= 0.5 * f0 && f <= 2.0 * f0);

    let prob = ResponseProblem { freqs, ratios, gain: initial.preamp_gain };
    let p0 = [initial.sensitivity_v_s_per_m, initial.natural_frequency_hz, initial.damping_ratio];
    let out = lm::minimize(&prob, &p0, &LmConfig::default());
    let mut fixed = BTreeMap::new();
    fixed.insert("preamp_gain".to_string(), initial.preamp_gain);
    let mut fit = FitResult::from_outcome(&PARAMETER_NAMES, &out, fixed);
    if !bracketed {
        fit.warnings.push(format!(
            "ill-conditioned: drive has no energy between {:.3} and {:.3} Hz",
            0.5 * f0,
            2.0 * f0
        ));
    }
    Ok(fit)
}

/// Calibrated model from a [`calibrate_geophone`] result.
pub fn model_from_fit(fit: &FitResult) -> Option<GeophoneModel> {
    Some(GeophoneModel {
        sensitivity_v_s_per_m: fit.value("sensitivity_v_s_per_m")?,
        natural_frequency_hz: fit.value("natural_frequency_hz")?,
        damping_ratio: fit.value("damping_ratio")?,
        preamp_gain: fit.value("preamp_gain")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvolutionOptions {
    /// Bins below this are discarded; defaults to a quarter of the natural
    /// frequency.
    pub cutoff_hz: Option<f64>,
    /// Segment length is clamped to the trace length.
    pub welch: WelchParams,
}

impl Default for DeconvolutionOptions {
    fn default() -> Self {
        Self {
            cutoff_hz: None,
            welch: WelchParams { segment_length: 8192, ..WelchParams::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeophoneDisplacement {
    pub trace: TimeTrace,
    pub spectrum: Spectrum,
    /// RMS of the recovered displacement between the cutoff and Nyquist.
    pub rms_m: f64,
    pub cutoff_hz: f64,
}

/// Ground displacement from the output voltage: `x = V / (iω·H·gain)` above
/// the cutoff, zero below.
pub fn displacement_from_geophone(
    v: &TimeTrace,
    gm: &GeophoneModel,
    options: &DeconvolutionOptions,
) -> Result<GeophoneDisplacement> {
    gm.validate()?;
    if v.unit != Unit::Volts {
        return Err(Error::InvalidParameter(format!("geophone trace must be in V, got {}", v.unit)));
    }
    let cutoff = options.cutoff_hz.unwrap_or(0.25 * gm.natural_frequency_hz);
    if !(cutoff > 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff must be > 0, got {cutoff}")));
    }
    let x = fourier::apply_transfer(&v.values, v.sample_rate_hz, |f| {
        if f < cutoff {
            Complex64::new(0.0, 0.0)
        } else {
            1.0 / (Complex64::new(0.0, 2.0 * PI * f) * gm.response(f))
        }
    });
    let trace = TimeTrace::new(v.sample_rate_hz, x, Unit::Meters)?;
    let rms_m = trace.rms();
    let mut welch = options.welch;
    if welch.segment_length > trace.len() {
        welch.segment_length = prev_power_of_two(trace.len());
    }
    let spectrum = welch_asd(&trace, &welch)?;
    Ok(GeophoneDisplacement { trace, spectrum, rms_m, cutoff_hz: cutoff })
}

fn prev_power_of_two(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::lm::jacobian_mismatch;
    use crate::synthesis::synth_geophone;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const FS: f64 = 200.0;
    const N: usize = 4000;

    fn multitone(amplitude: f64) -> TimeTrace {
        // one tone per integer frequency 1..=50 Hz with spread phases
        let values = (0..N)
            .map(|i| {
                let t = i as f64 / FS;
                (1..=50)
                    .map(|k| {
                        let f = k as f64;
                        amplitude * (2.0 * PI * f * t + 0.37 * (k * k) as f64).sin()
                    })
                    .sum()
            })
            .collect();
        TimeTrace::new(FS, values, Unit::MetersPerSecond).unwrap()
    }

    fn start() -> GeophoneModel {
        GeophoneModel {
            sensitivity_v_s_per_m: 20.0,
            natural_frequency_hz: 5.5,
            damping_ratio: 0.4,
            preamp_gain: 100.0,
        }
    }

    #[test]
    fn noise_free_calibration() {
        let truth = GeophoneModel::default();
        let drive = multitone(1e-6);
        let v = synth_geophone(&drive, &truth).unwrap();
        let fit = calibrate_geophone(&drive, &v, &start()).unwrap();
        assert!(fit.converged);
        assert!(fit.warnings.is_empty());
        let m = model_from_fit(&fit).unwrap();
        assert!((m.sensitivity_v_s_per_m / 28.8 - 1.0).abs() < 1e-6);
        assert!((m.natural_frequency_hz / 4.5 - 1.0).abs() < 1e-6);
        assert!((m.damping_ratio / 0.6 - 1.0).abs() < 1e-6);
        assert_eq!(m.preamp_gain, 100.0);
    }

    #[test]
    fn drive_scaling_is_irrelevant() {
        let truth = GeophoneModel::default();
        let small = multitone(1e-6);
        let big = multitone(7e-6);
        let a = calibrate_geophone(&small, &synth_geophone(&small, &truth).unwrap(), &start()).unwrap();
        let b = calibrate_geophone(&big, &synth_geophone(&big, &truth).unwrap(), &start()).unwrap();
        for name in PARAMETER_NAMES {
            let (x, y) = (a.value(name).unwrap(), b.value(name).unwrap());
            assert!((x / y - 1.0).abs() < 1e-9, "{name}");
        }
    }

    #[test]
    fn noisy_response_keeps_sensitivity() {
        let truth = GeophoneModel::default();
        let drive = multitone(1e-6);
        let mut v = synth_geophone(&drive, &truth).unwrap();
        let sigma = 0.01 * v.rms();
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for x in &mut v.values {
            *x += normal.sample(&mut rng);
        }
        let fit = calibrate_geophone(&drive, &v, &start()).unwrap();
        assert!((fit.value("sensitivity_v_s_per_m").unwrap() / 28.8 - 1.0).abs() < 0.03);
    }

    #[test]
    fn drive_far_from_resonance_warns() {
        let values: Vec<f64> = (0..N)
            .map(|i| {
                let t = i as f64 / FS;
                (30..=50).map(|k| 1e-6 * (2.0 * PI * k as f64 * t).sin()).sum()
            })
            .collect();
        let drive = TimeTrace::new(FS, values, Unit::MetersPerSecond).unwrap();
        let v = synth_geophone(&drive, &GeophoneModel::default()).unwrap();
        let fit = calibrate_geophone(&drive, &v, &start()).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("ill-conditioned")));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let gm = GeophoneModel::default();
        let freqs: Vec<f64> = (1..40).map(|k| k as f64 * 1.3).collect();
        let ratios = freqs.iter().map(|&f| gm.response(f) * 1.02).collect();
        let prob = ResponseProblem { freqs, ratios, gain: 100.0 };
        assert!(jacobian_mismatch(&prob, &[25.0, 4.9, 0.55], 1e-6) < 1e-5);
    }

    #[test]
    fn sinusoid_round_trip() {
        let fs = 2000.0;
        let n = 40_000;
        let (amp, f) = (10e-9 * 2f64.sqrt(), 20.0);
        let velocity: Vec<f64> = (0..n)
            .map(|i| amp * 2.0 * PI * f * (2.0 * PI * f * i as f64 / fs).cos())
            .collect();
        let vel = TimeTrace::new(fs, velocity, Unit::MetersPerSecond).unwrap();
        let gm = GeophoneModel::default();
        let v = synth_geophone(&vel, &gm).unwrap();
        let out = displacement_from_geophone(&v, &gm, &DeconvolutionOptions::default()).unwrap();
        assert!((out.rms_m / 10e-9 - 1.0).abs() < 0.01, "{}", out.rms_m);
        assert_eq!(out.spectrum.unit, Unit::Meters);
        assert!((out.cutoff_hz - 1.125).abs() < 1e-12);
    }

    #[test]
    fn zero_voltage_gives_zero_displacement() {
        let v = TimeTrace::new(1000.0, vec![0.0; 4096], Unit::Volts).unwrap();
        let out = displacement_from_geophone(&v, &GeophoneModel::default(), &DeconvolutionOptions::default()).unwrap();
        assert_eq!(out.rms_m, 0.0);
        assert!(out.spectrum.asd.iter().all(|&a| a == 0.0));
        assert_eq!(out.spectrum.frequencies_hz.len(), 2049);
    }
}
