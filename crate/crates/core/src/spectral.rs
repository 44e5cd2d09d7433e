//! Noise-spectroscopy chain: Welch ASD, dB-slope calibration to frequency
//! noise, band-limited RMS displacement, pulse-tube harmonic detection and
//! PT-on/off comparison.
//!
//! All spectra are one-sided amplitude spectral densities (unit/√Hz). Band
//! integrals therefore square the ASD, sum over bins and take the root; the
//! DC bin never contributes.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trace::{TimeTrace, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hann" => Ok(Window::Hann),
            "rectangular" => Ok(Window::Rectangular),
            other => Err(Error::InvalidParameter(format!("unknown window '{other}'"))),
        }
    }
}

/// Welch settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchParams {
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window: Window,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_length: 2048,
            overlap_fraction: 0.5,
            window: Window::Hann,
        }
    }
}

/// One-sided amplitude spectral density on a uniform grid starting at 0 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies_hz: Vec<f64>,
    pub asd: Vec<f64>,
    /// Unit of the underlying trace; the ASD is in unit/√Hz.
    pub unit: Unit,
    pub window: Window,
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub n_segments_averaged: usize,
}

impl Spectrum {
    pub fn resolution_hz(&self) -> f64 {
        if self.frequencies_hz.len() < 2 {
            return 0.0;
        }
        self.frequencies_hz[1] - self.frequencies_hz[0]
    }

    /// ∑ asd²·Δf over every bin, the total one-sided power.
    pub fn total_power(&self) -> f64 {
        let df = self.resolution_hz();
        self.asd.iter().map(|a| a * a * df).sum()
    }

    /// Same grid and metadata with new values and unit.
    pub fn with_values(&self, asd: Vec<f64>, unit: Unit) -> Spectrum {
        Spectrum {
            frequencies_hz: self.frequencies_hz.clone(),
            asd,
            unit,
            window: self.window,
            segment_length: self.segment_length,
            overlap_fraction: self.overlap_fraction,
            n_segments_averaged: self.n_segments_averaged,
        }
    }

    /// Nearest bin index to `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        let df = self.resolution_hz();
        if df <= 0.0 {
            return 0;
        }
        ((f / df).round().max(0.0) as usize).min(self.asd.len().saturating_sub(1))
    }

    /// Power in the bins within `half_width` of the bin nearest `f`.
    pub fn line_power(&self, f: f64, half_width: usize) -> f64 {
        let k0 = self.bin_of(f);
        let lo = k0.saturating_sub(half_width).max(1);
        let hi = (k0 + half_width).min(self.asd.len() - 1);
        let df = self.resolution_hz();
        (lo..=hi).map(|k| self.asd[k] * self.asd[k] * df).sum()
    }
}

/// Welch averaged periodogram, returned as an amplitude spectral density.
///
/// Segments are mean-removed and windowed; the PSD is normalized by
/// `fs·∑w²` so that `∑ asd²·Δf` reproduces the trace variance.
pub fn welch_asd(trace: &TimeTrace, params: &WelchParams) -> Result<Spectrum> {
    let n = params.segment_length;
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "segment length must be a power of two >= 2, got {n}"
        )));
    }
    if !(params.overlap_fraction >= 0.0 && params.overlap_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "overlap fraction must lie in [0, 1), got {}",
            params.overlap_fraction
        )));
    }
    if trace.len() < n {
        return Err(Error::InsufficientData(format!(
            "trace has {} samples, one segment needs {n}",
            trace.len()
        )));
    }
    let hop = (n - (n as f64 * params.overlap_fraction).round() as usize).max(1);
    let n_segments = (trace.len() - n) / hop + 1;
    let window = params.window.coefficients(n);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);

    let half = n / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for s in 0..n_segments {
        let seg = &trace.values[s * hop..s * hop + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }

    let fs = trace.sample_rate_hz;
    let norm = 1.0 / (fs * window_power * n_segments as f64);
    let asd = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || k == half { 1.0 } else { 2.0 };
            (p * norm * one_sided).sqrt()
        })
        .collect();
    Ok(Spectrum {
        frequencies_hz: (0..=half).map(|k| k as f64 * fs / n as f64).collect(),
        asd,
        unit: trace.unit,
        window: params.window,
        segment_length: n,
        overlap_fraction: params.overlap_fraction,
        n_segments_averaged: n_segments,
    })
}

/// Converts a dB-noise spectrum to frequency noise, `S_f = S_dB / |∂S11/∂f|`.
pub fn calibrate_frequency_noise(s_db: &Spectrum, slope_db_per_hz: f64) -> Result<Spectrum> {
    if s_db.unit != Unit::Decibels {
        return Err(Error::Calibration(format!(
            "expected a dB spectrum, got {}",
            s_db.unit
        )));
    }
    if !(slope_db_per_hz != 0.0 && slope_db_per_hz.is_finite()) {
        return Err(Error::Calibration(format!(
            "probe slope must be non-zero, got {slope_db_per_hz}"
        )));
    }
    let inv = 1.0 / slope_db_per_hz.abs();
    Ok(s_db.with_values(s_db.asd.iter().map(|a| a * inv).collect(), Unit::Hertz))
}

/// `√(∫_{f1}^{f2} asd² df)` with DC excluded and half-weight edge bins.
pub fn band_rms(s: &Spectrum, f1: f64, f2: f64) -> Result<f64> {
    if !(f1 >= 0.0 && f1 < f2) {
        return Err(Error::InvalidBand(format!("need 0 <= f1 < f2, got [{f1}, {f2}]")));
    }
    let bins: Vec<usize> = (1..s.asd.len())
        .filter(|&k| s.frequencies_hz[k] >= f1 && s.frequencies_hz[k] <= f2)
        .collect();
    let (first, last) = match (bins.first(), bins.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return Err(Error::InvalidBand(format!(
                "no spectral bins between {f1} Hz and {f2} Hz"
            )))
        }
    };
    let df = s.resolution_hz();
    let power: f64 = bins
        .iter()
        .map(|&k| {
            let w = if first != last && (k == first || k == last) { 0.5 } else { 1.0 };
            w * s.asd[k] * s.asd[k] * df
        })
        .sum();
    Ok(power.sqrt())
}

/// Band-limited RMS surface displacement from frequency noise:
/// `Δh_RMS = (∂f_r/∂h)⁻¹ · √(∫ S_f² df)`.
pub fn rms_displacement(s_f: &Spectrum, sensitivity_hz_per_m: f64, f1: f64, f2: f64) -> Result<f64> {
    if !(sensitivity_hz_per_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sensitivity must be > 0, got {sensitivity_hz_per_m}"
        )));
    }
    Ok(band_rms(s_f, f1, f2)? / sensitivity_hz_per_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedHarmonic {
    pub n: u32,
    pub frequency: f64,
    pub asd_peak: f64,
}

/// Detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    pub n_max: u32,
    pub threshold_factor: f64,
    /// Bins around each comb position left out of the reference median.
    pub exclusion_bins: usize,
    /// Half-width of the reference neighbourhood.
    pub neighborhood_bins: usize,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            n_max: 20,
            threshold_factor: 5.0,
            exclusion_bins: 3,
            neighborhood_bins: 24,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Reports harmonic `n` when a local maximum within ±1 bin of `n·f_base`
/// exceeds `threshold_factor` times the median ASD of its neighbourhood
/// (bins near any comb position excluded) and its interpolated peak lies
/// within half a bin of `n·f_base`. Bins that are exactly zero, such as
/// those removed by a deconvolution cutoff, never enter the reference.
pub fn detect_harmonics(s: &Spectrum, f_base: f64, params: &DetectionParams) -> Result<Vec<DetectedHarmonic>> {
    let df = s.resolution_hz();
    if !(f_base > df) {
        return Err(Error::InvalidParameter(format!(
            "base frequency {f_base} Hz must exceed the resolution {df} Hz"
        )));
    }
    let last = s.asd.len() - 1;
    let excl = params.exclusion_bins as f64;
    let near_comb = |k: usize| {
        let m = (k as f64 * df / f_base).round();
        m >= 1.0 && (k as f64 - m * f_base / df).abs() <= excl
    };

    let mut found = Vec::new();
    for n in 1..=params.n_max {
        let target = n as f64 * f_base;
        let k0 = (target / df).round() as usize;
        if k0 + 1 >= last {
            break;
        }
        let k = (k0.saturating_sub(1).max(1)..=k0 + 1)
            .max_by(|&a, &b| s.asd[a].total_cmp(&s.asd[b]))
            .unwrap_or(k0);
        let peak = s.asd[k];
        if !(peak > 0.0) || peak < s.asd[k - 1] || peak < s.asd[k + 1] {
            continue;
        }

        let lo = k0.saturating_sub(params.neighborhood_bins).max(1);
        let hi = (k0 + params.neighborhood_bins).min(last);
        let mut reference: Vec<f64> = (lo..=hi)
            .filter(|&j| !near_comb(j) && s.asd[j] != 0.0)
            .map(|j| s.asd[j])
            .collect();
        if reference.is_empty() {
            reference = (lo..=hi)
                .filter(|&j| (j as f64 - k0 as f64).abs() > excl && s.asd[j] != 0.0)
                .map(|j| s.asd[j])
                .collect();
        }
        if !(peak > params.threshold_factor * median(reference)) {
            continue;
        }

        let offset = interpolate_peak(s.asd[k - 1], peak, s.asd[k + 1]);
        let freq = (k as f64 + offset) * df;
        if (freq - target).abs() <= 0.5 * df {
            found.push(DetectedHarmonic { n, frequency: freq, asd_peak: peak });
        }
    }
    Ok(found)
}

/// Sub-bin peak offset from a parabola through the log magnitudes.
fn interpolate_peak(left: f64, centre: f64, right: f64) -> f64 {
    if left <= 0.0 || right <= 0.0 {
        return 0.0;
    }
    let (a, b, c) = (left.ln(), centre.ln(), right.ln());
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / den).clamp(-0.5, 0.5)
}

/// Result of one analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub detected_harmonics: Vec<DetectedHarmonic>,
    pub band: (f64, f64),
    pub delta_h_rms: f64,
    pub rms_reduction_pt_off: Option<f64>,
    /// dB/Hz at the probe; absent for geophone analyses.
    pub probe_slope: Option<f64>,
    /// Hz/m; absent for geophone analyses.
    pub sensitivity_used: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtComparison {
    pub band: (f64, f64),
    pub rms_on: f64,
    pub rms_off: f64,
    pub reduction: f64,
    /// Harmonic indices detected with the PT on but not with it off.
    pub vanished_harmonics: Vec<u32>,
}

pub fn compare_pt_on_off(on: &AnalysisReport, off: &AnalysisReport) -> Result<PtComparison> {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    if !same(on.band.0, off.band.0) || !same(on.band.1, off.band.1) {
        return Err(Error::InvalidComparison(format!(
            "bands differ: [{}, {}] vs [{}, {}]",
            on.band.0, on.band.1, off.band.0, off.band.1
        )));
    }
    let reduction = if on.delta_h_rms == off.delta_h_rms {
        0.0
    } else if on.delta_h_rms > 0.0 {
        1.0 - off.delta_h_rms / on.delta_h_rms
    } else {
        return Err(Error::InvalidComparison("PT-on RMS is zero".into()));
    };
    let vanished = on
        .detected_harmonics
        .iter()
        .map(|h| h.n)
        .filter(|n| !off.detected_harmonics.iter().any(|o| o.n == *n))
        .collect();
    Ok(PtComparison {
        band: on.band,
        rms_on: on.delta_h_rms,
        rms_off: off.delta_h_rms,
        reduction,
        vanished_harmonics: vanished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sine(sr: f64, n: usize, f: f64, a: f64) -> TimeTrace {
        let v = (0..n).map(|i| a * (2.0 * PI * f * i as f64 / sr).sin()).collect();
        TimeTrace::new(sr, v, Unit::Meters).unwrap()
    }

    fn white(sr: f64, n: usize, sigma: f64, seed: u64) -> TimeTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        TimeTrace::new(sr, (0..n).map(|_| d.sample(&mut rng)).collect(), Unit::Meters).unwrap()
    }

    #[test]
    fn grid_and_segment_count() {
        let tr = white(400.0, 16000, 1.0, 1);
        let s = welch_asd(&tr, &WelchParams::default()).unwrap();
        assert_eq!(s.frequencies_hz.len(), 1025);
        assert_eq!(s.frequencies_hz[0], 0.0);
        assert!((s.resolution_hz() - 0.195_312_5).abs() < 1e-12);
        assert_eq!(s.n_segments_averaged, 14);
        assert_eq!(*s.frequencies_hz.last().unwrap(), 200.0);
    }

    #[test]
    fn sinusoid_power_at_bin_centre() {
        let sr = 400.0;
        let df = sr / 2048.0;
        let f = 40.0 * df;
        let tr = sine(sr, 16000, f, 2.0);
        let s = welch_asd(&tr, &WelchParams::default()).unwrap();
        let p = s.line_power(f, 3);
        assert!((p / 2.0 - 1.0).abs() < 0.02, "{p}");
    }

    #[test]
    fn white_noise_parseval_and_flatness() {
        // 19 segments: 10240 samples, 1024-sample segments, 50% overlap
        let params = WelchParams { segment_length: 1024, ..WelchParams::default() };
        let mut ratios = vec![];
        for seed in 0..20 {
            let tr = white(400.0, 10240, 0.3, seed);
            let s = welch_asd(&tr, &params).unwrap();
            assert_eq!(s.n_segments_averaged, 19);
            ratios.push(s.total_power() / 0.09);
            let flat = 0.3 / 200f64.sqrt();
            let mid = s.asd[100..400].iter().map(|a| a * a).sum::<f64>() / 300.0;
            assert!((mid.sqrt() / flat - 1.0).abs() < 0.05);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        assert!(ratios.iter().all(|r| (r - 1.0).abs() < 0.1));
    }

    #[test]
    fn zero_trace_zero_spectrum() {
        let tr = TimeTrace::new(400.0, vec![0.0; 4096], Unit::Decibels).unwrap();
        let s = welch_asd(&tr, &WelchParams::default()).unwrap();
        assert!(s.asd.iter().all(|&a| a == 0.0));
        assert!(detect_harmonics(&s, 1.4, &DetectionParams::default()).unwrap().is_empty());
    }

    #[test]
    fn welch_argument_errors() {
        let tr = white(400.0, 1000, 1.0, 0);
        assert!(matches!(welch_asd(&tr, &WelchParams::default()), Err(Error::InsufficientData(_))));
        let bad = WelchParams { segment_length: 1000, ..WelchParams::default() };
        assert!(welch_asd(&tr, &bad).is_err());
        let bad = WelchParams { segment_length: 256, overlap_fraction: 1.0, ..WelchParams::default() };
        assert!(welch_asd(&tr, &bad).is_err());
    }

    #[test]
    fn calibration_scales() {
        let tr = TimeTrace { unit: Unit::Decibels, ..white(400.0, 4096, 0.01, 3) };
        let s = welch_asd(&tr, &WelchParams::default()).unwrap();
        let same = calibrate_frequency_noise(&s, 1.0).unwrap();
        assert_eq!(same.asd, s.asd);
        assert_eq!(same.unit, Unit::Hertz);
        let half = calibrate_frequency_noise(&s, -2.0).unwrap();
        for (a, b) in half.asd.iter().zip(&s.asd) {
            assert!((a - b / 2.0).abs() <= 1e-15 * b);
        }
        assert!(matches!(calibrate_frequency_noise(&s, 0.0), Err(Error::Calibration(_))));
        assert!(calibrate_frequency_noise(&same, 1.0).is_err());
    }

    fn flat(df: f64, bins: usize, level: f64) -> Spectrum {
        Spectrum {
            frequencies_hz: (0..bins).map(|k| k as f64 * df).collect(),
            asd: vec![level; bins],
            unit: Unit::Hertz,
            window: Window::Hann,
            segment_length: 2 * (bins - 1),
            overlap_fraction: 0.5,
            n_segments_averaged: 1,
        }
    }

    #[test]
    fn unit_consistency_of_rms_displacement() {
        // one 1.4 kHz-rms line in a single bin → 1 nm at 1.4 kHz/nm
        let mut s = flat(0.5, 401, 0.0);
        let df = s.resolution_hz();
        s.asd[20] = 1.4e3 / df.sqrt();
        let dh = rms_displacement(&s, 1.4e3 / 1e-9, 1.0, 200.0).unwrap();
        assert!((dh - 1e-9).abs() < 1e-21);
    }

    #[test]
    fn band_edges_half_weight_and_errors() {
        let s = flat(1.0, 11, 1.0);
        // bins 2..=6, edges at half weight → 4 bins' worth
        assert!((band_rms(&s, 2.0, 6.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(band_rms(&s, 5.0, 5.0), Err(Error::InvalidBand(_))));
        assert!(matches!(band_rms(&s, 2.2, 2.8), Err(Error::InvalidBand(_))));
        assert!(matches!(band_rms(&s, 0.0, 0.5), Err(Error::InvalidBand(_))));
        assert!(rms_displacement(&s, 0.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn comb_detection_with_high_snr() {
        let sr = 400.0;
        let mut v = white(sr, 16000, 1e-3, 11).values;
        for n in 1..=10 {
            let f = 1.4 * n as f64;
            for (i, x) in v.iter_mut().enumerate() {
                *x += (2.0 * PI * f * i as f64 / sr + 0.4 * n as f64).sin() / n as f64;
            }
        }
        let tr = TimeTrace::new(sr, v, Unit::Meters).unwrap();
        let s = welch_asd(&tr, &WelchParams::default()).unwrap();
        let params = DetectionParams { n_max: 10, ..DetectionParams::default() };
        let found = detect_harmonics(&s, 1.4, &params).unwrap();
        let ns: Vec<u32> = found.iter().map(|h| h.n).collect();
        assert_eq!(ns, (1..=10).collect::<Vec<_>>());
        for h in found {
            assert!((h.frequency - 1.4 * h.n as f64).abs() <= 0.5 * s.resolution_hz());
        }
    }

    #[test]
    fn detection_rejects_base_below_resolution() {
        let s = flat(0.5, 101, 1.0);
        assert!(detect_harmonics(&s, 0.4, &DetectionParams::default()).is_err());
    }

    fn report(rms: f64, ns: &[u32]) -> AnalysisReport {
        AnalysisReport {
            detected_harmonics: ns
                .iter()
                .map(|&n| DetectedHarmonic { n, frequency: 1.4 * n as f64, asd_peak: 1.0 })
                .collect(),
            band: (1.0, 200.0),
            delta_h_rms: rms,
            rms_reduction_pt_off: None,
            probe_slope: None,
            sensitivity_used: None,
        }
    }

    #[test]
    fn pt_comparison() {
        let c = compare_pt_on_off(&report(0.9e-9, &[1, 2, 3]), &report(0.77e-9, &[2])).unwrap();
        assert!((c.reduction - 0.144_444).abs() < 1e-5);
        assert_eq!(c.vanished_harmonics, vec![1, 3]);
        let g = compare_pt_on_off(&report(58e-9, &[]), &report(47e-9, &[])).unwrap();
        assert!((g.reduction - 0.189_655).abs() < 1e-5);
        let same = compare_pt_on_off(&report(1e-9, &[4]), &report(1e-9, &[4])).unwrap();
        assert_eq!(same.reduction, 0.0);
        assert!(same.vanished_harmonics.is_empty());
        let mut other = report(1e-9, &[]);
        other.band = (1.0, 100.0);
        assert!(matches!(
            compare_pt_on_off(&report(1e-9, &[]), &other),
            Err(Error::InvalidComparison(_))
        ));
    }
}
