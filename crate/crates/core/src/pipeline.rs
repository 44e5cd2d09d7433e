//! End-to-end runs: synthesis of trace bundles, resonator and geophone
//! analyses, and the condensation trajectory.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::{displacement_from_geophone, DeconvolutionOptions};
use crate::formats::{Report, TraceFile, REPORT_SCHEMA_VERSION, TOOLKIT_VERSION};
use crate::helium::TrajectoryPoint;
use crate::resonator::Probe;
use crate::spectral::{
    band_rms, calibrate_frequency_noise, compare_pt_on_off, detect_harmonics, welch_asd, AnalysisReport,
    Spectrum, WelchParams,
};
use crate::synthesis::{
    displacement_to_s11_trace, synth_displacement, synth_geophone, synth_velocity, FluctuationScenario, GeophoneModel,
};
use crate::trace::Unit;

/// Trace metadata key holding the probe slope used at synthesis.
pub const PROBE_SLOPE_KEY: &str = "probe_slope_db_per_hz";

#[derive(Debug, Clone)]
pub struct SynthesisBundle {
    pub displacement: TraceFile,
    pub s11_db: TraceFile,
    pub geophone: Option<TraceFile>,
    pub probe: Probe,
}

fn stamp(tf: TraceFile, cfg: &ScenarioConfig, kind: &str, seed: u64, pt_on: bool) -> TraceFile {
    tf.with("kind", kind)
        .with("config_hash", cfg.hash())
        .with("seed", seed)
        .with("pt_on", pt_on)
}

/// Surface displacement, the fixed-tone dB record and, when configured,
/// the geophone voltage. `seed` overrides the scenario seeds.
pub fn synthesize(cfg: &ScenarioConfig, pt_on: bool, seed: Option<u64>) -> Result<SynthesisBundle> {
    let mut scn = cfg.fluctuation.clone();
    scn.pt_on = pt_on;
    if let Some(s) = seed {
        scn.seed = s;
    }
    let acq = &cfg.acquisition;
    let h = synth_displacement(&scn, acq.sample_rate_hz, acq.duration_s)?;
    let probe = cfg.probe()?;
    let s11 = displacement_to_s11_trace(
        &h,
        &cfg.resonator.resonance,
        &cfg.helium.shift,
        probe.frequency_hz,
        cfg.measurement_noise(scn.seed),
    )?;
    let displacement = stamp(TraceFile::new(h), cfg, "displacement", scn.seed, pt_on);
    let s11_db = stamp(TraceFile::new(s11), cfg, "s11_db", scn.seed, pt_on)
        .with("probe_frequency_hz", format!("{:e}", probe.frequency_hz))
        .with(PROBE_SLOPE_KEY, format!("{:e}", probe.slope_db_per_hz))
        .with("noise_db_rms", format!("{:e}", acq.noise_db_rms));

    let geophone = match &cfg.geophone {
        None => None,
        Some(g) => {
            let mut vib = g.vibration.clone();
            vib.pt_on = pt_on;
            if let Some(s) = seed {
                vib.seed = s;
            }
            let velocity = synth_velocity(&vib, g.sample_rate_hz, g.duration_s)?;
            let volts = synth_geophone(&velocity, &g.model)?;
            Some(stamp(TraceFile::new(volts), cfg, "geophone", vib.seed, pt_on))
        }
    };
    Ok(SynthesisBundle { displacement, s11_db, geophone, probe })
}

#[derive(Debug, Clone)]
pub struct ResonatorAnalysis {
    pub report: AnalysisReport,
    /// Recorded dB noise, dB/√Hz.
    pub s_db: Spectrum,
    /// Frequency noise, Hz/√Hz.
    pub s_f: Spectrum,
    /// Surface displacement, m/√Hz.
    pub s_h: Spectrum,
}

fn check_band(band: (f64, f64)) -> Result<()> {
    if !(band.0 >= 0.0 && band.1 > band.0) {
        return Err(Error::InvalidBand(format!("[{}, {}] is empty", band.0, band.1)));
    }
    Ok(())
}

/// Welch, slope calibration, band integration and PT-harmonic detection
/// of a dB trace. The probe slope comes from the trace header when
/// present, otherwise from the scenario.
pub fn analyze_resonator(tf: &TraceFile, cfg: &ScenarioConfig, band: (f64, f64)) -> Result<ResonatorAnalysis> {
    check_band(band)?;
    if tf.trace.unit != Unit::Decibels {
        return Err(Error::InvalidParameter(format!(
            "resonator analysis needs a dB trace, got {}",
            tf.trace.unit
        )));
    }
    let slope = match tf.get_parsed::<f64>(PROBE_SLOPE_KEY)? {
        Some(s) => s,
        None => cfg.probe()?.slope_db_per_hz,
    };
    let sensitivity = cfg.helium.shift.sensitivity();
    let s_db = welch_asd(&tf.trace, &cfg.analysis.welch)?;
    let s_f = calibrate_frequency_noise(&s_db, slope)?;
    let s_h = s_f.with_values(s_f.asd.iter().map(|a| a / sensitivity).collect(), Unit::Meters);
    let delta_h_rms = band_rms(&s_f, band.0, band.1)? / sensitivity;
    let detected = detect_harmonics(&s_f, cfg.fluctuation.pt_fundamental_hz, &cfg.analysis.detection)?;
    Ok(ResonatorAnalysis {
        report: AnalysisReport {
            detected_harmonics: detected,
            band,
            delta_h_rms,
            rms_reduction_pt_off: None,
            probe_slope: Some(slope),
            sensitivity_used: Some(sensitivity),
        },
        s_db,
        s_f,
        s_h,
    })
}

#[derive(Debug, Clone)]
pub struct GeophoneAnalysis {
    pub report: AnalysisReport,
    /// Recovered ground displacement, m/√Hz.
    pub spectrum: Spectrum,
}

/// Deconvolves a geophone voltage record with a calibrated model. Without
/// `band` the RMS covers everything from the cutoff to Nyquist.
pub fn analyze_geophone(
    tf: &TraceFile,
    cfg: &ScenarioConfig,
    model: &GeophoneModel,
    band: Option<(f64, f64)>,
) -> Result<GeophoneAnalysis> {
    if tf.trace.unit != Unit::Volts {
        return Err(Error::InvalidParameter(format!(
            "geophone analysis needs a V trace, got {}",
            tf.trace.unit
        )));
    }
    let section = cfg.geophone.as_ref();
    let options = DeconvolutionOptions {
        cutoff_hz: section.and_then(|g| g.cutoff_hz),
        welch: WelchParams {
            segment_length: section.map_or(8192, |g| g.segment_length),
            ..cfg.analysis.welch
        },
    };
    let out = displacement_from_geophone(&tf.trace, model, &options)?;
    let nyquist = 0.5 * tf.trace.sample_rate_hz;
    let (band, rms) = match band {
        Some(b) => {
            check_band(b)?;
            (b, band_rms(&out.spectrum, b.0.max(out.cutoff_hz), b.1)?)
        }
        None => ((out.cutoff_hz, nyquist), out.rms_m),
    };
    let f_base = section.map_or(cfg.fluctuation.pt_fundamental_hz, |g| g.vibration.pt_fundamental_hz);
    let detected = detect_harmonics(&out.spectrum, f_base, &cfg.analysis.detection)?;
    Ok(GeophoneAnalysis {
        report: AnalysisReport {
            detected_harmonics: detected,
            band,
            delta_h_rms: rms,
            rms_reduction_pt_off: None,
            probe_slope: None,
            sensitivity_used: None,
        },
        spectrum: out.spectrum,
    })
}

/// Wraps one or two analyses into the versioned report. With `off` the
/// comparison is filled in and the primary analysis records the reduction.
pub fn build_report(
    cfg: &ScenarioConfig,
    source: &str,
    seed: Option<u64>,
    mut on: AnalysisReport,
    off: Option<AnalysisReport>,
    warnings: Vec<String>,
) -> Result<Report> {
    let comparison = match &off {
        Some(o) => {
            let c = compare_pt_on_off(&on, o)?;
            on.rms_reduction_pt_off = Some(c.reduction);
            Some(c)
        }
        None => None,
    };
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config_hash: cfg.hash(),
        seed,
        source: source.to_string(),
        analysis: on,
        compare_analysis: off,
        comparison,
        warnings,
    })
}

/// Δh_RMS with the PT on and off, synthesized from the scenario as shipped
/// and analyzed over the configured band.
pub fn resonator_rms_pair(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let band = (cfg.analysis.band_lo_hz, cfg.analysis.band_hi_hz);
    let mut rms = [0.0; 2];
    for (slot, pt_on) in rms.iter_mut().zip([true, false]) {
        let bundle = synthesize(cfg, pt_on, None)?;
        *slot = analyze_resonator(&bundle.s11_db, cfg, band)?.report.delta_h_rms;
    }
    Ok((rms[0], rms[1]))
}

/// Geophone-derived total RMS displacement with the PT on and off, using
/// the configured (true) sensor model for the inversion.
pub fn geophone_rms_pair(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let g = cfg
        .geophone
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no [geophone] section".into()))?;
    let mut rms = [0.0; 2];
    for (slot, pt_on) in rms.iter_mut().zip([true, false]) {
        let bundle = synthesize(cfg, pt_on, None)?;
        let volts = bundle.geophone.expect("geophone section present");
        *slot = analyze_geophone(&volts, cfg, &g.model, None)?.report.delta_h_rms;
    }
    Ok((rms[0], rms[1]))
}

/// Target RMS pair for [`calibrate_fluctuation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsTargets {
    pub pt_on_m: f64,
    pub pt_off_m: f64,
}

/// Scales the PT-independent terms (building band, line, white floor) to
/// reach the PT-off target, then the comb to reach the PT-on target,
/// repeating until both hold to `rel_tol`. `measure` returns the (on, off)
/// pair for a candidate scenario. Returns the final pair.
pub fn calibrate_fluctuation<F>(
    scn: &mut FluctuationScenario,
    targets: RmsTargets,
    rel_tol: f64,
    measure: F,
) -> Result<(f64, f64)>
where
    F: Fn(&FluctuationScenario) -> Result<(f64, f64)>,
{
    if !(targets.pt_on_m > targets.pt_off_m && targets.pt_off_m > 0.0) {
        return Err(Error::InvalidParameter("targets need on > off > 0".into()));
    }
    let hit = |v: f64, t: f64| (v / t - 1.0).abs() <= rel_tol;
    for _ in 0..30 {
        let (on, off) = measure(scn)?;
        if hit(on, targets.pt_on_m) && hit(off, targets.pt_off_m) {
            return Ok((on, off));
        }
        if off <= 0.0 || on <= off {
            return Err(Error::Calibration(format!(
                "cannot calibrate from on = {on:e} m, off = {off:e} m"
            )));
        }
        let b = targets.pt_off_m / off;
        scn.building_band.band_rms_m *= b;
        scn.white_floor_m_per_rthz *= b;
        scn.line_noise.amplitude_m *= b;

        let (on, off) = measure(scn)?;
        let comb = (on * on - off * off).max(f64::MIN_POSITIVE);
        let want = (targets.pt_on_m.powi(2) - off * off).max(0.0);
        let c = (want / comb).sqrt();
        for h in &mut scn.pt_harmonics {
            h.amplitude_m *= c;
        }
    }
    Err(Error::Calibration("calibration did not settle in 30 rounds".into()))
}

/// Calibrates `cfg.fluctuation` against the resonator analysis.
pub fn calibrate_resonator_scenario(cfg: &mut ScenarioConfig, targets: RmsTargets, rel_tol: f64) -> Result<(f64, f64)> {
    let mut scn = cfg.fluctuation.clone();
    let base = cfg.clone();
    let out = calibrate_fluctuation(&mut scn, targets, rel_tol, |s| {
        let mut c = base.clone();
        c.fluctuation = s.clone();
        resonator_rms_pair(&c)
    })?;
    cfg.fluctuation = scn;
    Ok(out)
}

/// Calibrates `cfg.geophone.vibration` against the geophone inversion.
pub fn calibrate_geophone_scenario(cfg: &mut ScenarioConfig, targets: RmsTargets, rel_tol: f64) -> Result<(f64, f64)> {
    let mut scn = cfg
        .geophone
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no [geophone] section".into()))?
        .vibration
        .clone();
    let base = cfg.clone();
    let out = calibrate_fluctuation(&mut scn, targets, rel_tol, |s| {
        let mut c = base.clone();
        if let Some(g) = c.geophone.as_mut() {
            g.vibration = s.clone();
        }
        geophone_rms_pair(&c)
    })?;
    if let Some(g) = cfg.geophone.as_mut() {
        g.vibration = scn;
    }
    Ok(out)
}

/// Full condensation run; the empty-cell resonance is the configured one.
pub fn simulate_condensation(cfg: &ScenarioConfig) -> Result<Vec<TrajectoryPoint>> {
    cfg.condensation_model(cfg.resonator.resonance.f_r_hz)?.trajectory()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::formats::{format_trace, parse_trace};
    use crate::synthesis::Harmonic;

    fn cfg() -> ScenarioConfig {
        let src = r#"
[resonator.geometry]
length_m = 45.54e-3
strip_width_m = 10e-6
gap_m = 5e-6
film_thickness_m = 230e-9
substrate_eps_r = 11.7
coupling_capacitance_f = 0.12e-12

[resonator.resonance]
f_r_hz = 1.315e9
q_loaded = 1700.0
q_coupling = 2500.0
asymmetry_rad = 0.0
baseline_db = 0.0

[fluctuation]
pt_fundamental_hz = 1.4
pt_harmonics = []
white_floor_m_per_rthz = 2e-12
pt_on = true
seed = 5
building_band = { f_lo_hz = 30.0, f_hi_hz = 60.0, band_rms_m = 2e-10 }
line_noise = { frequency_hz = 60.0, amplitude_m = 0.0 }

[acquisition]
sample_rate_hz = 400.0
duration_s = 40.0
"#;
        let mut c = ScenarioConfig::from_toml_str(src, "mem").unwrap();
        c.fluctuation.pt_harmonics = (1..=10)
            .map(|n| Harmonic { n, amplitude_m: 3e-10 / n as f64, phase_rad: 0.3 * n as f64 })
            .collect();
        c
    }

    #[test]
    fn bundle_has_expected_shape_and_is_deterministic() {
        let c = cfg();
        let a = synthesize(&c, true, None).unwrap();
        let b = synthesize(&c, true, None).unwrap();
        assert_eq!(a.s11_db.trace.len(), 16_000);
        assert_eq!(format_trace(&a.s11_db).unwrap(), format_trace(&b.s11_db).unwrap());
        assert!(a.geophone.is_none());
        let other = synthesize(&c, true, Some(6)).unwrap();
        assert_ne!(a.displacement.trace.values, other.displacement.trace.values);
    }

    #[test]
    fn analysis_recovers_injected_rms() {
        let c = cfg();
        let bundle = synthesize(&c, true, None).unwrap();
        let band = (1.0, 200.0);
        let truth = welch_asd(&bundle.displacement.trace, &c.analysis.welch).unwrap();
        let expected = band_rms(&truth, band.0, band.1).unwrap();
        // slope read back from the written header
        let reread = parse_trace(&format_trace(&bundle.s11_db).unwrap(), "mem").unwrap();
        let out = analyze_resonator(&reread, &c, band).unwrap();
        assert!((out.report.delta_h_rms / expected - 1.0).abs() < 0.05);
        let found: Vec<u32> = out.report.detected_harmonics.iter().map(|h| h.n).collect();
        assert_eq!(found, (1..=10).collect::<Vec<u32>>());
    }

    #[test]
    fn pt_off_removes_only_the_comb() {
        let c = cfg();
        let on = synthesize(&c, true, None).unwrap();
        let off = synthesize(&c, false, None).unwrap();
        let diff: Vec<f64> = on
            .displacement
            .trace
            .values
            .iter()
            .zip(&off.displacement.trace.values)
            .map(|(a, b)| a - b)
            .collect();
        let mut comb = c.fluctuation.clone();
        comb.building_band.band_rms_m = 0.0;
        comb.white_floor_m_per_rthz = 0.0;
        let only = synth_displacement(&comb, 400.0, 40.0).unwrap();
        for (d, o) in diff.iter().zip(&only.values) {
            assert!((d - o).abs() < 1e-24);
        }
        let band = (1.0, 200.0);
        let a = analyze_resonator(&on.s11_db, &c, band).unwrap().report;
        let b = analyze_resonator(&off.s11_db, &c, band).unwrap().report;
        let r = build_report(&c, "resonator", Some(5), a, Some(b), vec![]).unwrap();
        let cmp = r.comparison.unwrap();
        assert!(cmp.reduction > 0.0);
        assert_eq!(cmp.vanished_harmonics.len(), 10);
        assert_eq!(r.analysis.rms_reduction_pt_off, Some(cmp.reduction));
    }

    #[test]
    fn zero_trace_gives_zero() {
        let c = cfg();
        let t = crate::trace::TimeTrace::new(400.0, vec![-3.0; 16_000], Unit::Decibels).unwrap();
        let out = analyze_resonator(&TraceFile::new(t), &c, (1.0, 200.0)).unwrap();
        assert_eq!(out.report.delta_h_rms, 0.0);
        assert!(out.report.detected_harmonics.is_empty());
    }

    #[test]
    fn wrong_units_are_rejected() {
        let c = cfg();
        let t = crate::trace::TimeTrace::new(400.0, vec![0.0; 4096], Unit::Volts).unwrap();
        assert!(analyze_resonator(&TraceFile::new(t.clone()), &c, (1.0, 200.0)).is_err());
        let m = crate::trace::TimeTrace::new(400.0, vec![0.0; 4096], Unit::Meters).unwrap();
        assert!(analyze_geophone(&TraceFile::new(m), &c, &GeophoneModel::default(), None).is_err());
        assert!(analyze_resonator(&TraceFile::new(t), &c, (5.0, 1.0)).is_err());
    }
}
