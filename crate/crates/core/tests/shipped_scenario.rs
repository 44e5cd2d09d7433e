//! The shipped scenario and data files under `scenarios/`.

use std::path::PathBuf;

use helium_cpw::config::ScenarioConfig;
use helium_cpw::estimation::{
    calibrate_geophone, fit_kinetic, fit_resonance, geophone, kinetic, KineticFitOptions,
};
use helium_cpw::formats::{format_trajectory, parse_trajectory, read_columns};
use helium_cpw::helium::Region;
use helium_cpw::pipeline::{
    analyze_resonator, build_report, calibrate_resonator_scenario, simulate_condensation, synthesize, RmsTargets,
};
use helium_cpw::resonator::KineticModel;
use helium_cpw::synthesis::GeophoneModel;
use helium_cpw::{TimeTrace, Unit};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn shipped() -> ScenarioConfig {
    ScenarioConfig::load(&scenarios().join("reference_cell.toml")).unwrap()
}

#[test]
fn shipped_amplitudes_are_a_calibration_fixed_point() {
    let cfg = shipped();
    let mut again = cfg.clone();
    let targets = RmsTargets { pt_on_m: 0.9e-9, pt_off_m: 0.77e-9 };
    calibrate_resonator_scenario(&mut again, targets, 1e-4).unwrap();
    assert_eq!(again.fluctuation, cfg.fluctuation);
}

#[test]
fn pt_comparison_reports_vanishing_comb() {
    let cfg = shipped();
    let band = (cfg.analysis.band_lo_hz, cfg.analysis.band_hi_hz);
    let on = analyze_resonator(&synthesize(&cfg, true, None).unwrap().s11_db, &cfg, band).unwrap();
    let off = analyze_resonator(&synthesize(&cfg, false, None).unwrap().s11_db, &cfg, band).unwrap();
    let report = build_report(&cfg, "reference_cell", Some(cfg.fluctuation.seed), on.report, Some(off.report), vec![])
        .unwrap();
    let cmp = report.comparison.unwrap();
    assert_eq!(cmp.vanished_harmonics, (1..=10).collect::<Vec<u32>>());
    assert!((cmp.reduction - 0.14).abs() <= 0.02);
}

#[test]
fn condensation_run_round_trips_through_csv() {
    let traj = simulate_condensation(&shipped()).unwrap();
    assert_eq!(traj[0].state.region, Region::I);
    assert_eq!(traj[0].shift_hz, 0.0);
    let back = parse_trajectory(&format_trajectory(&traj), "mem").unwrap();
    assert_eq!(back, traj);
}

#[test]
fn kinetic_table_gives_the_inductance_ratio() {
    let t = read_columns(&scenarios().join("kinetic_fr_vs_T.csv"), &["temperature_k", "f_r_hz"]).unwrap();
    let guess = KineticModel { tc_k: 1.3, lk_over_lm: 0.1, f_r0_hz: 1.31e9 };
    let fit = fit_kinetic(
        t.column("temperature_k").unwrap(),
        t.column("f_r_hz").unwrap(),
        &guess,
        &KineticFitOptions::default(),
    )
    .unwrap();
    let m = kinetic::model_from_fit(&fit).unwrap();
    assert!((m.lk_over_lm / 0.06 - 1.0).abs() < 0.01, "{}", m.lk_over_lm);
    assert!((m.tc_k / 1.2 - 1.0).abs() < 0.01);
}

#[test]
fn resonance_sweep_fits_from_auto_start() {
    let t = read_columns(&scenarios().join("resonance_sweep.csv"), &["frequency_hz", "s11_db"]).unwrap();
    let fit = fit_resonance(t.column("frequency_hz").unwrap(), t.column("s11_db").unwrap(), None).unwrap();
    assert!(fit.converged);
    assert!((fit.value("f_r_hz").unwrap() / 1.315e9 - 1.0).abs() < 1e-6);
    assert!((fit.value("q_loaded").unwrap() / 1700.0 - 1.0).abs() < 0.02);
}

#[test]
fn geophone_record_calibrates_to_the_default_sensor() {
    let t = read_columns(
        &scenarios().join("geophone_calibration.csv"),
        &["time_s", "velocity_m_s", "voltage_v"],
    )
    .unwrap();
    let time = t.column("time_s").unwrap();
    let fs = 1.0 / (time[1] - time[0]);
    let drive = TimeTrace::new(fs, t.column("velocity_m_s").unwrap().to_vec(), Unit::MetersPerSecond).unwrap();
    let volts = TimeTrace::new(fs, t.column("voltage_v").unwrap().to_vec(), Unit::Volts).unwrap();
    let start = GeophoneModel {
        natural_frequency_hz: 5.0,
        damping_ratio: 0.5,
        sensitivity_v_s_per_m: 25.0,
        preamp_gain: 100.0,
    };
    let m = geophone::model_from_fit(&calibrate_geophone(&drive, &volts, &start).unwrap()).unwrap();
    let truth = GeophoneModel::default();
    assert!((m.sensitivity_v_s_per_m / truth.sensitivity_v_s_per_m - 1.0).abs() < 5e-3);
    assert!((m.natural_frequency_hz / truth.natural_frequency_hz - 1.0).abs() < 5e-3);
    assert!((m.damping_ratio / truth.damping_ratio - 1.0).abs() < 5e-3);
}
