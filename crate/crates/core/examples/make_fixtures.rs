//! Writes the synthetic data files shipped under `scenarios/`:
//! a kinetic f_r(T) table, a resonance sweep and a geophone calibration
//! record. Run with an output directory or the default `scenarios/`.

use std::f64::consts::PI;
use std::path::PathBuf;

use helium_cpw::formats::{format_columns, ColumnTable};
use helium_cpw::resonator::{KineticModel, ResonanceParams};
use helium_cpw::synthesis::{synth_geophone, GeophoneModel};
use helium_cpw::{TimeTrace, Unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn write(dir: &PathBuf, name: &str, comments: &[&str], table: &ColumnTable) {
    let mut text: String = comments.iter().map(|c| format!("# {c}\n")).collect();
    text.push_str(&format_columns(table));
    let path = dir.join(name);
    std::fs::write(&path, text).expect("write fixture");
    println!("wrote {} ({} rows)", path.display(), table.len());
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios"));

    let km = KineticModel { tc_k: 1.2, lk_over_lm: 0.06, f_r0_hz: 1.315e9 };
    let noise = Normal::new(0.0, 1e-5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let temps: Vec<f64> = (0..20).map(|i| 0.05 + 0.05 * i as f64).collect();
    let freqs: Vec<f64> = temps
        .iter()
        .map(|&t| km.resonance_at(t).unwrap() * (1.0 + noise.sample(&mut rng)))
        .collect();
    write(
        &dir,
        "kinetic_fr_vs_T.csv",
        &["synthetic: Tc = 1.2 K, L_k/L_m = 0.06, f_r0 = 1.315 GHz, 1e-5 relative noise, seed 1"],
        &ColumnTable::new(&["temperature_k", "f_r_hz"], vec![temps, freqs]),
    );

    let rp = ResonanceParams {
        f_r_hz: 1.315e9,
        q_loaded: 1700.0,
        q_coupling: 2500.0,
        asymmetry_rad: 0.1,
        baseline_db: -0.5,
    };
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let half = 4.0 * rp.f_r_hz / rp.q_loaded;
    let f: Vec<f64> = (0..401).map(|i| rp.f_r_hz - half + 2.0 * half * i as f64 / 400.0).collect();
    let db: Vec<f64> = f.iter().map(|&x| rp.s11_db(x) + noise.sample(&mut rng)).collect();
    write(
        &dir,
        "resonance_sweep.csv",
        &["synthetic: f_r = 1.315 GHz, Q_l = 1700, Q_c = 2500, phi = 0.1 rad, baseline -0.5 dB, 0.02 dB noise, seed 2"],
        &ColumnTable::new(&["frequency_hz", "s11_db"], vec![f, db]),
    );

    // multitone drive, 1-50 Hz in 1 Hz steps on exact bins
    let fs = 500.0;
    let n = 8000;
    let gm = GeophoneModel::default();
    let drive: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (1..=50)
                .map(|k| 1e-6 * (2.0 * PI * k as f64 * t + 0.37 * (k * k) as f64).sin())
                .sum()
        })
        .collect();
    let velocity = TimeTrace::new(fs, drive, Unit::MetersPerSecond).unwrap();
    let volts = synth_geophone(&velocity, &gm).unwrap();
    let times: Vec<f64> = (0..n).map(|i| velocity.time_at(i)).collect();
    write(
        &dir,
        "geophone_calibration.csv",
        &["synthetic: f0 = 4.5 Hz, damping 0.6, S0 = 28.8 V s/m, preamp gain 100, noise-free multitone 1-50 Hz"],
        &ColumnTable::new(
            &["time_s", "velocity_m_s", "voltage_v"],
            vec![times, velocity.values.clone(), volts.values],
        ),
    );
}
