//! Re-derives the fluctuation amplitudes of `scenarios/reference_cell.toml`.
//!
//! Starting from the amplitudes in the file, the PT-independent terms are
//! scaled to the PT-off target and the comb to the PT-on target, for the
//! resonator record (0.9 / 0.77 nm over 1-200 Hz) and the geophone record
//! (58 / 47 nm). The calibrated amplitudes are printed as TOML fragments.
//!
//!     cargo run --release -p helium-cpw --example calibrate_reference_scenario [path]

use std::path::PathBuf;

use helium_cpw::config::ScenarioConfig;
use helium_cpw::pipeline::{calibrate_geophone_scenario, calibrate_resonator_scenario, RmsTargets};
use helium_cpw::synthesis::FluctuationScenario;

fn print_amplitudes(section: &str, s: &FluctuationScenario) {
    println!("[{section}]");
    println!("white_floor_m_per_rthz = {:.6e}", s.white_floor_m_per_rthz);
    println!("building_band.band_rms_m = {:.6e}", s.building_band.band_rms_m);
    println!("line_noise.amplitude_m = {:.6e}", s.line_noise.amplitude_m);
    for h in &s.pt_harmonics {
        println!("harmonic {:>2}: amplitude_m = {:.6e}", h.n, h.amplitude_m);
    }
    println!();
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/reference_cell.toml")));
    let mut cfg = ScenarioConfig::load(&path)?;

    let (on, off) = calibrate_resonator_scenario(
        &mut cfg,
        RmsTargets { pt_on_m: 0.9e-9, pt_off_m: 0.77e-9 },
        1e-4,
    )?;
    println!("# resonator: on {:.4} nm, off {:.4} nm", on * 1e9, off * 1e9);
    print_amplitudes("fluctuation", &cfg.fluctuation);

    let (on, off) = calibrate_geophone_scenario(
        &mut cfg,
        RmsTargets { pt_on_m: 58e-9, pt_off_m: 47e-9 },
        1e-4,
    )?;
    println!("# geophone: on {:.3} nm, off {:.3} nm", on * 1e9, off * 1e9);
    if let Some(g) = &cfg.geophone {
        print_amplitudes("geophone.vibration", &g.vibration);
    }
    Ok(())
}
