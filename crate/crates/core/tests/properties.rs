//! Randomized invariants across the physics, synthesis and analysis layers.

use helium_cpw::formats::{format_trace, parse_trace, TraceFile};
use helium_cpw::helium::{channel_depth, film_thickness, HeliumConstants};
use helium_cpw::resonator::{fundamental_frequency, KineticModel, ResonanceParams, ResonatorGeometry};
use helium_cpw::spectral::{
    band_rms, calibrate_frequency_noise, detect_harmonics, rms_displacement, welch_asd, DetectionParams, Spectrum,
    WelchParams, Window,
};
use helium_cpw::synthesis::{synth_geophone, GeophoneModel};
use helium_cpw::{TimeTrace, Unit};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn noise_spectrum(seed: u64, unit: Unit) -> Spectrum {
    let t = TimeTrace::new(400.0, gaussian(8192, seed), unit).unwrap();
    welch_asd(&t, &WelchParams { segment_length: 1024, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_is_passive_for_unrotated_circles(
        q_l in 100.0..1e5f64,
        ratio in 0.01..1.0f64,
        offset in -50.0..50.0f64,
    ) {
        let p = ResonanceParams {
            f_r_hz: 1.315e9,
            q_loaded: q_l,
            q_coupling: q_l / ratio,
            asymmetry_rad: 0.0,
            baseline_db: 0.0,
        };
        let f = p.f_r_hz * (1.0 + offset / q_l);
        prop_assert!(p.s11(f).norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn rotated_circles_respect_their_bound(
        q_l in 100.0..1e5f64,
        ratio in 0.01..1.0f64,
        phi in -1.0..1.0f64,
        offset in -50.0..50.0f64,
    ) {
        let p = ResonanceParams {
            f_r_hz: 1.315e9,
            q_loaded: q_l,
            q_coupling: q_l / ratio,
            asymmetry_rad: phi,
            baseline_db: 0.0,
        };
        let f = p.f_r_hz * (1.0 + offset / q_l);
        prop_assert!(p.s11(f).norm() <= p.max_reflection_magnitude() * (1.0 + 1e-12));
    }

    #[test]
    fn kinetic_resonance_falls_with_temperature(
        r in 1e-3..1.0f64,
        tc in 0.5..10.0f64,
        a in 0.0..0.99f64,
        b in 0.0..0.99f64,
    ) {
        let km = KineticModel { tc_k: tc, lk_over_lm: r, f_r0_hz: 1e9 };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let f_lo = km.resonance_at(lo * tc).unwrap();
        let f_hi = km.resonance_at(hi * tc).unwrap();
        prop_assert!(f_hi < f_lo);
        prop_assert_eq!(km.resonance_at(0.0).unwrap(), 1e9);
    }

    #[test]
    fn fundamental_frequency_is_homogeneous(len in 1e-3..1.0f64, k in 0.1..10.0f64, eps in 1.0..12.0f64) {
        let g = ResonatorGeometry { length_m: len, ..ResonatorGeometry::reference_device() };
        let gk = ResonatorGeometry { length_m: k * len, ..g };
        let f = fundamental_frequency(&g, eps).unwrap();
        let fk = fundamental_frequency(&gk, eps).unwrap();
        prop_assert!((fk * k / f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_depth_is_clamped_and_non_increasing(h1 in 0.0..0.1f64, h2 in 0.0..0.1f64) {
        let c = HeliumConstants::default();
        let g = ResonatorGeometry::reference_device();
        let (lo, hi) = if h1 < h2 { (h1, h2) } else { (h2, h1) };
        let d_lo = channel_depth(&c, &g, lo).unwrap();
        let d_hi = channel_depth(&c, &g, hi).unwrap();
        prop_assert!(d_hi <= d_lo);
        for d in [d_lo, d_hi] {
            prop_assert!((0.0..=g.film_thickness_m).contains(&d));
        }
    }

    #[test]
    fn film_halves_for_sixteen_times_the_height(h in 1e-4..10.0f64) {
        let c = HeliumConstants::default();
        let ratio = film_thickness(&c, 16.0 * h).unwrap() / film_thickness(&c, h).unwrap();
        prop_assert!((ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn geophone_filter_is_linear(seed in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let gm = GeophoneModel::default();
        let v1 = gaussian(1024, seed);
        let v2 = gaussian(1024, seed + 1);
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
        let out = |v: Vec<f64>| {
            synth_geophone(&TimeTrace::new(500.0, v, Unit::MetersPerSecond).unwrap(), &gm).unwrap().values
        };
        let (o1, o2, om) = (out(v1), out(v2), out(mix));
        let scale = om.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..om.len() {
            prop_assert!((om[i] - (a * o1[i] + b * o2[i])).abs() <= 1e-9 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn band_rms_grows_with_the_band(seed in 0u64..1000, f1 in 0.5..50.0f64, w in 1.0..80.0f64, grow in 0.0..40.0f64) {
        let s = noise_spectrum(seed, Unit::Hertz);
        let inner = rms_displacement(&s, 1.4e12, f1, f1 + w).unwrap();
        let outer = rms_displacement(&s, 1.4e12, (f1 - grow).max(0.0), f1 + w + grow).unwrap();
        prop_assert!(outer >= inner);
    }

    #[test]
    fn calibration_and_rms_are_homogeneous(seed in 0u64..1000, k in 0.01..100.0f64, slope in 1e-6..1e-3f64) {
        let s = noise_spectrum(seed, Unit::Decibels);
        let scaled = s.with_values(s.asd.iter().map(|a| k * a).collect(), Unit::Decibels);
        let sf = calibrate_frequency_noise(&s, slope).unwrap();
        let sfk = calibrate_frequency_noise(&scaled, -slope).unwrap();
        for (a, b) in sf.asd.iter().zip(&sfk.asd) {
            prop_assert!((b - k * a).abs() <= 1e-12 * (k * a).abs().max(1e-300));
        }
        let r = band_rms(&sf, 1.0, 150.0).unwrap();
        let rk = band_rms(&sfk, 1.0, 150.0).unwrap();
        prop_assert!((rk / (k * r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detections_sit_within_half_a_bin(seed in 0u64..1000, base in 0.8..3.0f64, amp in 0.0..2.0f64) {
        let fs = 400.0;
        let mut v = gaussian(8192, seed);
        for n in 1..=8 {
            let f = n as f64 * base;
            for (i, x) in v.iter_mut().enumerate() {
                *x += amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin();
            }
        }
        let t = TimeTrace::new(fs, v, Unit::Hertz).unwrap();
        let s = welch_asd(&t, &WelchParams { segment_length: 2048, overlap_fraction: 0.5, window: Window::Hann }).unwrap();
        let df = s.resolution_hz();
        for d in detect_harmonics(&s, base, &DetectionParams::default()).unwrap() {
            prop_assert!((d.frequency - d.n as f64 * base).abs() <= 0.5 * df + 1e-12);
        }
    }

    #[test]
    fn trace_files_round_trip(seed in 0u64..1000, n in 2usize..300, rate in 1.0..1e4f64) {
        let t = TimeTrace::new(rate, gaussian(n, seed), Unit::Volts).unwrap();
        let tf = TraceFile::new(t).with("seed", seed);
        let back = parse_trace(&format_trace(&tf).unwrap(), "mem").unwrap();
        prop_assert_eq!(back, tf);
    }
}
