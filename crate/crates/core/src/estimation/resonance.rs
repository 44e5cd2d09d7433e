//! Lineshape fit in the dB domain.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::lm::{self, LeastSquaresProblem, LmConfig};
use super::FitResult;
use crate::error::{Error, Result};
use crate::resonator::ResonanceParams;

pub const PARAMETER_NAMES: [&str; 5] = ["f_r_hz", "q_loaded", "q_coupling", "asymmetry_rad", "baseline_db"];

const MIN_POINTS: usize = 8;
const MIN_SPAN_LINEWIDTHS: f64 = 2.0;

/// dB residuals of the notch lineshape. Parameters are ordered as in
/// [`PARAMETER_NAMES`] except that the first is `f_r − reference_hz`, so
/// detunings are formed without the rounding of GHz-scale differences.
pub struct LineshapeProblem<'a> {
    offsets: Vec<f64>,
    reference_hz: f64,
    data: &'a [f64],
}

impl<'a> LineshapeProblem<'a> {
    pub fn new(freqs: &[f64], s11_db: &'a [f64], reference_hz: f64) -> Self {
        Self {
            offsets: freqs.iter().map(|f| f - reference_hz).collect(),
            reference_hz,
            data: s11_db,
        }
    }

    fn unpack(&self, p: &[f64]) -> ResonanceParams {
        ResonanceParams {
            f_r_hz: self.reference_hz + p[0],
            q_loaded: p[1],
            q_coupling: p[2],
            asymmetry_rad: p[3],
            baseline_db: p[4],
        }
    }
}

impl LeastSquaresProblem for LineshapeProblem<'_> {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let rp = self.unpack(p);
        self.offsets
            .iter()
            .zip(self.data)
            .map(|(&d, &y)| rp.s11_db_at_offset(d - p[0]) - y)
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let rp = self.unpack(p);
        let mut j = DMatrix::zeros(self.offsets.len(), 5);
        for (i, &d) in self.offsets.iter().enumerate() {
            for (c, g) in rp.s11_db_gradient_at_offset(d - p[0]).iter().enumerate() {
                j[(i, c)] = *g;
            }
        }
        j
    }

    fn is_feasible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite()) && self.reference_hz + p[0] > 0.0 && p[1] > 0.0 && p[2] >= p[1]
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_input(freqs: &[f64], s11_db: &[f64]) -> Result<()> {
    if freqs.len() != s11_db.len() {
        return Err(Error::InvalidParameter(format!(
            "{} frequencies but {} samples",
            freqs.len(),
            s11_db.len()
        )));
    }
    if freqs.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "lineshape fit needs at least {MIN_POINTS} points, got {}",
            freqs.len()
        )));
    }
    if freqs.iter().chain(s11_db).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sweep data".into()));
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("sweep frequencies must be strictly increasing".into()));
    }
    Ok(())
}

/// Starting point from the dip: minimum location, half-depth width and
/// depth, with zero circle rotation.
pub fn initial_resonance_guess(freqs: &[f64], s11_db: &[f64]) -> Result<ResonanceParams> {
    check_input(freqs, s11_db)?;
    let n = freqs.len();
    let edge = (n / 10).max(1);
    let baseline = median(s11_db[..edge].iter().chain(&s11_db[n - edge..]).copied().collect());
    let (i_min, &y_min) = s11_db
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let depth_db = baseline - y_min;
    if !(depth_db > 1e-6) {
        return Err(Error::Initialization("sweep is flat: no resonance dip found".into()));
    }
    let p_min = 10f64.powf(-depth_db / 10.0);
    let half_level = baseline + 10.0 * ((1.0 + p_min) / 2.0).log10();

    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = i_min;
        for i in range {
            if s11_db[i] >= half_level {
                let (y0, y1) = (s11_db[prev], s11_db[i]);
                let t = if y1 != y0 { (half_level - y0) / (y1 - y0) } else { 0.0 };
                return Some(freqs[prev] + t * (freqs[i] - freqs[prev]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..i_min).rev());
    let right = crossing(&mut (i_min + 1..n));
    let f_r = freqs[i_min];
    let full_width = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (f_r - l),
        (None, Some(r)) => 2.0 * (r - f_r),
        (None, None) => {
            return Err(Error::Initialization("resonance dip is not resolved by the sweep".into()))
        }
    };
    if !(full_width > 0.0) {
        return Err(Error::Initialization("resonance dip has zero width".into()));
    }
    let q_loaded = f_r / full_width;
    let ratio = (1.0 - p_min.sqrt()).clamp(1e-3, 1.0);
    Ok(ResonanceParams {
        f_r_hz: f_r,
        q_loaded,
        q_coupling: q_loaded / ratio,
        asymmetry_rad: 0.0,
        baseline_db: baseline,
    })
}

/// Fits `(f_r, Q_l, Q_c, φ, baseline)` to a dB sweep. With `initial` set to
/// `None` the start comes from [`initial_resonance_guess`].
pub fn fit_resonance(freqs: &[f64], s11_db: &[f64], initial: Option<&ResonanceParams>) -> Result<FitResult> {
    check_input(freqs, s11_db)?;
    let start = match initial {
        Some(p) => {
            p.validate()?;
            *p
        }
        None => initial_resonance_guess(freqs, s11_db)?,
    };
    let span = freqs[freqs.len() - 1] - freqs[0];
    let linewidth = start.f_r_hz / start.q_loaded;
    if span < MIN_SPAN_LINEWIDTHS * linewidth {
        return Err(Error::InsufficientData(format!(
            "sweep span {span:.4e} Hz covers fewer than {MIN_SPAN_LINEWIDTHS} linewidths ({linewidth:.4e} Hz)"
        )));
    }
    let prob = LineshapeProblem::new(freqs, s11_db, start.f_r_hz);
    let p0 = [0.0, start.q_loaded, start.q_coupling, start.asymmetry_rad, start.baseline_db];
    let mut out = lm::minimize(&prob, &p0, &LmConfig::default());
    out.params[0] += start.f_r_hz;
    Ok(FitResult::from_outcome(&PARAMETER_NAMES, &out, BTreeMap::new()))
}

/// Fitted lineshape as [`ResonanceParams`].
pub fn params_from_fit(fit: &FitResult) -> Option<ResonanceParams> {
    let v: Option<Vec<f64>> = PARAMETER_NAMES.iter().map(|n| fit.value(n)).collect();
    v.map(|v| ResonanceParams {
        f_r_hz: v[0],
        q_loaded: v[1],
        q_coupling: v[2],
        asymmetry_rad: v[3],
        baseline_db: v[4],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::lm::jacobian_mismatch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn truth(phi: f64) -> ResonanceParams {
        ResonanceParams {
            f_r_hz: 1.315e9,
            q_loaded: 1700.0,
            q_coupling: 2500.0,
            asymmetry_rad: phi,
            baseline_db: -3.0,
        }
    }

    fn sweep(p: &ResonanceParams, n: usize) -> (Vec<f64>, Vec<f64>) {
        let hw = p.half_linewidth_hz();
        let freqs: Vec<f64> = (0..n)
            .map(|i| p.f_r_hz - 6.0 * hw + 12.0 * hw * i as f64 / (n - 1) as f64)
            .collect();
        let db = freqs.iter().map(|&f| p.s11_db(f)).collect();
        (freqs, db)
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn noise_free_recovery_from_auto_start() {
        let t = truth(0.0);
        let (f, y) = sweep(&t, 401);
        let fit = fit_resonance(&f, &y, None).unwrap();
        assert!(fit.converged, "{:?}", fit.warnings);
        let p = params_from_fit(&fit).unwrap();
        assert!(rel(p.f_r_hz, t.f_r_hz) < 1e-3 * 1e-3);
        assert!(rel(p.q_loaded, t.q_loaded) < 1e-3);
        assert!(rel(p.q_coupling, t.q_coupling) < 1e-3);
        assert!(p.asymmetry_rad.abs() < 1e-6);
        assert!(fit.residual_rms < 1e-8);
    }

    #[test]
    fn rotated_circle_recovery() {
        let t = truth(0.15);
        let (f, y) = sweep(&t, 301);
        let fit = fit_resonance(&f, &y, None).unwrap();
        let p = params_from_fit(&fit).unwrap();
        assert!(fit.converged);
        assert!(rel(p.q_loaded, t.q_loaded) < 1e-3);
        assert!((p.asymmetry_rad - 0.15).abs() < 1e-4);
    }

    #[test]
    fn cost_never_increases() {
        let t = truth(0.05);
        let (f, y) = sweep(&t, 201);
        let mut start = t;
        start.f_r_hz += 2.0 * t.half_linewidth_hz();
        start.q_loaded *= 0.6;
        start.q_coupling *= 1.5;
        let fit = fit_resonance(&f, &y, Some(&start)).unwrap();
        assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let t = truth(0.2);
        let (f, y) = sweep(&t, 64);
        let prob = LineshapeProblem::new(&f, &y, t.f_r_hz);
        let p = [t.f_r_hz * 3e-5, 1500.0, 2900.0, -0.3, -2.0];
        let mm = jacobian_mismatch(&prob, &p, 1e-6);
        assert!(mm < 1e-5, "{mm}");
    }

    #[test]
    fn flat_and_short_sweeps_are_rejected() {
        let f: Vec<f64> = (0..20).map(|i| 1e9 + i as f64 * 1e3).collect();
        let flat = vec![-1.0; 20];
        assert!(matches!(fit_resonance(&f, &flat, None), Err(Error::Initialization(_))));
        assert!(matches!(
            fit_resonance(&f[..5], &flat[..5], None),
            Err(Error::InsufficientData(_))
        ));
        // narrow sweep around the dip
        let t = truth(0.0);
        let hw = t.half_linewidth_hz();
        let f: Vec<f64> = (0..20).map(|i| t.f_r_hz - 0.5 * hw + hw * i as f64 / 19.0).collect();
        let y: Vec<f64> = f.iter().map(|&x| t.s11_db(x)).collect();
        assert!(matches!(fit_resonance(&f, &y, Some(&t)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn noisy_fit_is_close() {
        let t = truth(0.0);
        let (f, clean) = sweep(&t, 401);
        let normal = Normal::new(0.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = clean.iter().map(|v| v + normal.sample(&mut rng)).collect();
        let fit = fit_resonance(&f, &y, None).unwrap();
        let p = params_from_fit(&fit).unwrap();
        assert!(rel(p.f_r_hz, t.f_r_hz) < 1e-6);
        assert!(rel(p.q_loaded, t.q_loaded) < 0.05);
        assert!((fit.residual_rms - 0.05).abs() < 0.01);
        // covariance symmetric with non-negative diagonal
        for r in 0..5 {
            assert!(fit.covariance[r][r] >= 0.0);
            for c in 0..5 {
                assert_eq!(fit.covariance[r][c], fit.covariance[c][r]);
            }
        }
    }
}
