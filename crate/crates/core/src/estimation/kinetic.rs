//! Kinetic-inductance fit of the resonance against temperature.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::lm::{self, LeastSquaresProblem, LmConfig};
use super::FitResult;
use crate::error::{Error, Result};
use crate::resonator::KineticModel;

const MIN_POINTS: usize = 4;
/// Lower bound on Tc relative to the hottest point used.
const TC_FLOOR_FACTOR: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticFitOptions {
    /// Holds Tc at this value instead of fitting it.
    pub freeze_tc_k: Option<f64>,
    /// Points with `T > max_reduced_temperature · Tc` (initial or frozen Tc)
    /// are left out.
    pub max_reduced_temperature: f64,
}

impl Default for KineticFitOptions {
    fn default() -> Self {
        Self {
            freeze_tc_k: None,
            max_reduced_temperature: 0.95,
        }
    }
}

/// Frequency residuals of the kinetic model. Parameters are
/// `[f_r0_hz, lk_over_lm, tc_k]`, or the first two with Tc held.
pub struct KineticProblem {
    temps: Vec<f64>,
    freqs: Vec<f64>,
    fixed_tc: Option<f64>,
    tc_floor: f64,
}

impl KineticProblem {
    pub fn new(temps_k: Vec<f64>, f_r_hz: Vec<f64>, fixed_tc_k: Option<f64>) -> Self {
        let t_max = temps_k.iter().cloned().fold(0.0, f64::max);
        Self {
            temps: temps_k,
            freqs: f_r_hz,
            fixed_tc: fixed_tc_k,
            tc_floor: TC_FLOOR_FACTOR * t_max,
        }
    }

    fn split(&self, p: &[f64]) -> (f64, f64, f64) {
        (p[0], p[1], self.fixed_tc.unwrap_or_else(|| p[2]))
    }

    fn model(f0: f64, r: f64, tc: f64, t: f64) -> (f64, f64) {
        let u = 1.0 - (t / tc).powi(4);
        (f0 * ((1.0 + r) / (1.0 + r / u)).sqrt(), u)
    }

    /// `model − y` without forming the full frequency: the pull
    /// `f0·(√q − 1)` and the offset `f0 − y` are each exact to a few ulp,
    /// which keeps the cost resolvable near the optimum.
    fn residual(f0: f64, r: f64, tc: f64, t: f64, y: f64) -> f64 {
        let x4 = (t / tc).powi(4);
        let u = 1.0 - x4;
        let q = (1.0 + r) * u / (u + r);
        let pull = -r * x4 / ((u + r) * (q.sqrt() + 1.0));
        f0 * pull + (f0 - y)
    }
}

impl LeastSquaresProblem for KineticProblem {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let (f0, r, tc) = self.split(p);
        self.temps
            .iter()
            .zip(&self.freqs)
            .map(|(&t, &y)| Self::residual(f0, r, tc, t, y))
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (f0, r, tc) = self.split(p);
        let mut j = DMatrix::zeros(self.temps.len(), p.len());
        for (i, &t) in self.temps.iter().enumerate() {
            let (f, u) = Self::model(f0, r, tc, t);
            j[(i, 0)] = f / f0;
            j[(i, 1)] = 0.5 * f * (1.0 / (1.0 + r) - 1.0 / (u + r));
            if self.fixed_tc.is_none() {
                let df_du = f * r / (2.0 * u * (u + r));
                j[(i, 2)] = df_du * 4.0 * t.powi(4) / tc.powi(5);
            }
        }
        j
    }

    fn is_feasible(&self, p: &[f64]) -> bool {
        let (f0, r, tc) = self.split(p);
        if !(f0 > 0.0 && 1.0 + r > 0.0 && tc > self.tc_floor && tc.is_finite()) {
            return false;
        }
        self.temps.iter().all(|&t| {
            let u = 1.0 - (t / tc).powi(4);
            u > 0.0 && u + r > 0.0
        })
    }
}

/// Fits `(f_r0, L_k/L_m, Tc)` to measured resonance frequencies, or
/// `(f_r0, L_k/L_m)` with Tc frozen.
pub fn fit_kinetic(
    temps_k: &[f64],
    f_r_meas_hz: &[f64],
    initial: &KineticModel,
    options: &KineticFitOptions,
) -> Result<FitResult> {
    if temps_k.len() != f_r_meas_hz.len() {
        return Err(Error::InvalidParameter(format!(
            "{} temperatures but {} frequencies",
            temps_k.len(),
            f_r_meas_hz.len()
        )));
    }
    initial.validate()?;
    if temps_k.iter().chain(f_r_meas_hz).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite kinetic data".into()));
    }
    if let Some(&t) = temps_k.iter().find(|t| **t < 0.0) {
        return Err(Error::OutOfDomain(format!("negative temperature {t} K")));
    }
    let mut start = *initial;
    if let Some(tc) = options.freeze_tc_k {
        if !(tc > 0.0) {
            return Err(Error::InvalidParameter(format!("frozen Tc must be > 0, got {tc}")));
        }
        start.tc_k = tc;
    }
    let cutoff = options.max_reduced_temperature * start.tc_k;
    let (temps, freqs): (Vec<f64>, Vec<f64>) = temps_k
        .iter()
        .zip(f_r_meas_hz)
        .filter(|(t, _)| **t <= cutoff)
        .map(|(t, f)| (*t, *f))
        .unzip();
    let dropped = temps_k.len() - temps.len();
    if temps.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "kinetic fit needs at least {MIN_POINTS} points below {cutoff:.4} K, got {}",
            temps.len()
        )));
    }
    let t_max = temps.iter().cloned().fold(0.0, f64::max);
    let tc_floor = TC_FLOOR_FACTOR * t_max;
    if options.freeze_tc_k.is_none() && start.tc_k <= tc_floor {
        return Err(Error::Initialization(format!(
            "initial Tc {} K must exceed {tc_floor:.4} K",
            start.tc_k
        )));
    }

    let prob = KineticProblem {
        temps,
        freqs,
        fixed_tc: options.freeze_tc_k,
        tc_floor,
    };
    let mut p0 = vec![start.f_r0_hz, start.lk_over_lm];
    let mut names = vec!["f_r0_hz", "lk_over_lm"];
    let mut fixed = BTreeMap::new();
    match options.freeze_tc_k {
        Some(tc) => {
            fixed.insert("tc_k".to_string(), tc);
        }
        None => {
            p0.push(start.tc_k);
            names.push("tc_k");
        }
    }
    if !prob.is_feasible(&p0) {
        return Err(Error::Initialization("initial kinetic parameters are infeasible".into()));
    }
    let out = lm::minimize(&prob, &p0, &LmConfig::default());
    let mut fit = FitResult::from_outcome(&names, &out, fixed);
    if dropped > 0 {
        fit.warnings.push(format!("{dropped} point(s) above {cutoff:.4} K excluded"));
    }
    Ok(fit)
}

/// Fitted model as a [`KineticModel`].
pub fn model_from_fit(fit: &FitResult) -> Option<KineticModel> {
    Some(KineticModel {
        tc_k: fit.value("tc_k")?,
        lk_over_lm: fit.value("lk_over_lm")?,
        f_r0_hz: fit.value("f_r0_hz")?,
    })
}
