//! Nonlinear least-squares fitters for the resonance lineshape, the
//! kinetic-inductance temperature curve and the geophone response.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub mod geophone;
pub mod kinetic;
pub mod lm;
pub mod resonance;

pub use geophone::{
    calibrate_geophone, displacement_from_geophone, DeconvolutionOptions, GeophoneDisplacement, ResponseProblem,
};
pub use kinetic::{fit_kinetic, KineticFitOptions, KineticProblem};
pub use lm::{jacobian_mismatch, LeastSquaresProblem, LmConfig};
pub use resonance::{fit_resonance, initial_resonance_guess, LineshapeProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// One standard deviation.
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Held constant during the fit.
    pub fixed: BTreeMap<String, f64>,
    /// Row-major, ordered as `parameters`.
    pub covariance: Vec<Vec<f64>>,
    pub residual_rms: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub cost_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub(crate) fn from_outcome(names: &[&str], out: &lm::LmOutcome, fixed: BTreeMap<String, f64>) -> Self {
        let cov = lm::covariance(&out.jacobian, &out.residuals);
        Self::assemble(names, out, cov, fixed)
    }

    fn assemble(names: &[&str], out: &lm::LmOutcome, cov: DMatrix<f64>, fixed: BTreeMap<String, f64>) -> Self {
        let n = names.len();
        let parameters = names
            .iter()
            .enumerate()
            .map(|(i, name)| FitParameter {
                name: (*name).to_string(),
                value: out.params[i],
                uncertainty: cov[(i, i)].max(0.0).sqrt(),
            })
            .collect();
        let covariance = (0..n).map(|r| (0..n).map(|c| cov[(r, c)]).collect()).collect();
        let m = out.residuals.len().max(1) as f64;
        let mut warnings = Vec::new();
        if !out.converged {
            warnings.push(format!(
                "not converged after {} iterations (scaled gradient {:.3e})",
                out.iterations, out.gradient_norm
            ));
        }
        Self {
            parameters,
            fixed,
            covariance,
            residual_rms: (2.0 * out.cost / m).sqrt(),
            n_iterations: out.iterations,
            converged: out.converged,
            gradient_norm: out.gradient_norm,
            cost_history: out.cost_history.clone(),
            warnings,
        }
    }

    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Fitted or fixed value by name.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameter(name)
            .map(|p| p.value)
            .or_else(|| self.fixed.get(name).copied())
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.parameter(name).map(|p| p.uncertainty)
    }
}
