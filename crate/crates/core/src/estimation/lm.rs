//! Levenberg–Marquardt for small dense problems.
//!
//! Columns are scaled by the running maximum of their Jacobian norms, the
//! damping follows the gain-ratio rule, and steps that leave the feasible
//! set are treated like steps that increase the cost. Each damped step is a
//! QR solve of the augmented system rather than of the normal equations.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    fn residuals(&self, p: &[f64]) -> Vec<f64>;

    /// `m × n` matrix of ∂r_i/∂p_j.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64>;

    fn is_feasible(&self, _p: &[f64]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Bound on the scaled gradient, see [`LmOutcome::gradient_norm`].
    pub gradient_tol: f64,
    /// Relative step size below which iteration stops.
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-10,
            step_tol: 1e-15,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    /// ½‖r‖².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max_j |J_jᵀ r| / (‖J_j‖·‖r₀‖)`, with `r₀` the starting residual.
    pub gradient_norm: f64,
    /// Cost after the start and after each accepted step.
    pub cost_history: Vec<f64>,
}

fn half_norm_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn scaled_gradient(j: &DMatrix<f64>, r: &DVector<f64>, r0_norm: f64) -> f64 {
    if r0_norm == 0.0 {
        return 0.0;
    }
    let g = j.transpose() * r;
    (0..j.ncols())
        .map(|c| {
            let cn = j.column(c).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[c].abs() / (cn * r0_norm)
            }
        })
        .fold(0.0, f64::max)
}

/// Solves `min ‖[J; √μ I]δ + [r; 0]‖` by Householder QR, which avoids
/// squaring the condition number of `J` the way normal equations do.
fn damped_step(js: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let (m, n) = js.shape();
    let mut aug = DMatrix::zeros(m + n, n);
    aug.rows_mut(0, m).copy_from(js);
    let root = mu.sqrt();
    for d in 0..n {
        aug[(m + d, d)] = root;
    }
    let mut rhs = DVector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from(&(-r));
    let qr = aug.qr();
    let qtb = qr.q().transpose() * rhs;
    let step = qr.r().solve_upper_triangular(&qtb)?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

pub fn minimize<P: LeastSquaresProblem>(problem: &P, start: &[f64], cfg: &LmConfig) -> LmOutcome {
    let n = start.len();
    let mut p = start.to_vec();
    let mut r = problem.residuals(&p);
    let mut cost = half_norm_sq(&r);
    let r0_norm = (2.0 * cost).sqrt();
    let mut j = problem.jacobian(&p);
    let mut scale = vec![0.0f64; n];
    let mut mu = cfg.initial_damping;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut history = vec![cost];
    let mut converged;

    loop {
        let rv = DVector::from_column_slice(&r);
        let gnorm = scaled_gradient(&j, &rv, r0_norm);
        converged = gnorm <= cfg.gradient_tol || cost == 0.0;
        if converged || iterations >= cfg.max_iterations {
            break;
        }

        for (c, s) in scale.iter_mut().enumerate() {
            *s = s.max(j.column(c).norm());
        }
        let smax = scale.iter().cloned().fold(0.0, f64::max);
        let inv: Vec<f64> = scale
            .iter()
            .map(|&s| 1.0 / s.max(1e-12 * smax).max(f64::MIN_POSITIVE))
            .collect();
        let mut js = j.clone();
        for (c, &v) in inv.iter().enumerate() {
            js.column_mut(c).scale_mut(v);
        }
        let g = js.transpose() * &rv;

        let mut stepped = false;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let step_scaled = match damped_step(&js, &rv, mu) {
                Some(s) => s,
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            let step: Vec<f64> = step_scaled.iter().zip(&inv).map(|(s, i)| s * i).collect();
            let tiny = step
                .iter()
                .zip(&p)
                .all(|(d, x)| d.abs() <= cfg.step_tol * (x.abs() + cfg.step_tol));
            if tiny {
                break;
            }
            let trial: Vec<f64> = p.iter().zip(&step).map(|(x, d)| x + d).collect();
            let predicted = 0.5 * step_scaled.dot(&(mu * &step_scaled - &g));
            let (trial_r, trial_cost) = if problem.is_feasible(&trial) {
                let tr = problem.residuals(&trial);
                let c = half_norm_sq(&tr);
                (tr, c)
            } else {
                (Vec::new(), f64::INFINITY)
            };
            let rho = if predicted > 0.0 { (cost - trial_cost) / predicted } else { -1.0 };
            // a tie is accepted once the predicted gain is below the cost's resolution
            let unresolved = trial_cost == cost && predicted <= 4.0 * f64::EPSILON * cost;
            if (rho > 0.0 || unresolved) && trial_cost.is_finite() && trial_cost <= cost {
                p = trial;
                r = trial_r;
                cost = trial_cost;
                history.push(cost);
                mu *= (1.0 - (2.0 * rho.max(0.0) - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                stepped = true;
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() {
                break;
            }
        }
        if !stepped {
            break;
        }
        j = problem.jacobian(&p);
    }

    let rv = DVector::from_column_slice(&r);
    let gradient_norm = scaled_gradient(&j, &rv, r0_norm);
    LmOutcome {
        params: p,
        residuals: r,
        jacobian: j,
        cost,
        iterations,
        converged: converged || gradient_norm <= cfg.gradient_tol,
        gradient_norm,
        cost_history: history,
    }
}

/// `s²·(JᵀJ)⁺` with `s² = ‖r‖²/(m − n)`, symmetrized.
pub fn covariance(j: &DMatrix<f64>, residuals: &[f64]) -> DMatrix<f64> {
    let (m, n) = j.shape();
    let dof = m.saturating_sub(n).max(1) as f64;
    let s2 = residuals.iter().map(|v| v * v).sum::<f64>() / dof;
    // column scaling keeps the pseudo-inverse well conditioned
    let norms: Vec<f64> = (0..n).map(|c| j.column(c).norm()).collect();
    let mut js = j.clone();
    for (c, &v) in norms.iter().enumerate() {
        if v > 0.0 {
            js.column_mut(c).scale_mut(1.0 / v);
        }
    }
    let a = js.transpose() * &js;
    let pinv = a
        .pseudo_inverse(1e-14)
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    let mut cov = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let dr = if norms[r] > 0.0 { 1.0 / norms[r] } else { 0.0 };
            let dc = if norms[c] > 0.0 { 1.0 / norms[c] } else { 0.0 };
            cov[(r, c)] = s2 * pinv[(r, c)] * dr * dc;
        }
    }
    0.5 * (&cov + cov.transpose())
}

/// Largest gap between the analytic Jacobian and centered differences
/// with relative steps `h`, scaled by each column's largest entry.
pub fn jacobian_mismatch<P: LeastSquaresProblem>(problem: &P, p: &[f64], h: f64) -> f64 {
    let analytic = problem.jacobian(p);
    let mut worst = 0.0f64;
    for c in 0..p.len() {
        let step = h * p[c].abs().max(1e-3);
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[c] += step;
        lo[c] -= step;
        let rh = problem.residuals(&hi);
        let rl = problem.residuals(&lo);
        let col_scale = analytic.column(c).amax().max(f64::MIN_POSITIVE);
        for r in 0..rh.len() {
            let fd = (rh[r] - rl[r]) / (2.0 * step);
            worst = worst.max((fd - analytic[(r, c)]).abs() / col_scale);
        }
    }
    worst
}
