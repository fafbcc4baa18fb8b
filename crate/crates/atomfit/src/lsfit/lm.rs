//! Damped least-squares (Levenberg-Marquardt) engine shared by the 1-D and
//! 2-D Gaussian fitters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative parameter-change stopping tolerance.
    pub param_tolerance: f64,
    /// Relative residual-change stopping tolerance.
    pub residual_tolerance: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            param_tolerance: 1e-8,
            residual_tolerance: 1e-8,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
        }
    }
}

const LAMBDA_MAX: f64 = 1e12;
const LAMBDA_MIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_ss: f64,
}

/// Minimize `|r(x)|^2`. The residual closure returns `None` for parameter
/// vectors outside the model's domain; such proposals are rejected like any
/// non-improving step. Steps solve
/// `(J'J + lambda diag(J'J)) delta = -J'r` and are accepted only when the
/// residual sum of squares decreases, so accepted steps are monotone.
pub fn lm_minimize<R, J>(mut residuals: R, mut jacobian: J, x0: &[f64], cfg: &LmConfig) -> Result<LmOutcome>
where
    R: FnMut(&[f64]) -> Option<DVector<f64>>,
    J: FnMut(&[f64]) -> Option<DMatrix<f64>>,
{
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or(Error::NonFiniteResiduals)?;
    let mut ss = r.norm_squared();
    let mut lambda = cfg.lambda0;

    if ss == 0.0 {
        return Ok(LmOutcome { x, converged: true, iterations: 0, residual_ss: 0.0 });
    }

    for iter in 1..=cfg.max_iterations {
        let jac = match jacobian(&x) {
            Some(j) if j.iter().all(|v| v.is_finite()) => j,
            _ => return Ok(LmOutcome { x, converged: false, iterations: iter - 1, residual_ss: ss }),
        };
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;

        // Try increasingly damped steps until one improves.
        loop {
            let mut m = jtj.clone();
            for i in 0..k {
                let d = jtj[(i, i)].max(1e-12);
                m[(i, i)] = jtj[(i, i)] + lambda * d;
            }
            let delta = match m.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= cfg.lambda_up;
                    if lambda > LAMBDA_MAX {
                        return Ok(LmOutcome { x, converged: false, iterations: iter, residual_ss: ss });
                    }
                    continue;
                }
            };
            let x_new: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let accept = residuals(&x_new)
                .filter(|r| r.iter().all(|v| v.is_finite()))
                .map(|r_new| (r_new.norm_squared(), r_new));
            match accept {
                Some((ss_new, r_new)) if ss_new < ss => {
                    let max_rel_step = delta
                        .iter()
                        .zip(&x_new)
                        .map(|(d, xv)| d.abs() / (xv.abs() + 1e-12))
                        .fold(0.0f64, f64::max);
                    let rel_drop = (ss - ss_new) / ss.max(f64::MIN_POSITIVE);
                    x = x_new;
                    r = r_new;
                    ss = ss_new;
                    lambda = (lambda * cfg.lambda_down).max(LAMBDA_MIN);
                    if max_rel_step < cfg.param_tolerance
                        || rel_drop < cfg.residual_tolerance
                        || ss == 0.0
                    {
                        return Ok(LmOutcome { x, converged: true, iterations: iter, residual_ss: ss });
                    }
                    break;
                }
                _ => {
                    lambda *= cfg.lambda_up;
                    if lambda > LAMBDA_MAX {
                        return Ok(LmOutcome { x, converged: false, iterations: iter, residual_ss: ss });
                    }
                }
            }
        }
    }
    Ok(LmOutcome { x, converged: false, iterations: cfg.max_iterations, residual_ss: ss })
}
