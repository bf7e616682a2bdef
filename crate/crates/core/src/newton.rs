//! Damped Newton iteration for small dense square systems with
//! finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step, scaled by `max(1, |x_i|)`.
    pub fd_step: f64,
    pub min_damping: f64,
    /// Reciprocal condition number below which the Jacobian is treated as singular.
    pub rcond_min: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            fd_step: 1e-7,
            min_damping: 1.0 / (1u64 << 20) as f64,
            rcond_min: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Forward-difference Jacobian.
pub fn fd_jacobian<F>(f: &F, x: &DVector<f64>, fx: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let m = fx.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i];
        let col = (fp - fx) / h;
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Central-difference Jacobian.
pub fn fd_jacobian_central<F>(f: &F, x: &DVector<f64>, m: usize, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

pub(crate) fn rcond(jac: &DMatrix<f64>) -> f64 {
    let sv = jac.singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Armijo-damped Newton on the max-norm of `f`.
pub fn solve<F>(f: F, x0: DVector<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut res = max_norm(&fx);
    for it in 0..opts.max_iter {
        if res < opts.tol {
            return Ok(NewtonOutcome { x, iterations: it, residual: res });
        }
        let jac = fd_jacobian(&f, &x, &fx, opts.fd_step)?;
        let rc = rcond(&jac);
        if !(rc > opts.rcond_min) {
            return Err(Error::SingularJacobian { rcond: rc });
        }
        let Some(dx) = jac.lu().solve(&(-&fx)) else {
            return Err(Error::SingularJacobian { rcond: rc });
        };
        let mut damping = 1.0;
        loop {
            let trial = &x + &dx * damping;
            let accepted = match f(&trial) {
                Ok(ft) => {
                    let rt = max_norm(&ft);
                    // Armijo on the max-norm with a small sufficient-decrease factor
                    if rt.is_finite() && (rt <= (1.0 - 1e-4 * damping) * res || rt < opts.tol) {
                        x = trial;
                        fx = ft;
                        res = rt;
                        true
                    } else {
                        false
                    }
                }
                Err(Error::NonPositiveRadius { .. }) | Err(Error::FrequencySolve { .. }) => false,
                Err(e) => return Err(e),
            };
            if accepted {
                break;
            }
            damping *= 0.5;
            if damping < opts.min_damping {
                return Err(Error::NewtonDiverged { iterations: it + 1, residual: res });
            }
        }
    }
    if res < opts.tol {
        Ok(NewtonOutcome { x, iterations: opts.max_iter, residual: res })
    } else {
        Err(Error::NewtonDiverged { iterations: opts.max_iter, residual: res })
    }
}
