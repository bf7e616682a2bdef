//! Relative equilibria (cluster states) of the reduced ring.
//!
//! A cluster state rotates rigidly with collective frequency `Omega`. In
//! phases relative to oscillator 4 it is a fixed point, and the delayed
//! phase argument of link `j` becomes `theta_j = psi_{j+1} - psi_j - Omega tau`.
//! The eight unknowns `(r_1..r_4, psi_1..psi_3, Omega)` satisfy eight
//! equations: four radial balances, three relative-phase balances and the
//! frequency condition of oscillator 4.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_radii, Parameters, N};
use crate::newton::{self, NewtonOptions};

/// Number of unknowns (and equations) describing a relative equilibrium.
pub const DIM: usize = 2 * N;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEquilibrium {
    pub r: [f64; N],
    pub psi: [f64; N - 1],
    #[serde(rename = "Omega")]
    pub omega_collective: f64,
    pub tau: f64,
}

/// Maps an angle into `[0, 2 pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed distance between two angles, in `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

impl RelativeEquilibrium {
    /// Unknown vector `(r_1..r_4, psi_1..psi_3, Omega)`.
    pub fn unknowns(&self) -> DVector<f64> {
        let mut v = DVector::zeros(DIM);
        for j in 0..N {
            v[j] = self.r[j];
        }
        for j in 0..N - 1 {
            v[N + j] = self.psi[j];
        }
        v[DIM - 1] = self.omega_collective;
        v
    }

    pub fn from_unknowns(x: &DVector<f64>, tau: f64) -> Self {
        Self {
            r: std::array::from_fn(|j| x[j]),
            psi: std::array::from_fn(|j| x[N + j]),
            omega_collective: x[DIM - 1],
            tau,
        }
    }

    /// Copy with every relative phase mapped into `[0, 2 pi)`.
    pub fn normalized(mut self) -> Self {
        for p in &mut self.psi {
            *p = wrap_angle(*p);
        }
        self
    }

    #[inline]
    pub fn rel_phase(&self, j: usize) -> f64 {
        if j == N - 1 {
            0.0
        } else {
            self.psi[j]
        }
    }

    /// Phase lag `psi_{j+1} - psi_j` along link `j` (0-based), without the delay shift.
    pub fn link_lag(&self, j: usize) -> f64 {
        self.rel_phase((j + 1) % N) - self.rel_phase(j)
    }

    /// Distance to another equilibrium with relative phases compared modulo 2 pi.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut d2 = 0.0;
        for j in 0..N {
            d2 += (self.r[j] - other.r[j]).powi(2);
        }
        for j in 0..N - 1 {
            d2 += angle_diff(self.psi[j], other.psi[j]).powi(2);
        }
        d2 += (self.omega_collective - other.omega_collective).powi(2);
        d2 += (self.tau - other.tau).powi(2);
        d2.sqrt()
    }
}

/// Residual of the steady-rotation equations, evaluated at the equilibrium's own delay.
///
/// The delay stored in `params` is ignored; `eq.tau` is used instead.
pub fn residual(params: &Parameters, eq: &RelativeEquilibrium) -> Result<[f64; DIM]> {
    check_radii(&eq.r)?;
    let k = params.coupling_strength;
    let h = &params.interaction;
    let shift = eq.omega_collective * eq.tau;
    let mut out = [0.0; DIM];
    for j in 0..N {
        let next = (j + 1) % N;
        let theta = eq.link_lag(j) - shift;
        let r = eq.r[j];
        let rn = eq.r[next];
        out[j] = (params.lambda - r * r) * r + k * rn * h.h_r.eval(theta);
        let phase_balance = params.omega[j] - params.gamma * r * r + k * rn / r * h.h_phi.eval(theta)
            - eq.omega_collective;
        // oscillator 4's balance is the frequency condition
        out[N + j] = phase_balance;
    }
    Ok(out)
}

pub(crate) fn residual_vec(params: &Parameters, x: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    let eq = RelativeEquilibrium::from_unknowns(x, tau);
    Ok(DVector::from_row_slice(&residual(params, &eq)?))
}

/// Finite-difference Jacobian of the residual with respect to the eight unknowns.
pub fn jacobian(params: &Parameters, eq: &RelativeEquilibrium) -> Result<DMatrix<f64>> {
    let tau = eq.tau;
    let f = |x: &DVector<f64>| residual_vec(params, x, tau);
    newton::fd_jacobian_central(&f, &eq.unknowns(), DIM, 1e-6)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub equilibrium: RelativeEquilibrium,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton on the residual at fixed delay `guess.tau`.
pub fn newton_solve(params: &Parameters, guess: &RelativeEquilibrium) -> Result<RelativeEquilibrium> {
    newton_solve_report(params, guess).map(|r| r.equilibrium)
}

pub fn newton_solve_report(params: &Parameters, guess: &RelativeEquilibrium) -> Result<SolveReport> {
    check_radii(&guess.r)?;
    let tau = guess.tau;
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("delay must be >= 0, got {tau}")));
    }
    let f = |x: &DVector<f64>| residual_vec(params, x, tau);
    let out = newton::solve(f, guess.unknowns(), &NewtonOptions::default())?;
    let eq = if out.iterations == 0 {
        *guess
    } else {
        RelativeEquilibrium::from_unknowns(&out.x, tau)
    };
    Ok(SolveReport { equilibrium: eq.normalized(), iterations: out.iterations, residual: out.residual })
}

/// Primary cluster state: equal radii and equal neighbour lags `2 pi m / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimaryAnsatz {
    pub m: usize,
    pub r0: f64,
    #[serde(rename = "Omega")]
    pub omega_collective: f64,
    pub tau: f64,
}

impl PrimaryAnsatz {
    pub fn lag(&self) -> f64 {
        primary_lag(self.m)
    }
}

pub fn primary_lag(m: usize) -> f64 {
    TAU * m as f64 / N as f64
}

const ORACLE_TOL: f64 = 1e-12;

/// Residual of the two-unknown primary system `(r0, Omega)`.
pub fn primary_residual(params: &Parameters, m: usize, tau: f64, r0: f64, omega: f64) -> [f64; 2] {
    let theta = primary_lag(m) - omega * tau;
    let k = params.coupling_strength;
    let h = &params.interaction;
    [
        params.lambda - r0 * r0 + k * h.h_r.eval(theta),
        params.omega[0] - params.gamma * r0 * r0 + k * h.h_phi.eval(theta) - omega,
    ]
}

/// Solves the reduced primary-state system by damped Newton with its analytic 2x2 Jacobian.
///
/// Only defined for identical intrinsic frequencies. The delay is taken from `params`.
pub fn primary_oracle(params: &Parameters, m: usize, r0_guess: f64, omega_guess: f64) -> Result<PrimaryAnsatz> {
    if m >= N {
        return Err(Error::InvalidArgument(format!("cluster index m must be in 0..=3, got {m}")));
    }
    if !(r0_guess.is_finite() && omega_guess.is_finite()) {
        return Err(Error::InvalidArgument("non-finite oracle guess".into()));
    }
    if params.omega.iter().any(|w| *w != params.omega[0]) {
        return Err(Error::InvalidArgument("primary states need identical intrinsic frequencies".into()));
    }
    let tau = params.delay;
    let lag = primary_lag(m);
    let k = params.coupling_strength;
    let h = &params.interaction;

    let res_norm = |f: [f64; 2]| f[0].abs().max(f[1].abs());
    let (mut r0, mut om) = (r0_guess.abs(), omega_guess);
    let mut f = primary_residual(params, m, tau, r0, om);
    let mut res = res_norm(f);
    for it in 0..100 {
        if res < ORACLE_TOL {
            return Ok(PrimaryAnsatz { m, r0, omega_collective: om, tau });
        }
        let theta = lag - om * tau;
        // d/dr0 and d/dOmega of both equations
        let j11 = -2.0 * r0;
        let j12 = -k * tau * h.h_r.eval_deriv(theta);
        let j21 = -2.0 * params.gamma * r0;
        let j22 = -k * tau * h.h_phi.eval_deriv(theta) - 1.0;
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularJacobian { rcond: 0.0 });
        }
        let dr = -(j22 * f[0] - j12 * f[1]) / det;
        let dom = -(-j21 * f[0] + j11 * f[1]) / det;
        let mut damping = 1.0;
        loop {
            let (rt, ot) = (r0 + damping * dr, om + damping * dom);
            let ft = primary_residual(params, m, tau, rt, ot);
            let rest = res_norm(ft);
            if rt > 0.0 && (rest <= (1.0 - 1e-4 * damping) * res || rest < ORACLE_TOL) {
                r0 = rt;
                om = ot;
                f = ft;
                res = rest;
                break;
            }
            damping *= 0.5;
            if damping < 1.0 / (1u64 << 20) as f64 {
                return Err(Error::NewtonDiverged { iterations: it + 1, residual: res });
            }
        }
    }
    if res < ORACLE_TOL {
        Ok(PrimaryAnsatz { m, r0, omega_collective: om, tau })
    } else {
        Err(Error::NewtonDiverged { iterations: 100, residual: res })
    }
}

/// Writes a primary state in the eight-unknown form: `psi_j = (j - 4) * 2 pi m / 4`.
pub fn expand_primary(ansatz: &PrimaryAnsatz) -> RelativeEquilibrium {
    let lag = ansatz.lag();
    RelativeEquilibrium {
        r: [ansatz.r0; N],
        psi: std::array::from_fn(|j| wrap_angle((j as f64 + 1.0 - N as f64) * lag)),
        omega_collective: ansatz.omega_collective,
        tau: ansatz.tau,
    }
}

/// Primary state of index `m` at `tau`, seeded from the uncoupled solution.
pub fn primary_at(params: &Parameters, m: usize, tau: f64) -> Result<RelativeEquilibrium> {
    let p = params.with_delay(tau);
    let r0 = params.lambda.abs().sqrt().max(1e-3);
    let om = params.omega[0] - params.gamma * params.lambda;
    primary_oracle(&p, m, r0, om).map(|a| expand_primary(&a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn decoupled_solution_is_exact() {
        let p = Parameters::relaxation().with_coupling(0.0).with_gamma(0.2);
        let eq = RelativeEquilibrium {
            r: [2.89f64.sqrt(); 4],
            psi: [0.3, 4.0, 1.1],
            omega_collective: 2.43 - 0.2 * 2.89,
            tau: 0.9,
        };
        assert_eq!(eq.r[0], 1.7);
        let res = residual(&p, &eq).unwrap();
        assert!(max_abs(&res) < 1e-15);
        let report = newton_solve_report(&p, &eq).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.equilibrium, eq);
    }

    #[test]
    fn nonpositive_radius_rejected() {
        let p = Parameters::relaxation();
        let eq = RelativeEquilibrium { r: [1.7, 0.0, 1.7, 1.7], psi: [0.0; 3], omega_collective: 2.4, tau: 0.5 };
        assert!(matches!(newton_solve(&p, &eq), Err(Error::NonPositiveRadius { index: 2, .. })));
        assert!(residual(&p, &eq).is_err());
    }

    #[test]
    fn oracle_decoupled() {
        let p = Parameters::relaxation().with_coupling(0.0).with_gamma(0.1).with_delay(1.2);
        for m in 0..4 {
            let a = primary_oracle(&p, m, 1.0, 1.0).unwrap();
            assert!((a.r0 - 1.7).abs() < 1e-12);
            assert!((a.omega_collective - (2.43 - 0.289)).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_bad_index() {
        assert!(primary_oracle(&Parameters::relaxation(), 4, 1.7, 2.4).is_err());
    }

    #[test]
    fn expansion_patterns() {
        let a = |m| PrimaryAnsatz { m, r0: 1.7, omega_collective: 2.4, tau: 0.5 };
        assert_eq!(expand_primary(&a(0)).psi, [0.0, 0.0, 0.0]);
        let two = expand_primary(&a(2)).psi;
        assert!((two[0] - PI).abs() < 1e-15 && two[1].abs() < 1e-15 && (two[2] - PI).abs() < 1e-15);
        let splay = expand_primary(&a(1)).psi;
        let expected = [FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
        for j in 0..3 {
            assert!((splay[j] - expected[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn splay_expansion_has_zero_residual() {
        let p = Parameters::relaxation().with_delay(0.9);
        let a = primary_oracle(&p, 1, 1.7, 2.43).unwrap();
        let eq = expand_primary(&a);
        assert!(max_abs(&residual(&p, &eq).unwrap()) < 1e-10);
    }

    #[test]
    fn eight_unknown_newton_agrees_with_oracle() {
        let p = Parameters::relaxation().with_delay(0.9);
        let a = primary_oracle(&p, 0, 1.7, 2.43).unwrap();
        let exact = expand_primary(&a);
        let mut guess = exact;
        guess.r = [1.69, 1.71, 1.7, 1.705];
        guess.psi = [0.01, -0.02, 0.015];
        guess.omega_collective += 0.01;
        let out = newton_solve_report(&p, &guess).unwrap();
        let eq = out.equilibrium;
        for j in 0..4 {
            assert!((eq.r[j] - a.r0).abs() < 1e-9);
        }
        assert!((eq.omega_collective - a.omega_collective).abs() < 1e-9);
        assert!(eq.psi.iter().all(|p| (0.0..TAU).contains(p)));

        // started on the expansion itself, the solve is immediate
        let direct = newton_solve_report(&p, &exact).unwrap();
        assert!(direct.iterations <= 3);
    }

    #[test]
    fn angle_helpers() {
        assert_eq!(wrap_angle(-1e-300), 0.0);
        assert!((wrap_angle(-FRAC_PI_2) - 1.5 * PI).abs() < 1e-15);
        assert!((angle_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-15);
    }
}
