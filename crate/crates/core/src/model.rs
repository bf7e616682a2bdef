//! The delay-coupled ring of four oscillators.
//!
//! Oscillator `j` receives the delayed output of oscillator `j + 1`
//! (indices modulo 4). The full model is eight-dimensional in polar
//! coordinates `(r_j, phi_j)`. The reduced model measures phases relative
//! to oscillator 4 and is seven-dimensional; it needs the instantaneous
//! frequency of oscillator 4, which is the root of a scalar implicit
//! equation re-solved at every evaluation.

use serde::{Deserialize, Serialize};

use crate::coupling::InteractionPair;
use crate::error::{Error, Result};

/// Ring size. The symmetry machinery is written for the cyclic group of order 4.
pub const N: usize = 4;

/// Radii below this value leave the region where the angular equation is defined.
pub const MIN_RADIUS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub lambda: f64,
    pub omega: [f64; N],
    pub gamma: f64,
    #[serde(rename = "K")]
    pub coupling_strength: f64,
    #[serde(rename = "tau")]
    pub delay: f64,
    pub interaction: InteractionPair,
}

impl Parameters {
    /// Relaxation regime: lambda = 2.89, omega = 2.43, K = 0.189, fitted interaction functions.
    pub fn relaxation() -> Self {
        Self {
            lambda: 2.89,
            omega: [2.43; N],
            gamma: 0.0,
            coupling_strength: 0.189,
            delay: 0.0,
            interaction: InteractionPair::relaxation(),
        }
    }

    /// Smooth regime: lambda = 1.1025, omega = 3.4228, K = 0.3, sinusoidal coupling.
    pub fn smooth() -> Self {
        Self {
            lambda: 1.1025,
            omega: [3.4228; N],
            gamma: 0.0,
            coupling_strength: 0.3,
            delay: 0.0,
            interaction: InteractionPair::sinusoidal(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.trim() {
            "relaxation" => Some(Self::relaxation()),
            "smooth" => Some(Self::smooth()),
            _ => None,
        }
    }

    pub fn with_delay(mut self, tau: f64) -> Self {
        self.delay = tau;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_coupling(mut self, k: f64) -> Self {
        self.coupling_strength = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.lambda.is_finite()
            && self.gamma.is_finite()
            && self.coupling_strength.is_finite()
            && self.delay.is_finite()
            && self.omega.iter().all(|w| w.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        if self.delay < 0.0 {
            return Err(Error::InvalidArgument(format!("delay must be >= 0, got {}", self.delay)));
        }
        Ok(())
    }
}

/// State of the full model: radii and absolute phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub r: [f64; N],
    pub phi: [f64; N],
}

impl FullState {
    pub fn to_array(&self) -> [f64; 2 * N] {
        let mut out = [0.0; 2 * N];
        out[..N].copy_from_slice(&self.r);
        out[N..].copy_from_slice(&self.phi);
        out
    }

    pub fn from_array(x: &[f64; 2 * N]) -> Self {
        let mut r = [0.0; N];
        let mut phi = [0.0; N];
        r.copy_from_slice(&x[..N]);
        phi.copy_from_slice(&x[N..]);
        Self { r, phi }
    }

    /// Phases relative to oscillator 4.
    pub fn reduce(&self) -> ReducedState {
        ReducedState {
            r: self.r,
            psi: [
                self.phi[0] - self.phi[3],
                self.phi[1] - self.phi[3],
                self.phi[2] - self.phi[3],
            ],
        }
    }
}

/// State of the reduced model: radii and phases relative to oscillator 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub r: [f64; N],
    pub psi: [f64; N - 1],
}

impl ReducedState {
    /// Relative phase of oscillator `j` (0-based), with oscillator 4 pinned at 0.
    #[inline]
    pub fn rel_phase(&self, j: usize) -> f64 {
        if j == N - 1 {
            0.0
        } else {
            self.psi[j]
        }
    }

    pub fn to_array(&self) -> [f64; 2 * N - 1] {
        let mut out = [0.0; 2 * N - 1];
        out[..N].copy_from_slice(&self.r);
        out[N..].copy_from_slice(&self.psi);
        out
    }

    pub fn from_array(x: &[f64; 2 * N - 1]) -> Self {
        let mut r = [0.0; N];
        let mut psi = [0.0; N - 1];
        r.copy_from_slice(&x[..N]);
        psi.copy_from_slice(&x[N..]);
        Self { r, psi }
    }
}

pub(crate) fn check_radii(r: &[f64; N]) -> Result<()> {
    for (index, &value) in r.iter().enumerate() {
        if !(value > MIN_RADIUS) {
            return Err(Error::NonPositiveRadius { index: index + 1, value });
        }
    }
    Ok(())
}

/// Right-hand side of the full model, ordered `(r_1..r_4, phi_1..phi_4)`.
pub fn rhs_full(params: &Parameters, now: &FullState, delayed: &FullState) -> Result<[f64; 2 * N]> {
    check_radii(&now.r)?;
    let k = params.coupling_strength;
    let h = &params.interaction;
    let mut out = [0.0; 2 * N];
    for j in 0..N {
        let next = (j + 1) % N;
        let arg = delayed.phi[next] - now.phi[j];
        let r = now.r[j];
        let rd = delayed.r[next];
        out[j] = (params.lambda - r * r) * r + k * rd * h.h_r.eval(arg);
        out[N + j] = params.omega[j] - params.gamma * r * r + k * rd / r * h.h_phi.eval(arg);
    }
    Ok(out)
}

const PHI4_MAX_ITER: usize = 100;
const PHI4_TOL: f64 = 1e-12;

/// Instantaneous frequency of oscillator 4 in the reduced model.
///
/// Solves `0 = omega_4 - gamma r_4^2 + K (r_1(t-tau) / r_4) H_phi(psi_1(t-tau) - x tau) - x`
/// for `x`, starting from `seed`. Damped Newton first; if that stalls, the
/// sign change nearest to the seed inside the a-priori root enclosure is
/// bisected and polished.
pub fn solve_phi4_dot(
    params: &Parameters,
    now: &ReducedState,
    delayed: &ReducedState,
    seed: f64,
) -> Result<f64> {
    let r4 = now.r[N - 1];
    if !(r4 > MIN_RADIUS) {
        return Err(Error::NonPositiveRadius { index: N, value: r4 });
    }
    let r1d = delayed.r[0];
    if !(r1d > MIN_RADIUS) {
        return Err(Error::NonPositiveRadius { index: 1, value: r1d });
    }
    let explicit = params.omega[N - 1] - params.gamma * r4 * r4;
    let gain = params.coupling_strength * r1d / r4;
    let tau = params.delay;
    let h = &params.interaction.h_phi;
    let psi1d = delayed.psi[0];
    if gain == 0.0 {
        return Ok(explicit);
    }
    if tau == 0.0 {
        return Ok(explicit + gain * h.eval(psi1d));
    }

    let f = |x: f64| explicit + gain * h.eval(psi1d - x * tau) - x;
    let df = |x: f64| -gain * tau * h.eval_deriv(psi1d - x * tau) - 1.0;

    let seed = if seed.is_finite() { seed } else { explicit };
    if let Some(x) = damped_newton_scalar(&f, &df, seed) {
        return Ok(x);
    }

    // Every root lies within |x - explicit| <= |gain| * sum |coefficients|.
    let bound = gain.abs() * (h.a().iter().chain(h.b()).map(|c| c.abs()).sum::<f64>()) + 1e-9;
    let lo_limit = explicit - bound;
    let hi_limit = explicit + bound;
    let center = seed.clamp(lo_limit, hi_limit);
    let n_probe = 400;
    let step = (hi_limit - lo_limit) / n_probe as f64;
    let f_center = f(center);
    // scan outward from the seed; the first sign change is the nearest root
    let mut bracket = None;
    'scan: for i in 1..=n_probe {
        let near = step * (i - 1) as f64;
        let far = step * i as f64;
        for (a, b) in [(center + near, center + far), (center - far, center - near)] {
            let (a, b) = (a.max(lo_limit), b.min(hi_limit));
            if a >= b {
                continue;
            }
            if f(a).signum() != f(b).signum() || f(a) == 0.0 || f(b) == 0.0 {
                bracket = Some((a, b));
                break 'scan;
            }
        }
    }
    let Some((mut a, mut b)) = bracket else {
        return Err(Error::FrequencySolve { residual: f_center.abs() });
    };
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a) < 1e-15 * (1.0 + m.abs()) {
            a = m;
            b = m;
            break;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let mid = 0.5 * (a + b);
    let polished = damped_newton_scalar(&f, &df, mid).unwrap_or(mid);
    let res = f(polished).abs();
    if res < PHI4_TOL {
        Ok(polished)
    } else {
        Err(Error::FrequencySolve { residual: res })
    }
}

fn damped_newton_scalar(f: &impl Fn(f64) -> f64, df: &impl Fn(f64) -> f64, seed: f64) -> Option<f64> {
    let mut x = seed;
    let mut fx = f(x);
    for _ in 0..PHI4_MAX_ITER {
        if fx.abs() < PHI4_TOL {
            return Some(x);
        }
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let full = -fx / d;
        let mut lambda = 1.0;
        loop {
            let trial = x + lambda * full;
            let ft = f(trial);
            if ft.abs() < fx.abs() || ft.abs() < PHI4_TOL {
                x = trial;
                fx = ft;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return None;
            }
        }
    }
    (fx.abs() < PHI4_TOL).then_some(x)
}

/// Right-hand side of the reduced model plus the solved frequency of oscillator 4.
///
/// Components are `(r_1..r_4, psi_1..psi_3)`; oscillator 4's relative phase
/// is identically zero, including in the delayed arguments.
pub fn rhs_reduced(
    params: &Parameters,
    now: &ReducedState,
    delayed: &ReducedState,
    phi4_seed: f64,
) -> Result<([f64; 2 * N - 1], f64)> {
    check_radii(&now.r)?;
    let x = solve_phi4_dot(params, now, delayed, phi4_seed)?;
    let k = params.coupling_strength;
    let h = &params.interaction;
    let shift = x * params.delay;
    let mut out = [0.0; 2 * N - 1];
    for j in 0..N {
        let next = (j + 1) % N;
        let arg = delayed.rel_phase(next) - now.rel_phase(j) - shift;
        let r = now.r[j];
        let rd = delayed.r[next];
        out[j] = (params.lambda - r * r) * r + k * rd * h.h_r.eval(arg);
        if j < N - 1 {
            out[N + j] = params.omega[j] - params.gamma * r * r + k * rd / r * h.h_phi.eval(arg) - x;
        }
    }
    Ok((out, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random_state(rng: &mut ChaCha8Rng) -> FullState {
        let mut s = FullState { r: [0.0; N], phi: [0.0; N] };
        for j in 0..N {
            s.r[j] = rng.random_range(0.3..2.5);
            s.phi[j] = rng.random_range(-10.0..10.0);
        }
        s
    }

    /// The polar Stuart-Landau ring written out with cos and sin directly.
    fn polar_rhs(p: &Parameters, now: &FullState, del: &FullState) -> [f64; 8] {
        let mut out = [0.0; 8];
        for j in 0..4 {
            let n = (j + 1) % 4;
            let d = del.phi[n] - now.phi[j];
            out[j] = (p.lambda - now.r[j].powi(2)) * now.r[j] + p.coupling_strength * del.r[n] * d.cos();
            out[4 + j] = p.omega[j] - p.gamma * now.r[j].powi(2)
                + p.coupling_strength * del.r[n] / now.r[j] * d.sin();
        }
        out
    }

    #[test]
    fn decoupled_limit_cycle() {
        let p = Parameters::relaxation().with_coupling(0.0).with_gamma(0.3).with_delay(0.7);
        let s = FullState { r: [1.7; 4], phi: [0.1, 2.0, -3.0, 5.5] };
        let f = rhs_full(&p, &s, &s).unwrap();
        for j in 0..4 {
            assert!(f[j].abs() < 1e-14);
            assert!((f[4 + j] - (2.43 - 0.3 * 2.89)).abs() < 1e-14);
        }
    }

    #[test]
    fn sinusoidal_pair_reduces_to_polar_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Parameters::smooth().with_gamma(0.4).with_delay(1.3);
        for _ in 0..50 {
            let now = random_state(&mut rng);
            let del = random_state(&mut rng);
            let a = rhs_full(&p, &now, &del).unwrap();
            let b = polar_rhs(&p, &now, &del);
            for i in 0..8 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotational_and_cyclic_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Parameters::relaxation().with_gamma(0.2).with_delay(0.9);
        for _ in 0..50 {
            let now = random_state(&mut rng);
            let del = random_state(&mut rng);
            let base = rhs_full(&p, &now, &del).unwrap();
            let c = rng.random_range(0.0..TAU);
            let mut ns = now;
            let mut ds = del;
            for j in 0..4 {
                ns.phi[j] += c;
                ds.phi[j] += c;
            }
            let shifted = rhs_full(&p, &ns, &ds).unwrap();
            for i in 0..8 {
                assert!((base[i] - shifted[i]).abs() < 1e-12);
            }
            // relabel j -> j - 1
            let perm = |s: &FullState| FullState {
                r: std::array::from_fn(|j| s.r[(j + 1) % 4]),
                phi: std::array::from_fn(|j| s.phi[(j + 1) % 4]),
            };
            let permuted = rhs_full(&p, &perm(&now), &perm(&del)).unwrap();
            for j in 0..4 {
                assert!((permuted[j] - base[(j + 1) % 4]).abs() < 1e-12);
                assert!((permuted[4 + j] - base[4 + (j + 1) % 4]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_radius_rejected() {
        let p = Parameters::relaxation();
        let mut s = FullState { r: [1.0; 4], phi: [0.0; 4] };
        s.r[2] = 0.0;
        assert!(matches!(rhs_full(&p, &s, &s), Err(Error::NonPositiveRadius { index: 3, .. })));
    }

    #[test]
    fn phi4_explicit_cases() {
        let now = ReducedState { r: [1.2, 1.3, 1.4, 1.5], psi: [0.3, 1.0, 2.0] };
        let del = ReducedState { r: [1.6, 1.1, 1.0, 1.2], psi: [0.7, 1.5, 2.5] };
        let p0 = Parameters::relaxation().with_coupling(0.0).with_gamma(0.25).with_delay(1.0);
        let x = solve_phi4_dot(&p0, &now, &del, 100.0).unwrap();
        assert_eq!(x, 2.43 - 0.25 * 1.5 * 1.5);

        let p1 = Parameters::relaxation().with_gamma(0.25).with_delay(0.0);
        let x = solve_phi4_dot(&p1, &now, &del, -3.0).unwrap();
        let expected = 2.43 - 0.25 * 2.25 + 0.189 * (1.6 / 1.5) * p1.interaction.h_phi.eval(0.7);
        assert_eq!(x, expected);
    }

    #[test]
    fn phi4_residual_is_tiny() {
        let now = ReducedState { r: [1.2, 1.3, 1.4, 1.5], psi: [0.3, 1.0, 2.0] };
        let del = ReducedState { r: [1.6, 1.1, 1.0, 1.2], psi: [0.7, 1.5, 2.5] };
        for tau in [0.2, 1.0, 2.5, 6.0] {
            let p = Parameters::relaxation().with_delay(tau);
            let x = solve_phi4_dot(&p, &now, &del, 2.43).unwrap();
            let res = 2.43 + 0.189 * 1.6 / 1.5 * p.interaction.h_phi.eval(0.7 - x * tau) - x;
            assert!(res.abs() < 1e-12);
        }
    }

    #[test]
    fn phi4_strong_coupling_falls_back_to_bracketing() {
        // Large K tau makes Newton from a poor seed wander; the enclosure search still finds a root.
        let now = ReducedState { r: [1.0; 4], psi: [0.0; 3] };
        let del = now;
        let p = Parameters::relaxation().with_coupling(3.0).with_delay(20.0);
        let h = p.interaction.h_phi;
        let x = solve_phi4_dot(&p, &now, &del, -50.0).unwrap();
        assert!((2.43 + 3.0 * h.eval(-x * 20.0) - x).abs() < 1e-12);
    }

    #[test]
    fn reduced_decoupled_is_stationary() {
        let p = Parameters::relaxation().with_coupling(0.0).with_delay(0.8);
        let s = ReducedState { r: [1.7; 4], psi: [0.4, 2.2, 5.0] };
        let (f, x) = rhs_reduced(&p, &s, &s, 0.0).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(x, 2.43);
    }

    #[test]
    fn reduced_matches_full_on_constant_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Parameters::relaxation().with_gamma(0.1).with_delay(0.85);
        for _ in 0..20 {
            let r: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.8..2.0));
            let rd: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.8..2.0));
            let phi0: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
            // choose delayed phases that rotate uniformly with the frequency oscillator 4 solves for
            let now_red = ReducedState { r, psi: [phi0[0] - phi0[3], phi0[1] - phi0[3], phi0[2] - phi0[3]] };
            let del_red = ReducedState { r: rd, psi: now_red.psi };
            let (fr, x) = rhs_reduced(&p, &now_red, &del_red, 2.4).unwrap();
            let t = 3.0;
            let now = FullState { r, phi: std::array::from_fn(|j| phi0[j] + x * t) };
            let del = FullState { r: rd, phi: std::array::from_fn(|j| phi0[j] + x * (t - p.delay)) };
            let ff = rhs_full(&p, &now, &del).unwrap();
            for j in 0..4 {
                assert!((fr[j] - ff[j]).abs() < 1e-12);
            }
            for j in 0..3 {
                assert!((fr[4 + j] - (ff[4 + j] - x)).abs() < 1e-12);
            }
            assert!((ff[7] - x).abs() < 1e-12);
        }
    }
}
