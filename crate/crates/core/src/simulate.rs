//! Direct integration of the full delayed ring, decay-rate measurement and
//! phase extraction from simulated signals.
//!
//! The integrator is classical fourth-order Runge-Kutta with a fixed step.
//! Delayed values come from cubic Hermite interpolation of the stored
//! solution and its derivative, or from the history function for `t <= 0`.
//! When the step divides the delay, breakpoints of the solution fall on
//! grid points and the scheme keeps fourth order.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibria::{angle_diff, wrap_angle, RelativeEquilibrium};
use crate::error::{Error, Result};
use crate::model::{rhs_full, FullState, Parameters, N};
use crate::symmetry::{classify_isotropy, IsotropyClass, SIMULATION_TOL};

const STATE: usize = 2 * N;

/// Uniformly sampled solution with derivatives for dense output.
///
/// Samples of the history on `[-tau, 0]` are kept so that the interpolant
/// covers `[-tau, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FullState>,
    pub dt: f64,
    derivatives: Vec<[f64; STATE]>,
    history_states: Vec<FullState>,
    history_derivatives: Vec<[f64; STATE]>,
}

fn hermite(y0: &[f64; STATE], d0: &[f64; STATE], y1: &[f64; STATE], d1: &[f64; STATE], h: f64, s: f64) -> [f64; STATE] {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    std::array::from_fn(|i| h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i])
}

/// Locates `t` in a uniform grid starting at `t0`; returns the interval index and local coordinate.
fn locate(t: f64, t0: f64, dt: f64, intervals: usize) -> (usize, f64) {
    let x = (t - t0) / dt;
    let k = (x.floor().max(0.0) as usize).min(intervals.saturating_sub(1));
    (k, x - k as f64)
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    /// Cubic Hermite interpolant on `[-tau, t_end]`.
    pub fn interpolate(&self, t: f64) -> Result<FullState> {
        let t0 = self.times[0];
        if t >= t0 {
            if t > self.t_end() + 1e-12 * self.t_end().abs().max(1.0) {
                return Err(Error::InvalidArgument(format!("t = {t} beyond the trajectory end {}", self.t_end())));
            }
            if self.times.len() == 1 {
                return Ok(self.states[0]);
            }
            let (k, s) = locate(t, t0, self.dt, self.times.len() - 1);
            let y = hermite(
                &self.states[k].to_array(),
                &self.derivatives[k],
                &self.states[k + 1].to_array(),
                &self.derivatives[k + 1],
                self.dt,
                s,
            );
            return Ok(FullState::from_array(&y));
        }
        // history samples run from -tau to t0 inclusive
        let n = self.history_states.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("t = {t} before the start and no history is stored")));
        }
        let start = t0 - (n - 1) as f64 * self.dt;
        if t < start - 1e-12 * start.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("t = {t} before the stored history")));
        }
        let (k, s) = locate(t, start, self.dt, n - 1);
        let y = hermite(
            &self.history_states[k].to_array(),
            &self.history_derivatives[k],
            &self.history_states[k + 1].to_array(),
            &self.history_derivatives[k + 1],
            self.dt,
            s,
        );
        Ok(FullState::from_array(&y))
    }
}

fn add_scaled(y: &[f64; STATE], k: &[f64; STATE], h: f64) -> [f64; STATE] {
    std::array::from_fn(|i| y[i] + h * k[i])
}

fn history_derivative(history: &dyn Fn(f64) -> FullState, t: f64) -> [f64; STATE] {
    let h = 1e-5 * t.abs().max(1.0);
    let p = history(t).to_array();
    let m = history(t - h).to_array();
    std::array::from_fn(|i| (p[i] - m[i]) / h)
}

/// Step `tau / n` with `n = max(40, ceil(tau / 0.01))`, so the step divides the delay and stays at most `0.01`.
pub fn default_step(tau: f64) -> f64 {
    if tau > 0.0 {
        let n = ((tau / 0.01).ceil() as usize).max(40);
        tau / n as f64
    } else {
        0.01
    }
}

/// Integrates the full model from `t = 0` to `t_end` with fixed step `dt`.
pub fn integrate_dde(params: &Parameters, history: &dyn Fn(f64) -> FullState, t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate_until(params, history, t_end, dt, |_, _| false)
}

/// As [`integrate_dde`], stopping early once `stop(t, state)` returns true.
pub fn integrate_until(
    params: &Parameters,
    history: &dyn Fn(f64) -> FullState,
    t_end: f64,
    dt: f64,
    mut stop: impl FnMut(f64, &FullState) -> bool,
) -> Result<Trajectory> {
    params.validate()?;
    let tau = params.delay;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if tau > 0.0 && dt > tau / 4.0 * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("step {dt} exceeds tau / 4 = {}", tau / 4.0)));
    }
    if !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("end time must be >= 0, got {t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut ys: Vec<[f64; STATE]> = Vec::with_capacity(steps + 1);
    let mut ds: Vec<[f64; STATE]> = Vec::with_capacity(steps + 1);

    let hist_n = if tau > 0.0 { (tau / dt).round().max(1.0) as usize + 1 } else { 0 };
    let hist_t = |k: usize| if k + 1 == hist_n { 0.0 } else { -tau + k as f64 * dt };
    let history_states: Vec<FullState> = (0..hist_n).map(|k| history(hist_t(k))).collect();
    let history_derivatives: Vec<[f64; STATE]> = (0..hist_n).map(|k| history_derivative(history, hist_t(k))).collect();

    let collapse = |e: Error, t: f64| match e {
        Error::NonPositiveRadius { .. } => Error::RadiusCollapse { time: t },
        other => other,
    };
    // delayed state at time `s <= t_n + dt` given the solution stored so far
    let delayed = |s: f64, ys: &[[f64; STATE]], ds: &[[f64; STATE]], current: &[f64; STATE]| -> [f64; STATE] {
        if tau == 0.0 {
            return *current;
        }
        let td = s - tau;
        if td <= 0.0 {
            return history(td).to_array();
        }
        let (k, frac) = locate(td, 0.0, dt, ys.len().saturating_sub(1).max(1));
        if k + 1 >= ys.len() {
            return ys[ys.len() - 1];
        }
        hermite(&ys[k], &ds[k], &ys[k + 1], &ds[k + 1], dt, frac)
    };

    let mut y = history(0.0).to_array();
    let mut t = 0.0;
    times.push(t);
    ys.push(y);
    for n in 0..steps {
        let f = |s: f64, state: &[f64; STATE], ys: &[[f64; STATE]], ds: &[[f64; STATE]]| -> Result<[f64; STATE]> {
            let d = delayed(s, ys, ds, state);
            rhs_full(params, &FullState::from_array(state), &FullState::from_array(&d)).map_err(|e| collapse(e, s))
        };
        let k1 = f(t, &y, &ys, &ds)?;
        ds.push(k1);
        let k2 = f(t + 0.5 * dt, &add_scaled(&y, &k1, 0.5 * dt), &ys, &ds)?;
        let k3 = f(t + 0.5 * dt, &add_scaled(&y, &k2, 0.5 * dt), &ys, &ds)?;
        let k4 = f(t + dt, &add_scaled(&y, &k3, dt), &ys, &ds)?;
        y = std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        t = (n + 1) as f64 * dt;
        times.push(t);
        ys.push(y);
        if stop(t, &FullState::from_array(&y)) {
            break;
        }
    }
    let last = *ys.last().expect("nonempty");
    let d_last = {
        let dly = delayed(t, &ys, &ds, &last);
        rhs_full(params, &FullState::from_array(&last), &FullState::from_array(&dly)).map_err(|e| collapse(e, t))?
    };
    ds.push(d_last);
    Ok(Trajectory {
        times,
        states: ys.iter().map(FullState::from_array).collect(),
        dt,
        derivatives: ds,
        history_states,
        history_derivatives,
    })
}

/// State of a rigidly rotating cluster state at time `t`: `phi_j = Omega t + psi_j`.
pub fn equilibrium_state(eq: &RelativeEquilibrium, t: f64) -> FullState {
    FullState { r: eq.r, phi: std::array::from_fn(|j| eq.omega_collective * t + eq.rel_phase(j)) }
}

/// Distance of a full state from a cluster state in `(r, psi)`, phases compared modulo 2 pi.
pub fn reduced_deviation(state: &FullState, eq: &RelativeEquilibrium) -> f64 {
    let red = state.reduce();
    let mut d2 = 0.0;
    for j in 0..N {
        d2 += (red.r[j] - eq.r[j]).powi(2);
    }
    for j in 0..N - 1 {
        d2 += angle_diff(red.psi[j], eq.psi[j]).powi(2);
    }
    d2.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub seed: u64,
    /// Perturb radii only.
    pub radial_only: bool,
    pub t_max: f64,
    /// The run stops once the deviation leaves `[floor, saturation]`.
    pub saturation: f64,
    pub floor: f64,
    /// Leading fraction of the run excluded from the fit.
    pub transient_fraction: f64,
    pub min_samples: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            radial_only: false,
            t_max: 300.0,
            saturation: 1e-2,
            floor: 1e-9,
            transient_fraction: 0.5,
            min_samples: 50,
        }
    }
}

/// Random unit perturbation of `(r, phi)` with no component along the global phase.
pub fn random_perturbation(seed: u64, radial_only: bool) -> [f64; STATE] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: [f64; STATE] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    if radial_only {
        for x in &mut v[N..] {
            *x = 0.0;
        }
    } else {
        let mean = v[N..].iter().sum::<f64>() / N as f64;
        for x in &mut v[N..] {
            *x -= mean;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / norm)
}

fn fit_slope(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len() as f64;
    let (st, sy) = samples.iter().fold((0.0, 0.0), |acc, (t, y)| (acc.0 + t, acc.1 + y));
    let (mt, my) = (st / n, sy / n);
    let (num, den) = samples.iter().fold((0.0, 0.0), |acc, (t, y)| (acc.0 + (t - mt) * (y - my), acc.1 + (t - mt).powi(2)));
    num / den
}

/// Growth rate of a small perturbation of a cluster state, from a simulation.
///
/// The slope of `log |deviation|` over the post-transient part of the run
/// estimates the real part of the dominant characteristic root.
pub fn perturb_and_measure_rate(params: &Parameters, eq: &RelativeEquilibrium, epsilon: f64) -> Result<f64> {
    perturb_and_measure_rate_with(params, eq, epsilon, &RateOptions::default())
}

pub fn perturb_and_measure_rate_with(params: &Parameters, eq: &RelativeEquilibrium, epsilon: f64, opts: &RateOptions) -> Result<f64> {
    if !(1e-6..=1e-2).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-6, 1e-2]")));
    }
    let p = params.with_delay(eq.tau);
    let v = random_perturbation(opts.seed, opts.radial_only);
    let eq = *eq;
    let history = move |t: f64| {
        let base = equilibrium_state(&eq, t);
        let mut x = base.to_array();
        for i in 0..STATE {
            x[i] += epsilon * v[i];
        }
        FullState::from_array(&x)
    };
    let mut samples = Vec::new();
    let traj = integrate_until(&p, &history, opts.t_max, default_step(eq.tau), |t, state| {
        let d = reduced_deviation(state, &eq);
        samples.push((t, d.ln()));
        !(d > opts.floor && d < opts.saturation)
    })?;
    let t_stop = traj.t_end();
    let window: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(t, y)| *t >= opts.transient_fraction * t_stop && y.is_finite())
        .collect();
    if window.len() < 2 {
        return Err(Error::Saturated { partial_rate: f64::NAN });
    }
    let rate = fit_slope(&window);
    let saturated = samples.last().is_some_and(|(_, y)| *y >= opts.saturation.ln());
    if window.len() < opts.min_samples && saturated {
        return Err(Error::Saturated { partial_rate: rate });
    }
    Ok(rate)
}

/// Peak-to-peak phase of an oscillatory signal.
///
/// Local maxima above the signal mean are refined by a parabola through
/// three samples and assigned phases `2 pi k`; the phase is linear between
/// peaks. Only samples between the first and last peak are returned.
pub fn extract_phase(signal: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let peaks = find_peaks(signal);
    if peaks.len() < 3 {
        return Err(Error::TooFewPeaks { found: peaks.len() });
    }
    let mut out = Vec::new();
    let mut k = 0;
    for &(t, _) in signal {
        if t < peaks[0] || t > peaks[peaks.len() - 1] {
            continue;
        }
        while k + 2 < peaks.len() && t > peaks[k + 1] {
            k += 1;
        }
        let frac = (t - peaks[k]) / (peaks[k + 1] - peaks[k]);
        out.push((t, TAU * (k as f64 + frac)));
    }
    Ok(out)
}

fn find_peaks(signal: &[(f64, f64)]) -> Vec<f64> {
    if signal.len() < 3 {
        return Vec::new();
    }
    let mean = signal.iter().map(|s| s.1).sum::<f64>() / signal.len() as f64;
    let mut peaks = Vec::new();
    for w in signal.windows(3) {
        let ((t0, y0), (t1, y1), (t2, y2)) = (w[0], w[1], w[2]);
        if !(y1 > y0 && y1 >= y2 && y1 > mean) {
            continue;
        }
        // vertex of the parabola through the three samples
        let d0 = (y1 - y0) / (t1 - t0);
        let d1 = (y2 - y1) / (t2 - t1);
        let curv = (d1 - d0) / (t2 - t0);
        let vertex = if curv < 0.0 { vertex_of(t0, t1, d0, curv) } else { t1 };
        peaks.push(vertex.clamp(t0, t2));
    }
    peaks
}

/// Vertex of `y0 + d0 (t - t0) + c (t - t0)(t - t1)`.
fn vertex_of(t0: f64, t1: f64, d0: f64, c: f64) -> f64 {
    0.5 * (t0 + t1) - d0 / (2.0 * c)
}

/// Observed cluster pattern over the tail of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterObservation {
    pub mean_frequency: f64,
    /// Circular means of `phi_j - phi_4`, in `[0, 2 pi)`.
    pub mean_phase_diffs: [f64; N - 1],
    pub amplitude_means: [f64; N],
    pub classification: IsotropyClass,
}

/// Classifies the last `tail_fraction` of a trajectory from the peaks of `r_j cos phi_j`.
pub fn classify_trajectory(traj: &Trajectory, tail_fraction: f64) -> Result<ClusterObservation> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction {tail_fraction} outside (0, 1)")));
    }
    let t0 = traj.times[0];
    let t_start = traj.t_end() - tail_fraction * (traj.t_end() - t0);
    let tail: Vec<usize> = (0..traj.times.len()).filter(|&i| traj.times[i] >= t_start).collect();
    let mut phases: Vec<Vec<(f64, f64)>> = Vec::with_capacity(N);
    for j in 0..N {
        let signal: Vec<(f64, f64)> = tail.iter().map(|&i| (traj.times[i], traj.states[i].r[j] * traj.states[i].phi[j].cos())).collect();
        let ph = extract_phase(&signal)?;
        let periods = ph.last().map_or(0.0, |p| p.1) / TAU;
        if periods < 5.0 {
            return Err(Error::InvalidArgument(format!("tail holds {periods:.1} periods of oscillator {}, need 5", j + 1)));
        }
        phases.push(ph);
    }
    // common time window of all four phase series
    let lo = phases.iter().map(|p| p[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = phases.iter().map(|p| p[p.len() - 1].0).fold(f64::INFINITY, f64::min);
    let at = |p: &[(f64, f64)], t: f64| -> f64 {
        let i = p.partition_point(|s| s.0 < t);
        if i < p.len() && p[i].0 == t {
            p[i].1
        } else {
            f64::NAN
        }
    };
    let grid: Vec<f64> = phases[N - 1].iter().map(|s| s.0).filter(|&t| t >= lo && t <= hi).collect();
    let mut sums = [(0.0, 0.0); N - 1];
    let mut count = 0usize;
    for &t in &grid {
        let ref_phase = at(&phases[N - 1], t);
        let diffs: Vec<f64> = (0..N - 1).map(|j| at(&phases[j], t) - ref_phase).collect();
        if diffs.iter().any(|d| !d.is_finite()) {
            continue;
        }
        for j in 0..N - 1 {
            sums[j].0 += diffs[j].sin();
            sums[j].1 += diffs[j].cos();
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("phase series share no samples".into()));
    }
    let mean_phase_diffs = std::array::from_fn(|j| wrap_angle(sums[j].0.atan2(sums[j].1)));
    let mean_frequency = phases.iter().map(|p| fit_slope(p)).sum::<f64>() / N as f64;
    let amplitude_means = std::array::from_fn(|j| tail.iter().map(|&i| traj.states[i].r[j]).sum::<f64>() / tail.len() as f64);
    let observed = RelativeEquilibrium { r: amplitude_means, psi: mean_phase_diffs, omega_collective: mean_frequency, tau: 0.0 };
    Ok(ClusterObservation {
        mean_frequency,
        mean_phase_diffs,
        amplitude_means,
        classification: classify_isotropy(&observed, SIMULATION_TOL),
    })
}
