//! Linear stability of relative equilibria.
//!
//! Linearizing a delay system about a steady state gives
//! `x'(t) = A0 x(t) + A1 x(t - tau)` with characteristic function
//! `det(s I - A0 - A1 exp(-s tau))`. Candidate roots come from a Chebyshev
//! collocation of the solution operator's generator on `[-tau, 0]`; each
//! candidate is then polished by Newton's method on the characteristic
//! function itself, using `d/ds log det D(s) = tr(D(s)^-1 D'(s))`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibria::RelativeEquilibrium;
use crate::error::{Error, Result};
use crate::model::{rhs_full, rhs_reduced, FullState, Parameters, ReducedState, N};

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedDde {
    pub a_now: DMatrix<f64>,
    pub a_delayed: DMatrix<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicRoot {
    pub value: Complex64,
    /// `|det D(s)| / (1 + |det D(0)|)` at the returned value.
    pub residual: f64,
    /// False when Newton refinement failed and `value` is the raw collocation estimate.
    pub refined: bool,
}

impl CharacteristicRoot {
    pub fn re(&self) -> f64 {
        self.value.re
    }

    pub fn is_real(&self) -> bool {
        self.value.im == 0.0
    }

    /// Number of roots this entry stands for (a complex entry also stands for its conjugate).
    pub fn multiplicity(&self) -> usize {
        if self.is_real() {
            1
        } else {
            2
        }
    }
}

/// Number of roots with positive real part, conjugates counted separately.
pub fn count_unstable(roots: &[CharacteristicRoot]) -> usize {
    roots.iter().filter(|r| r.re() > 0.0).map(|r| r.multiplicity()).sum()
}

fn reduced_state_of(eq: &RelativeEquilibrium) -> ReducedState {
    ReducedState { r: eq.r, psi: eq.psi }
}

/// Linearization of the reduced seven-dimensional model at `eq`.
///
/// Central differences of the reduced vector field; the frequency of
/// oscillator 4 is re-solved at every perturbed evaluation, which carries
/// its implicit dependence into both matrices.
pub fn linearize_reduced(params: &Parameters, eq: &RelativeEquilibrium) -> Result<LinearizedDde> {
    linearize_reduced_with_step(params, eq, FD_STEP)
}

pub fn linearize_reduced_with_step(params: &Parameters, eq: &RelativeEquilibrium, h: f64) -> Result<LinearizedDde> {
    let p = params.with_delay(eq.tau);
    let x0 = reduced_state_of(eq).to_array();
    let dim = x0.len();
    let seed = eq.omega_collective;
    let eval = |now: &[f64; 7], del: &[f64; 7]| -> Result<[f64; 7]> {
        rhs_reduced(&p, &ReducedState::from_array(now), &ReducedState::from_array(del), seed).map(|(f, _)| f)
    };
    let mut a_now = DMatrix::zeros(dim, dim);
    let mut a_delayed = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut plus = x0;
        let mut minus = x0;
        plus[i] += h;
        minus[i] -= h;
        let fp = eval(&plus, &x0)?;
        let fm = eval(&minus, &x0)?;
        let dp = eval(&x0, &plus)?;
        let dm = eval(&x0, &minus)?;
        for k in 0..dim {
            a_now[(k, i)] = (fp[k] - fm[k]) / (2.0 * h);
            a_delayed[(k, i)] = (dp[k] - dm[k]) / (2.0 * h);
        }
    }
    Ok(LinearizedDde { a_now, a_delayed, tau: eq.tau })
}

/// Linearization of the full eight-dimensional model in the frame rotating at `Omega`.
///
/// Coordinates are `(r_1..r_4, theta_1..theta_4)` with `phi_j = Omega t + theta_j`.
/// The global phase direction gives a characteristic root at zero.
pub fn linearize_full_rotating(params: &Parameters, eq: &RelativeEquilibrium) -> Result<LinearizedDde> {
    let p = params.with_delay(eq.tau);
    let omega = eq.omega_collective;
    let shift = omega * eq.tau;
    let mut x0 = [0.0; 2 * N];
    x0[..N].copy_from_slice(&eq.r);
    for j in 0..N {
        x0[N + j] = eq.rel_phase(j);
    }
    let eval = |now: &[f64; 8], del: &[f64; 8]| -> Result<[f64; 8]> {
        let mut d = FullState::from_array(del);
        for ph in &mut d.phi {
            *ph -= shift;
        }
        let mut f = rhs_full(&p, &FullState::from_array(now), &d)?;
        for v in &mut f[N..] {
            *v -= omega;
        }
        Ok(f)
    };
    let dim = 2 * N;
    let h = FD_STEP;
    let mut a_now = DMatrix::zeros(dim, dim);
    let mut a_delayed = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut plus = x0;
        let mut minus = x0;
        plus[i] += h;
        minus[i] -= h;
        let fp = eval(&plus, &x0)?;
        let fm = eval(&minus, &x0)?;
        let dp = eval(&x0, &plus)?;
        let dm = eval(&x0, &minus)?;
        for k in 0..dim {
            a_now[(k, i)] = (fp[k] - fm[k]) / (2.0 * h);
            a_delayed[(k, i)] = (dp[k] - dm[k]) / (2.0 * h);
        }
    }
    Ok(LinearizedDde { a_now, a_delayed, tau: eq.tau })
}

impl LinearizedDde {
    pub fn dim(&self) -> usize {
        self.a_now.nrows()
    }

    fn has_delay(&self) -> bool {
        self.tau > 0.0 && self.a_delayed.iter().any(|v| *v != 0.0)
    }

    /// Characteristic matrix `s I - A0 - A1 exp(-s tau)`.
    pub fn characteristic_matrix(&self, s: Complex64) -> DMatrix<Complex64> {
        let n = self.dim();
        let e = (-s * self.tau).exp();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - Complex64::new(self.a_now[(i, j)], 0.0) - e * self.a_delayed[(i, j)]
        })
    }

    pub fn characteristic_det(&self, s: Complex64) -> Complex64 {
        self.characteristic_matrix(s).determinant()
    }

    /// Scaled determinant magnitude used as the root residual.
    pub fn root_residual(&self, s: Complex64) -> f64 {
        let scale = 1.0 + self.characteristic_det(Complex64::new(0.0, 0.0)).norm();
        self.characteristic_det(s).norm() / scale
    }

    /// Newton's method on `det D(s)` from `s0`.
    pub fn refine_root(&self, s0: Complex64) -> Option<Complex64> {
        let n = self.dim();
        let mut s = s0;
        for _ in 0..60 {
            let m = self.characteristic_matrix(s);
            let e = (-s * self.tau).exp();
            let dm = DMatrix::from_fn(n, n, |i, j| {
                let diag = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                diag + e * (self.tau * self.a_delayed[(i, j)])
            });
            let lu = m.lu();
            let step = match lu.solve(&dm) {
                Some(x) => {
                    let tr = x.trace();
                    if tr.norm() == 0.0 || !tr.re.is_finite() || !tr.im.is_finite() {
                        return None;
                    }
                    Complex64::new(1.0, 0.0) / tr
                }
                // exactly singular: already on a root
                None => return Some(s),
            };
            let step = if step.norm() > 1.0 { step / step.norm() } else { step };
            s -= step;
            if !(s.re.is_finite() && s.im.is_finite()) {
                return None;
            }
            if step.norm() < 1e-14 * (1.0 + s.norm()) {
                return Some(s);
            }
        }
        None
    }

    /// Smallest-singular-value vector of the characteristic matrix at `s`.
    pub fn null_vector(&self, s: Complex64) -> DVector<Complex64> {
        let m = self.characteristic_matrix(s);
        let mut svd = m.svd(false, true);
        svd.sort_by_singular_values();
        let vt = svd.v_t.expect("requested V");
        let last = vt.nrows() - 1;
        let v: DVector<Complex64> = vt.row(last).transpose().map(|c| c.conj());
        // fix the complex phase on the largest component
        let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, c)| if c.norm() > acc.1 { (i, c.norm()) } else { acc });
        let ph = v[imax] / v[imax].norm();
        v / ph
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Roots with real part at or below this are ignored.
    pub re_floor: f64,
    pub initial_nodes: usize,
    pub max_nodes: usize,
    /// Leading roots must move less than this between successive node counts.
    pub agreement: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { re_floor: f64::NEG_INFINITY, initial_nodes: 20, max_nodes: 160, agreement: 1e-6 }
    }
}

impl RootOptions {
    /// Window used for stability decisions: `Re s > -2 |lambda|`.
    pub fn for_params(params: &Parameters) -> Self {
        Self { re_floor: -2.0 * params.lambda.abs(), ..Self::default() }
    }
}

/// Chebyshev differentiation matrix on `M + 1` extrema nodes `x_k = cos(k pi / M)`.
fn chebyshev_diff(m: usize) -> (Vec<f64>, DMatrix<f64>) {
    let x: Vec<f64> = (0..=m).map(|k| (k as f64 * PI / m as f64).cos()).collect();
    let c = |k: usize| if k == 0 || k == m { 2.0 } else { 1.0 };
    let mut d = DMatrix::zeros(m + 1, m + 1);
    for i in 0..=m {
        for j in 0..=m {
            if i != j {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                d[(i, j)] = c(i) / c(j) * sign / (x[i] - x[j]);
            }
        }
    }
    for i in 0..=m {
        let s: f64 = (0..=m).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    (x, d)
}

/// Pseudospectral approximation of the generator of the delay system with `m + 1` nodes.
fn collocation_matrix(lin: &LinearizedDde, m: usize) -> DMatrix<f64> {
    let n = lin.dim();
    let (_, d) = chebyshev_diff(m);
    let scale = 2.0 / lin.tau;
    let size = (m + 1) * n;
    let mut big = DMatrix::zeros(size, size);
    // node 0 is theta = 0, node m is theta = -tau
    big.view_mut((0, 0), (n, n)).copy_from(&lin.a_now);
    let mut corner = big.view_mut((0, m * n), (n, n));
    corner += &lin.a_delayed;
    for k in 1..=m {
        for l in 0..=m {
            let w = scale * d[(k, l)];
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                big[(k * n + i, l * n + i)] = w;
            }
        }
    }
    big
}

fn eigenvalues(m: DMatrix<f64>) -> Result<Vec<Complex64>> {
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

fn sort_desc(roots: &mut [CharacteristicRoot]) {
    roots.sort_by(|a, b| {
        b.value
            .re
            .partial_cmp(&a.value.re)
            .unwrap_or(Ordering::Equal)
            .then(a.value.im.partial_cmp(&b.value.im).unwrap_or(Ordering::Equal))
    });
}

/// Keep upper half-plane representatives and snap near-real roots onto the axis.
fn canonical(s: Complex64) -> Option<Complex64> {
    let tol = 1e-9 * (1.0 + s.norm());
    if s.im.abs() <= tol {
        Some(Complex64::new(s.re, 0.0))
    } else if s.im > 0.0 {
        Some(s)
    } else {
        None
    }
}

fn push_unique(out: &mut Vec<CharacteristicRoot>, root: CharacteristicRoot) {
    let tol = 1e-7 * (1.0 + root.value.norm());
    if out.iter().all(|r| (r.value - root.value).norm() > tol) {
        out.push(root);
    }
}

fn roots_from_candidates(lin: &LinearizedDde, mut cand: Vec<Complex64>, count: usize, opts: &RootOptions) -> Vec<CharacteristicRoot> {
    cand.retain(|s| s.re.is_finite() && s.im.is_finite() && s.im >= -1e-9 * (1.0 + s.norm()));
    cand.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal));
    let budget = 3 * count + 8;
    let mut out = Vec::new();
    for s0 in cand.into_iter().filter(|s| s.re > opts.re_floor - 1.0).take(budget) {
        let root = match lin.refine_root(s0).and_then(canonical) {
            Some(s) => CharacteristicRoot { value: s, residual: lin.root_residual(s), refined: true },
            None => match canonical(s0) {
                Some(s) => CharacteristicRoot { value: s, residual: lin.root_residual(s), refined: false },
                None => continue,
            },
        };
        if root.value.re > opts.re_floor {
            push_unique(&mut out, root);
        }
    }
    sort_desc(&mut out);
    out.truncate(count);
    out
}

fn sets_agree(a: &[CharacteristicRoot], b: &[CharacteristicRoot], tol: f64) -> bool {
    a.len() == b.len()
        && b.iter().all(|rb| a.iter().any(|ra| (ra.value - rb.value).norm() < tol * (1.0 + rb.value.norm())))
}

/// Rightmost `count` characteristic roots, sorted by decreasing real part.
///
/// Conjugate pairs are represented once, by the member with positive imaginary part.
pub fn characteristic_roots(lin: &LinearizedDde, count: usize) -> Result<Vec<CharacteristicRoot>> {
    characteristic_roots_with(lin, count, &RootOptions::default())
}

pub fn characteristic_roots_with(lin: &LinearizedDde, count: usize, opts: &RootOptions) -> Result<Vec<CharacteristicRoot>> {
    if count == 0 {
        return Err(Error::InvalidArgument("root count must be at least 1".into()));
    }
    if !lin.has_delay() {
        let sum = &lin.a_now + &lin.a_delayed;
        let ev = eigenvalues(sum)?;
        let mut out = Vec::new();
        for s in ev.into_iter().filter_map(canonical) {
            if s.re > opts.re_floor {
                out.push(CharacteristicRoot { value: s, residual: lin.root_residual(s), refined: true });
            }
        }
        sort_desc(&mut out);
        out.truncate(count);
        return Ok(out);
    }
    let mut m = opts.initial_nodes.max(4);
    let mut previous = roots_from_candidates(lin, eigenvalues(collocation_matrix(lin, m))?, count, opts);
    while m < opts.max_nodes {
        m *= 2;
        let current = roots_from_candidates(lin, eigenvalues(collocation_matrix(lin, m))?, count, opts);
        if sets_agree(&previous, &current, opts.agreement) {
            return Ok(current);
        }
        previous = current;
    }
    Ok(previous)
}

/// Rightmost root, if any lies inside the window.
pub fn rightmost(roots: &[CharacteristicRoot]) -> Option<&CharacteristicRoot> {
    roots.first()
}
