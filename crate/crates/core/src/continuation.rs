//! Pseudo-arclength continuation of relative equilibria in the delay.
//!
//! Branches live in the extended space `z = (r_1..r_4, psi_1..psi_3, Omega, tau)`.
//! Relative phases are kept unwrapped while tracing so that consecutive
//! points are close in the Euclidean norm; stored points are wrapped.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::{self, residual_vec, RelativeEquilibrium, DIM};
use crate::error::{Error, Result};
use crate::model::{Parameters, N};
use crate::newton::{self, max_norm, NewtonOptions};
use crate::stability::{characteristic_roots_with, count_unstable, linearize_reduced, CharacteristicRoot, RootOptions};
use crate::symmetry::{act_on_equilibrium, act_on_tangent, classify_isotropy, GroupElement, IsotropyClass, IsotropyLabel, SOLVER_TOL};

/// Length of the extended vector `(r, psi, Omega, tau)`.
pub const EXT: usize = DIM + 1;
/// Number of characteristic roots kept per branch point.
pub const LEADING_ROOTS: usize = 10;

const CORRECTOR_TOL: f64 = 1e-11;
const CORRECTOR_MAX_ITER: usize = 8;
const FD_STEP: f64 = 1e-7;
const LOCATE_TAU_TOL: f64 = 1e-6;
const LOCATE_CHORD_TOL: f64 = 1e-5;
const LOCATE_MAX_ITER: usize = 60;
const MAX_SUBDIVISION: usize = 6;
/// Unit critical vectors closer than this to their image count as fixed.
const FIXED_VECTOR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

/// Adaptive step policy; `initial`, `min` and `max` bound the arclength step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub grow: f64,
    pub shrink: f64,
    /// Grow after a corrector needing at most this many iterations.
    pub easy_iterations: usize,
    /// Shrink after a corrector needing at least this many iterations.
    pub hard_iterations: usize,
    pub max_points: usize,
    /// `Forward` starts with increasing delay unless a tangent hint says otherwise.
    pub direction: Direction,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-2,
            min: 1e-4,
            max: 5e-2,
            grow: 1.3,
            shrink: 0.5,
            easy_iterations: 2,
            hard_iterations: 6,
            max_points: 10_000,
            direction: Direction::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub eq: RelativeEquilibrium,
    pub leading_roots: Vec<CharacteristicRoot>,
    pub n_unstable: usize,
    pub isotropy: IsotropyClass,
    pub arclength: f64,
}

impl BranchPoint {
    /// Real part of the rightmost root; `NaN` when no root lies in the search window.
    pub fn re_rightmost(&self) -> f64 {
        self.leading_roots.first().map_or(f64::NAN, |r| r.re())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BifurcationKind {
    Fold,
    Pitchfork,
    Hopf,
}

impl BifurcationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fold => "fold",
            Self::Pitchfork => "pitchfork",
            Self::Hopf => "hopf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalVector {
    /// Null vector of the steady-state Jacobian in `(r, psi, Omega)`.
    Real(Vec<f64>),
    /// Null vector of the reduced characteristic matrix at the critical root.
    Complex(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    pub kind: BifurcationKind,
    pub tau: f64,
    #[serde(rename = "Omega")]
    pub omega_collective: f64,
    /// Indices of the branch points enclosing the bifurcation.
    pub bracket: (usize, usize),
    pub equilibrium: RelativeEquilibrium,
    pub parent_isotropy: IsotropyLabel,
    pub critical_root: Complex64,
    pub critical_eigenvector: CriticalVector,
    /// Unit tangent of the traced branch at the bifurcation, in the extended space.
    pub branch_tangent: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    LeftRange,
    ClosedLoop,
    MaxPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub seed: String,
    pub params: Parameters,
    pub points: Vec<BranchPoint>,
    pub bifurcations: Vec<Bifurcation>,
    pub termination: Termination,
}

fn ext_of(eq: &RelativeEquilibrium) -> DVector<f64> {
    let mut z = DVector::zeros(EXT);
    z.rows_mut(0, DIM).copy_from(&eq.unknowns());
    z[DIM] = eq.tau;
    z
}

fn eq_of(z: &DVector<f64>) -> RelativeEquilibrium {
    RelativeEquilibrium::from_unknowns(&z.rows(0, DIM).into_owned(), z[DIM])
}

/// Shifts the phases of `z` by multiples of 2 pi so they lie within pi of `reference`.
fn unwrap_towards(mut z: DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    for j in N..DIM - 1 {
        z[j] -= TAU * ((z[j] - reference[j]) / TAU).round();
    }
    z
}

fn ext_residual(params: &Parameters, z: &DVector<f64>) -> Result<DVector<f64>> {
    residual_vec(params, &z.rows(0, DIM).into_owned(), z[DIM])
}

fn ext_jacobian(params: &Parameters, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let f = |x: &DVector<f64>| ext_residual(params, x);
    newton::fd_jacobian_central(&f, z, DIM, FD_STEP)
}

/// Unit vector spanning the kernel of the extended Jacobian, with positive overlap on `orient`.
///
/// Minimum-norm solution of `[J; orient^T] t = e_last`, so a degenerate
/// kernel (as in the uncoupled ring) yields the member closest to `orient`.
fn tangent(params: &Parameters, z: &DVector<f64>, orient: &DVector<f64>) -> Result<DVector<f64>> {
    let jac = ext_jacobian(params, z)?;
    let mut aug = DMatrix::zeros(EXT, EXT);
    aug.view_mut((0, 0), (DIM, EXT)).copy_from(&jac);
    aug.row_mut(DIM).copy_from(&orient.transpose());
    let mut rhs = DVector::zeros(EXT);
    rhs[DIM] = 1.0;
    let t = aug
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Continuation(format!("tangent solve failed: {e}")))?;
    let norm = t.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Continuation("degenerate branch tangent".into()));
    }
    Ok(t / norm)
}

/// Newton on the residual plus the hyperplane constraint `<z - z_pred, t> = 0`.
fn correct(params: &Parameters, z_pred: &DVector<f64>, t: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let mut z = z_pred.clone();
    for it in 0..=CORRECTOR_MAX_ITER {
        let f = ext_residual(params, &z)?;
        let res = max_norm(&f);
        if !res.is_finite() {
            break;
        }
        if res < CORRECTOR_TOL {
            return Ok((z, it));
        }
        if it == CORRECTOR_MAX_ITER {
            return Err(Error::NewtonDiverged { iterations: it, residual: res });
        }
        let mut aug = DMatrix::zeros(EXT, EXT);
        aug.view_mut((0, 0), (DIM, EXT)).copy_from(&ext_jacobian(params, &z)?);
        aug.row_mut(DIM).copy_from(&t.transpose());
        let mut g = DVector::zeros(EXT);
        g.rows_mut(0, DIM).copy_from(&f);
        g[DIM] = (&z - z_pred).dot(t);
        let dz = aug.lu().solve(&(-g)).ok_or(Error::SingularJacobian { rcond: 0.0 })?;
        z += dz;
    }
    Err(Error::NewtonDiverged { iterations: CORRECTOR_MAX_ITER, residual: f64::NAN })
}

/// Solution on the chord hyperplane halfway between two nearby branch points.
fn midpoint(params: &Parameters, za: &DVector<f64>, zb: &DVector<f64>) -> Result<DVector<f64>> {
    let chord = zb - za;
    let t = &chord / chord.norm();
    let pred = (za + zb) * 0.5;
    correct(params, &pred, &t).map(|(z, _)| z)
}

fn within_range(tau: f64, range: (f64, f64)) -> bool {
    tau >= range.0 && tau <= range.1
}

/// Distance in the extended space with phases compared modulo 2 pi.
fn ext_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (unwrap_towards(a.clone(), b) - b).norm()
}

struct Trace {
    points: Vec<DVector<f64>>,
    termination: Termination,
}

fn trace_one_way(
    params: &Parameters,
    start: &DVector<f64>,
    t0: DVector<f64>,
    range: (f64, f64),
    policy: &StepPolicy,
) -> std::result::Result<Trace, (Vec<DVector<f64>>, f64)> {
    let mut points = vec![start.clone()];
    let mut t = t0;
    let mut h = policy.initial.clamp(policy.min, policy.max);
    let mut travelled = 0.0;
    loop {
        if points.len() >= policy.max_points {
            return Ok(Trace { points, termination: Termination::MaxPoints });
        }
        let z = points.last().expect("nonempty").clone();
        let pred = &z + &t * h;
        let accepted = match correct(params, &pred, &t) {
            Ok((zn, iters)) => {
                let step = &zn - &z;
                let chord = step.norm();
                let ok = chord <= policy.max && step.dot(&t) > 0.0 && (&zn - &pred).norm() <= 0.5 * h;
                ok.then_some((zn, iters, chord))
            }
            Err(_) => None,
        };
        let Some((zn, iters, chord)) = accepted else {
            h *= policy.shrink;
            if h < policy.min {
                return Err((points, z[DIM]));
            }
            continue;
        };
        if !within_range(zn[DIM], range) {
            return Ok(Trace { points, termination: Termination::LeftRange });
        }
        t = (&zn - &z) / chord;
        travelled += chord;
        let closes = travelled > 3.0 * h && ext_distance(&zn, start) < h;
        points.push(zn);
        if closes {
            return Ok(Trace { points, termination: Termination::ClosedLoop });
        }
        if iters <= policy.easy_iterations {
            h = (h * policy.grow).min(policy.max);
        } else if iters >= policy.hard_iterations {
            h = (h * policy.shrink).max(policy.min);
        }
    }
}

fn leading_roots(params: &Parameters, eq: &RelativeEquilibrium) -> Result<Vec<CharacteristicRoot>> {
    let lin = linearize_reduced(params, eq)?;
    characteristic_roots_with(&lin, LEADING_ROOTS, &RootOptions::for_params(params))
}

fn assemble(params: &Parameters, zs: &[DVector<f64>]) -> Result<Vec<BranchPoint>> {
    let eqs: Vec<RelativeEquilibrium> = zs.iter().map(|z| eq_of(z).normalized()).collect();
    let roots: Vec<Result<Vec<CharacteristicRoot>>> = eqs.par_iter().map(|eq| leading_roots(params, eq)).collect();
    let mut arclength = 0.0;
    let mut out = Vec::with_capacity(zs.len());
    for (i, (eq, roots)) in eqs.into_iter().zip(roots).enumerate() {
        if i > 0 {
            arclength += (&zs[i] - &zs[i - 1]).norm();
        }
        let leading_roots = roots?;
        out.push(BranchPoint {
            n_unstable: count_unstable(&leading_roots),
            isotropy: classify_isotropy(&eq, SOLVER_TOL),
            leading_roots,
            eq,
            arclength,
        });
    }
    Ok(out)
}

/// Traces the branch through `start` within `tau_range` and computes root data at every point.
///
/// Bifurcations are left empty; see [`detect_bifurcations`] and [`trace_branch`].
pub fn continue_branch(
    params: &Parameters,
    start: &RelativeEquilibrium,
    tau_range: (f64, f64),
    policy: &StepPolicy,
) -> Result<Branch> {
    continue_branch_with_hint(params, start, tau_range, policy, None, format!("equilibrium at tau = {}", start.tau))
}

/// As [`continue_branch`], orienting the initial tangent along `hint` (an extended-space vector) when given.
pub fn continue_branch_with_hint(
    params: &Parameters,
    start: &RelativeEquilibrium,
    tau_range: (f64, f64),
    policy: &StepPolicy,
    hint: Option<&DVector<f64>>,
    seed: String,
) -> Result<Branch> {
    params.validate()?;
    if !(tau_range.0 < tau_range.1) {
        return Err(Error::InvalidArgument(format!("empty delay range {tau_range:?}")));
    }
    if !within_range(start.tau, tau_range) {
        return Err(Error::InvalidArgument(format!("seed delay {} outside {tau_range:?}", start.tau)));
    }
    if !(policy.min > 0.0 && policy.min <= policy.max) {
        return Err(Error::InvalidArgument("step bounds must satisfy 0 < min <= max".into()));
    }
    let seed_eq = equilibria::newton_solve(params, start)
        .map_err(|e| Error::Continuation(format!("seed does not converge: {e}")))?;
    let z0 = unwrap_towards(ext_of(&seed_eq), &ext_of(start));
    let orient = match hint {
        Some(v) => v.clone(),
        None => {
            let mut e = DVector::zeros(EXT);
            e[DIM] = if policy.direction == Direction::Backward { -1.0 } else { 1.0 };
            e
        }
    };
    let t0 = tangent(params, &z0, &orient)?;
    let underflow = |points: Vec<DVector<f64>>, tau: f64| -> Error {
        match assemble(params, &points) {
            Ok(pts) => Error::StepUnderflow {
                tau,
                partial: Box::new(Branch {
                    seed: seed.clone(),
                    params: params.clone(),
                    points: pts,
                    bifurcations: Vec::new(),
                    termination: Termination::MaxPoints,
                }),
            },
            Err(e) => e,
        }
    };
    let (zs, termination) = match policy.direction {
        Direction::Forward | Direction::Backward => {
            let tr = trace_one_way(params, &z0, t0, tau_range, policy).map_err(|(p, tau)| underflow(p, tau))?;
            (tr.points, tr.termination)
        }
        Direction::Both => {
            let fwd = trace_one_way(params, &z0, t0.clone(), tau_range, policy).map_err(|(p, tau)| underflow(p, tau))?;
            if fwd.termination == Termination::ClosedLoop {
                (fwd.points, fwd.termination)
            } else {
                let budget = StepPolicy { max_points: policy.max_points.saturating_sub(fwd.points.len()).max(1), ..*policy };
                let bwd = trace_one_way(params, &z0, -t0, tau_range, &budget).map_err(|(mut p, tau)| {
                    p.reverse();
                    p.extend(fwd.points.iter().skip(1).cloned());
                    underflow(p, tau)
                })?;
                let mut zs: Vec<DVector<f64>> = bwd.points.into_iter().rev().collect();
                zs.extend(fwd.points.into_iter().skip(1));
                let termination = if bwd.termination == Termination::MaxPoints { bwd.termination } else { fwd.termination };
                (zs, termination)
            }
        }
    };
    let points = assemble(params, &zs)?;
    Ok(Branch { seed, params: params.clone(), points, bifurcations: Vec::new(), termination })
}

/// Continuation followed by bifurcation detection.
pub fn trace_branch(
    params: &Parameters,
    start: &RelativeEquilibrium,
    tau_range: (f64, f64),
    policy: &StepPolicy,
) -> Result<Branch> {
    let mut branch = continue_branch(params, start, tau_range, policy)?;
    branch.bifurcations = detect_bifurcations(&branch)?;
    Ok(branch)
}

/// Data carried at each end of a segment scanned for crossings.
#[derive(Clone)]
struct Probe {
    z: DVector<f64>,
    roots: Vec<CharacteristicRoot>,
    /// Delay component of the branch tangent.
    dtau: f64,
}

impl Probe {
    fn new(params: &Parameters, z: DVector<f64>, roots: Vec<CharacteristicRoot>, orient: &DVector<f64>) -> Result<Self> {
        let dtau = tangent(params, &z, orient)?[DIM];
        Ok(Self { z, roots, dtau })
    }

    fn unstable_dim(&self) -> usize {
        count_unstable(&self.roots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Crossing {
    Real(f64, f64),
    Hopf(Complex64, Complex64),
}

/// Pairs roots at `a` and `b` that are mutual nearest neighbours of the same
/// type (real or complex) and reports sign changes of the real part.
///
/// The flag is false when the matched crossings do not explain the change
/// in unstable dimension, e.g. when a crossing root collides with another.
fn crossings(a: &[CharacteristicRoot], b: &[CharacteristicRoot], unstable_a: usize, unstable_b: usize) -> (Vec<Crossing>, bool) {
    let nearest = |set: &[CharacteristicRoot], s: Complex64| {
        set.iter().map(|r| r.value).filter(|x| (x.im == 0.0) == (s.im == 0.0)).min_by(|x, y| {
            (x - s).norm().partial_cmp(&(y - s).norm()).unwrap_or(std::cmp::Ordering::Equal)
        })
    };
    let mut out = Vec::new();
    let mut net: i64 = 0;
    for rb in b {
        let sb = rb.value;
        let real = sb.im == 0.0;
        let Some(sa) = nearest(a, sb) else { continue };
        // roots entering the window have no partner of their own
        if nearest(b, sa) != Some(sb) {
            continue;
        }
        if (sa.re > 0.0) == (sb.re > 0.0) {
            continue;
        }
        let sign = if sb.re > 0.0 { 1 } else { -1 };
        if real {
            out.push(Crossing::Real(sa.re, sb.re));
            net += sign;
        } else {
            out.push(Crossing::Hopf(sa, sb));
            net += 2 * sign;
        }
    }
    (out, net == unstable_b as i64 - unstable_a as i64)
}

fn probe_mid(params: &Parameters, a: &Probe, b: &Probe) -> Result<Probe> {
    let z = midpoint(params, &a.z, &b.z)?;
    let roots = leading_roots(params, &eq_of(&z))?;
    Probe::new(params, z, roots, &(&b.z - &a.z))
}

fn segment_located(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    (a[DIM] - b[DIM]).abs() < LOCATE_TAU_TOL && (a - b).norm() < LOCATE_CHORD_TOL
}

/// Follows one crossing root by Newton refinement while bisecting the segment.
fn locate_root(params: &Parameters, za: &DVector<f64>, zb: &DVector<f64>, sa: Complex64, sb: Complex64) -> Result<(DVector<f64>, Complex64)> {
    let (mut za, mut zb, mut sa, mut sb) = (za.clone(), zb.clone(), sa, sb);
    let real = sa.im == 0.0;
    for _ in 0..LOCATE_MAX_ITER {
        if segment_located(&za, &zb) {
            break;
        }
        let zm = midpoint(params, &za, &zb)?;
        let lin = linearize_reduced(params, &eq_of(&zm))?;
        let guess = (sa + sb) * 0.5;
        let mut sm = match lin.refine_root(guess) {
            Some(s) if (s - guess).norm() <= (sa - sb).norm() + 1e-3 => s,
            _ => {
                let roots = characteristic_roots_with(&lin, LEADING_ROOTS, &RootOptions::for_params(params))?;
                roots
                    .iter()
                    .map(|r| r.value)
                    .min_by(|x, y| (x - guess).norm().partial_cmp(&(y - guess).norm()).unwrap_or(std::cmp::Ordering::Equal))
                    .ok_or_else(|| Error::Continuation("lost the crossing root".into()))?
            }
        };
        if real {
            sm = Complex64::new(sm.re, 0.0);
        } else if sm.im < 0.0 {
            sm = sm.conj();
        }
        if (sm.re > 0.0) == (sa.re > 0.0) {
            za = zm;
            sa = sm;
        } else {
            zb = zm;
            sb = sm;
        }
    }
    Ok(if sa.re.abs() <= sb.re.abs() { (za, sa) } else { (zb, sb) })
}

/// Bisects a sign change of the delay component of the tangent.
fn locate_fold(params: &Parameters, a: &Probe, b: &Probe) -> Result<DVector<f64>> {
    let (mut za, mut zb) = (a.z.clone(), b.z.clone());
    let sign_a = a.dtau > 0.0;
    let (mut ta, mut tb) = (a.dtau, b.dtau);
    for _ in 0..LOCATE_MAX_ITER {
        if segment_located(&za, &zb) {
            break;
        }
        let zm = midpoint(params, &za, &zb)?;
        let tm = tangent(params, &zm, &(&zb - &za))?[DIM];
        if (tm > 0.0) == sign_a {
            za = zm;
            ta = tm;
        } else {
            zb = zm;
            tb = tm;
        }
    }
    Ok(if ta.abs() <= tb.abs() { za } else { zb })
}

/// Unit null vector of the steady-state Jacobian at fixed delay.
fn steady_null_vector(params: &Parameters, eq: &RelativeEquilibrium) -> Result<DVector<f64>> {
    let jac = equilibria::jacobian(params, eq)?;
    let mut svd = jac.svd(false, true);
    svd.sort_by_singular_values();
    let vt = svd.v_t.ok_or_else(|| Error::Continuation("SVD without right vectors".into()))?;
    let mut v: DVector<f64> = vt.row(vt.nrows() - 1).transpose();
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v = -v;
    }
    Ok(v)
}

/// True when every element of `label` leaves the unit vector `v` unchanged.
pub fn is_fixed_by(label: IsotropyLabel, v: &DVector<f64>) -> bool {
    label.elements().into_iter().all(|g| (act_on_tangent(g, v) - v).norm() < FIXED_VECTOR_TOL * (1.0 + v.norm()))
}

struct Event {
    kind: BifurcationKind,
    z: DVector<f64>,
    root: Complex64,
    vector: CriticalVector,
    tangent: DVector<f64>,
}

fn real_event(params: &Parameters, z: DVector<f64>, root: Complex64, chord: &DVector<f64>, fold_tangent: bool) -> Result<Event> {
    let eq = eq_of(&z);
    let v = steady_null_vector(params, &eq)?;
    let parent = classify_isotropy(&eq.normalized(), SOLVER_TOL).label;
    let kind = if fold_tangent || is_fixed_by(parent, &v) { BifurcationKind::Fold } else { BifurcationKind::Pitchfork };
    Ok(Event { kind, z, root, vector: CriticalVector::Real(v.iter().copied().collect()), tangent: chord / chord.norm() })
}

fn scan_segment(params: &Parameters, a: &Probe, b: &Probe, depth: usize, out: &mut Vec<Event>) -> Result<()> {
    let fold = (a.dtau > 0.0) != (b.dtau > 0.0);
    let (found, consistent) = crossings(&a.roots, &b.roots, a.unstable_dim(), b.unstable_dim());
    if consistent && !fold && found.is_empty() {
        return Ok(());
    }
    // a turning point is expected to carry a real crossing
    let unresolved = !consistent || found.len() > 1 || (fold && found.is_empty());
    if unresolved
        && depth < MAX_SUBDIVISION
        && !segment_located(&a.z, &b.z)
    {
        let mid = probe_mid(params, a, b)?;
        scan_segment(params, a, &mid, depth + 1, out)?;
        return scan_segment(params, &mid, b, depth + 1, out);
    }
    let chord = &b.z - &a.z;
    let mut real_seen = false;
    for c in found {
        match c {
            Crossing::Real(ra, rb) => {
                let (z, s) = locate_root(params, &a.z, &b.z, Complex64::new(ra, 0.0), Complex64::new(rb, 0.0))?;
                out.push(real_event(params, z, s, &chord, fold)?);
                real_seen = true;
            }
            Crossing::Hopf(sa, sb) => {
                let (z, s) = locate_root(params, &a.z, &b.z, sa, sb)?;
                let lin = linearize_reduced(params, &eq_of(&z))?;
                let v = lin.null_vector(s);
                out.push(Event {
                    kind: BifurcationKind::Hopf,
                    z,
                    root: s,
                    vector: CriticalVector::Complex(v.iter().copied().collect()),
                    tangent: &chord / chord.norm(),
                });
            }
        }
    }
    if fold && !real_seen {
        let z = locate_fold(params, a, b)?;
        out.push(real_event(params, z, Complex64::new(0.0, 0.0), &chord, true)?);
    }
    Ok(())
}

/// Locates folds, pitchforks and Hopf points between consecutive branch points.
///
/// Crossings are found by matching roots between neighbouring points and
/// refined by bisection along the branch to `|dtau| < 1e-6`. A real
/// crossing is a fold when it coincides with a turning point in the delay
/// or its critical vector is fixed by the isotropy of the branch, and a
/// pitchfork otherwise.
pub fn detect_bifurcations(branch: &Branch) -> Result<Vec<Bifurcation>> {
    let params = &branch.params;
    let n = branch.points.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two branch points".into()));
    }
    let mut zs: Vec<DVector<f64>> = Vec::with_capacity(n);
    for p in &branch.points {
        let z = ext_of(&p.eq);
        zs.push(match zs.last() {
            Some(prev) => unwrap_towards(z, prev),
            None => z,
        });
    }
    let mut probes = Vec::with_capacity(n);
    for i in 0..n {
        let orient = &zs[(i + 1).min(n - 1)] - &zs[i.saturating_sub(1)];
        probes.push(Probe::new(params, zs[i].clone(), branch.points[i].leading_roots.clone(), &orient)?);
    }
    let mut out = Vec::new();
    for i in 0..n - 1 {
        let mut events = Vec::new();
        scan_segment(params, &probes[i], &probes[i + 1], 0, &mut events)?;
        for ev in events {
            let eq = eq_of(&ev.z).normalized();
            out.push(Bifurcation {
                kind: ev.kind,
                tau: eq.tau,
                omega_collective: eq.omega_collective,
                bracket: (i, i + 1),
                equilibrium: eq,
                parent_isotropy: classify_isotropy(&eq, SOLVER_TOL).label,
                critical_root: ev.root,
                critical_eigenvector: ev.vector,
                branch_tangent: ev.tangent.iter().copied().collect(),
            });
        }
    }
    Ok(out)
}

/// Default relative size of the branch-switching offset.
pub const SWITCH_EPSILON: f64 = 1e-3;

/// Converges onto the symmetry-broken branch born at a pitchfork.
///
/// Solves the steady-state equations together with
/// `<z - z*, w> = direction * epsilon * |z*|` with the delay free, where
/// `w` is the critical vector made orthogonal to the parent branch tangent.
pub fn switch_branch(params: &Parameters, bif: &Bifurcation, direction: i32, epsilon: f64) -> Result<RelativeEquilibrium> {
    if bif.kind != BifurcationKind::Pitchfork {
        return Err(Error::InvalidArgument(format!("branch switching needs a pitchfork, got {}", bif.kind.as_str())));
    }
    if direction != 1 && direction != -1 {
        return Err(Error::InvalidArgument(format!("direction must be +1 or -1, got {direction}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let CriticalVector::Real(v) = &bif.critical_eigenvector else {
        return Err(Error::InvalidArgument("pitchfork record carries no real critical vector".into()));
    };
    let w = switching_direction(v, &bif.branch_tangent)?;
    let z_star = ext_of(&bif.equilibrium);
    let offset = direction as f64 * epsilon * z_star.rows(0, DIM).norm().max(1.0);
    let f = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let mut g = DVector::zeros(EXT);
        g.rows_mut(0, DIM).copy_from(&ext_residual(params, z)?);
        g[DIM] = (z - &z_star).dot(&w) - offset;
        Ok(g)
    };
    let guess = &z_star + &w * offset;
    let opts = NewtonOptions { tol: CORRECTOR_TOL, rcond_min: 1e-16, ..NewtonOptions::default() };
    let out = newton::solve(f, guess, &opts)?;
    let child = eq_of(&out.x).normalized();
    let parent_order = bif.parent_isotropy.order();
    let child_order = classify_isotropy(&child, SOLVER_TOL).order;
    if child_order >= parent_order || parent_order % child_order != 0 {
        return Err(Error::NoBranchFound);
    }
    Ok(child)
}

/// Extended-space switching direction: the critical vector with the parent tangent projected out.
fn switching_direction(v: &[f64], branch_tangent: &[f64]) -> Result<DVector<f64>> {
    if v.len() != DIM || branch_tangent.len() != EXT {
        return Err(Error::InvalidArgument("critical vector or tangent has the wrong length".into()));
    }
    let mut w = DVector::zeros(EXT);
    w.rows_mut(0, DIM).copy_from(&DVector::from_column_slice(v));
    let t = DVector::from_column_slice(branch_tangent);
    let t = &t / t.norm();
    w -= &t * w.dot(&t);
    let norm = w.norm();
    if !(norm > 1e-8) {
        return Err(Error::InvalidArgument("critical vector is parallel to the branch".into()));
    }
    Ok(w / norm)
}

/// A parent symmetry that the child does not share.
pub fn broken_element(parent: IsotropyLabel, child: &RelativeEquilibrium) -> Option<GroupElement> {
    parent
        .elements()
        .into_iter()
        .filter(|g| g.rotation != 0)
        .find(|g| act_on_equilibrium(*g, child).distance(child) > SOLVER_TOL)
}

/// Both children of a pitchfork and the distance between `g * child_plus` and `child_minus`,
/// with the minus child re-solved at the plus child's delay.
pub fn pitchfork_children(params: &Parameters, bif: &Bifurcation, epsilon: f64) -> Result<(RelativeEquilibrium, RelativeEquilibrium, f64)> {
    let plus = switch_branch(params, bif, 1, epsilon)?;
    let minus = switch_branch(params, bif, -1, epsilon)?;
    let minus = equilibria::newton_solve(params, &RelativeEquilibrium { tau: plus.tau, ..minus })?;
    let g = broken_element(bif.parent_isotropy, &plus).ok_or(Error::NoBranchFound)?;
    let image = act_on_equilibrium(g, &plus);
    Ok((plus, minus, image.distance(&minus)))
}

/// Extended-space tangent hint pointing from the pitchfork towards `child`.
pub fn hint_towards(bif: &Bifurcation, child: &RelativeEquilibrium) -> DVector<f64> {
    unwrap_towards(ext_of(child), &ext_of(&bif.equilibrium)) - ext_of(&bif.equilibrium)
}

/// Traces the branch through a pitchfork child, starting away from the parent.
pub fn continue_from_pitchfork(
    params: &Parameters,
    bif: &Bifurcation,
    direction: i32,
    epsilon: f64,
    tau_range: (f64, f64),
    policy: &StepPolicy,
) -> Result<Branch> {
    let child = switch_branch(params, bif, direction, epsilon)?;
    let hint = hint_towards(bif, &child);
    let seed = format!("{} at tau = {:.6}, direction {direction:+}", bif.kind.as_str(), bif.tau);
    let policy = StepPolicy { direction: Direction::Forward, ..*policy };
    let mut branch = continue_branch_with_hint(params, &child, tau_range, &policy, Some(&hint), seed)?;
    branch.bifurcations = detect_bifurcations(&branch)?;
    Ok(branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{primary_at, primary_residual};

    fn relaxation_branch() -> Branch {
        let p = Parameters::relaxation();
        let seed = primary_at(&p, 0, 0.4).unwrap();
        let policy = StepPolicy { direction: Direction::Forward, ..StepPolicy::default() };
        continue_branch(&p, &seed, (0.3, 0.8), &policy).unwrap()
    }

    #[test]
    fn uncoupled_branch_is_flat() {
        let p = Parameters::relaxation().with_coupling(0.0);
        let seed = primary_at(&p, 0, 0.5).unwrap();
        let branch = trace_branch(&p, &seed, (0.3, 1.0), &StepPolicy::default()).unwrap();
        assert_eq!(branch.termination, Termination::LeftRange);
        assert!(branch.points.len() > 10);
        for pt in &branch.points {
            for r in pt.eq.r {
                assert!((r - 1.7).abs() < 1e-10);
            }
            assert!((pt.eq.omega_collective - 2.43).abs() < 1e-12);
        }
        assert!(branch.bifurcations.is_empty());
    }

    #[test]
    fn primary_branch_points_satisfy_oracle() {
        let p = Parameters::relaxation();
        let branch = relaxation_branch();
        assert!(branch.points.len() > 5);
        for pt in &branch.points {
            let r0 = pt.eq.r.iter().sum::<f64>() / 4.0;
            let res = primary_residual(&p, 0, pt.eq.tau, r0, pt.eq.omega_collective);
            assert!(res[0].abs().max(res[1].abs()) < 1e-9, "{res:?}");
            assert_eq!(pt.isotropy.label, IsotropyLabel::H40);
            assert_eq!(pt.n_unstable, count_unstable(&pt.leading_roots));
        }
    }

    #[test]
    fn consecutive_points_respect_step_cap() {
        let branch = relaxation_branch();
        let zs: Vec<_> = branch.points.iter().map(|p| ext_of(&p.eq)).collect();
        for w in zs.windows(2) {
            assert!(ext_distance(&w[1], &w[0]) <= StepPolicy::default().max + 1e-12);
        }
    }

    #[test]
    fn seed_outside_range_rejected() {
        let p = Parameters::relaxation();
        let seed = primary_at(&p, 0, 0.4).unwrap();
        assert!(continue_branch(&p, &seed, (0.5, 1.0), &StepPolicy::default()).is_err());
    }

    #[test]
    fn crossing_matching() {
        let root = |re: f64, im: f64| CharacteristicRoot { value: Complex64::new(re, im), residual: 0.0, refined: true };
        let a = [root(-0.01, 0.0), root(-0.02, 1.0), root(-1.0, 0.0)];
        let b = [root(0.01, 0.0), root(0.02, 1.0), root(-1.0, 0.0)];
        let (c, ok) = crossings(&a, &b, 0, 3);
        assert!(ok);
        assert_eq!(c.len(), 2);
        // a real root and a pair crossing together, closer across types than within
        let a = [root(0.0115, 0.0), root(0.0055, 0.0058)];
        let b = [root(-0.0068, 0.0065), root(-0.0131, 0.0)];
        let (c, ok) = crossings(&a, &b, 3, 0);
        assert!(ok);
        assert!(c.iter().any(|x| matches!(x, Crossing::Real(..))));
        assert!(c.iter().any(|x| matches!(x, Crossing::Hopf(..))));
        // a real pair merging into a complex pair is not a crossing
        let a = [root(0.1, 0.0), root(0.09, 0.0)];
        let b = [root(0.095, 0.01)];
        let (c, ok) = crossings(&a, &b, 2, 2);
        assert!(ok && c.is_empty());
    }

    #[test]
    fn fixed_vector_test() {
        let mut v = DVector::zeros(DIM);
        for j in 0..N {
            v[j] = 0.5;
        }
        assert!(is_fixed_by(IsotropyLabel::H40, &v));
        let mut w = DVector::zeros(DIM);
        for j in 0..N {
            w[j] = if j % 2 == 0 { 0.5 } else { -0.5 };
        }
        assert!(!is_fixed_by(IsotropyLabel::H40, &w));
        assert!(is_fixed_by(IsotropyLabel::H20, &w));
    }
}
