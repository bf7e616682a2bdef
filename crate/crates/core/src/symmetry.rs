//! Phase-space symmetry of the ring and the isotropy of cluster states.
//!
//! The model is equivariant under `H = U(1) x Z4`: a common phase shift
//! `phi_s` of all oscillators combined with `j` cyclic relabellings
//! `i -> i - 1`. A group element `(phi_s, j)` sends `(r, phi)` to
//! `(G^j r, G^j phi + phi_s)` where `(G x)_i = x_{i+1}`.
//!
//! Isotropy subgroups of cluster states:
//!
//! | label | elements                      | pattern                |
//! |-------|-------------------------------|------------------------|
//! | H4m   | `(-m j pi/2, j)`, j = 0..3    | primary state m        |
//! | H20   | `(0,0), (0,2)`                | compressed 2-cluster   |
//! | H21   | `(0,0), (pi,2)`               | open 2-cluster family  |
//! | H10   | `(0,0)`                       | asymmetric             |

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::equilibria::{angle_diff, wrap_angle, RelativeEquilibrium, DIM};
use crate::error::{Error, Result};
use crate::model::{FullState, N};

/// Default classification tolerance for solver output.
pub const SOLVER_TOL: f64 = 1e-6;
/// Default classification tolerance for phases measured from simulations.
pub const SIMULATION_TOL: f64 = 5e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub phase_shift: f64,
    pub rotation: u8,
}

impl GroupElement {
    pub const IDENTITY: Self = Self { phase_shift: 0.0, rotation: 0 };

    pub fn new(phase_shift: f64, rotation: i64) -> Self {
        Self { phase_shift: wrap_angle(phase_shift), rotation: rotation.rem_euclid(N as i64) as u8 }
    }

    pub fn compose(self, other: Self) -> Self {
        compose(self, other)
    }

    pub fn inverse(self) -> Self {
        Self::new(-self.phase_shift, -(self.rotation as i64))
    }

    /// Equality with the phase shift compared modulo 2 pi.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rotation == other.rotation && angle_diff(self.phase_shift, other.phase_shift).abs() <= tol
    }
}

/// Group law: phase shifts add modulo 2 pi, rotations add modulo 4.
pub fn compose(g1: GroupElement, g2: GroupElement) -> GroupElement {
    GroupElement {
        phase_shift: wrap_angle(g1.phase_shift + g2.phase_shift),
        rotation: ((g1.rotation + g2.rotation) as usize % N) as u8,
    }
}

/// Action on a full state. Phases are not wrapped.
pub fn act(g: GroupElement, state: &FullState) -> FullState {
    let j = g.rotation as usize;
    FullState {
        r: std::array::from_fn(|i| state.r[(i + j) % N]),
        phi: std::array::from_fn(|i| state.phi[(i + j) % N] + g.phase_shift),
    }
}

/// Action on a relative equilibrium, re-expressed relative to oscillator 4.
///
/// The phase shift drops out; only the rotation matters in these coordinates.
pub fn act_on_equilibrium(g: GroupElement, eq: &RelativeEquilibrium) -> RelativeEquilibrium {
    let j = g.rotation as usize;
    let reference = eq.rel_phase((N - 1 + j) % N);
    RelativeEquilibrium {
        r: std::array::from_fn(|i| eq.r[(i + j) % N]),
        psi: std::array::from_fn(|i| wrap_angle(eq.rel_phase((i + j) % N) - reference)),
        omega_collective: eq.omega_collective,
        tau: eq.tau,
    }
}

/// Linearized action on a perturbation `(dr_1..dr_4, dpsi_1..dpsi_3, dOmega)` of the unknowns.
pub fn act_on_tangent(g: GroupElement, v: &DVector<f64>) -> DVector<f64> {
    let j = g.rotation as usize;
    let dpsi = |i: usize| if i == N - 1 { 0.0 } else { v[N + i] };
    let reference = dpsi((N - 1 + j) % N);
    let mut out = DVector::zeros(DIM);
    for i in 0..N {
        out[i] = v[(i + j) % N];
    }
    for i in 0..N - 1 {
        out[N + i] = dpsi((i + j) % N) - reference;
    }
    out[DIM - 1] = v[DIM - 1];
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IsotropyLabel {
    H40,
    H41,
    H42,
    H43,
    H20,
    H21,
    H10,
}

impl IsotropyLabel {
    pub fn order(self) -> usize {
        match self {
            Self::H40 | Self::H41 | Self::H42 | Self::H43 => 4,
            Self::H20 | Self::H21 => 2,
            Self::H10 => 1,
        }
    }

    pub fn pattern_name(self) -> &'static str {
        match self {
            Self::H40 => "in-phase",
            Self::H41 => "splay",
            Self::H42 => "2-cluster",
            Self::H43 => "reverse-splay",
            Self::H20 => "compressed-2-cluster",
            Self::H21 => "open-2-cluster-family",
            Self::H10 => "asymmetric",
        }
    }

    pub fn primary(m: usize) -> Self {
        [Self::H40, Self::H41, Self::H42, Self::H43][m % N]
    }

    /// Index m of a primary label.
    pub fn primary_index(self) -> Option<usize> {
        match self {
            Self::H40 => Some(0),
            Self::H41 => Some(1),
            Self::H42 => Some(2),
            Self::H43 => Some(3),
            _ => None,
        }
    }

    /// The subgroup's elements.
    pub fn elements(self) -> Vec<GroupElement> {
        match self.primary_index() {
            Some(m) => (0..N as i64)
                .map(|j| GroupElement::new(-(m as f64) * j as f64 * FRAC_PI_2, j))
                .collect(),
            None => match self {
                Self::H20 => vec![GroupElement::IDENTITY, GroupElement::new(0.0, 2)],
                Self::H21 => vec![GroupElement::IDENTITY, GroupElement::new(PI, 2)],
                _ => vec![GroupElement::IDENTITY],
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::H40 => "H40",
            Self::H41 => "H41",
            Self::H42 => "H42",
            Self::H43 => "H43",
            Self::H20 => "H20",
            Self::H21 => "H21",
            Self::H10 => "H10",
        }
    }
}

impl fmt::Display for IsotropyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IsotropyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "H40" => Self::H40,
            "H41" => Self::H41,
            "H42" => Self::H42,
            "H43" => Self::H43,
            "H20" => Self::H20,
            "H21" => Self::H21,
            "H10" => Self::H10,
            other => return Err(Error::InvalidArgument(format!("unknown isotropy label {other:?}"))),
        })
    }
}

/// Serialized as its label alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IsotropyClass {
    pub label: IsotropyLabel,
    pub order: usize,
    pub pattern_name: &'static str,
}

impl Serialize for IsotropyClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.label.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IsotropyClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        IsotropyLabel::deserialize(deserializer).map(Self::from)
    }
}

impl From<IsotropyLabel> for IsotropyClass {
    fn from(label: IsotropyLabel) -> Self {
        Self { label, order: label.order(), pattern_name: label.pattern_name() }
    }
}

/// Phase shift `phi_s` for which `(phi_s, j)` fixes the state, if one exists within `tol`.
fn fixing_shift(eq: &RelativeEquilibrium, j: usize, tol: f64) -> Option<f64> {
    for i in 0..N {
        if (eq.r[(i + j) % N] - eq.r[i]).abs() > tol {
            return None;
        }
    }
    let shift = eq.rel_phase(0) - eq.rel_phase(j % N);
    for i in 1..N {
        let moved = eq.rel_phase((i + j) % N) + shift;
        if angle_diff(moved, eq.rel_phase(i)).abs() > tol {
            return None;
        }
    }
    Some(wrap_angle(shift))
}

/// Isotropy subgroup of a cluster state.
///
/// Only the three nontrivial rotations are tested; for each the phase
/// shift is fixed by the first oscillator and checked on the others.
pub fn classify_isotropy(eq: &RelativeEquilibrium, tol: f64) -> IsotropyClass {
    let by_one = fixing_shift(eq, 1, tol).or_else(|| fixing_shift(eq, 3, tol).map(|s| wrap_angle(-s)));
    if let Some(shift) = by_one {
        // (-m pi/2, 1) generates H4m
        let m = (wrap_angle(-shift) / FRAC_PI_2).round() as usize % N;
        return IsotropyLabel::primary(m).into();
    }
    if let Some(shift) = fixing_shift(eq, 2, tol) {
        let label = if angle_diff(shift, 0.0).abs() < angle_diff(shift, PI).abs() {
            IsotropyLabel::H20
        } else {
            IsotropyLabel::H21
        };
        return label.into();
    }
    IsotropyLabel::H10.into()
}

/// Delay-parameter symmetry: advances the phase pattern by `j` quarter turns per link.
///
/// Radii and frequency are unchanged; the delay becomes `tau + j pi / (2 Omega)`.
pub fn parameter_shift(eq: &RelativeEquilibrium, j: i64) -> Result<RelativeEquilibrium> {
    if j == 0 {
        return Ok(*eq);
    }
    if eq.omega_collective == 0.0 {
        return Err(Error::InvalidArgument("parameter shift needs a nonzero collective frequency".into()));
    }
    let tau = eq.tau + j as f64 * PI / (2.0 * eq.omega_collective);
    if tau < 0.0 {
        return Err(Error::InvalidArgument(format!("shifted delay {tau} is negative")));
    }
    // c = (0, pi/2, pi, 3pi/2) relative to its fourth component
    let psi = std::array::from_fn(|i| wrap_angle(eq.psi[i] + j as f64 * (i as f64 - 3.0) * FRAC_PI_2));
    Ok(RelativeEquilibrium { r: eq.r, psi, omega_collective: eq.omega_collective, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{expand_primary, residual, PrimaryAnsatz};
    use crate::model::Parameters;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn element(rng: &mut ChaCha8Rng) -> GroupElement {
        GroupElement::new(rng.random_range(0.0..TAU), rng.random_range(0..4))
    }

    #[test]
    fn composition_examples() {
        let q = GroupElement::new(FRAC_PI_2, 1);
        let sq = compose(q, q);
        assert!(sq.approx_eq(&GroupElement::new(PI, 2), 1e-15));
        let inv = compose(GroupElement::new(3.0 * FRAC_PI_2, 3), q);
        assert!(inv.approx_eq(&GroupElement::IDENTITY, 1e-15));
    }

    #[test]
    fn group_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, b, c) = (element(&mut rng), element(&mut rng), element(&mut rng));
            let left = compose(compose(a, b), c);
            let right = compose(a, compose(b, c));
            assert_eq!(left.rotation, right.rotation);
            assert!(left.approx_eq(&right, 1e-12));
            assert_eq!(compose(a, GroupElement::IDENTITY), a);
            assert!(compose(a, a.inverse()).approx_eq(&GroupElement::IDENTITY, 1e-12));
        }
    }

    #[test]
    fn identity_action() {
        let s = FullState { r: [1.0, 2.0, 3.0, 4.0], phi: [0.1, 0.2, 0.3, 0.4] };
        assert_eq!(act(GroupElement::IDENTITY, &s), s);
    }

    #[test]
    fn splay_fixed_by_quarter_turn() {
        let phi = [FRAC_PI_2, PI, 1.5 * PI, TAU];
        let s = FullState { r: [1.3; 4], phi: phi.map(|p| p + 0.77) };
        let out = act(GroupElement::new(-FRAC_PI_2, 1), &s);
        for i in 0..4 {
            assert!(angle_diff(out.phi[i], s.phi[i]).abs() < 1e-12);
        }
    }

    fn primary(m: usize) -> RelativeEquilibrium {
        expand_primary(&PrimaryAnsatz { m, r0: 1.7, omega_collective: 2.4, tau: 0.5 })
    }

    #[test]
    fn primary_labels() {
        for m in 0..4 {
            let c = classify_isotropy(&primary(m), SOLVER_TOL);
            assert_eq!(c.label, IsotropyLabel::primary(m));
            assert_eq!(c.order, 4);
        }
        assert_eq!(classify_isotropy(&primary(1), SOLVER_TOL).pattern_name, "splay");
    }

    #[test]
    fn secondary_labels() {
        let delta = 0.6;
        // oscillators 1,3 together and 2,4 together, clusters offset by delta
        let compressed = RelativeEquilibrium {
            r: [1.2, 1.5, 1.2, 1.5],
            psi: [delta, 0.0, delta],
            omega_collective: 2.0,
            tau: 0.7,
        };
        let c = classify_isotropy(&compressed, SOLVER_TOL);
        assert_eq!(c.label, IsotropyLabel::H20);
        assert_eq!(c.pattern_name, "compressed-2-cluster");

        // 1,3 and 2,4 in anti-phase
        let open = RelativeEquilibrium { psi: [delta, PI, PI + delta], ..compressed };
        assert_eq!(classify_isotropy(&open, SOLVER_TOL).label, IsotropyLabel::H21);

        let asym = RelativeEquilibrium {
            r: [1.2, 1.3, 1.4, 1.5],
            psi: [1.5 * PI - 0.3, PI, FRAC_PI_2],
            omega_collective: 2.0,
            tau: 0.7,
        };
        let c = classify_isotropy(&asym, SOLVER_TOL);
        assert_eq!((c.label, c.order), (IsotropyLabel::H10, 1));
    }

    #[test]
    fn classification_is_invariant_under_the_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states = [
            primary(0),
            primary(3),
            RelativeEquilibrium { r: [1.2, 1.5, 1.2, 1.5], psi: [0.4, 0.0, 0.4], omega_collective: 2.0, tau: 0.7 },
            RelativeEquilibrium { r: [1.2, 1.5, 1.2, 1.5], psi: [0.4, PI, PI + 0.4], omega_collective: 2.0, tau: 0.7 },
            RelativeEquilibrium { r: [1.2, 1.3, 1.4, 1.5], psi: [0.1, 2.0, 4.0], omega_collective: 2.0, tau: 0.7 },
        ];
        for s in &states {
            let base = classify_isotropy(s, SOLVER_TOL);
            for _ in 0..20 {
                let g = element(&mut rng);
                assert_eq!(classify_isotropy(&act_on_equilibrium(g, s), SOLVER_TOL), base);
            }
        }
    }

    #[test]
    fn subgroup_elements_fix_their_states() {
        for m in 0..4 {
            let s = primary(m);
            for g in IsotropyLabel::primary(m).elements() {
                assert!(act_on_equilibrium(g, &s).distance(&s) < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_shift_advances_primary_index() {
        let p = Parameters::relaxation().with_delay(0.5);
        let a = crate::equilibria::primary_oracle(&p, 0, 1.7, 2.43).unwrap();
        let eq = expand_primary(&a);
        assert_eq!(parameter_shift(&eq, 0).unwrap(), eq);
        for j in 1..4 {
            let shifted = parameter_shift(&eq, j).unwrap();
            assert!((shifted.tau - (0.5 + j as f64 * PI / (2.0 * a.omega_collective))).abs() < 1e-15);
            let res = residual(&p, &shifted).unwrap();
            assert!(res.iter().all(|x| x.abs() < 1e-9));
            assert_eq!(classify_isotropy(&shifted, SOLVER_TOL).label, IsotropyLabel::primary(j as usize));
        }
    }

    #[test]
    fn parameter_shift_exchanges_two_cluster_subgroups() {
        let s = RelativeEquilibrium { r: [1.2, 1.5, 1.2, 1.5], psi: [0.4, 0.0, 0.4], omega_collective: 2.0, tau: 0.7 };
        let t = parameter_shift(&s, 1).unwrap();
        assert_eq!(classify_isotropy(&t, SOLVER_TOL).label, IsotropyLabel::H21);
        let back = parameter_shift(&t, 1).unwrap();
        assert_eq!(classify_isotropy(&back, SOLVER_TOL).label, IsotropyLabel::H20);
    }

    #[test]
    fn parameter_shift_rejects_negative_delay() {
        let s = primary(0);
        assert!(parameter_shift(&s, -1).is_err());
        let zero = RelativeEquilibrium { omega_collective: 0.0, ..s };
        assert!(parameter_shift(&zero, 1).is_err());
    }

    #[test]
    fn tangent_action_matches_finite_action() {
        let s = RelativeEquilibrium { r: [1.2, 1.3, 1.4, 1.5], psi: [0.1, 2.0, 4.0], omega_collective: 2.0, tau: 0.7 };
        let v = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05, 0.2, -0.1, 0.3, 0.01]);
        let eps = 1e-7;
        let moved = RelativeEquilibrium::from_unknowns(&(s.unknowns() + &v * eps), s.tau);
        for j in 0..4 {
            let g = GroupElement::new(0.0, j);
            let a = act_on_equilibrium(g, &moved).unknowns();
            let b = act_on_equilibrium(g, &s).unknowns();
            let mut diff = (a - b) / eps;
            for i in 4..7 {
                diff[i] = angle_diff(diff[i] * eps, 0.0) / eps;
            }
            let lin = act_on_tangent(g, &v);
            assert!((diff - lin).amax() < 1e-6);
        }
    }
}
