//! Interaction functions of the ring as truncated Fourier series.
//!
//! Both the radial function `H_r` and the angular function `H_phi` are
//! fifth-order series `sum_{n=0}^{5} a_n cos(n theta) + b_n sin(n theta)`.
//! Two built-in pairs are provided: the experimentally fitted relaxation
//! pair and the plain sinusoidal pair (`H_r = cos`, `H_phi = sin`) that
//! turns the general model back into the polar Stuart-Landau ring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of Fourier modes stored (orders 0 through 5).
pub const N_MODES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    a: [f64; N_MODES],
    b: [f64; N_MODES],
}

impl FourierSeries {
    /// Builds a series from cosine and sine coefficients. `b[0]` must be zero.
    pub fn new(a: [f64; N_MODES], b: [f64; N_MODES]) -> Result<Self> {
        if b[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sine coefficient b[0] must be 0, got {}",
                b[0]
            )));
        }
        if a.iter().chain(b.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Fourier coefficient".into()));
        }
        Ok(Self { a, b })
    }

    /// Builds a series from `a[0..=5]` and the five sine coefficients `b[1..=5]`.
    pub fn from_parts(a: [f64; N_MODES], b_tail: [f64; N_MODES - 1]) -> Result<Self> {
        let mut b = [0.0; N_MODES];
        b[1..].copy_from_slice(&b_tail);
        Self::new(a, b)
    }

    pub fn zero() -> Self {
        Self { a: [0.0; N_MODES], b: [0.0; N_MODES] }
    }

    pub fn a(&self) -> &[f64; N_MODES] {
        &self.a
    }

    pub fn b(&self) -> &[f64; N_MODES] {
        &self.b
    }

    /// Value of the series at `theta` (no range reduction is applied).
    pub fn eval(&self, theta: f64) -> f64 {
        let mut sum = self.a[0];
        for n in 1..N_MODES {
            let (s, c) = (n as f64 * theta).sin_cos();
            sum += self.a[n] * c + self.b[n] * s;
        }
        sum
    }

    /// Derivative of the series with respect to `theta`.
    pub fn eval_deriv(&self, theta: f64) -> f64 {
        let mut sum = 0.0;
        for n in 1..N_MODES {
            let k = n as f64;
            let (s, c) = (k * theta).sin_cos();
            sum += k * (-self.a[n] * s + self.b[n] * c);
        }
        sum
    }
}

/// The radial and angular interaction functions used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionPair {
    pub h_r: FourierSeries,
    pub h_phi: FourierSeries,
}

impl InteractionPair {
    /// Coefficients fitted to the relaxation-regime experiment, five decimals as published.
    pub fn relaxation() -> Self {
        let h_r = FourierSeries::from_parts(
            [0.45579, -0.97948, 0.36110, 0.29724, 0.05846, -0.11558],
            [-1.82354, -0.07963, 0.54854, 0.09098, -0.09251],
        )
        .expect("built-in coefficients are valid");
        let h_phi = FourierSeries::from_parts(
            [0.0, -0.00610, -0.35811, -0.25341, -0.13541, -0.07183],
            [0.31622, 0.29020, -0.05585, 0.00799, 0.00425],
        )
        .expect("built-in coefficients are valid");
        Self { h_r, h_phi }
    }

    /// `H_r = cos`, `H_phi = sin`.
    pub fn sinusoidal() -> Self {
        let mut a = [0.0; N_MODES];
        a[1] = 1.0;
        let mut b = [0.0; N_MODES];
        b[1] = 1.0;
        Self {
            h_r: FourierSeries { a, b: [0.0; N_MODES] },
            h_phi: FourierSeries { a: [0.0; N_MODES], b },
        }
    }

    /// Looks up a built-in pair by name (`relaxation` or `sinusoidal`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name.trim() {
            "relaxation" => Some(Self::relaxation()),
            "sinusoidal" => Some(Self::sinusoidal()),
            _ => None,
        }
    }

    /// Name of the built-in pair this equals, if any.
    pub fn builtin_name(&self) -> Option<&'static str> {
        if *self == Self::relaxation() {
            Some("relaxation")
        } else if *self == Self::sinusoidal() {
            Some("sinusoidal")
        } else {
            None
        }
    }
}

/// Parses `a_r`, `b_r`, `a_phi`, `b_phi` lines of the form `key = c, c, ...`.
///
/// `a_*` take six values (orders 0 to 5), `b_*` take five (orders 1 to 5).
/// Blank lines and `#` comments are skipped; other keys are rejected.
pub fn parse_coefficients(text: &str) -> Result<InteractionPair> {
    let mut a_r = None;
    let mut b_r = None;
    let mut a_phi = None;
    let mut b_phi = None;
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key = values`, got {raw:?}")))?;
        let values: Vec<f64> = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad coefficient {v:?}: {e}"))))
            .collect::<Result<_>>()?;
        let slot = match key.trim() {
            "a_r" => &mut a_r,
            "b_r" => &mut b_r,
            "a_phi" => &mut a_phi,
            "b_phi" => &mut b_phi,
            other => return Err(Error::Config(format!("unknown coefficient key {other:?}"))),
        };
        if slot.replace(values).is_some() {
            return Err(Error::Config(format!("duplicate coefficient key {:?}", key.trim())));
        }
    }
    fn take<const L: usize>(v: Option<Vec<f64>>, name: &str) -> Result<[f64; L]> {
        let v = v.ok_or_else(|| Error::Config(format!("missing coefficient key {name:?}")))?;
        v.as_slice()
            .try_into()
            .map_err(|_| Error::Config(format!("{name} needs {L} values, got {}", v.len())))
    }
    let h_r = FourierSeries::from_parts(take(a_r, "a_r")?, take(b_r, "b_r")?)?;
    let h_phi = FourierSeries::from_parts(take(a_phi, "a_phi")?, take(b_phi, "b_phi")?)?;
    Ok(InteractionPair { h_r, h_phi })
}

pub fn builtin_relaxation() -> InteractionPair {
    InteractionPair::relaxation()
}

pub fn builtin_sinusoidal() -> InteractionPair {
    InteractionPair::sinusoidal()
}
