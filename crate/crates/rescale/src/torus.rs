//! Points on the flat torus [0, 2π)^d and the wrap / distance primitives.

use crate::{RescaleError, Result, TAU};

/// A point with every coordinate reduced to [0, 2π).
///
/// Dereferences to `[f64]`, so field evaluations accept either a `TorusPoint`
/// or a raw coordinate slice that is already wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Reduce raw coordinates modulo 2π. Non-finite input is rejected.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(RescaleError::InvalidInput("empty coordinate vector".into()));
        }
        let mut coords = Vec::with_capacity(raw.len());
        for (i, &x) in raw.iter().enumerate() {
            if !x.is_finite() {
                return Err(RescaleError::InvalidInput(format!(
                    "non-finite coordinate {x} at index {i}"
                )));
            }
            coords.push(wrap_angle(x));
        }
        Ok(TorusPoint { coords })
    }

    /// One-dimensional convenience constructor.
    pub fn angle(theta: f64) -> Result<Self> {
        Self::wrap(&[theta])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

impl std::ops::Deref for TorusPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

/// Reduce a single angle to [0, 2π).
///
/// `rem_euclid` may return exactly 2π when the remainder rounds up, so the
/// result is folded once more to keep the half-open invariant.
pub fn wrap_angle(x: f64) -> f64 {
    let mut r = x.rem_euclid(TAU);
    if r >= TAU {
        r -= TAU;
    }
    if r < 0.0 {
        r = 0.0;
    }
    r
}

/// Same reduction applied in place to a coordinate buffer.
pub fn wrap_in_place(x: &mut [f64]) {
    for c in x.iter_mut() {
        *c = wrap_angle(*c);
    }
}

/// Shortest signed angular difference a − b, in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d -= TAU;
    }
    d
}

/// Geodesic distance on the torus: the Euclidean norm of per-coordinate
/// minimal differences (minimum over periodic images).
pub fn torus_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RescaleError::InvalidInput(format!(
            "dimension mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut s = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = angle_diff(x, y);
        s += d * d;
    }
    Ok(s.sqrt())
}
