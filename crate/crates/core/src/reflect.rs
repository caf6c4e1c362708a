//! One-dimensional Skorokhod reflection at zero.
//!
//! For a path `y` the regulator is `z(t) = sup_{s<=t} max(-y(s), 0)` and the
//! reflected path is `x = y + z`. Paths here are piecewise linear between
//! grid points, so the supremum over a segment is attained at an endpoint
//! and the map is exact on the grid.

use crate::error::{Error, Result};

/// Output of the Skorokhod map on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPair {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

fn check_grid(t: &[f64], y: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::invalid("t", "grid is empty"));
    }
    if t.len() != y.len() {
        return Err(Error::invalid("y", "length differs from grid"));
    }
    if let Some(k) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(
            "t",
            format!("grid not strictly increasing at {}", k + 1),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("y", "non-finite value"));
    }
    Ok(())
}

/// Skorokhod map of a continuous piecewise-linear path sampled at `t`.
/// Uses the convention `y(0-) = 0`, so a negative `y(0)` is reflected at once.
pub fn skorokhod_map(t: &[f64], y: &[f64]) -> Result<ReflectedPair> {
    check_grid(t, y)?;
    let mut z = Vec::with_capacity(y.len());
    let mut running = 0.0_f64;
    for &v in y {
        running = running.max(-v);
        z.push(running);
    }
    let x = y.iter().zip(&z).map(|(a, b)| a + b).collect();
    Ok(ReflectedPair { x, z })
}

/// Skorokhod map of a càdlàg path that is linear between grid points and may
/// jump at them. `y_left[k]` is the left limit at `t[k]` and `y[k]` the value.
pub fn skorokhod_map_cadlag(t: &[f64], y_left: &[f64], y: &[f64]) -> Result<ReflectedPair> {
    check_grid(t, y)?;
    if y_left.len() != y.len() || y_left.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("y_left", "length differs from grid or non-finite value"));
    }
    let mut z = Vec::with_capacity(y.len());
    let mut running = 0.0_f64;
    for (&l, &v) in y_left.iter().zip(y) {
        running = running.max(-l).max(-v);
        z.push(running);
    }
    let x = y.iter().zip(&z).map(|(a, b)| a + b).collect();
    Ok(ReflectedPair { x, z })
}

/// One projected step: `x_new = max(0, x_prev + increment)`, with the
/// pushing `dz = max(0, -(x_prev + increment))`.
#[inline]
pub fn reflect_step(x_prev: f64, increment: f64) -> (f64, f64) {
    let proposed = x_prev + increment;
    if proposed >= 0.0 {
        (proposed, 0.0)
    } else {
        (0.0, -proposed)
    }
}

/// Complementarity tolerance, relative to the path scale.
pub const COMPLEMENTARITY_TOL: f64 = 1e-12;

/// Check that `(x, z)` is the Skorokhod decomposition of `y`: `x = y + z`,
/// `x >= 0`, `z` nondecreasing with `z(0-) = 0`, and `Σ x·Δz = 0`.
pub fn verify_skorokhod(y: &[f64], x: &[f64], z: &[f64]) -> bool {
    if y.len() != x.len() || y.len() != z.len() || y.is_empty() {
        return false;
    }
    let scale = 1.0 + y.iter().chain(x).chain(z).fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = COMPLEMENTARITY_TOL * scale;
    let mut prev_z = 0.0;
    let mut pairing = 0.0;
    for k in 0..y.len() {
        if (x[k] - y[k] - z[k]).abs() > tol || x[k] < -tol || z[k] < prev_z - tol {
            return false;
        }
        pairing += x[k] * (z[k] - prev_z);
        prev_z = z[k];
    }
    pairing.abs() <= tol * scale
}
