//! The reduced stray-field multiplier and the rescaled operator (1/ε)𝒮ε.

use crate::error::{NeelError, Result};
use crate::grid::{Grid, RealField};

/// Below this value of t = ε|ξ| the symbol is evaluated from its Taylor series.
pub const TAYLOR_SWITCH: f64 = 1e-4;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(NeelError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(())
}

/// g(t) = σ / t, i.e. (1 - (1 - e^{-t}) / t) / t.
#[inline]
fn sigma_over_t(t: f64) -> f64 {
    if t < TAYLOR_SWITCH {
        0.5 - t / 6.0 + t * t / 24.0
    } else if t < 1.0 {
        // (e^{-t} - 1 + t) / t^2 = sum_{n>=2} (-t)^{n-2} / n!; the closed form
        // still cancels a few digits in this range.
        let mut term = 0.5;
        let mut sum = 0.5;
        for n in 3..22 {
            term *= -t / n as f64;
            sum += term;
        }
        sum
    } else {
        // -expm1 keeps 1 - e^{-t} accurate for moderate t.
        (1.0 + (-t).exp_m1() / t) / t
    }
}

#[inline]
fn rescaled_unchecked(xi: f64, epsilon: f64) -> f64 {
    let a = xi.abs();
    let t = epsilon * a;
    if t == 0.0 {
        return 0.0;
    }
    // σ/ε = |ξ| g(t); bounded by |ξ| since g <= 1/2.
    a * sigma_over_t(t)
}

/// σε(ξ) = 1 - (1 - e^{-t}) / t with t = ε|ξ|.
pub fn symbol(xi: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let t = epsilon * xi.abs();
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(t * sigma_over_t(t))
}

/// σε(ξ) / ε.
pub fn rescaled_symbol(xi: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(rescaled_unchecked(xi, epsilon))
}

/// Cached multiplier tables of (1/ε)𝒮ε on one grid.
#[derive(Clone, Debug)]
pub struct StrayFieldOperator {
    epsilon: f64,
    grid: Grid,
    /// Half spectrum, periodic fields.
    periodic: Vec<f64>,
    /// Full spectrum at half-integer modes, antiperiodic fields.
    antiperiodic: Vec<f64>,
}

impl StrayFieldOperator {
    pub fn new(grid: &Grid, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let periodic = grid
            .half_frequencies()
            .iter()
            .map(|&xi| rescaled_unchecked(xi, epsilon))
            .collect();
        let antiperiodic = grid
            .antiperiodic_frequencies()
            .iter()
            .map(|&xi| rescaled_unchecked(xi, epsilon))
            .collect();
        Ok(Self {
            epsilon,
            grid: grid.clone(),
            periodic,
            antiperiodic,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// m(ξ_k) for k = 0..N/2 (half spectrum, Nyquist last).
    pub fn multipliers(&self) -> &[f64] {
        &self.periodic
    }

    pub fn antiperiodic_multipliers(&self) -> &[f64] {
        &self.antiperiodic
    }

    pub fn max_multiplier(&self) -> f64 {
        self.periodic.iter().cloned().fold(0.0, f64::max)
    }

    /// (1/ε)𝒮ε[u] for a 2L-periodic field.
    pub fn apply(&self, u: &RealField) -> Result<RealField> {
        if u.grid() != &self.grid {
            return Err(NeelError::grid_mismatch(&self.grid, u.grid()));
        }
        RealField::new(&self.grid, self.apply_slice(u.values()))
    }

    /// (1/ε)𝒮ε[u] for a 2L-antiperiodic field, such as cos θ of a wall.
    pub fn apply_antiperiodic(&self, u: &RealField) -> Result<RealField> {
        if u.grid() != &self.grid {
            return Err(NeelError::grid_mismatch(&self.grid, u.grid()));
        }
        RealField::new(&self.grid, self.apply_antiperiodic_slice(u.values()))
    }

    pub fn apply_slice(&self, u: &[f64]) -> Vec<f64> {
        self.grid.apply_even(u, &self.periodic)
    }

    pub fn apply_antiperiodic_slice(&self, u: &[f64]) -> Vec<f64> {
        self.grid.apply_antiperiodic(u, &self.antiperiodic)
    }

    pub fn apply_with(&self, u: &[f64], parity: Parity) -> Vec<f64> {
        match parity {
            Parity::Periodic => self.apply_slice(u),
            Parity::Antiperiodic => self.apply_antiperiodic_slice(u),
        }
    }
}

/// Behaviour of a field under x -> x + 2L.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Periodic,
    Antiperiodic,
}
