//! Uniform grid on [-L, L), sampled fields and the spectral toolbox built on it.
//!
//! Fields are treated as 2L-periodic. Transforms are unnormalised; quadrature
//! weights appear explicitly, so that `h * sum(u * v) == (h / N) * sum(|u_k|^2)`
//! for u = v (Parseval in this convention).
//!
//! A second family of transforms handles 2L-antiperiodic fields,
//! `u(x + 2L) = -u(x)`, whose modes sit at the half-integer frequencies
//! `pi (k + 1/2) / L`. They are evaluated by twisting with `exp(-i pi x / 2L)`
//! and reusing a complex FFT of length N.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{NeelError, Result};

/// Serialisable description of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_length: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.half_length, self.n_points)
    }
}

struct Plans {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// exp(-i pi x_j / 2L)
    twist: Vec<Complex64>,
}

/// Uniform periodic grid with N nodes `x_j = -L + j h`, `h = 2L / N`.
///
/// Cloning is cheap; the FFT plans are shared.
#[derive(Clone)]
pub struct Grid {
    half_length: f64,
    n_points: usize,
    spacing: f64,
    plans: Arc<Plans>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.half_length == other.half_length && self.n_points == other.n_points
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("half_length", &self.half_length)
            .field("n_points", &self.n_points)
            .finish()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grid(L={}, N={})", self.half_length, self.n_points)
    }
}

impl Grid {
    pub fn new(half_length: f64, n_points: usize) -> Result<Self> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(NeelError::InvalidParameter(format!(
                "half_length must be positive, got {half_length}"
            )));
        }
        if n_points < 4 || n_points % 2 != 0 {
            return Err(NeelError::InvalidParameter(format!(
                "n_points must be even and at least 4, got {n_points}"
            )));
        }
        let spacing = 2.0 * half_length / n_points as f64;
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::<f64>::new();
        let twist = (0..n_points)
            .map(|j| {
                let x = -half_length + j as f64 * spacing;
                Complex64::from_polar(1.0, -std::f64::consts::PI * x / (2.0 * half_length))
            })
            .collect();
        let plans = Plans {
            r2c: real.plan_fft_forward(n_points),
            c2r: real.plan_fft_inverse(n_points),
            fwd: complex.plan_fft_forward(n_points),
            inv: complex.plan_fft_inverse(n_points),
            twist,
        };
        Ok(Self {
            half_length,
            n_points,
            spacing,
            plans: Arc::new(plans),
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            half_length: self.half_length,
            n_points: self.n_points,
        }
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_length + j as f64 * self.spacing
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    /// Index of the node at x = 0.
    pub fn center(&self) -> usize {
        self.n_points / 2
    }

    /// Index of the node at -x_j.
    pub fn mirror(&self, j: usize) -> usize {
        (self.n_points - j) % self.n_points
    }

    /// Signed mode number of FFT bin `index`, in -N/2..N/2-1.
    pub fn mode(&self, index: usize) -> i64 {
        let n = self.n_points as i64;
        let k = index as i64;
        if k >= n / 2 {
            k - n
        } else {
            k
        }
    }

    /// Frequency `pi k / L` of FFT bin `index`.
    pub fn frequency(&self, index: usize) -> f64 {
        std::f64::consts::PI * self.mode(index) as f64 / self.half_length
    }

    /// Frequencies of all N bins in FFT order.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.frequency(i)).collect()
    }

    /// Frequencies of the half spectrum returned by [`Grid::forward`]. The last
    /// entry is the Nyquist bin, whose frequency is taken as -pi N / 2L.
    pub fn half_frequencies(&self) -> Vec<f64> {
        (0..=self.n_points / 2).map(|i| self.frequency(i)).collect()
    }

    /// Half-integer frequencies `pi (k + 1/2) / L` used by the antiperiodic transforms.
    pub fn antiperiodic_frequencies(&self) -> Vec<f64> {
        (0..self.n_points)
            .map(|i| std::f64::consts::PI * (self.mode(i) as f64 + 0.5) / self.half_length)
            .collect()
    }

    pub(crate) fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_points {
            return Err(NeelError::length(self.n_points, u.len()));
        }
        Ok(())
    }

    /// Unnormalised real-to-complex transform, N/2 + 1 bins.
    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(u.len(), self.n_points);
        let mut input = u.to_vec();
        let mut out = self.plans.r2c.make_output_vec();
        self.plans
            .r2c
            .process(&mut input, &mut out)
            .expect("buffer sizes fixed by the plan");
        out
    }

    /// Inverse of [`Grid::forward`], including the 1/N factor. Imaginary parts
    /// of the DC and Nyquist bins are discarded.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.n_points / 2 + 1);
        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        let mut out = self.plans.c2r.make_output_vec();
        self.plans
            .c2r
            .process(&mut spectrum, &mut out)
            .expect("buffer sizes fixed by the plan");
        let scale = 1.0 / self.n_points as f64;
        for v in out.iter_mut() {
            *v *= scale;
        }
        out
    }

    /// Applies a real even multiplier given on the half spectrum.
    pub fn apply_even(&self, u: &[f64], table: &[f64]) -> Vec<f64> {
        let mut c = self.forward(u);
        for (ck, &m) in c.iter_mut().zip(table) {
            *ck *= m;
        }
        self.inverse(c)
    }

    /// Applies the multiplier `i * table[k]` for an odd real table; the
    /// Nyquist bin is dropped.
    pub fn apply_odd(&self, u: &[f64], table: &[f64]) -> Vec<f64> {
        let mut c = self.forward(u);
        for (ck, &m) in c.iter_mut().zip(table) {
            *ck = Complex64::new(-ck.im * m, ck.re * m);
        }
        let last = c.len() - 1;
        c[last] = Complex64::new(0.0, 0.0);
        self.inverse(c)
    }

    /// Applies an even multiplier to an antiperiodic field. `table` holds the
    /// multiplier at [`Grid::antiperiodic_frequencies`], in FFT order.
    pub fn apply_antiperiodic(&self, u: &[f64], table: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.n_points);
        let twist = &self.plans.twist;
        let mut buf: Vec<Complex64> = u.iter().zip(twist).map(|(&v, &t)| t * v).collect();
        self.plans.fwd.process(&mut buf);
        for (ck, &m) in buf.iter_mut().zip(table) {
            *ck *= m;
        }
        self.plans.inv.process(&mut buf);
        let scale = 1.0 / self.n_points as f64;
        buf.iter().zip(twist).map(|(c, t)| (c * t.conj()).re * scale).collect()
    }

    /// h * sum(u_j v_j).
    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        self.spacing * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.dot(u, u).sqrt()
    }

    /// sum_k |u_k|^2 h / N over the full spectrum.
    pub fn spectral_norm_sq(&self, u: &[f64]) -> f64 {
        let c = self.forward(u);
        let n = self.n_points;
        let mut s = c[0].norm_sqr() + c[n / 2].norm_sqr();
        for ck in &c[1..n / 2] {
            s += 2.0 * ck.norm_sqr();
        }
        s * self.spacing / n as f64
    }

    pub fn derivative_of(&self, u: &[f64]) -> Vec<f64> {
        self.apply_odd(u, &self.half_frequencies())
    }

    pub fn second_derivative_of(&self, u: &[f64]) -> Vec<f64> {
        let table: Vec<f64> = self.half_frequencies().iter().map(|xi| -xi * xi).collect();
        self.apply_even(u, &table)
    }

    /// Trigonometric interpolation onto the grid with the same L and 2N nodes.
    /// Even-indexed samples of the result reproduce `u`.
    pub fn refine(&self, fine: &Grid, u: &[f64]) -> Result<Vec<f64>> {
        if fine.half_length != self.half_length || fine.n_points != 2 * self.n_points {
            return Err(NeelError::grid_mismatch(self, fine));
        }
        let n = self.n_points;
        let c = self.forward(u);
        let mut padded = vec![Complex64::new(0.0, 0.0); n + 1];
        padded[..n / 2].copy_from_slice(&c[..n / 2]);
        // The Nyquist bin is split between +N/2 and -N/2.
        padded[n / 2] = c[n / 2] * 0.5;
        let mut out = fine.inverse(padded);
        for v in out.iter_mut() {
            *v *= 2.0;
        }
        Ok(out)
    }

    /// Spectral truncation from the grid with the same L and 2N nodes back to
    /// this grid: modes |k| < N/2 are kept, the rest dropped.
    pub fn coarsen(&self, fine: &Grid, u: &[f64]) -> Result<Vec<f64>> {
        if fine.half_length != self.half_length || fine.n_points != 2 * self.n_points {
            return Err(NeelError::grid_mismatch(self, fine));
        }
        let n = self.n_points;
        let c = fine.forward(u);
        let mut kept: Vec<Complex64> = c[..=n / 2].iter().map(|v| v * 0.5).collect();
        kept[n / 2] = Complex64::new(0.0, 0.0);
        Ok(self.inverse(kept))
    }

    /// Odd part (u(x) - u(-x)) / 2.
    pub fn odd_part(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n_points).map(|j| 0.5 * (u[j] - u[self.mirror(j)])).collect()
    }

    pub fn even_part(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n_points).map(|j| 0.5 * (u[j] + u[self.mirror(j)])).collect()
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_points).map(|j| f(self.node(j))).collect()
    }
}

/// Real samples on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(&values)?;
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(NeelError::Numerical(format!("non-finite sample at node {j}")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &Grid, f: F) -> Result<Self> {
        Self::new(grid, grid.sample(f))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at_center(&self) -> f64 {
        self.values[self.grid.center()]
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub(crate) fn same_grid(&self, other: &RealField) -> Result<()> {
        if self.grid != other.grid {
            return Err(NeelError::grid_mismatch(&self.grid, &other.grid));
        }
        Ok(())
    }
}

/// h * sum(u_j v_j).
pub fn inner_product(u: &RealField, v: &RealField) -> Result<f64> {
    u.same_grid(v)?;
    Ok(u.grid.dot(&u.values, &v.values))
}

/// Spectral first derivative, multiplier `i xi`.
pub fn derivative(u: &RealField) -> RealField {
    RealField {
        grid: u.grid.clone(),
        values: u.grid.derivative_of(&u.values),
    }
}

/// Spectral second derivative, multiplier `-xi^2`.
pub fn second_derivative(u: &RealField) -> RealField {
    RealField {
        grid: u.grid.clone(),
        values: u.grid.second_derivative_of(&u.values),
    }
}
