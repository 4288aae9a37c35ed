//! Periodic wall motions: the time-T map, the root map F, Newton in the
//! unknowns (φ₀, ϑ₀, γ), and continuation in the forcing amplitude λ.
//!
//! Unknowns are stacked as z = (φ₀, ϑ₀) with γ appended; residuals as
//! (φ(T) − φ₀, ϑ(T) − ϑ₀, ϑ₀(0)). Norms are the discrete L² norm on the
//! field blocks plus the absolute value of the scalar entry.

use faer::prelude::*;
use faer::Mat;
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, ForcingModel, Integrator, IntegratorConfig, State};
use crate::energy::WallProfile;
use crate::error::{NeelError, Result};
use crate::grid::{Grid, GridSpec, RealField};
use crate::linalg::{matvec, transpose_matvec};
use crate::params::RescaledParameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianStrategy {
    /// Dense finite differences on a low Fourier subspace, −I on the rest.
    CoarseProjection,
    /// Matrix-free GMRES with finite-difference directional derivatives.
    NewtonKrylov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicOptions {
    /// Fourier modes in the coarse projection, counted over both components.
    pub projection_modes: usize,
    pub jacobian: JacobianStrategy,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub tol: f64,
    pub step_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    /// Recompute the chord Jacobian once the residual ratio of a step exceeds this.
    pub contraction_limit: f64,
    pub gmres_tol: f64,
    pub gmres_max: usize,
    pub min_dlambda: f64,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self {
            projection_modes: 256,
            jacobian: JacobianStrategy::CoarseProjection,
            fd_step: 1e-5,
            tol: 1e-8,
            step_tol: 1e-9,
            max_newton: 40,
            max_halvings: 8,
            contraction_limit: 0.5,
            gmres_tol: 1e-4,
            gmres_max: 60,
            min_dlambda: 1e-6,
        }
    }
}

impl PeriodicOptions {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let m = self.projection_modes;
        if m < 2 || m % 2 != 0 || m / 2 > grid.len() {
            return Err(NeelError::InvalidParameter(format!(
                "projection_modes must be even and at most 2N = {}, got {m}",
                2 * grid.len()
            )));
        }
        for (name, v) in [
            ("fd_step", self.fd_step),
            ("tol", self.tol),
            ("step_tol", self.step_tol),
            ("contraction_limit", self.contraction_limit),
            ("gmres_tol", self.gmres_tol),
            ("min_dlambda", self.min_dlambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(NeelError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to evaluate the time-T map.
#[derive(Debug, Clone)]
pub struct PoincareSetup {
    dynamics: Dynamics,
    shape: ForcingModel,
    steps: usize,
    options: PeriodicOptions,
}

impl PoincareSetup {
    /// `shape` supplies the waveform and the period; its λ and γ are ignored.
    pub fn new(
        wall: &WallProfile,
        params: &RescaledParameters,
        shape: &ForcingModel,
        config: &IntegratorConfig,
        options: &PeriodicOptions,
    ) -> Result<Self> {
        Self::from_dynamics(Dynamics::new(wall, params, config)?, shape, options)
    }

    pub fn from_dynamics(dynamics: Dynamics, shape: &ForcingModel, options: &PeriodicOptions) -> Result<Self> {
        shape.validate()?;
        options.validate(dynamics.grid())?;
        let steps = dynamics.config().steps_for(shape.period)?;
        Ok(Self {
            dynamics,
            shape: shape.with_amplitudes(0.0, 0.0),
            steps,
            options: *options,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.dynamics.grid()
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn options(&self) -> &PeriodicOptions {
        &self.options
    }

    pub fn period(&self) -> f64 {
        self.shape.period
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps
    }

    pub fn forcing(&self, gamma: f64, lambda: f64) -> ForcingModel {
        self.shape.with_amplitudes(lambda, gamma)
    }

    fn pin_index(&self) -> usize {
        self.grid().len() + self.grid().center()
    }

    /// Stacked (φ, ϑ) after `periods` periods starting at t = 0.
    pub fn flow(&self, z: &[f64], gamma: f64, lambda: f64, periods: usize) -> Result<Vec<f64>> {
        let n = self.grid().len();
        if z.len() != 2 * n {
            return Err(NeelError::length(2 * n, z.len()));
        }
        let forcing = self.forcing(gamma, lambda).resolve(self.grid())?;
        let mut integ = Integrator::from_vec(&self.dynamics, forcing, z, 0.0);
        integ.advance(self.steps * periods)?;
        Ok(integ.to_vec())
    }

    pub fn time_t_map(&self, initial: &State, gamma: f64, lambda: f64) -> Result<State> {
        if initial.grid() != self.grid() {
            return Err(NeelError::grid_mismatch(self.grid(), initial.grid()));
        }
        let out = self.flow(&initial.to_vec(), gamma, lambda, 1)?;
        State::from_vec(self.grid(), &out, self.period())
    }

    /// (φ(T) − φ₀, ϑ(T) − ϑ₀, ϑ₀(0)) stacked into one vector of length 2N + 1.
    pub fn residual(&self, z: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
        let mut r = self.flow(z, gamma, lambda, 1)?;
        for (a, b) in r.iter_mut().zip(z) {
            *a -= b;
        }
        r.push(z[self.pin_index()]);
        Ok(r)
    }

    /// Discrete L² norm of the field blocks combined with the scalar entries.
    pub fn norm(&self, v: &[f64]) -> f64 {
        let n2 = 2 * self.grid().len();
        let h = self.grid().spacing();
        let fields: f64 = v[..n2].iter().map(|x| x * x).sum::<f64>() * h;
        let scalars: f64 = v[n2..].iter().map(|x| x * x).sum();
        (fields + scalars).sqrt()
    }
}

/// Time-T map from `initial` with h_ext = λh + γ.
pub fn time_t_map(initial: &State, gamma: f64, lambda: f64, setup: &PoincareSetup) -> Result<State> {
    setup.time_t_map(initial, gamma, lambda)
}

/// The root map: its zeros with ϑ₀(0) = 0 are the pinned T-periodic orbits.
pub fn f_map(
    phi0: &RealField,
    vartheta0: &RealField,
    gamma: f64,
    lambda: f64,
    setup: &PoincareSetup,
) -> Result<(RealField, RealField, f64)> {
    let g = setup.grid();
    if phi0.grid() != g || vartheta0.grid() != g {
        return Err(NeelError::grid_mismatch(g, phi0.grid()));
    }
    let mut z = phi0.values().to_vec();
    z.extend_from_slice(vartheta0.values());
    let r = setup.residual(&z, gamma, lambda)?;
    let n = g.len();
    Ok((
        RealField::new(g, r[..n].to_vec())?,
        RealField::new(g, r[n..2 * n].to_vec())?,
        r[2 * n],
    ))
}

/// Orthonormal (Euclidean) real Fourier basis of the lowest `m` modes on N nodes.
pub fn fourier_basis(n: usize, m: usize) -> Mat<f64> {
    let c0 = (1.0 / n as f64).sqrt();
    let c = (2.0 / n as f64).sqrt();
    let w = 2.0 * std::f64::consts::PI / n as f64;
    Mat::from_fn(n, m, |j, col| {
        if col == 0 {
            return c0;
        }
        let k = (col + 1) / 2;
        let arg = w * (k * j) as f64;
        if 2 * k == n {
            c0 * arg.cos()
        } else if col % 2 == 1 {
            c * arg.cos()
        } else {
            c * arg.sin()
        }
    })
}

/// Newton matrix on the coarse projection: exact finite differences on the
/// span of the low Fourier modes, −I on their complement, plus the γ column
/// and the pin row.
#[derive(Debug, Clone)]
pub struct ChordJacobian {
    basis: Mat<f64>,
    reduced: Mat<f64>,
    reduced_inverse: Mat<f64>,
    gamma_complement: Vec<f64>,
    pin_index: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Time-T evaluations spent assembling it.
    pub evaluations: usize,
}

impl ChordJacobian {
    pub fn compute(setup: &PoincareSetup, z: &[f64], gamma: f64, lambda: f64) -> Result<Self> {
        let g = setup.grid();
        let n = g.len();
        let mc = setup.options.projection_modes / 2;
        let basis = fourier_basis(n, mc);
        let m = 2 * mc;
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = setup.options.fd_step * (1.0 + zn);
        let project = |v: &[f64]| -> Vec<f64> {
            let mut out = transpose_matvec(basis.as_ref(), &v[..n]);
            out.extend(transpose_matvec(basis.as_ref(), &v[n..2 * n]));
            out
        };
        let mut reduced = Mat::<f64>::zeros(m + 1, m + 1);
        let mut evaluations = 0;
        for col in 0..m {
            let (block, k) = (col / mc, col % mc);
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            for j in 0..n {
                let q = basis[(j, k)];
                zp[block * n + j] += step * q;
                zm[block * n + j] -= step * q;
            }
            let fp = setup.residual(&zp, gamma, lambda)?;
            let fm = setup.residual(&zm, gamma, lambda)?;
            evaluations += 2;
            let d: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
            for (i, v) in project(&d).into_iter().enumerate() {
                reduced[(i, col)] = v;
            }
            if block == 1 {
                reduced[(m, col)] = basis[(g.center(), k)];
            }
        }
        let gstep = setup.options.fd_step * (1.0 + gamma.abs());
        let fp = setup.residual(z, gamma + gstep, lambda)?;
        let fm = setup.residual(z, gamma - gstep, lambda)?;
        evaluations += 2;
        let b: Vec<f64> = fp[..2 * n]
            .iter()
            .zip(&fm)
            .map(|(a, c)| (a - c) / (2.0 * gstep))
            .collect();
        let qb = project(&b);
        let gamma_complement = complement(&basis, &b, &qb);
        for (i, v) in qb.iter().enumerate() {
            reduced[(i, m)] = *v;
        }
        let pin_index = setup.pin_index();
        reduced[(m, m)] = gamma_complement[pin_index];
        let reduced_inverse = reduced.partial_piv_lu().solve(Mat::<f64>::identity(m + 1, m + 1));
        if reduced_inverse.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(NeelError::Numerical("singular coarse Jacobian".into()));
        }
        debug!("chord Jacobian at lambda={lambda}: {evaluations} time-T evaluations");
        Ok(Self {
            basis,
            reduced,
            reduced_inverse,
            gamma_complement,
            pin_index,
            lambda,
            gamma,
            evaluations,
        })
    }

    /// The (2m + 1)-square reduced matrix.
    pub fn reduced(&self) -> &Mat<f64> {
        &self.reduced
    }

    /// Newton correction δ with J δ = −F.
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let n = self.basis.nrows();
        let mc = self.basis.ncols();
        let m = 2 * mc;
        let fper = &f[..2 * n];
        let mut qf = transpose_matvec(self.basis.as_ref(), &fper[..n]);
        qf.extend(transpose_matvec(self.basis.as_ref(), &fper[n..]));
        let rf = complement(&self.basis, fper, &qf);
        let mut rhs: Vec<f64> = qf.iter().map(|v| -v).collect();
        rhs.push(-f[2 * n] - rf[self.pin_index]);
        let sol = matvec(self.reduced_inverse.as_ref(), &rhs);
        let dg = sol[m];
        let mut dz = Vec::with_capacity(2 * n + 1);
        for block in 0..2 {
            let qc = matvec(self.basis.as_ref(), &sol[block * mc..(block + 1) * mc]);
            for j in 0..n {
                let i = block * n + j;
                dz.push(qc[j] + rf[i] + self.gamma_complement[i] * dg);
            }
        }
        dz.push(dg);
        dz
    }

    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let s = self
            .reduced
            .singular_values()
            .map_err(|e| NeelError::Numerical(format!("svd failed: {e:?}")))?;
        Ok(s)
    }

    /// Largest modulus of the projected monodromy eigenvalues, leaving out
    /// the one closest to 1 (the translation mode).
    pub fn monodromy_radius_on_range(&self) -> Result<f64> {
        let m = 2 * self.basis.ncols();
        let a = Mat::from_fn(m, m, |i, j| self.reduced[(i, j)] + if i == j { 1.0 } else { 0.0 });
        let ev = a
            .eigenvalues()
            .map_err(|e| NeelError::Numerical(format!("eigenvalues failed: {e:?}")))?;
        let dist = |z: &num_complex::Complex64| ((z.re - 1.0).powi(2) + z.im * z.im).sqrt();
        let skip = ev
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1).total_cmp(&dist(b.1)))
            .map(|(i, _)| i);
        Ok(ev
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max))
    }
}

/// v − QQᵀv for stacked two-block vectors, given Qᵀv.
fn complement(basis: &Mat<f64>, v: &[f64], qv: &[f64]) -> Vec<f64> {
    let n = basis.nrows();
    let mc = basis.ncols();
    let mut out = v.to_vec();
    for block in 0..2 {
        let p = matvec(basis.as_ref(), &qv[block * mc..(block + 1) * mc]);
        for j in 0..n {
            out[block * n + j] -= p[j];
        }
    }
    out
}

/// Restarted-free GMRES for J δ = −F with J v by central differences.
fn newton_krylov_step(
    setup: &PoincareSetup,
    z: &[f64],
    gamma: f64,
    lambda: f64,
    f: &[f64],
) -> Result<(Vec<f64>, usize)> {
    let n2 = 2 * setup.grid().len();
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt() + gamma.abs();
    let eps = setup.options.fd_step * (1.0 + zn);
    let mut evaluations = 0;
    let mut apply = |v: &[f64]| -> Result<Vec<f64>> {
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let s = eps / vn;
        let zp: Vec<f64> = z.iter().zip(v).map(|(a, b)| a + s * b).collect();
        let zm: Vec<f64> = z.iter().zip(v).map(|(a, b)| a - s * b).collect();
        let fp = setup.residual(&zp, gamma + s * v[n2], lambda)?;
        let fm = setup.residual(&zm, gamma - s * v[n2], lambda)?;
        evaluations += 2;
        Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * s)).collect())
    };
    let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
    let x = gmres(&mut apply, &rhs, setup.options.gmres_tol, setup.options.gmres_max)?;
    Ok((x, evaluations))
}

/// GMRES(k) from a zero initial guess, one cycle, Euclidean inner product.
pub fn gmres<F>(apply: &mut F, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let beta = dot(b, b).sqrt();
    let n = b.len();
    if beta == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut v: Vec<Vec<f64>> = vec![b.iter().map(|x| x / beta).collect()];
    let mut h = vec![vec![0.0; max_iter]; max_iter + 1];
    let (mut cs, mut sn) = (vec![0.0; max_iter], vec![0.0; max_iter]);
    let mut gvec = vec![0.0; max_iter + 1];
    gvec[0] = beta;
    let mut k_used = 0;
    for k in 0..max_iter {
        let mut w = apply(&v[k])?;
        for (i, vi) in v.iter().enumerate() {
            h[i][k] = dot(&w, vi);
            for (wj, vj) in w.iter_mut().zip(vi) {
                *wj -= h[i][k] * vj;
            }
        }
        let wn = dot(&w, &w).sqrt();
        h[k + 1][k] = wn;
        for i in 0..k {
            let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
            h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
            h[i][k] = t;
        }
        let r = h[k][k].hypot(h[k + 1][k]);
        cs[k] = h[k][k] / r;
        sn[k] = h[k + 1][k] / r;
        h[k][k] = r;
        h[k + 1][k] = 0.0;
        gvec[k + 1] = -sn[k] * gvec[k];
        gvec[k] *= cs[k];
        k_used = k + 1;
        if gvec[k + 1].abs() <= rel_tol * beta || wn == 0.0 {
            break;
        }
        v.push(w.iter().map(|x| x / wn).collect());
    }
    let mut y = vec![0.0; k_used];
    for i in (0..k_used).rev() {
        let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
        y[i] = (gvec[i] - s) / h[i][i];
    }
    let mut x = vec![0.0; n];
    for (yi, vi) in y.iter().zip(&v) {
        for (xj, vj) in x.iter_mut().zip(vi) {
            *xj += yi * vj;
        }
    }
    Ok(x)
}

/// A converged pinned T-periodic orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub lambda: f64,
    pub gamma: f64,
    pub grid: GridSpec,
    pub phi0: Vec<f64>,
    pub vartheta0: Vec<f64>,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub jacobian_evaluations: usize,
    pub time_map_evaluations: usize,
    pub monodromy_spectral_radius_on_range: Option<f64>,
}

impl PeriodicOrbit {
    pub fn initial_state(&self) -> Result<State> {
        State::new(&self.grid.build()?, self.phi0.clone(), self.vartheta0.clone(), 0.0)
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.phi0.clone();
        v.extend_from_slice(&self.vartheta0);
        v
    }

    pub fn pin_value(&self) -> f64 {
        self.vartheta0[self.vartheta0.len() / 2]
    }
}

/// Newton solver with a reusable chord Jacobian.
pub struct PeriodicSolver<'a> {
    setup: &'a PoincareSetup,
    chord: Option<ChordJacobian>,
}

impl<'a> PeriodicSolver<'a> {
    pub fn new(setup: &'a PoincareSetup) -> Self {
        Self { setup, chord: None }
    }

    pub fn with_jacobian(setup: &'a PoincareSetup, chord: ChordJacobian) -> Self {
        Self {
            setup,
            chord: Some(chord),
        }
    }

    pub fn jacobian(&self) -> Option<&ChordJacobian> {
        self.chord.as_ref()
    }

    pub fn setup(&self) -> &PoincareSetup {
        self.setup
    }

    /// Damped Newton for F = 0 at fixed λ from (z, γ).
    pub fn solve_from(&mut self, lambda: f64, z0: &[f64], gamma0: f64) -> Result<PeriodicOrbit> {
        let setup = self.setup;
        let opts = &setup.options;
        let n2 = 2 * setup.grid().len();
        let pin = setup.pin_index();
        let mut z = z0.to_vec();
        let mut gamma = gamma0;
        z[pin] = 0.0;
        let mut f = setup.residual(&z, gamma, lambda)?;
        let mut evals = 1;
        let mut jac_evals = 0;
        let mut rn = setup.norm(&f);
        let mut fresh = false;
        let mut radius = None;
        let krylov = opts.jacobian == JacobianStrategy::NewtonKrylov;
        if !krylov && self.chord.is_none() {
            let j = ChordJacobian::compute(setup, &z, gamma, lambda)?;
            jac_evals += j.evaluations;
            radius = j.monodromy_radius_on_range().ok();
            self.chord = Some(j);
            fresh = true;
        }
        for it in 0..=opts.max_newton {
            let delta = if krylov {
                let (d, e) = newton_krylov_step(setup, &z, gamma, lambda, &f)?;
                jac_evals += e;
                d
            } else {
                self.chord.as_ref().expect("chord present").solve(&f)
            };
            let dn = setup.norm(&delta);
            if rn <= opts.tol && dn <= opts.step_tol {
                info!("orbit at lambda={lambda}: residual {rn:.3e} after {it} Newton steps");
                return Ok(PeriodicOrbit {
                    lambda,
                    gamma,
                    grid: setup.grid().spec(),
                    phi0: z[..n2 / 2].to_vec(),
                    vartheta0: z[n2 / 2..].to_vec(),
                    residual_norm: rn,
                    newton_iterations: it,
                    jacobian_evaluations: jac_evals,
                    time_map_evaluations: evals + jac_evals,
                    monodromy_spectral_radius_on_range: radius,
                });
            }
            if it == opts.max_newton {
                break;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let mut cand: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                cand[pin] = 0.0;
                let cg = gamma + step * delta[n2];
                evals += 1;
                match setup.residual(&cand, cg, lambda) {
                    Ok(fc) => {
                        let rc = setup.norm(&fc);
                        if rc < rn {
                            accepted = Some((cand, cg, fc, rc));
                            break;
                        }
                    }
                    Err(NeelError::Validity { .. }) => {}
                    Err(e) => return Err(e),
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, cg, fc, rc)) => {
                    let ratio = rc / rn;
                    debug!("newton {it}: residual {rn:.3e} -> {rc:.3e}, step {step}");
                    z = cand;
                    gamma = cg;
                    f = fc;
                    rn = rc;
                    if !krylov && ratio > opts.contraction_limit && rn > opts.tol {
                        let j = ChordJacobian::compute(setup, &z, gamma, lambda)?;
                        jac_evals += j.evaluations;
                        radius = j.monodromy_radius_on_range().ok();
                        self.chord = Some(j);
                        fresh = true;
                    } else {
                        fresh = false;
                    }
                }
                None if !krylov && !fresh => {
                    debug!("newton {it}: no decrease with a stale Jacobian, recomputing");
                    let j = ChordJacobian::compute(setup, &z, gamma, lambda)?;
                    jac_evals += j.evaluations;
                    radius = j.monodromy_radius_on_range().ok();
                    self.chord = Some(j);
                    fresh = true;
                }
                None => {
                    return Err(NeelError::SolverFailure {
                        message: format!("Newton stalled at lambda={lambda}; continuation step too large"),
                        iterations: it,
                        residual: rn,
                    });
                }
            }
        }
        Err(NeelError::SolverFailure {
            message: format!("Newton did not converge at lambda={lambda}; continuation step too large"),
            iterations: opts.max_newton,
            residual: rn,
        })
    }

    /// Solves at λ, warm-started from a previous orbit or from the wall.
    pub fn solve(&mut self, lambda: f64, warm_start: Option<&PeriodicOrbit>) -> Result<PeriodicOrbit> {
        match warm_start {
            Some(o) => {
                if o.grid != self.setup.grid().spec() {
                    return Err(NeelError::InvalidParameter(
                        "warm start lives on a different grid".into(),
                    ));
                }
                self.solve_from(lambda, &o.stacked(), o.gamma)
            }
            None => self.solve_from(lambda, &vec![0.0; 2 * self.setup.grid().len()], 0.0),
        }
    }
}

/// One-shot solve; builds a fresh Jacobian.
pub fn solve_periodic(lambda: f64, warm_start: Option<&PeriodicOrbit>, setup: &PoincareSetup) -> Result<PeriodicOrbit> {
    PeriodicSolver::new(setup).solve(lambda, warm_start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationFailure {
    pub lambda_attempted: f64,
    pub last_dlambda: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub orbits: Vec<PeriodicOrbit>,
    pub failure: Option<ContinuationFailure>,
    /// λ values at which a solve failed and the step was halved.
    pub halvings: Vec<f64>,
}

impl ContinuationResult {
    pub fn reached_lambda(&self) -> f64 {
        self.orbits.last().map_or(0.0, |o| o.lambda)
    }

    pub fn complete(&self) -> bool {
        self.failure.is_none()
    }

    /// (λ, γ(λ)) pairs.
    pub fn gamma_curve(&self) -> Vec<(f64, f64)> {
        self.orbits.iter().map(|o| (o.lambda, o.gamma)).collect()
    }
}

/// Sequential continuation from λ = 0 to `lambda_max` with `solve` doing the
/// work at each λ. The predictor is the secant through the last two orbits.
/// On failure Δλ is halved, down to `min_dlambda`; after a success it grows
/// back towards the initial step.
pub fn continuation_with<S>(lambda_max: f64, n_steps: usize, min_dlambda: f64, mut solve: S) -> ContinuationResult
where
    S: FnMut(f64, Option<&PeriodicOrbit>) -> Result<PeriodicOrbit>,
{
    let mut result = ContinuationResult {
        orbits: Vec::new(),
        failure: None,
        halvings: Vec::new(),
    };
    match solve(0.0, None) {
        Ok(o) => result.orbits.push(o),
        Err(e) => {
            result.failure = Some(ContinuationFailure {
                lambda_attempted: 0.0,
                last_dlambda: 0.0,
                reason: e.to_string(),
            });
            return result;
        }
    }
    if lambda_max == 0.0 || n_steps == 0 {
        return result;
    }
    let d0 = lambda_max / n_steps as f64;
    let mut d = d0;
    let mut lambda = 0.0f64;
    let scale = lambda_max.abs();
    while (lambda_max - lambda).abs() > 1e-12 * scale {
        let target = if (lambda_max - lambda).abs() <= d.abs() * (1.0 + 1e-9) {
            lambda_max
        } else {
            lambda + d
        };
        let guess = predict(&result.orbits, target);
        match solve(target, Some(&guess)) {
            Ok(o) => {
                lambda = target;
                result.orbits.push(o);
                d = if d.abs() * 2.0 <= d0.abs() { d * 2.0 } else { d0 };
            }
            Err(e) => {
                warn!("continuation step to lambda={target} failed: {e}");
                result.halvings.push(target);
                d *= 0.5;
                if d.abs() < min_dlambda {
                    result.failure = Some(ContinuationFailure {
                        lambda_attempted: target,
                        last_dlambda: d * 2.0,
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
    }
    result
}

fn predict(orbits: &[PeriodicOrbit], lambda: f64) -> PeriodicOrbit {
    let last = orbits.last().expect("at least one orbit");
    let mut guess = last.clone();
    if orbits.len() >= 2 {
        let prev = &orbits[orbits.len() - 2];
        let dl = last.lambda - prev.lambda;
        if dl != 0.0 {
            let s = (lambda - last.lambda) / dl;
            let lerp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * (x - y)).collect::<Vec<_>>();
            guess.phi0 = lerp(&last.phi0, &prev.phi0);
            guess.vartheta0 = lerp(&last.vartheta0, &prev.vartheta0);
            guess.gamma = last.gamma + s * (last.gamma - prev.gamma);
        }
    }
    guess.lambda = lambda;
    guess
}

/// Continuation with the Newton solver of this module; the chord Jacobian
/// is shared across steps.
pub fn continuation(lambda_max: f64, n_steps: usize, setup: &PoincareSetup) -> ContinuationResult {
    let mut solver = PeriodicSolver::new(setup);
    continuation_with(lambda_max, n_steps, setup.options.min_dlambda, |lambda, warm| {
        solver.solve(lambda, warm)
    })
}

/// Re-integration checks on a converged orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitVerification {
    pub lambda: f64,
    /// ‖(φ, ϑ)(kT) − (φ₀, ϑ₀)‖ for k = 1..=periods.
    pub return_residuals: Vec<f64>,
    /// max | |m| − 1 | over quarter-period snapshots.
    pub magnetization_defect: f64,
    pub max_phi: f64,
    pub pin_value: f64,
}

pub fn verify_orbit(orbit: &PeriodicOrbit, setup: &PoincareSetup, periods: usize) -> Result<OrbitVerification> {
    let g = setup.grid();
    let z0 = orbit.stacked();
    let forcing = setup.forcing(orbit.gamma, orbit.lambda).resolve(g)?;
    let mut integ = Integrator::from_vec(setup.dynamics(), forcing, &z0, 0.0);
    let wall_theta = setup.dynamics().wall().theta().to_vec();
    let quarter = (setup.steps / 4).max(1);
    let mut defect = 0.0f64;
    let mut max_phi = 0.0f64;
    let mut check = |phi: &[f64], vt: &[f64]| {
        for j in 0..phi.len() {
            let th = wall_theta[j] + vt[j];
            let m = [phi[j].cos() * th.cos(), phi[j].cos() * th.sin(), phi[j].sin()];
            let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            defect = defect.max((norm - 1.0).abs());
            max_phi = max_phi.max(phi[j].abs());
        }
    };
    check(integ.phi(), integ.vartheta());
    let mut residuals = Vec::with_capacity(periods);
    for _ in 0..periods {
        let mut done = 0;
        while done < setup.steps {
            let k = quarter.min(setup.steps - done);
            integ.advance(k)?;
            done += k;
            check(integ.phi(), integ.vartheta());
        }
        let mut d: Vec<f64> = integ.to_vec().iter().zip(&z0).map(|(a, b)| a - b).collect();
        d.push(0.0);
        residuals.push(setup.norm(&d));
    }
    Ok(OrbitVerification {
        lambda: orbit.lambda,
        return_residuals: residuals,
        magnetization_defect: defect,
        max_phi,
        pin_value: orbit.pin_value(),
    })
}
