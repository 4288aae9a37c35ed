//! Rescaled wall energy, its Euler–Lagrange residual, and the static wall solver.
//!
//! A wall profile is stored as θ = θ_ref + w with θ_ref(x) = atan(sinh x) and
//! w odd and decaying. θ_ref equals arcsin(tanh x) but keeps full precision in
//! the tails, where tanh rounds to 1. Since θ(x + 2L) = θ(x) + π for such a
//! profile, cos θ and sin θ are 2L-antiperiodic and the stray field acts on
//! them through the half-integer modes.

use std::f64::consts::FRAC_PI_2;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{NeelError, Result};
use crate::grid::{Grid, RealField};
use crate::params::RescaledParameters;
use crate::strayfield::{Parity, StrayFieldOperator};

/// θ_ref(x) = atan(sinh x).
pub fn reference_phase(x: f64) -> f64 {
    x.sinh().atan()
}

/// θ_ref'(x) = sech x.
pub fn reference_slope(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// θ_ref''(x) = -tanh x sech x.
pub fn reference_curvature(x: f64) -> f64 {
    -x.tanh() / x.cosh()
}

/// How θ behaves under the 2L wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winding {
    /// θ = θ_ref + w, running from -π/2 to π/2.
    Wall,
    /// θ itself is 2L-periodic.
    Flat,
}

impl Winding {
    /// Parity of cos θ and sin θ.
    pub fn trig_parity(self) -> Parity {
        match self {
            Winding::Wall => Parity::Antiperiodic,
            Winding::Flat => Parity::Periodic,
        }
    }
}

/// Sampled phase θ together with its first two spectral derivatives.
#[derive(Debug, Clone)]
pub struct PhaseProfile {
    grid: Grid,
    winding: Winding,
    /// Periodic part: w for walls, θ itself for flat profiles.
    periodic_part: Vec<f64>,
    theta: Vec<f64>,
    slope: Vec<f64>,
    curvature: Vec<f64>,
}

fn clamp_phase(t: f64) -> f64 {
    t.clamp(-FRAC_PI_2, FRAC_PI_2)
}

impl PhaseProfile {
    /// θ = θ_ref + w, clamped to [-π/2, π/2].
    pub fn wall(grid: &Grid, w: Vec<f64>) -> Result<Self> {
        grid.check_len(&w)?;
        let x = grid.nodes();
        let theta: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(&x, &w)| clamp_phase(reference_phase(x) + w))
            .collect();
        let w: Vec<f64> = theta.iter().zip(&x).map(|(&t, &x)| t - reference_phase(x)).collect();
        let dw = grid.derivative_of(&w);
        let d2w = grid.second_derivative_of(&w);
        let slope = x.iter().zip(&dw).map(|(&x, d)| reference_slope(x) + d).collect();
        let curvature = x.iter().zip(&d2w).map(|(&x, d)| reference_curvature(x) + d).collect();
        let p = Self {
            grid: grid.clone(),
            winding: Winding::Wall,
            periodic_part: w,
            theta,
            slope,
            curvature,
        };
        p.check_finite()?;
        Ok(p)
    }

    /// Rebuilds a profile from stored samples without re-rounding θ, so that a
    /// saved profile reloads bit for bit. θ must agree with the periodic part.
    pub fn from_parts(grid: &Grid, winding: Winding, periodic_part: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        grid.check_len(&periodic_part)?;
        grid.check_len(&theta)?;
        let x = grid.nodes();
        let d1 = grid.derivative_of(&periodic_part);
        let d2 = grid.second_derivative_of(&periodic_part);
        let (expected, slope, curvature): (Vec<f64>, Vec<f64>, Vec<f64>) = match winding {
            Winding::Wall => (
                x.iter()
                    .zip(&periodic_part)
                    .map(|(&x, &w)| reference_phase(x) + w)
                    .collect(),
                x.iter().zip(&d1).map(|(&x, d)| reference_slope(x) + d).collect(),
                x.iter().zip(&d2).map(|(&x, d)| reference_curvature(x) + d).collect(),
            ),
            Winding::Flat => (periodic_part.clone(), d1, d2),
        };
        let mismatch = expected
            .iter()
            .zip(&theta)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !(mismatch <= 1e-12) || theta.iter().any(|t| t.abs() > FRAC_PI_2) {
            return Err(NeelError::InvalidParameter(format!(
                "theta disagrees with its periodic part by {mismatch:.3e} or leaves [-pi/2, pi/2]"
            )));
        }
        let p = Self {
            grid: grid.clone(),
            winding,
            periodic_part,
            theta,
            slope,
            curvature,
        };
        p.check_finite()?;
        Ok(p)
    }

    /// The reference profile itself.
    pub fn reference(grid: &Grid) -> Self {
        Self::wall(grid, vec![0.0; grid.len()]).expect("length matches")
    }

    /// A 2L-periodic phase, differentiated directly.
    pub fn flat(grid: &Grid, theta: Vec<f64>) -> Result<Self> {
        grid.check_len(&theta)?;
        let theta: Vec<f64> = theta.into_iter().map(clamp_phase).collect();
        let slope = grid.derivative_of(&theta);
        let curvature = grid.second_derivative_of(&theta);
        let p = Self {
            grid: grid.clone(),
            winding: Winding::Flat,
            periodic_part: theta.clone(),
            theta,
            slope,
            curvature,
        };
        p.check_finite()?;
        Ok(p)
    }

    fn check_finite(&self) -> Result<()> {
        if self
            .theta
            .iter()
            .chain(&self.slope)
            .chain(&self.curvature)
            .any(|v| !v.is_finite())
        {
            return Err(NeelError::Numerical("non-finite phase profile".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn winding(&self) -> Winding {
        self.winding
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn slope(&self) -> &[f64] {
        &self.slope
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// w for walls, θ for flat profiles.
    pub fn periodic_part(&self) -> &[f64] {
        &self.periodic_part
    }
}

/// The three contributions to the rescaled energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub exchange: f64,
    pub anisotropy: f64,
    pub stray: f64,
    pub total: f64,
}

fn check_profile(profile: &PhaseProfile, stray: &StrayFieldOperator) -> Result<()> {
    if profile.grid() != stray.grid() {
        return Err(NeelError::grid_mismatch(stray.grid(), profile.grid()));
    }
    Ok(())
}

/// κ∫θ'² + ∫cos²θ + (1/ε)∫𝒮ε[cos θ] cos θ, with an existing operator.
pub fn energy_with(profile: &PhaseProfile, kappa: f64, stray: &StrayFieldOperator) -> Result<EnergyTerms> {
    check_profile(profile, stray)?;
    let g = profile.grid();
    let c: Vec<f64> = profile.theta.iter().map(|t| t.cos()).collect();
    let sc = stray.apply_with(&c, profile.winding.trig_parity());
    let exchange = kappa * g.dot(&profile.slope, &profile.slope);
    let anisotropy = g.dot(&c, &c);
    let stray = g.dot(&sc, &c);
    Ok(EnergyTerms {
        exchange,
        anisotropy,
        stray,
        total: exchange + anisotropy + stray,
    })
}

pub fn energy(profile: &PhaseProfile, params: &RescaledParameters) -> Result<EnergyTerms> {
    params.validate()?;
    let stray = StrayFieldOperator::new(profile.grid(), params.epsilon)?;
    energy_with(profile, params.kappa, &stray)
}

/// κθ'' + ½ sin 2θ + (1/ε)𝒮ε[cos θ] sin θ, with an existing operator.
pub fn el_residual_with(profile: &PhaseProfile, kappa: f64, stray: &StrayFieldOperator) -> Result<Vec<f64>> {
    check_profile(profile, stray)?;
    let c: Vec<f64> = profile.theta.iter().map(|t| t.cos()).collect();
    let sc = stray.apply_with(&c, profile.winding.trig_parity());
    Ok(profile
        .theta
        .iter()
        .zip(&profile.curvature)
        .zip(&sc)
        .map(|((&t, &tpp), &s)| kappa * tpp + 0.5 * (2.0 * t).sin() + s * t.sin())
        .collect())
}

pub fn el_residual(profile: &PhaseProfile, params: &RescaledParameters) -> Result<RealField> {
    params.validate()?;
    let stray = StrayFieldOperator::new(profile.grid(), params.epsilon)?;
    RealField::new(profile.grid(), el_residual_with(profile, params.kappa, &stray)?)
}

/// Linearisation of the residual at θ applied to v:
/// κv'' + cos 2θ v - (1/ε)𝒮ε[sin θ v] sin θ + (1/ε)𝒮ε[cos θ] cos θ v.
pub(crate) fn el_jacobian_apply(
    profile: &PhaseProfile,
    kappa: f64,
    stray: &StrayFieldOperator,
    stray_cos: &[f64],
    v: &[f64],
) -> Vec<f64> {
    let g = profile.grid();
    let parity = profile.winding.trig_parity();
    let d2v = g.second_derivative_of(v);
    let sv: Vec<f64> = profile.theta.iter().zip(v).map(|(t, v)| t.sin() * v).collect();
    let ssv = stray.apply_with(&sv, parity);
    profile
        .theta
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (s, c) = t.sin_cos();
            kappa * d2v[j] + (2.0 * t).cos() * v[j] - ssv[j] * s + stray_cos[j] * c * v[j]
        })
        .collect()
}

/// Settings for [`solve_wall`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Residual at which the gradient flow hands over to Newton.
    pub gradient_tol: f64,
    /// Final residual, L² norm.
    pub tol: f64,
    pub max_gradient_iterations: usize,
    pub max_newton_iterations: usize,
    pub max_cg_iterations: usize,
    pub armijo: f64,
    /// Extra Newton steps taken after `tol` is reached.
    pub polish_steps: usize,
    /// tail_value above this flags the domain as too small.
    pub tail_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-3,
            tol: 1e-8,
            max_gradient_iterations: 20_000,
            max_newton_iterations: 60,
            max_cg_iterations: 4000,
            armijo: 1e-4,
            polish_steps: 2,
            tail_threshold: 0.05,
        }
    }
}

/// Solver history and warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WallDiagnostics {
    pub gradient_iterations: usize,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    /// Energy after every accepted gradient-flow step, starting at θ_ref.
    pub energy_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub reference_energy: f64,
    pub el_residual_max: f64,
    /// |(EL(θ), θ')|.
    pub translation_residual: f64,
    pub domain_too_small: bool,
    pub warnings: Vec<String>,
}

/// Converged static wall θε with θ'ε and θ''ε.
#[derive(Debug, Clone)]
pub struct WallProfile {
    pub profile: PhaseProfile,
    pub params: RescaledParameters,
    pub el_residual_norm: f64,
    /// max |cos θ| over |x| >= 3L/4.
    pub tail_value: f64,
    pub energy: EnergyTerms,
    pub diagnostics: WallDiagnostics,
}

/// Fraction of the half-length beyond which the tail is measured.
pub const TAIL_FRACTION: f64 = 0.75;

pub fn tail_value(profile: &PhaseProfile) -> f64 {
    let g = profile.grid();
    let edge = TAIL_FRACTION * g.half_length();
    profile
        .theta
        .iter()
        .enumerate()
        .filter(|(j, _)| g.node(*j).abs() >= edge - 1e-12)
        .map(|(_, t)| t.cos().abs())
        .fold(0.0, f64::max)
}

impl WallProfile {
    pub fn grid(&self) -> &Grid {
        self.profile.grid()
    }

    pub fn theta(&self) -> &[f64] {
        self.profile.theta()
    }

    /// θ'ε.
    pub fn derivative(&self) -> &[f64] {
        self.profile.slope()
    }

    pub fn derivative_field(&self) -> RealField {
        RealField::new(self.grid(), self.derivative().to_vec()).expect("finite by construction")
    }

    pub fn curvature(&self) -> &[f64] {
        self.profile.curvature()
    }

    /// Rebuilds the diagnostics of an already converged wall, for example one
    /// loaded from disk or interpolated to a finer grid.
    pub fn from_profile(
        profile: PhaseProfile,
        params: RescaledParameters,
        diagnostics: WallDiagnostics,
    ) -> Result<Self> {
        params.validate()?;
        let stray = StrayFieldOperator::new(profile.grid(), params.epsilon)?;
        let res = el_residual_with(&profile, params.kappa, &stray)?;
        let g = profile.grid();
        let energy = energy_with(&profile, params.kappa, &stray)?;
        let mut diagnostics = diagnostics;
        diagnostics.el_residual_max = res.iter().fold(0.0, |m, v| f64::max(m, v.abs()));
        diagnostics.translation_residual = g.dot(&res, profile.slope()).abs();
        Ok(Self {
            el_residual_norm: g.norm(&res),
            tail_value: tail_value(&profile),
            energy,
            profile,
            params,
            diagnostics,
        })
    }

    /// Trigonometric interpolation of w onto a grid with the same L and 2N nodes.
    pub fn refine(&self, fine: &Grid) -> Result<Self> {
        let w = self.grid().refine(fine, self.profile.periodic_part())?;
        let profile = match self.profile.winding {
            Winding::Wall => PhaseProfile::wall(fine, w)?,
            Winding::Flat => PhaseProfile::flat(fine, w)?,
        };
        Self::from_profile(profile, self.params, self.diagnostics.clone())
    }

    /// Quantities that stay bounded uniformly in ε.
    pub fn apriori_quantities(&self) -> Result<AprioriQuantities> {
        let g = self.grid();
        let stray = StrayFieldOperator::new(g, self.params.epsilon)?;
        let theta = self.theta();
        let slope = self.derivative();
        let c: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let dc: Vec<f64> = theta.iter().zip(slope).map(|(t, p)| -t.sin() * p).collect();
        let sc = stray.apply_with(&c, self.profile.winding.trig_parity());
        Ok(AprioriQuantities {
            slope_l2: g.norm(slope),
            cos_h1: (g.dot(&c, &c) + g.dot(&dc, &dc)).sqrt(),
            slope_max: slope.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
            stray_cos_max: sc.iter().zip(&c).fold(0.0, |m, (s, c)| f64::max(m, (s * c).abs())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriQuantities {
    pub slope_l2: f64,
    pub cos_h1: f64,
    pub slope_max: f64,
    pub stray_cos_max: f64,
}

struct WallSolver<'a> {
    grid: &'a Grid,
    kappa: f64,
    stray: StrayFieldOperator,
    /// Half-spectrum preconditioner 1 / (κξ² + 1 + 1/ε).
    precond: Vec<f64>,
    options: SolverOptions,
}

impl<'a> WallSolver<'a> {
    fn residual(&self, profile: &PhaseProfile) -> Vec<f64> {
        let r = el_residual_with(profile, self.kappa, &self.stray).expect("same grid");
        self.grid.odd_part(&r)
    }

    fn energy(&self, profile: &PhaseProfile) -> f64 {
        energy_with(profile, self.kappa, &self.stray).expect("same grid").total
    }

    /// L² gradient flow with Barzilai–Borwein steps and Armijo backtracking.
    fn gradient_flow(&self, mut profile: PhaseProfile, diag: &mut WallDiagnostics) -> Result<PhaseProfile> {
        let g = self.grid;
        let mut e = self.energy(&profile);
        diag.energy_history.push(e);
        let mut r = self.residual(&profile);
        let mut rn = g.norm(&r);
        let mut tau = 1.0 / (self.kappa * g.half_frequencies().last().unwrap().powi(2));
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for it in 0..self.options.max_gradient_iterations {
            if rn < self.options.gradient_tol {
                break;
            }
            if let Some((w_old, r_old)) = prev.take() {
                // s = Δw, y = Δ(grad) = -2 Δr
                let s: Vec<f64> = profile.periodic_part().iter().zip(&w_old).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = r.iter().zip(&r_old).map(|(a, b)| -(a - b)).collect();
                let sy = g.dot(&s, &y);
                if sy > 0.0 {
                    tau = g.dot(&s, &s) / sy;
                }
            }
            // Descent direction d = EL = -grad / 2; dE ≈ -2 τ ‖r‖².
            let mut step = tau;
            let mut accepted = None;
            for _ in 0..60 {
                let w_new: Vec<f64> = profile
                    .periodic_part()
                    .iter()
                    .zip(&r)
                    .map(|(w, r)| w + step * r)
                    .collect();
                let cand = PhaseProfile::wall(g, g.odd_part(&w_new))?;
                let e_new = self.energy(&cand);
                if e_new <= e - self.options.armijo * 2.0 * step * rn * rn {
                    accepted = Some((cand, e_new));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, e_new)) = accepted else {
                debug!("gradient flow stalled at iteration {it}, residual {rn:.3e}");
                break;
            };
            prev = Some((profile.periodic_part().to_vec(), r));
            profile = cand;
            e = e_new;
            r = self.residual(&profile);
            rn = g.norm(&r);
            diag.energy_history.push(e);
            diag.gradient_iterations = it + 1;
        }
        diag.residual_history.push(rn);
        Ok(profile)
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.grid.apply_even(r, &self.precond)
    }

    /// Preconditioned CG for (-ℒ₂) d = r on odd fields.
    fn newton_direction(&self, profile: &PhaseProfile, r: &[f64], diag: &mut WallDiagnostics) -> Vec<f64> {
        let g = self.grid;
        let c: Vec<f64> = profile.theta().iter().map(|t| t.cos()).collect();
        let sc = self.stray.apply_with(&c, profile.winding().trig_parity());
        let op = |v: &[f64]| -> Vec<f64> {
            let a = el_jacobian_apply(profile, self.kappa, &self.stray, &sc, v);
            g.odd_part(&a).into_iter().map(|x| -x).collect()
        };
        let n = r.len();
        let mut d = vec![0.0; n];
        let mut res = r.to_vec();
        let mut z = self.precondition(&res);
        let mut p = z.clone();
        let mut rz: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
        let r0 = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..self.options.max_cg_iterations {
            let ap = op(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                warn!("non-positive curvature in the wall Newton solve");
                break;
            }
            let a = rz / pap;
            for j in 0..n {
                d[j] += a * p[j];
                res[j] -= a * ap[j];
            }
            diag.cg_iterations += 1;
            let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn <= 1e-13 * r0 + 1e-300 {
                break;
            }
            z = self.precondition(&res);
            let rz_new: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
            for j in 0..n {
                p[j] = z[j] + rz_new / rz * p[j];
            }
            rz = rz_new;
        }
        d
    }

    fn newton(&self, mut profile: PhaseProfile, diag: &mut WallDiagnostics) -> Result<PhaseProfile> {
        let g = self.grid;
        let mut r = self.residual(&profile);
        let mut rn = g.norm(&r);
        let mut polish = 0;
        for it in 0..self.options.max_newton_iterations {
            if rn <= self.options.tol {
                if polish >= self.options.polish_steps {
                    break;
                }
                polish += 1;
            }
            let d = self.newton_direction(&profile, &r, diag);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let w_new: Vec<f64> = profile
                    .periodic_part()
                    .iter()
                    .zip(&d)
                    .map(|(w, d)| w + step * d)
                    .collect();
                let cand = PhaseProfile::wall(g, g.odd_part(&w_new))?;
                let r_new = self.residual(&cand);
                let rn_new = g.norm(&r_new);
                if rn_new < rn {
                    accepted = Some((cand, r_new, rn_new));
                    break;
                }
                step *= 0.5;
            }
            diag.newton_iterations = it + 1;
            let Some((cand, r_new, rn_new)) = accepted else {
                // No decrease: we are at the rounding floor or stuck.
                break;
            };
            profile = cand;
            r = r_new;
            rn = rn_new;
            diag.residual_history.push(rn);
            debug!("newton {it}: residual {rn:.3e}, step {step}");
        }
        if rn > self.options.tol {
            return Err(NeelError::SolverFailure {
                message: "static wall Newton iteration did not converge".into(),
                iterations: diag.newton_iterations,
                residual: rn,
            });
        }
        Ok(profile)
    }
}

/// Computes the static wall: gradient flow from θ_ref down to
/// `options.gradient_tol`, then damped Newton on odd fields down to `options.tol`.
pub fn solve_wall(params: &RescaledParameters, grid: &Grid, options: &SolverOptions) -> Result<WallProfile> {
    params.validate()?;
    let stray = StrayFieldOperator::new(grid, params.epsilon)?;
    let precond = grid
        .half_frequencies()
        .iter()
        .map(|xi| 1.0 / (params.kappa * xi * xi + 1.0 + 1.0 / params.epsilon))
        .collect();
    let solver = WallSolver {
        grid,
        kappa: params.kappa,
        stray,
        precond,
        options: *options,
    };
    let mut diag = WallDiagnostics::default();
    let start = PhaseProfile::reference(grid);
    diag.reference_energy = solver.energy(&start);
    let profile = solver.gradient_flow(start, &mut diag)?;
    let profile = solver.newton(profile, &mut diag)?;
    let mut wall = WallProfile::from_profile(profile, *params, diag)?;
    if wall.tail_value > options.tail_threshold {
        let msg = format!(
            "domain too small: max|cos θ| = {:.3e} beyond |x| >= {}L exceeds {}",
            wall.tail_value, TAIL_FRACTION, options.tail_threshold
        );
        warn!("{msg}");
        wall.diagnostics.domain_too_small = true;
        wall.diagnostics.warnings.push(msg);
    }
    Ok(wall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RescaledParameters {
        RescaledParameters::new(1.0, 0.1, 0.5).unwrap()
    }

    #[test]
    fn reference_terms_are_two() {
        let g = Grid::new(200.0, 4096).unwrap();
        let p = PhaseProfile::reference(&g);
        let e = energy(&p, &params()).unwrap();
        assert!((e.exchange - 2.0).abs() < 1e-8, "{}", e.exchange);
        assert!((e.anisotropy - 2.0).abs() < 1e-8, "{}", e.anisotropy);
        assert!(e.stray >= 0.0);
    }

    #[test]
    fn reference_tails_are_exact() {
        assert_eq!(reference_phase(-200.0), -FRAC_PI_2);
        assert!((reference_phase(30.0) - (30.0f64).tanh().asin()).abs() < 1e-7);
        assert!((reference_phase(0.7) - (0.7f64).tanh().asin()).abs() < 1e-15);
    }

    #[test]
    fn flat_zero_has_zero_residual() {
        let g = Grid::new(10.0, 128).unwrap();
        let p = PhaseProfile::flat(&g, vec![0.0; 128]).unwrap();
        let r = el_residual(&p, &params()).unwrap();
        assert!(r.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sharp_profile_drives_cos_terms_to_zero() {
        let g = Grid::new(10.0, 8192).unwrap();
        let mut last = f64::INFINITY;
        for width in [1.0, 0.3, 0.1, 0.03, 0.01] {
            let w = g.sample(|x| ((x / width).sinh().atan()) - reference_phase(x));
            let p = PhaseProfile::wall(&g, w).unwrap();
            let e = energy(&p, &params()).unwrap();
            let cos_terms = e.anisotropy + e.stray;
            assert!(cos_terms < last);
            last = cos_terms;
        }
        assert!(last < 0.3, "{last}");
    }

    #[test]
    fn energy_gradient_matches_residual() {
        let g = Grid::new(30.0, 512).unwrap();
        let p = PhaseProfile::reference(&g);
        let kappa = 1.0;
        let stray = StrayFieldOperator::new(&g, 0.1).unwrap();
        let r = el_residual_with(&p, kappa, &stray).unwrap();
        let v = g.sample(|x| x * (-0.5 * (x - 0.3).powi(2)).exp());
        let h = 1e-5;
        let shift = |s: f64| {
            let w: Vec<f64> = v.iter().map(|v| s * v).collect();
            energy_with(&PhaseProfile::wall(&g, w).unwrap(), kappa, &stray)
                .unwrap()
                .total
        };
        let fd = (shift(h) - shift(-h)) / (2.0 * h);
        let exact = -2.0 * g.dot(&r, &v);
        assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{fd} vs {exact}");
    }

    #[test]
    fn small_wall_solves_and_is_odd() {
        let g = Grid::new(25.0, 512).unwrap();
        let wall = solve_wall(&params(), &g, &SolverOptions::default()).unwrap();
        assert!(wall.el_residual_norm <= 1e-8);
        assert!(wall.theta()[g.center()].abs() < 1e-14);
        for j in 1..g.len() {
            assert!((wall.theta()[j] + wall.theta()[g.mirror(j)]).abs() < 1e-12);
            assert!(wall.derivative()[j] >= -1e-10);
        }
        assert!(wall.energy.total <= wall.diagnostics.reference_energy);
        let h = &wall.diagnostics.energy_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tiny_domain_flags_tail() {
        let g = Grid::new(5.0, 128).unwrap();
        let wall = solve_wall(&params(), &g, &SolverOptions::default()).unwrap();
        assert!(wall.diagnostics.domain_too_small);
        assert!(!wall.diagnostics.warnings.is_empty());
    }
}
