//! Full nonlinear wall dynamics in the variables (φ, ϑ), θ = θε + ϑ, and a
//! fixed-step IMEX integrator.
//!
//! The constant-coefficient block κ(Δ, αΔ; -αΔ, Δ) is implicit and solved mode
//! by mode; everything else, including all stray-field terms, is explicit.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_with, PhaseProfile, WallProfile, Winding};
use crate::error::{NeelError, Result};
use crate::grid::{Grid, RealField};
use crate::linops::WallOperators;
use crate::params::RescaledParameters;
use crate::strayfield::StrayFieldOperator;

/// Out-of-plane angle φ and phase perturbation ϑ at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub phi: RealField,
    pub vartheta: RealField,
    pub time: f64,
}

impl State {
    pub fn zero(grid: &Grid) -> Self {
        Self {
            phi: RealField::zeros(grid),
            vartheta: RealField::zeros(grid),
            time: 0.0,
        }
    }

    pub fn new(grid: &Grid, phi: Vec<f64>, vartheta: Vec<f64>, time: f64) -> Result<Self> {
        Ok(Self {
            phi: RealField::new(grid, phi)?,
            vartheta: RealField::new(grid, vartheta)?,
            time,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    pub fn max_phi(&self) -> f64 {
        self.phi.values().iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    /// (φ, ϑ) stacked into one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.phi.values().to_vec();
        v.extend_from_slice(self.vartheta.values());
        v
    }

    pub fn from_vec(grid: &Grid, v: &[f64], time: f64) -> Result<Self> {
        let n = grid.len();
        if v.len() != 2 * n {
            return Err(NeelError::length(2 * n, v.len()));
        }
        Self::new(grid, v[..n].to_vec(), v[n..].to_vec(), time)
    }
}

/// Time dependence of the applied field shape h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Waveform {
    Zero,
    /// sin(2πt/T)
    Sine,
    /// cos(2πt/T)
    Cosine,
    /// Scalar samples on [0, T], linearly interpolated; first and last values equal.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// values[i][k] = h(times[i], nodes[k]), linear in t and x.
    SpaceTime {
        times: Vec<f64>,
        nodes: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

/// h_ext(t, x) = λ h(t, x) + γ with h of period T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingModel {
    pub waveform: Waveform,
    pub period: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl ForcingModel {
    pub fn zero() -> Self {
        Self {
            waveform: Waveform::Zero,
            period: 1.0,
            lambda: 0.0,
            gamma: 0.0,
        }
    }

    pub fn sine(period: f64, lambda: f64, gamma: f64) -> Self {
        Self {
            waveform: Waveform::Sine,
            period,
            lambda,
            gamma,
        }
    }

    pub fn with_amplitudes(&self, lambda: f64, gamma: f64) -> Self {
        Self {
            lambda,
            gamma,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(NeelError::InvalidParameter(format!(
                "forcing period must be positive, got {}",
                self.period
            )));
        }
        if !self.lambda.is_finite() || !self.gamma.is_finite() {
            return Err(NeelError::InvalidParameter("lambda and gamma must be finite".into()));
        }
        let check_times = |times: &[f64]| -> Result<()> {
            if times.len() < 2 {
                return Err(NeelError::InvalidParameter(
                    "tabulated forcing needs two samples".into(),
                ));
            }
            if times[0] != 0.0 || (times[times.len() - 1] - self.period).abs() > 1e-12 * self.period {
                return Err(NeelError::InvalidParameter(format!(
                    "tabulated times must run from 0 to T = {}",
                    self.period
                )));
            }
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(NeelError::InvalidParameter("tabulated times must increase".into()));
            }
            Ok(())
        };
        match &self.waveform {
            Waveform::Tabulated { times, values } => {
                check_times(times)?;
                if values.len() != times.len() {
                    return Err(NeelError::length(times.len(), values.len()));
                }
                if values[0] != values[values.len() - 1] {
                    return Err(NeelError::InvalidParameter(
                        "tabulated forcing must satisfy h(0) = h(T) exactly".into(),
                    ));
                }
            }
            Waveform::SpaceTime { times, nodes, values } => {
                check_times(times)?;
                if nodes.len() < 2 || nodes.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(NeelError::InvalidParameter("space-time nodes must increase".into()));
                }
                if values.len() != times.len() || values.iter().any(|r| r.len() != nodes.len()) {
                    return Err(NeelError::Dimension {
                        expected: format!("{}x{} samples", times.len(), nodes.len()),
                        found: "ragged table".into(),
                    });
                }
                if values[0] != values[values.len() - 1] {
                    return Err(NeelError::InvalidParameter(
                        "space-time forcing must satisfy h(0, x) = h(T, x) exactly".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Samples the waveform onto a grid for fast evaluation.
    pub fn resolve(&self, grid: &Grid) -> Result<ResolvedForcing> {
        self.validate()?;
        let rows = match &self.waveform {
            Waveform::SpaceTime { nodes, values, .. } => Some(
                values
                    .iter()
                    .map(|row| grid.sample(|x| interp(nodes, row, x)))
                    .collect(),
            ),
            _ => None,
        };
        Ok(ResolvedForcing {
            model: self.clone(),
            rows,
        })
    }
}

/// Linear interpolation, constant beyond the end points.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Applied field at one time: constant in space or sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Uniform(f64),
    Sampled(Vec<f64>),
}

impl FieldValue {
    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        match self {
            FieldValue::Uniform(v) => *v,
            FieldValue::Sampled(v) => v[j],
        }
    }
}

/// A forcing model bound to a grid.
#[derive(Debug, Clone)]
pub struct ResolvedForcing {
    model: ForcingModel,
    rows: Option<Vec<Vec<f64>>>,
}

impl ResolvedForcing {
    pub fn model(&self) -> &ForcingModel {
        &self.model
    }

    /// Shape h at time t (wrapped modulo T), without λ and γ.
    pub fn shape(&self, t: f64) -> FieldValue {
        let period = self.model.period;
        let s = t.rem_euclid(period);
        match &self.model.waveform {
            Waveform::Zero => FieldValue::Uniform(0.0),
            Waveform::Sine => FieldValue::Uniform((2.0 * PI * t / period).sin()),
            Waveform::Cosine => FieldValue::Uniform((2.0 * PI * t / period).cos()),
            Waveform::Tabulated { times, values } => FieldValue::Uniform(interp(times, values, s)),
            Waveform::SpaceTime { times, .. } => {
                let rows = self.rows.as_ref().expect("resolved");
                let i = (times.partition_point(|&v| v <= s).max(1) - 1).min(times.len() - 2);
                let w = ((s - times[i]) / (times[i + 1] - times[i])).clamp(0.0, 1.0);
                FieldValue::Sampled(rows[i].iter().zip(&rows[i + 1]).map(|(a, b)| a + w * (b - a)).collect())
            }
        }
    }

    /// h_ext(t) = λ h(t) + γ.
    pub fn field(&self, t: f64) -> FieldValue {
        let (lambda, gamma) = (self.model.lambda, self.model.gamma);
        match self.shape(t) {
            FieldValue::Uniform(h) => FieldValue::Uniform(lambda * h + gamma),
            FieldValue::Sampled(h) => FieldValue::Sampled(h.into_iter().map(|h| lambda * h + gamma).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImexEuler,
    ImexBdf2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Evaluate the explicit terms on a grid with twice the nodes and truncate.
    pub dealias: bool,
    /// Largest |φ| accepted before the run is stopped.
    pub max_phi: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 2000.0,
            scheme: Scheme::ImexBdf2,
            dealias: false,
            max_phi: FRAC_PI_4,
        }
    }
}

impl IntegratorConfig {
    pub fn for_period(period: f64, steps: usize) -> Self {
        Self {
            dt: period / steps as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(NeelError::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.max_phi > 0.0 && self.max_phi < std::f64::consts::FRAC_PI_2) {
            return Err(NeelError::InvalidParameter("max_phi must lie in (0, π/2)".into()));
        }
        Ok(())
    }

    /// Number of steps covering `duration`, which must be a multiple of dt.
    pub fn steps_for(&self, duration: f64) -> Result<usize> {
        let n = (duration / self.dt).round();
        if n < 1.0 || (n * self.dt - duration).abs() > 1e-9 * duration.abs().max(self.dt) {
            return Err(NeelError::InvalidParameter(format!(
                "duration {duration} is not a positive multiple of dt = {}",
                self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Wall quantities sampled on one grid.
#[derive(Debug, Clone)]
struct WallFields {
    grid: Grid,
    stray: StrayFieldOperator,
    cos: Vec<f64>,
    sin: Vec<f64>,
    slope: Vec<f64>,
    curvature: Vec<f64>,
    /// Derivative table, Nyquist dropped.
    d1: Vec<f64>,
    /// -ξ².
    d2: Vec<f64>,
}

impl WallFields {
    fn new(wall: &WallProfile) -> Result<Self> {
        if wall.profile.winding() != Winding::Wall {
            return Err(NeelError::InvalidParameter("dynamics needs a wall profile".into()));
        }
        let grid = wall.grid().clone();
        let mut d1 = grid.half_frequencies();
        let last = d1.len() - 1;
        d1[last] = 0.0;
        let d2 = grid.half_frequencies().iter().map(|x| -x * x).collect();
        Ok(Self {
            stray: StrayFieldOperator::new(&grid, wall.params.epsilon)?,
            cos: wall.theta().iter().map(|t| t.cos()).collect(),
            sin: wall.theta().iter().map(|t| t.sin()).collect(),
            slope: wall.derivative().to_vec(),
            curvature: wall.curvature().to_vec(),
            d1,
            d2,
            grid,
        })
    }

    /// (u', u'') from one forward transform.
    fn derivatives(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.grid.forward(u);
        let mut c1 = c.clone();
        for (ck, &m) in c1.iter_mut().zip(&self.d1) {
            *ck = Complex64::new(-ck.im * m, ck.re * m);
        }
        let mut c2 = c;
        for (ck, &m) in c2.iter_mut().zip(&self.d2) {
            *ck *= m;
        }
        (self.grid.inverse(c1), self.grid.inverse(c2))
    }

    /// (R1, R2), term by term.
    fn rhs(&self, p: &RescaledParameters, phi: &[f64], vt: &[f64], h: &FieldValue) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let (k, e, a) = (p.kappa, p.epsilon, p.alpha);
        let (dphi, d2phi) = self.derivatives(phi);
        let (dvt, d2vt) = self.derivatives(vt);
        let mut sp = vec![0.0; n];
        let mut cp = vec![0.0; n];
        let mut ct = vec![0.0; n];
        let mut st = vec![0.0; n];
        let mut cpct = vec![0.0; n];
        for j in 0..n {
            let (s, c) = phi[j].sin_cos();
            let (sv, cv) = vt[j].sin_cos();
            sp[j] = s;
            cp[j] = c;
            ct[j] = self.cos[j] * cv - self.sin[j] * sv;
            st[j] = self.sin[j] * cv + self.cos[j] * sv;
            cpct[j] = c * ct[j];
        }
        // A = (1/ε)S[cos φ cos θ] (antiperiodic), B = (1/ε)S[sin φ].
        let big_a = self.stray.apply_antiperiodic_slice(&cpct);
        let big_b = self.stray.apply_slice(&sp);
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        for j in 0..n {
            let (s, c) = (sp[j], cp[j]);
            let (cth, sth) = (ct[j], st[j]);
            let sec = 1.0 / c;
            let tan = s / c;
            let tp = self.slope[j] + dvt[j];
            let tpp = self.curvature[j] + d2vt[j];
            let cos2t = cth * cth - sth * sth;
            let sin2t = 2.0 * sth * cth;
            let sin2p = 2.0 * s * c;
            let hj = h.at(j);
            let aj = big_a[j];
            let bj = big_b[j];
            r1[j] = a / e * hj * cth + bj * c + aj * s * cth + a * aj * sth
                - hj / e * s * sth
                - 2.0 * a * k * s * dphi[j] * tp
                + sin2p / (4.0 * e) * (-2.0 - e + e * cos2t + 2.0 * e * k * tp * tp)
                + k * d2phi[j]
                + 0.5 * a * c * sin2t
                + a * k * c * tpp;
            r2[j] = -a * bj
                + hj / e * cth * sec
                + a / (2.0 * e) * s * (2.0 + e - e * cos2t)
                + 0.5 * sin2t
                + a / e * hj * tan * sth
                + aj * sec * sth
                - a * aj * tan * cth
                - 2.0 * k * tan * dphi[j] * tp
                - a * k * s * tp * tp
                - a * k * sec * d2phi[j]
                + k * tpp;
        }
        (r1, r2)
    }
}

/// Precomputed data for evaluating the right-hand side and stepping.
#[derive(Debug, Clone)]
pub struct Dynamics {
    params: RescaledParameters,
    coarse: WallFields,
    fine: Option<WallFields>,
    wall: WallProfile,
    config: IntegratorConfig,
    linear: Option<WallOperators>,
}

impl Dynamics {
    pub fn new(wall: &WallProfile, params: &RescaledParameters, config: &IntegratorConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        if params.kappa != wall.params.kappa || params.epsilon != wall.params.epsilon {
            return Err(NeelError::InvalidParameter(format!(
                "wall computed for kappa={}, epsilon={} but dynamics asked for kappa={}, epsilon={}",
                wall.params.kappa, wall.params.epsilon, params.kappa, params.epsilon
            )));
        }
        let fine = if config.dealias {
            let g = wall.grid();
            let fine_grid = Grid::new(g.half_length(), 2 * g.len())?;
            Some(WallFields::new(&wall.refine(&fine_grid)?)?)
        } else {
            None
        };
        Ok(Self {
            params: *params,
            coarse: WallFields::new(wall)?,
            fine,
            wall: wall.clone(),
            config: *config,
            linear: None,
        })
    }

    /// Same integrator, but with the right-hand side replaced by its
    /// linearisation ℒ₀(φ, ϑ) + (h/ε)(α cos θε, cos θε) at the wall.
    pub fn linearized(wall: &WallProfile, params: &RescaledParameters, config: &IntegratorConfig) -> Result<Self> {
        let config = IntegratorConfig {
            dealias: false,
            ..*config
        };
        let mut d = Self::new(wall, params, &config)?;
        d.linear = Some(WallOperators::new(wall)?);
        Ok(d)
    }

    pub fn is_linearized(&self) -> bool {
        self.linear.is_some()
    }

    pub fn grid(&self) -> &Grid {
        &self.coarse.grid
    }

    pub fn params(&self) -> &RescaledParameters {
        &self.params
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn wall(&self) -> &WallProfile {
        &self.wall
    }

    fn check_validity(&self, phi: &[f64], time: f64) -> Result<()> {
        let max_phi = phi.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if !(max_phi <= self.config.max_phi) {
            return Err(NeelError::Validity {
                time,
                max_phi,
                bound: self.config.max_phi,
            });
        }
        Ok(())
    }

    /// (R1, R2) at (φ, ϑ) with applied field h; the field is uniform or
    /// sampled on the integration grid.
    pub fn rhs_raw(&self, phi: &[f64], vt: &[f64], h: &FieldValue, time: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_validity(phi, time)?;
        if let Some(ops) = &self.linear {
            let (mut r1, mut r2) = ops.apply_l0(self.params.alpha, phi, vt);
            let (a, e) = (self.params.alpha, self.params.epsilon);
            for j in 0..r1.len() {
                let c = h.at(j) * self.coarse.cos[j] / e;
                r1[j] += a * c;
                r2[j] += c;
            }
            return Ok((r1, r2));
        }
        match &self.fine {
            None => Ok(self.coarse.rhs(&self.params, phi, vt, h)),
            Some(fine) => {
                let g = &self.coarse.grid;
                let pf = g.refine(&fine.grid, phi)?;
                let vf = g.refine(&fine.grid, vt)?;
                let hf = match h {
                    FieldValue::Uniform(v) => FieldValue::Uniform(*v),
                    FieldValue::Sampled(v) => FieldValue::Sampled(g.refine(&fine.grid, v)?),
                };
                let (r1, r2) = fine.rhs(&self.params, &pf, &vf, &hf);
                Ok((g.coarsen(&fine.grid, &r1)?, g.coarsen(&fine.grid, &r2)?))
            }
        }
    }

    /// Right-hand side minus the implicit block.
    fn explicit(&self, phi: &[f64], vt: &[f64], h: &FieldValue, time: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut r1, mut r2) = self.rhs_raw(phi, vt, h, time)?;
        let g = &self.coarse.grid;
        let (k, a) = (self.params.kappa, self.params.alpha);
        let d2p = g.apply_even(phi, &self.coarse.d2);
        let d2v = g.apply_even(vt, &self.coarse.d2);
        for j in 0..g.len() {
            r1[j] -= k * (d2p[j] + a * d2v[j]);
            r2[j] -= k * (-a * d2p[j] + d2v[j]);
        }
        Ok((r1, r2))
    }

    /// Solves (c0 I - dt K) u = (f1, f2) mode by mode.
    fn implicit_solve(&self, c0: f64, dt: f64, f1: &[f64], f2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = &self.coarse.grid;
        let (k, a) = (self.params.kappa, self.params.alpha);
        let mut p = g.forward(f1);
        let mut q = g.forward(f2);
        for (i, xi2) in self.coarse.d2.iter().map(|v| -v).enumerate() {
            let s = dt * k * xi2;
            let (m11, m12) = (c0 + s, a * s);
            let det = m11 * m11 + m12 * m12;
            let (pi, qi) = (p[i], q[i]);
            // [[m11, m12], [-m12, m11]]⁻¹ = [[m11, -m12], [m12, m11]] / det
            p[i] = (pi * m11 - qi * m12) / det;
            q[i] = (pi * m12 + qi * m11) / det;
        }
        (g.inverse(p), g.inverse(q))
    }

    fn check_state(&self, state: &State) -> Result<()> {
        if state.grid() != &self.coarse.grid {
            return Err(NeelError::grid_mismatch(&self.coarse.grid, state.grid()));
        }
        Ok(())
    }
}

/// (R1, R2) at `state` with the applied field of `forcing` at `state.time`.
pub fn rhs(
    state: &State,
    wall: &WallProfile,
    forcing: &ForcingModel,
    params: &RescaledParameters,
) -> Result<(RealField, RealField)> {
    let dynamics = Dynamics::new(wall, params, &IntegratorConfig::default())?;
    dynamics.check_state(state)?;
    let resolved = forcing.resolve(dynamics.grid())?;
    let h = resolved.field(state.time);
    let (r1, r2) = dynamics.rhs_raw(state.phi.values(), state.vartheta.values(), &h, state.time)?;
    Ok((
        RealField::new(dynamics.grid(), r1)?,
        RealField::new(dynamics.grid(), r2)?,
    ))
}

/// Fixed-step integrator carrying the history needed by BDF2.
pub struct Integrator<'a> {
    dynamics: &'a Dynamics,
    forcing: ResolvedForcing,
    phi: Vec<f64>,
    vt: Vec<f64>,
    time: f64,
    previous: Option<History>,
}

struct History {
    phi: Vec<f64>,
    vt: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(dynamics: &'a Dynamics, forcing: &ForcingModel, initial: &State) -> Result<Self> {
        dynamics.check_state(initial)?;
        Ok(Self {
            dynamics,
            forcing: forcing.resolve(dynamics.grid())?,
            phi: initial.phi.values().to_vec(),
            vt: initial.vartheta.values().to_vec(),
            time: initial.time,
            previous: None,
        })
    }

    /// Starts from a stacked (φ, ϑ) vector without building a [`State`].
    pub fn from_vec(dynamics: &'a Dynamics, forcing: ResolvedForcing, initial: &[f64], time: f64) -> Self {
        let n = dynamics.grid().len();
        Self {
            dynamics,
            forcing,
            phi: initial[..n].to_vec(),
            vt: initial[n..].to_vec(),
            time,
            previous: None,
        }
    }

    /// Supplies the state one step back so that BDF2 skips its startup step.
    pub fn seed_history(&mut self, previous: &State) -> Result<()> {
        self.dynamics.check_state(previous)?;
        let (phi, vt) = (previous.phi.values().to_vec(), previous.vartheta.values().to_vec());
        let h = self.forcing.field(previous.time);
        let (e1, e2) = self.dynamics.explicit(&phi, &vt, &h, previous.time)?;
        self.previous = Some(History { phi, vt, e1, e2 });
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn vartheta(&self) -> &[f64] {
        &self.vt
    }

    pub fn state(&self) -> Result<State> {
        State::new(self.dynamics.grid(), self.phi.clone(), self.vt.clone(), self.time)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.phi.clone();
        v.extend_from_slice(&self.vt);
        v
    }

    pub fn step(&mut self) -> Result<()> {
        let d = self.dynamics;
        let dt = d.config.dt;
        let h = self.forcing.field(self.time);
        let (e1, e2) = d.explicit(&self.phi, &self.vt, &h, self.time)?;
        let n = self.phi.len();
        let (new_phi, new_vt) = match (&self.previous, d.config.scheme) {
            (Some(prev), Scheme::ImexBdf2) => {
                let f1: Vec<f64> = (0..n)
                    .map(|j| 2.0 * self.phi[j] - 0.5 * prev.phi[j] + dt * (2.0 * e1[j] - prev.e1[j]))
                    .collect();
                let f2: Vec<f64> = (0..n)
                    .map(|j| 2.0 * self.vt[j] - 0.5 * prev.vt[j] + dt * (2.0 * e2[j] - prev.e2[j]))
                    .collect();
                d.implicit_solve(1.5, dt, &f1, &f2)
            }
            (None, Scheme::ImexBdf2) => {
                // Startup: Richardson extrapolation of one full and two half
                // Euler steps, so the first step is as accurate as the rest.
                let (full_p, full_v) = self.euler(dt, &self.phi, &self.vt, &e1, &e2);
                let (half_p, half_v) = self.euler(0.5 * dt, &self.phi, &self.vt, &e1, &e2);
                let hm = self.forcing.field(self.time + 0.5 * dt);
                let (m1, m2) = d.explicit(&half_p, &half_v, &hm, self.time + 0.5 * dt)?;
                let (two_p, two_v) = self.euler(0.5 * dt, &half_p, &half_v, &m1, &m2);
                (
                    two_p.iter().zip(&full_p).map(|(b, a)| 2.0 * b - a).collect(),
                    two_v.iter().zip(&full_v).map(|(b, a)| 2.0 * b - a).collect(),
                )
            }
            (_, Scheme::ImexEuler) => self.euler(dt, &self.phi, &self.vt, &e1, &e2),
        };
        let t_new = self.time + dt;
        if new_phi.iter().chain(&new_vt).any(|v| !v.is_finite()) {
            return Err(NeelError::Validity {
                time: t_new,
                max_phi: f64::INFINITY,
                bound: d.config.max_phi,
            });
        }
        d.check_validity(&new_phi, t_new)?;
        if d.config.scheme == Scheme::ImexBdf2 {
            self.previous = Some(History {
                phi: std::mem::replace(&mut self.phi, new_phi),
                vt: std::mem::replace(&mut self.vt, new_vt),
                e1,
                e2,
            });
        } else {
            self.phi = new_phi;
            self.vt = new_vt;
        }
        self.time = t_new;
        Ok(())
    }

    fn euler(&self, dt: f64, phi: &[f64], vt: &[f64], e1: &[f64], e2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let f1: Vec<f64> = phi.iter().zip(e1).map(|(u, e)| u + dt * e).collect();
        let f2: Vec<f64> = vt.iter().zip(e2).map(|(u, e)| u + dt * e).collect();
        self.dynamics.implicit_solve(1.0, dt, &f1, &f2)
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// One step from `state`. BDF2 without history takes the extrapolated
/// IMEX-Euler startup step.
pub fn step(
    state: &State,
    wall: &WallProfile,
    forcing: &ForcingModel,
    params: &RescaledParameters,
    config: &IntegratorConfig,
) -> Result<State> {
    let dynamics = Dynamics::new(wall, params, config)?;
    let mut integ = Integrator::new(&dynamics, forcing, state)?;
    integ.step()?;
    integ.state()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub time: f64,
    pub max_phi: f64,
    pub phi_norm: f64,
    pub vartheta_norm: f64,
    /// (ϑ, θ'ε): translation of the wall.
    pub drift: f64,
    /// Rescaled energy of θε + ϑ.
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub diagnostics: Vec<SnapshotDiagnostics>,
}

impl Dynamics {
    pub fn diagnostics(&self, phi: &[f64], vt: &[f64], time: f64) -> Result<SnapshotDiagnostics> {
        let g = self.grid();
        let w: Vec<f64> = self
            .wall
            .profile
            .periodic_part()
            .iter()
            .zip(vt)
            .map(|(a, b)| a + b)
            .collect();
        let profile = PhaseProfile::wall(g, w)?;
        let energy = energy_with(&profile, self.params.kappa, &self.coarse.stray)?.total;
        Ok(SnapshotDiagnostics {
            time,
            max_phi: phi.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            phi_norm: g.norm(phi),
            vartheta_norm: g.norm(vt),
            drift: g.dot(vt, &self.coarse.slope),
            energy,
        })
    }

    /// Integrates to `t_final` and records a snapshot every `every` steps
    /// (and always the first and last state).
    pub fn evolve(&self, initial: &State, t_final: f64, forcing: &ForcingModel, every: usize) -> Result<Trajectory> {
        let duration = t_final - initial.time;
        let steps = self.config.steps_for(duration)?;
        let every = every.max(1);
        let mut integ = Integrator::new(self, forcing, initial)?;
        let mut snapshots = vec![initial.clone()];
        let mut diagnostics = vec![self.diagnostics(integ.phi(), integ.vartheta(), integ.time())?];
        for s in 1..=steps {
            integ.step()?;
            if s % every == 0 || s == steps {
                snapshots.push(integ.state()?);
                diagnostics.push(self.diagnostics(integ.phi(), integ.vartheta(), integ.time())?);
            }
        }
        Ok(Trajectory { snapshots, diagnostics })
    }
}

/// Deterministic fixed-step run from `initial` to `t_final`.
pub fn evolve(
    initial: &State,
    t_final: f64,
    wall: &WallProfile,
    forcing: &ForcingModel,
    params: &RescaledParameters,
    config: &IntegratorConfig,
    snapshot_every: usize,
) -> Result<Trajectory> {
    Dynamics::new(wall, params, config)?.evolve(initial, t_final, forcing, snapshot_every)
}
