//! C ABI for `neel-core`.
//!
//! Every fallible function returns a [`NeelStatus`]; on failure the message
//! is kept per thread and read with [`neel_last_error_message`]. Handles
//! ([`NeelWall`], [`NeelOrbitSet`]) are opaque, created by the library and
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use neel_core::dynamics::{ForcingModel, IntegratorConfig};
use neel_core::energy::{solve_wall, SolverOptions, WallProfile};
use neel_core::io::{self, Archive, ArchiveKind, Manifest, OrbitSet};
use neel_core::periodic::{continuation, PeriodicOptions, PoincareSetup};
use neel_core::{rescale, rescaled_symbol, Grid, NeelError, PhysicalParameters, RescaledParameters};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Dimension = 3,
    SolverFailure = 4,
    Validity = 5,
    Numerical = 6,
    Io = 7,
    Format = 8,
    /// The output buffer is shorter than the data.
    BufferTooSmall = 9,
    IndexOutOfRange = 10,
    Panic = 11,
}

impl From<&NeelError> for NeelStatus {
    fn from(e: &NeelError) -> Self {
        match e {
            NeelError::InvalidParameter(_) | NeelError::Config(_) | NeelError::Resource(_) => {
                NeelStatus::InvalidParameter
            }
            NeelError::Dimension { .. } => NeelStatus::Dimension,
            NeelError::SolverFailure { .. } => NeelStatus::SolverFailure,
            NeelError::Validity { .. } => NeelStatus::Validity,
            NeelError::Numerical(_) => NeelStatus::Numerical,
            NeelError::Io(_) => NeelStatus::Io,
            NeelError::Serde(_) | NeelError::Csv(_) => NeelStatus::Format,
        }
    }
}

/// Dimensionless constants (κ, ε, α).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeelRescaledParameters {
    pub kappa: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

/// Exchange length d, film thickness δ, quality factor Q and α.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeelPhysicalParameters {
    pub d: f64,
    pub delta: f64,
    pub q: f64,
    pub alpha: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeelWallSummary {
    pub n_points: usize,
    pub half_length: f64,
    pub el_residual: f64,
    pub tail_value: f64,
    pub energy_exchange: f64,
    pub energy_anisotropy: f64,
    pub energy_stray: f64,
    pub energy_total: f64,
    pub domain_too_small: bool,
}

/// Settings for [`neel_orbits_continue`]. Zero fields take the defaults
/// (T = 1, 2000 steps per period, 10 continuation steps).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeelContinuationSettings {
    pub alpha: f64,
    pub period: f64,
    pub steps_per_period: usize,
    pub lambda_max: f64,
    pub n_steps: usize,
}

/// A converged static wall.
pub struct NeelWall {
    wall: WallProfile,
}

/// The orbits of one continuation run.
pub struct NeelOrbitSet {
    set: OrbitSet,
}

impl From<NeelRescaledParameters> for RescaledParameters {
    fn from(p: NeelRescaledParameters) -> Self {
        RescaledParameters {
            kappa: p.kappa,
            epsilon: p.epsilon,
            alpha: p.alpha,
        }
    }
}

impl From<RescaledParameters> for NeelRescaledParameters {
    fn from(p: RescaledParameters) -> Self {
        NeelRescaledParameters {
            kappa: p.kappa,
            epsilon: p.epsilon,
            alpha: p.alpha,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NeelStatus, String);

impl From<NeelError> for Failure {
    fn from(e: NeelError) -> Self {
        Failure(NeelStatus::from(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(NeelStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard<F>(f: F) -> NeelStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NeelStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            NeelStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NeelStatus::InvalidParameter, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err(Failure(
            NeelStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn neel_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn neel_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn neel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// (1/ε) σε(ξ).
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_rescaled_symbol(xi: f64, epsilon: f64, out: *mut f64) -> NeelStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = rescaled_symbol(xi, epsilon)?;
        Ok(())
    })
}

/// # Safety
/// `physical` must point to a readable struct and `out` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_rescale(
    physical: *const NeelPhysicalParameters,
    out: *mut NeelRescaledParameters,
) -> NeelStatus {
    guard(|| {
        let p = physical.as_ref().ok_or_else(|| null("physical"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = rescale(&PhysicalParameters {
            d: p.d,
            delta: p.delta,
            quality: p.q,
            alpha: p.alpha,
        })?;
        *out = r.into();
        Ok(())
    })
}

/// Solves the static wall on N nodes of [-L, L). `tol` <= 0 keeps the
/// default residual tolerance.
///
/// # Safety
/// `out` must be valid for one write; on success it receives a handle to
/// release with [`neel_wall_free`].
#[no_mangle]
pub unsafe extern "C" fn neel_wall_solve(
    params: NeelRescaledParameters,
    half_length: f64,
    n_points: usize,
    tol: f64,
    out: *mut *mut NeelWall,
) -> NeelStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let grid = Grid::new(half_length, n_points)?;
        let mut options = SolverOptions::default();
        if tol > 0.0 {
            options.tol = tol;
        }
        let wall = solve_wall(&params.into(), &grid, &options)?;
        *out = Box::into_raw(Box::new(NeelWall { wall }));
        Ok(())
    })
}

/// # Safety
/// `wall` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_free(wall: *mut NeelWall) {
    if !wall.is_null() {
        drop(Box::from_raw(wall));
    }
}

/// Number of grid nodes, or 0 for NULL.
///
/// # Safety
/// `wall` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_len(wall: *const NeelWall) -> usize {
    wall.as_ref().map_or(0, |w| w.wall.grid().len())
}

/// # Safety
/// `wall` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_summary(wall: *const NeelWall, out: *mut NeelWallSummary) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = NeelWallSummary {
            n_points: w.grid().len(),
            half_length: w.grid().half_length(),
            el_residual: w.el_residual_norm,
            tail_value: w.tail_value,
            energy_exchange: w.energy.exchange,
            energy_anisotropy: w.energy.anisotropy,
            energy_stray: w.energy.stray,
            energy_total: w.energy.total,
            domain_too_small: w.diagnostics.domain_too_small,
        };
        Ok(())
    })
}

/// # Safety
/// `wall` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_params(wall: *const NeelWall, out: *mut NeelRescaledParameters) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = w.params.into();
        Ok(())
    })
}

/// Grid nodes x_j into `out[0..len)`.
///
/// # Safety
/// `wall` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_nodes(wall: *const NeelWall, out: *mut f64, len: usize) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        copy_out(&w.grid().nodes(), out, len)
    })
}

/// θε at the nodes.
///
/// # Safety
/// `wall` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_theta(wall: *const NeelWall, out: *mut f64, len: usize) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        copy_out(w.theta(), out, len)
    })
}

/// θ'ε at the nodes.
///
/// # Safety
/// `wall` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_derivative(wall: *const NeelWall, out: *mut f64, len: usize) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        copy_out(w.derivative(), out, len)
    })
}

/// Writes the wall archive (the same format as `neel wall`).
///
/// # Safety
/// `wall` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_save(wall: *const NeelWall, path: *const c_char) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        let p = path_arg(path)?;
        let hash = io::config_hash(&w.params)?;
        io::save_wall(&p, w, Manifest::new("ffi", &hash))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_wall_load(path: *const c_char, out: *mut *mut NeelWall) -> NeelStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let (wall, _) = io::load_wall(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(NeelWall { wall }));
        Ok(())
    })
}

/// Continuation of T-periodic orbits under h = λ sin(2πt/T) + γ from λ = 0
/// to `lambda_max`, on the grid of `wall`. A run that stops early still
/// returns `Ok` with the orbits found; see [`neel_orbits_complete`].
///
/// # Safety
/// `wall` must be a live handle, `settings` readable and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_continue(
    wall: *const NeelWall,
    settings: *const NeelContinuationSettings,
    out: *mut *mut NeelOrbitSet,
) -> NeelStatus {
    guard(|| {
        let w = &wall.as_ref().ok_or_else(|| null("wall"))?.wall;
        let s = settings.as_ref().ok_or_else(|| null("settings"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let period = if s.period > 0.0 { s.period } else { 1.0 };
        let steps = if s.steps_per_period > 0 {
            s.steps_per_period
        } else {
            2000
        };
        let n_steps = if s.n_steps > 0 { s.n_steps } else { 10 };
        if !(s.lambda_max.is_finite() && s.lambda_max >= 0.0) {
            return Err(Failure(NeelStatus::InvalidParameter, "lambda_max must be >= 0".into()));
        }
        let params = w.params.with_alpha(s.alpha);
        params.validate()?;
        let forcing = ForcingModel::sine(period, 0.0, 0.0);
        let integrator = IntegratorConfig::for_period(period, steps);
        let options = PeriodicOptions {
            projection_modes: PeriodicOptions::default().projection_modes.min(2 * w.grid().len()),
            ..PeriodicOptions::default()
        };
        let setup = PoincareSetup::new(w, &params, &forcing, &integrator, &options)?;
        let r = continuation(s.lambda_max, n_steps, &setup);
        let set = OrbitSet {
            params,
            forcing,
            integrator,
            options,
            orbits: r.orbits,
            verification: Vec::new(),
            failure: r.failure,
            halvings: r.halvings,
        };
        *out = Box::into_raw(Box::new(NeelOrbitSet { set }));
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_free(set: *mut NeelOrbitSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of converged orbits, or 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_count(set: *const NeelOrbitSet) -> usize {
    set.as_ref().map_or(0, |s| s.set.orbits.len())
}

/// True when the run reached `lambda_max`.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_complete(set: *const NeelOrbitSet) -> bool {
    set.as_ref().is_some_and(|s| s.set.failure.is_none())
}

/// λ, γ(λ) and the fixed-point residual of orbit `index`.
///
/// # Safety
/// `set` must be a live handle; the out pointers must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_get(
    set: *const NeelOrbitSet,
    index: usize,
    lambda: *mut f64,
    gamma: *mut f64,
    residual: *mut f64,
) -> NeelStatus {
    guard(|| {
        let s = &set.as_ref().ok_or_else(|| null("set"))?.set;
        let o = s.orbits.get(index).ok_or_else(|| {
            Failure(
                NeelStatus::IndexOutOfRange,
                format!("orbit {index} of {}", s.orbits.len()),
            )
        })?;
        if lambda.is_null() || gamma.is_null() || residual.is_null() {
            return Err(null("output"));
        }
        *lambda = o.lambda;
        *gamma = o.gamma;
        *residual = o.residual_norm;
        Ok(())
    })
}

/// Initial data (φ₀, ϑ₀) of orbit `index`, `len` values each.
///
/// # Safety
/// `set` must be a live handle; `phi` and `vartheta` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_state(
    set: *const NeelOrbitSet,
    index: usize,
    phi: *mut f64,
    vartheta: *mut f64,
    len: usize,
) -> NeelStatus {
    guard(|| {
        let s = &set.as_ref().ok_or_else(|| null("set"))?.set;
        let o = s.orbits.get(index).ok_or_else(|| {
            Failure(
                NeelStatus::IndexOutOfRange,
                format!("orbit {index} of {}", s.orbits.len()),
            )
        })?;
        copy_out(&o.phi0, phi, len)?;
        copy_out(&o.vartheta0, vartheta, len)
    })
}

/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_save(set: *const NeelOrbitSet, path: *const c_char) -> NeelStatus {
    guard(|| {
        let s = &set.as_ref().ok_or_else(|| null("set"))?.set;
        let p = path_arg(path)?;
        let m = Manifest::new(
            "ffi",
            &io::config_hash(&(&s.params, &s.forcing, &s.integrator, &s.options))?,
        );
        Archive::new(ArchiveKind::Orbits, m, s.clone()).save(&p)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn neel_orbits_load(path: *const c_char, out: *mut *mut NeelOrbitSet) -> NeelStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let a: Archive<OrbitSet> = Archive::load(&path_arg(path)?, ArchiveKind::Orbits)?;
        *out = Box::into_raw(Box::new(NeelOrbitSet { set: a.payload }));
        Ok(())
    })
}
