//! The `neel` command-line tool: configuration, orchestration and output.
//!
//! Every run reads one JSON document, applies `--set key.path=value`
//! overrides, validates the result and writes its outputs plus a
//! `manifest.json` into `<output root>/<command>/`.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 solver failure,
//! 3 validity exit during `evolve`, 4 continuation stopped before `lambda_max`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{Dynamics, ForcingModel, Integrator, IntegratorConfig, Scheme, State, Waveform};
use crate::energy::{solve_wall, SolverOptions, WallProfile};
use crate::error::{NeelError, Result};
use crate::grid::{Grid, GridSpec, RealField};
use crate::io::{self, Archive, ArchiveKind, Manifest, OrbitSet};
use crate::linops::{
    quadratic_form_g, random_smooth_field, run_block_lemma_trials, spectrum, BlockLemmaTrials, SpectrumReport,
    SpectrumTolerances, WallOperators,
};
use crate::params::{rescale, PhysicalParameters, RescaledParameters};
use crate::periodic::{continuation, verify_orbit, PeriodicOptions, PoincareSetup};
use crate::svg::{self, Labels, Series};

/// Environment variable naming the output root when neither `--output` nor
/// `output_dir` is given.
pub const OUTPUT_ROOT_ENV: &str = "NEEL_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "neel-output";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VALIDITY: i32 = 3;
pub const EXIT_CONTINUATION: i32 = 4;

/// Largest coarse grid accepted by `spectrum`; L0 is dense of size 2N.
pub const MAX_SPECTRUM_POINTS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamsSpec {
    Rescaled(RescaledParameters),
    Physical(PhysicalParameters),
}

impl ParamsSpec {
    pub fn resolve(&self) -> Result<RescaledParameters> {
        match self {
            ParamsSpec::Rescaled(p) => {
                p.validate()?;
                Ok(*p)
            }
            ParamsSpec::Physical(p) => rescale(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    Zero,
    Sine,
    Cosine,
    /// Two-column CSV (t, h) in `table`.
    Tabulated,
    /// Matrix CSV h(t, x) in `table`.
    SpaceTime,
}

/// h_ext = λ h(t, x) + γ. `periodic` ignores λ and γ and sweeps λ itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    pub period: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub table: Option<PathBuf>,
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self {
            kind: ForcingKind::Sine,
            period: 1.0,
            lambda: 0.0,
            gamma: 0.0,
            table: None,
        }
    }
}

impl ForcingSpec {
    pub fn model(&self) -> Result<ForcingModel> {
        let table = || {
            self.table
                .as_deref()
                .ok_or_else(|| NeelError::Config(format!("forcing.kind = {:?} needs forcing.table", self.kind)))
        };
        let waveform = match self.kind {
            ForcingKind::Zero => Waveform::Zero,
            ForcingKind::Sine => Waveform::Sine,
            ForcingKind::Cosine => Waveform::Cosine,
            ForcingKind::Tabulated => io::read_tabulated_forcing(table()?, self.period)?,
            ForcingKind::SpaceTime => io::read_space_time_forcing(table()?, self.period)?,
        };
        let model = ForcingModel {
            waveform,
            period: self.period,
            lambda: self.lambda,
            gamma: self.gamma,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSpec {
    /// dt = period / steps_per_period unless `dt` is set.
    pub steps_per_period: usize,
    pub dt: Option<f64>,
    pub scheme: Scheme,
    pub dealias: bool,
    pub max_phi: f64,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let base = IntegratorConfig::default();
        Self {
            steps_per_period: 2000,
            dt: None,
            scheme: base.scheme,
            dealias: base.dealias,
            max_phi: base.max_phi,
        }
    }
}

impl IntegratorSpec {
    pub fn config(&self, period: f64) -> Result<IntegratorConfig> {
        if self.dt.is_none() && self.steps_per_period == 0 {
            return Err(NeelError::Config("integrator.steps_per_period must be positive".into()));
        }
        let c = IntegratorConfig {
            dt: self.dt.unwrap_or(period / self.steps_per_period as f64),
            scheme: self.scheme,
            dealias: self.dealias,
            max_phi: self.max_phi,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    /// α values for L0; empty means the α of `params`.
    pub alphas: Vec<f64>,
    pub tolerances: SpectrumTolerances,
    /// Relative bound on ‖L2 θ'‖ / ‖θ'‖ and ‖L0 (0, θ')‖ / ‖θ'‖.
    pub kernel_residual_tol: f64,
    /// Random directions ⟂ θ' for the Rayleigh quotient check.
    pub rayleigh_samples: usize,
    pub rayleigh_tol: f64,
    pub seed: u64,
    /// Randomized check of the abstract block lemma; off when null.
    pub block_lemma: Option<BlockLemmaTrials>,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self {
            alphas: Vec::new(),
            tolerances: SpectrumTolerances::default(),
            kernel_residual_tol: 1e-6,
            rayleigh_samples: 20,
            rayleigh_tol: 1e-8,
            seed: 1,
            block_lemma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Zero,
    /// Gaussian of the given amplitude and width in both φ and ϑ.
    Bump,
    /// Seeded sum of Gaussian bumps scaled to the amplitude.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    pub amplitude: f64,
    pub width: f64,
    pub seed: u64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            kind: InitialKind::Zero,
            amplitude: 0.01,
            width: 2.0,
            seed: 7,
        }
    }
}

impl InitialSpec {
    pub fn state(&self, grid: &Grid) -> Result<State> {
        if !(self.amplitude.is_finite() && self.width.is_finite() && self.width > 0.0) {
            return Err(NeelError::Config(
                "evolve.initial needs finite amplitude and positive width".into(),
            ));
        }
        let (phi, vt) = match self.kind {
            InitialKind::Zero => return Ok(State::zero(grid)),
            InitialKind::Bump => {
                let b = grid.sample(|x| self.amplitude * (-(x / self.width).powi(2)).exp());
                (b.clone(), b)
            }
            InitialKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut scaled = || {
                    let f = random_smooth_field(grid, 4, &mut rng);
                    let m = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                    f.into_iter().map(|v| self.amplitude * v / m).collect::<Vec<_>>()
                };
                let phi = scaled();
                (phi, scaled())
            }
        };
        State::new(grid, phi, vt, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSpec {
    pub t_final: f64,
    /// Steps between stored snapshots.
    pub snapshot_every: usize,
    pub initial: InitialSpec,
}

impl Default for EvolveSpec {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            snapshot_every: 100,
            initial: InitialSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicSpec {
    pub lambda_max: f64,
    pub n_steps: usize,
    pub options: PeriodicOptions,
    /// Periods of re-integration per orbit; 0 skips verification.
    pub verify_periods: usize,
}

impl Default for PeriodicSpec {
    fn default() -> Self {
        Self {
            lambda_max: 0.05,
            n_steps: 10,
            options: PeriodicOptions::default(),
            verify_periods: 3,
        }
    }
}

/// One run of the tool. Missing keys take their defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSpec,
    /// Grid for `wall`.
    pub grid: GridSpec,
    /// Grid for `spectrum`, `evolve` and `periodic`.
    pub coarse_grid: GridSpec,
    pub solver: SolverOptions,
    /// Reuse a saved wall instead of solving on `coarse_grid`.
    pub wall_archive: Option<PathBuf>,
    pub forcing: ForcingSpec,
    pub integrator: IntegratorSpec,
    pub spectrum: SpectrumSpec,
    pub evolve: EvolveSpec,
    pub periodic: PeriodicSpec,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParamsSpec::Rescaled(RescaledParameters::default()),
            grid: GridSpec {
                half_length: 200.0,
                n_points: 4096,
            },
            coarse_grid: GridSpec {
                half_length: 50.0,
                n_points: 1024,
            },
            solver: SolverOptions::default(),
            wall_archive: None,
            forcing: ForcingSpec::default(),
            integrator: IntegratorSpec::default(),
            spectrum: SpectrumSpec::default(),
            evolve: EvolveSpec::default(),
            periodic: PeriodicSpec::default(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Wall,
    Spectrum,
    Evolve,
    Periodic,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Wall => "wall",
            Command::Spectrum => "spectrum",
            Command::Evolve => "evolve",
            Command::Periodic => "periodic",
        }
    }
}

impl RunConfig {
    /// Checks everything the command will need before any computation starts.
    pub fn validate(&self, command: Command) -> Result<()> {
        self.params.resolve()?;
        let check_solver = |s: &SolverOptions| {
            if !(s.tol > 0.0 && s.gradient_tol > 0.0 && s.tail_threshold > 0.0) {
                return Err(NeelError::Config("solver tolerances must be positive".into()));
            }
            Ok(())
        };
        check_solver(&self.solver)?;
        if command == Command::Wall {
            self.grid.build()?;
            return Ok(());
        }
        let coarse = self.coarse_grid.build()?;
        if let Some(p) = &self.wall_archive {
            if !p.is_file() {
                return Err(NeelError::Config(format!(
                    "wall_archive {} does not exist",
                    p.display()
                )));
            }
        }
        match command {
            Command::Wall => unreachable!(),
            Command::Spectrum => {
                if coarse.len() > MAX_SPECTRUM_POINTS {
                    return Err(NeelError::Resource(format!(
                        "spectrum needs dense 2N x 2N matrices; coarse_grid.n_points = {} exceeds {MAX_SPECTRUM_POINTS}",
                        coarse.len()
                    )));
                }
                let s = &self.spectrum;
                if s.alphas.iter().any(|a| !a.is_finite()) {
                    return Err(NeelError::Config("spectrum.alphas must be finite".into()));
                }
                if let Some(b) = &s.block_lemma {
                    if b.size == 0 || b.alphas.iter().any(|a| !a.is_finite()) {
                        return Err(NeelError::Config(
                            "spectrum.block_lemma needs size > 0 and finite alphas".into(),
                        ));
                    }
                }
            }
            Command::Evolve => {
                let forcing = self.forcing.model()?;
                let cfg = self.integrator.config(forcing.period)?;
                cfg.steps_for(self.evolve.t_final)?;
                self.evolve.initial.state(&coarse)?;
            }
            Command::Periodic => {
                let forcing = self.forcing.model()?;
                let cfg = self.integrator.config(forcing.period)?;
                cfg.steps_for(forcing.period)?;
                self.periodic.options.validate(&coarse)?;
                let p = &self.periodic;
                if !(p.lambda_max.is_finite() && p.lambda_max >= 0.0) || p.n_steps == 0 {
                    return Err(NeelError::Config(
                        "periodic.lambda_max must be non-negative and n_steps positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Merges `overlay` into `base`. Objects merge key by key, except that
/// single-key objects with different keys (enum variants such as
/// `{"rescaled": ...}` and `{"physical": ...}`) replace each other.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            let variant_switch = b.len() == 1 && o.len() == 1 && b.keys().next() != o.keys().next();
            if variant_switch {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON and taken as a string
/// if that fails.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| NeelError::Config(format!("override {assignment:?} is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(NeelError::Config(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut overlay = value;
    for k in keys.iter().rev() {
        let mut m = serde_json::Map::new();
        m.insert((*k).to_string(), overlay);
        overlay = Value::Object(m);
    }
    merge(doc, overlay);
    Ok(())
}

/// Defaults, then the config file, then the overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = serde_json::to_value(RunConfig::default())?;
    if let Some(p) = path {
        let text =
            fs::read_to_string(p).map_err(|e| NeelError::Config(format!("cannot read config {}: {e}", p.display())))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| NeelError::Config(format!("{}: {e}", p.display())))?;
        if !file.is_object() {
            return Err(NeelError::Config(format!(
                "{}: top level must be an object",
                p.display()
            )));
        }
        merge(&mut doc, file);
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| NeelError::Config(e.to_string()))
}

/// Output directory precedence: `--output`, `output_dir`, the environment
/// variable, then `./neel-output`.
pub fn output_root(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn exit_code(err: &NeelError) -> i32 {
    match err {
        NeelError::SolverFailure { .. } | NeelError::Numerical(_) | NeelError::Resource(_) => EXIT_SOLVER,
        NeelError::Validity { .. } => EXIT_VALIDITY,
        NeelError::InvalidParameter(_)
        | NeelError::Dimension { .. }
        | NeelError::Config(_)
        | NeelError::Io(_)
        | NeelError::Serde(_)
        | NeelError::Csv(_) => EXIT_CONFIG,
    }
}

/// Collects outputs and their checksums for the manifest.
struct Run {
    dir: PathBuf,
    manifest: Manifest,
    quiet: bool,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        self.manifest.record_output(&p, &self.dir)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        io::write_text(&self.path(name), text)?;
        self.record(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.text(name, &serde_json::to_string_pretty(value)?)
    }

    fn columns(&mut self, name: &str, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
        io::write_columns(&self.path(name), headers, columns)?;
        self.record(name)
    }

    fn archive<T: Serialize + serde::de::DeserializeOwned>(
        &mut self,
        name: &str,
        kind: ArchiveKind,
        payload: T,
    ) -> Result<()> {
        let mut m = self.manifest.clone();
        m.outputs.clear();
        Archive::new(kind, m, payload).save(&self.path(name))?;
        self.record(name)
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn note(&mut self, line: String) {
        self.say(&format!("note: {line}"));
        self.manifest.notes.push(line);
    }
}

/// Result of [`execute`].
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

/// Runs `command` with a parsed configuration, writing into `root/<command>`.
/// Configuration problems found by validation produce exit code 1 without
/// touching the output directory.
pub fn execute(command: Command, config: &RunConfig, root: &Path, quiet: bool) -> Outcome {
    let dir = root.join(command.name());
    let hash = io::config_hash(config).unwrap_or_default();
    let mut run = Run {
        dir: dir.clone(),
        manifest: Manifest::new(command.name(), &hash),
        quiet,
    };
    if let Err(e) = config.validate(command) {
        eprintln!("error: {e}");
        run.manifest.status = format!("error: {e}");
        run.manifest.exit_code = exit_code(&e);
        return Outcome {
            exit_code: run.manifest.exit_code,
            output_dir: dir,
            manifest: run.manifest,
        };
    }
    let result = fs::create_dir_all(&dir)
        .map_err(NeelError::from)
        .and_then(|_| run.json("config.json", config))
        .and_then(|_| match command {
            Command::Wall => cmd_wall(config, &mut run),
            Command::Spectrum => cmd_spectrum(config, &mut run),
            Command::Evolve => cmd_evolve(config, &mut run),
            Command::Periodic => cmd_periodic(config, &mut run),
        });
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            run.manifest.status = format!("error: {e}");
            exit_code(&e)
        }
    };
    run.manifest.exit_code = code;
    if code != EXIT_OK && run.manifest.status == "ok" {
        run.manifest.status = "incomplete".into();
    }
    let text = serde_json::to_string_pretty(&run.manifest).unwrap_or_default();
    if let Err(e) = io::write_text(&dir.join("manifest.json"), &text) {
        eprintln!("error: cannot write manifest: {e}");
    }
    Outcome {
        exit_code: code,
        output_dir: dir,
        manifest: run.manifest,
    }
}

fn wall_manifest_tolerances(run: &mut Run, config: &RunConfig) {
    run.manifest = run
        .manifest
        .clone()
        .tolerance("wall.tol", config.solver.tol)
        .tolerance("wall.tail_threshold", config.solver.tail_threshold);
}

fn print_wall(run: &Run, wall: &WallProfile) {
    let e = &wall.energy;
    let d = &wall.diagnostics;
    run.say(&format!("grid            {}", wall.grid()));
    run.say(&format!(
        "params          kappa = {}, epsilon = {}, alpha = {}",
        wall.params.kappa, wall.params.epsilon, wall.params.alpha
    ));
    run.say(&format!("energy exchange {:.12e}", e.exchange));
    run.say(&format!("energy anisotr. {:.12e}", e.anisotropy));
    run.say(&format!("energy stray    {:.12e}", e.stray));
    run.say(&format!("energy total    {:.12e}", e.total));
    run.say(&format!("reference       {:.12e}", d.reference_energy));
    run.say(&format!(
        "EL residual     {:.3e} (max {:.3e})",
        wall.el_residual_norm, d.el_residual_max
    ));
    run.say(&format!("tail value      {:.3e}", wall.tail_value));
    run.say(&format!(
        "iterations      gradient {}, newton {}, cg {}",
        d.gradient_iterations, d.newton_iterations, d.cg_iterations
    ));
    for w in &d.warnings {
        run.say(&format!("warning: {w}"));
    }
}

fn cmd_wall(config: &RunConfig, run: &mut Run) -> Result<i32> {
    let params = config.params.resolve()?;
    let grid = config.grid.build()?;
    wall_manifest_tolerances(run, config);
    let wall = solve_wall(&params, &grid, &config.solver)?;
    print_wall(run, &wall);
    if wall.diagnostics.domain_too_small {
        run.note(format!(
            "domain too small: tail value {:.3e} exceeds {}",
            wall.tail_value, config.solver.tail_threshold
        ));
    }
    run.manifest.metric("el_residual", wall.el_residual_norm);
    run.manifest.metric("tail_value", wall.tail_value);
    run.manifest.metric("energy", wall.energy.total);
    run.archive("wall.json", ArchiveKind::Wall, io::WallRecord::from_wall(&wall))?;
    let x = grid.nodes();
    run.columns(
        "wall_profile.csv",
        &["x", "theta", "theta_prime"],
        &[&x, wall.theta(), wall.derivative()],
    )?;
    let plot = svg::line_plot(
        &[
            Series::new("theta", &x, wall.theta()),
            Series::new("theta'", &x, wall.derivative()),
        ],
        &Labels::new("Neel wall profile", "x", "value"),
    );
    run.text("wall.svg", &plot)?;
    Ok(EXIT_OK)
}

/// Loads the configured archive or solves on the coarse grid.
fn coarse_wall(config: &RunConfig, params: &RescaledParameters, run: &mut Run) -> Result<WallProfile> {
    wall_manifest_tolerances(run, config);
    let wall = match &config.wall_archive {
        Some(p) => {
            let (wall, _) = io::load_wall(p)?;
            if wall.params.kappa != params.kappa || wall.params.epsilon != params.epsilon {
                return Err(NeelError::Config(format!(
                    "wall archive has kappa = {}, epsilon = {} but the run uses kappa = {}, epsilon = {}",
                    wall.params.kappa, wall.params.epsilon, params.kappa, params.epsilon
                )));
            }
            if wall.grid().spec() != config.coarse_grid {
                run.note(format!("using the archive grid {} instead of coarse_grid", wall.grid()));
            }
            run.note(format!("wall loaded from {}", p.display()));
            wall
        }
        None => solve_wall(params, &config.coarse_grid.build()?, &config.solver)?,
    };
    if wall.diagnostics.domain_too_small {
        run.note(format!("domain too small: tail value {:.3e}", wall.tail_value));
    }
    run.manifest.metric("wall.el_residual", wall.el_residual_norm);
    Ok(wall)
}

fn claim_line(run: &Run, report: &SpectrumReport) {
    for c in &report.claims {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        run.say(&format!(
            "{tag} {:<28} {}",
            format!("{}:{}", report.label, c.name),
            c.detail
        ));
    }
}

fn cmd_spectrum(config: &RunConfig, run: &mut Run) -> Result<i32> {
    let params = config.params.resolve()?;
    let spec = &config.spectrum;
    let tol = &spec.tolerances;
    run.manifest = run
        .manifest
        .clone()
        .tolerance("spectrum.zero_rel", tol.zero_rel)
        .tolerance("spectrum.imaginary_rel", tol.imaginary_rel)
        .tolerance("spectrum.kernel_residual", spec.kernel_residual_tol)
        .tolerance("spectrum.rayleigh", spec.rayleigh_tol);
    let wall = coarse_wall(config, &params, run)?;
    let g = wall.grid().clone();
    let ops = WallOperators::new(&wall)?;
    let slope = wall.derivative();
    let slope_norm = g.norm(slope);

    let l1 = ops.assemble_l1();
    let mut r1 = spectrum(&l1, tol)?;
    r1.params = Some(params);
    let max1 = r1.max_real();
    r1.add_claim(
        "negative_definite",
        max1 < 0.0,
        format!("largest eigenvalue {max1:.6e}"),
    );

    let l2 = ops.assemble_l2();
    let mut r2 = spectrum(&l2, tol)?;
    r2.params = Some(params);
    let k2 = g.norm(&ops.apply_l2(slope)) / slope_norm;
    r2.add_claim(
        "kernel_residual",
        k2 <= spec.kernel_residual_tol,
        format!("|L2 theta'| / |theta'| = {k2:.3e}"),
    );
    r2.add_claim(
        "kernel_dimension",
        r2.kernel_dimension_estimate == 1,
        format!(
            "{} eigenvalue(s) with |lambda| <= {:.3e}",
            r2.kernel_dimension_estimate, r2.tol_zero
        ),
    );
    r2.add_claim(
        "gap",
        r2.max_real_nonzero < 0.0,
        format!("largest nonzero eigenvalue {:.6e}", r2.max_real_nonzero),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut worst = f64::INFINITY;
    for _ in 0..spec.rayleigh_samples {
        let mut u = random_smooth_field(&g, 4, &mut rng);
        let c = g.dot(&u, slope) / (slope_norm * slope_norm);
        u.iter_mut().zip(slope).for_each(|(a, s)| *a -= c * s);
        let uf = RealField::new(&g, u)?;
        let q = quadratic_form_g(&l2, &uf, &uf)? / uf.norm().powi(2);
        worst = worst.min(q);
    }
    if spec.rayleigh_samples > 0 {
        r2.add_claim(
            "rayleigh_quotients",
            worst >= -spec.rayleigh_tol,
            format!(
                "min G(u,u)/|u|^2 over {} directions = {worst:.6e}",
                spec.rayleigh_samples
            ),
        );
    }

    let alphas = if spec.alphas.is_empty() {
        vec![params.alpha]
    } else {
        spec.alphas.clone()
    };
    let mut reports0 = Vec::new();
    for &alpha in &alphas {
        let l0 = ops.assemble_l0(alpha);
        let mut r0 = spectrum(&l0, tol)?;
        r0.params = Some(params.with_alpha(alpha));
        let (a, b) = ops.apply_l0(alpha, &vec![0.0; g.len()], slope);
        let k0 = (g.dot(&a, &a) + g.dot(&b, &b)).sqrt() / slope_norm;
        r0.add_claim(
            "kernel_residual",
            k0 <= spec.kernel_residual_tol,
            format!("|L0 (0, theta')| / |theta'| = {k0:.3e}"),
        );
        r0.add_claim(
            "kernel_nonempty",
            r0.kernel_dimension_estimate >= 1,
            format!(
                "{} eigenvalue(s) with |lambda| <= {:.3e}",
                r0.kernel_dimension_estimate, r0.tol_zero
            ),
        );
        r0.add_claim(
            "imaginary_axis_empty",
            r0.imaginary_axis_violations.is_empty(),
            format!(
                "{} nonzero eigenvalue(s) with |Re| <= {:.3e}; largest nonzero Re = {:.6e}",
                r0.imaginary_axis_violations.len(),
                r0.tol_re,
                r0.max_real_nonzero
            ),
        );
        if alpha == 0.0 {
            let mut union: Vec<f64> = r1.eigenvalues.iter().chain(&r2.eigenvalues).map(|z| z[0]).collect();
            union.sort_by(f64::total_cmp);
            let scale = r0.operator_norm.max(1.0);
            let diff = union
                .iter()
                .zip(&r0.eigenvalues)
                .map(|(u, z)| (u - z[0]).abs().max(z[1].abs()))
                .fold(0.0f64, f64::max);
            r0.add_claim(
                "union_of_blocks",
                union.len() == r0.eigenvalues.len() && diff <= 1e-8 * scale,
                format!("max deviation from sigma(L1) u sigma(L2) = {diff:.3e} (scale {scale:.3e})"),
            );
        }
        reports0.push(r0);
    }

    claim_line(run, &r1);
    claim_line(run, &r2);
    for r in &reports0 {
        claim_line(run, r);
    }
    run.manifest.metric("l1.max_eigenvalue", max1);
    run.manifest.metric("l2.gap", -r2.max_real_nonzero);

    let mut series = vec![
        Series::new(
            "L1",
            &r1.eigenvalues.iter().map(|z| z[0]).collect::<Vec<_>>(),
            &vec![0.0; r1.size],
        ),
        Series::new(
            "L2",
            &r2.eigenvalues.iter().map(|z| z[0]).collect::<Vec<_>>(),
            &vec![0.0; r2.size],
        ),
    ];
    for r in &reports0 {
        let re: Vec<f64> = r.eigenvalues.iter().map(|z| z[0]).collect();
        let im: Vec<f64> = r.eigenvalues.iter().map(|z| z[1]).collect();
        series.push(Series::new(&r.label, &re, &im));
    }
    let mut all_pass = r1.all_claims_pass() && r2.all_claims_pass();
    run.archive("l1_spectrum.json", ArchiveKind::Spectrum, r1)?;
    run.archive("l2_spectrum.json", ArchiveKind::Spectrum, r2)?;
    for (alpha, r) in alphas.iter().zip(reports0) {
        all_pass &= r.all_claims_pass();
        run.archive(&format!("l0_spectrum_alpha_{alpha}.json"), ArchiveKind::Spectrum, r)?;
    }
    run.text(
        "spectrum.svg",
        &svg::scatter_plot(&series, &Labels::new("Eigenvalues", "Re", "Im")),
    )?;

    if let Some(trials) = &spec.block_lemma {
        let summary = run_block_lemma_trials(trials)?;
        let ok = summary.violations.is_empty();
        all_pass &= ok;
        run.say(&format!(
            "{} {:<28} {} spectra, {} violation(s), min |Re|/|T| = {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            "block_lemma",
            summary.spectra_checked,
            summary.violations.len(),
            summary.min_relative_real_part
        ));
        run.json("block_lemma.json", &summary)?;
    }
    if !all_pass {
        run.manifest.status = "claims failed".into();
    }
    Ok(EXIT_OK)
}

fn cmd_evolve(config: &RunConfig, run: &mut Run) -> Result<i32> {
    let params = config.params.resolve()?;
    let forcing = config.forcing.model()?;
    let icfg = config.integrator.config(forcing.period)?;
    run.manifest = run
        .manifest
        .clone()
        .tolerance("integrator.dt", icfg.dt)
        .tolerance("integrator.max_phi", icfg.max_phi);
    let wall = coarse_wall(config, &params, run)?;
    let g = wall.grid().clone();
    let dynamics = Dynamics::new(&wall, &params, &icfg)?;
    let initial = config.evolve.initial.state(&g)?;
    let steps = icfg.steps_for(config.evolve.t_final)?;
    let every = config.evolve.snapshot_every.max(1);

    let mut integ = Integrator::new(&dynamics, &forcing, &initial)?;
    let mut snapshots = vec![initial.clone()];
    let mut diags = vec![dynamics.diagnostics(integ.phi(), integ.vartheta(), 0.0)?];
    let mut failure = None;
    for s in 1..=steps {
        if let Err(e) = integ.step() {
            failure = Some(e);
            break;
        }
        if s % every == 0 || s == steps {
            snapshots.push(integ.state()?);
            diags.push(dynamics.diagnostics(integ.phi(), integ.vartheta(), integ.time())?);
        }
    }
    // Keep the state at the moment of failure as the last snapshot.
    if failure.is_some() {
        let t = integ.time();
        if snapshots.last().map_or(true, |s| s.time < t) {
            if let Ok(st) = integ.state() {
                diags.push(dynamics.diagnostics(st.phi.values(), st.vartheta.values(), t)?);
                snapshots.push(st);
            }
        }
    }

    let x = g.nodes();
    for (k, s) in snapshots.iter().enumerate() {
        let theta: Vec<f64> = wall
            .theta()
            .iter()
            .zip(s.vartheta.values())
            .map(|(a, b)| a + b)
            .collect();
        run.columns(
            &format!("snapshots/snapshot_{k:05}.csv"),
            &["x", "phi", "vartheta", "theta"],
            &[&x, s.phi.values(), s.vartheta.values(), &theta],
        )?;
    }
    let col = |f: fn(&crate::dynamics::SnapshotDiagnostics) -> f64| diags.iter().map(f).collect::<Vec<f64>>();
    let (t, mp, pn, vn, dr, en) = (
        col(|d| d.time),
        col(|d| d.max_phi),
        col(|d| d.phi_norm),
        col(|d| d.vartheta_norm),
        col(|d| d.drift),
        col(|d| d.energy),
    );
    run.columns(
        "diagnostics.csv",
        &["time", "max_phi", "phi_norm", "vartheta_norm", "drift", "energy"],
        &[&t, &mp, &pn, &vn, &dr, &en],
    )?;
    let times: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let values: Vec<Vec<f64>> = snapshots.iter().map(|s| s.vartheta.values().to_vec()).collect();
    run.text(
        "vartheta.svg",
        &svg::heatmap(&x, &times, &values, &Labels::new("vartheta(t, x)", "x", "t")),
    )?;
    run.manifest.metric("final_time", integ.time());
    run.manifest
        .metric("max_phi", mp.iter().fold(0.0, |m: f64, v| m.max(*v)));
    run.say(&format!(
        "evolved {} snapshot(s) to t = {:.6}; max|phi| = {:.3e}, final drift = {:.6e}",
        snapshots.len(),
        integ.time(),
        mp.iter().fold(0.0, |m: f64, v| m.max(*v)),
        dr.last().copied().unwrap_or(0.0)
    ));
    match failure {
        None => Ok(EXIT_OK),
        Some(NeelError::Validity { time, max_phi, bound }) => {
            run.manifest.metric("exit_time", time);
            run.manifest.metric("exit_max_phi", max_phi);
            run.manifest.status = format!("validity exit at t = {time}: max|phi| = {max_phi:.4} > {bound:.4}");
            eprintln!("error: {}", run.manifest.status);
            Ok(EXIT_VALIDITY)
        }
        Some(e) => Err(e),
    }
}

fn cmd_periodic(config: &RunConfig, run: &mut Run) -> Result<i32> {
    let params = config.params.resolve()?;
    let shape = config.forcing.model()?;
    let icfg = config.integrator.config(shape.period)?;
    let spec = &config.periodic;
    let o = &spec.options;
    run.manifest = run
        .manifest
        .clone()
        .tolerance("periodic.tol", o.tol)
        .tolerance("periodic.step_tol", o.step_tol)
        .tolerance("periodic.fd_step", o.fd_step)
        .tolerance("integrator.dt", icfg.dt);
    let wall = coarse_wall(config, &params, run)?;
    let setup = PoincareSetup::new(&wall, &params, &shape, &icfg, o)?;
    let result = continuation(spec.lambda_max, spec.n_steps, &setup);
    run.say(&format!(
        "{:>12} {:>14} {:>10} {:>7}",
        "lambda", "gamma", "residual", "newton"
    ));
    for orb in &result.orbits {
        run.say(&format!(
            "{:>12.6e} {:>14.6e} {:>10.3e} {:>7}",
            orb.lambda, orb.gamma, orb.residual_norm, orb.newton_iterations
        ));
    }
    let mut verification = Vec::new();
    if spec.verify_periods > 0 {
        for orb in &result.orbits {
            match verify_orbit(orb, &setup, spec.verify_periods) {
                Ok(v) => verification.push(v),
                Err(e) => run.note(format!("verification at lambda = {} failed: {e}", orb.lambda)),
            }
        }
    }
    let worst_return = verification
        .iter()
        .flat_map(|v| v.return_residuals.iter().copied())
        .fold(0.0f64, f64::max);
    run.manifest.metric("reached_lambda", result.reached_lambda());
    run.manifest.metric("orbits", result.orbits.len() as f64);
    run.manifest.metric(
        "max_residual",
        result.orbits.iter().map(|o| o.residual_norm).fold(0.0, f64::max),
    );
    if !verification.is_empty() {
        run.manifest.metric("max_return_residual", worst_return);
        run.say(&format!(
            "re-integration over {} period(s): worst return residual {worst_return:.3e}",
            spec.verify_periods
        ));
    }

    let curve = result.gamma_curve();
    let lam: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let gam: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let res: Vec<f64> = result.orbits.iter().map(|o| o.residual_norm).collect();
    run.columns("gamma_curve.csv", &["lambda", "gamma", "residual"], &[&lam, &gam, &res])?;
    run.text(
        "gamma_curve.svg",
        &svg::line_plot(
            &[Series::new("gamma", &lam, &gam)],
            &Labels::new("Compatibility curve", "lambda", "gamma"),
        ),
    )?;
    run.json("verification.json", &verification)?;
    let complete = result.complete();
    if let Some(f) = &result.failure {
        run.manifest.status = format!(
            "continuation stopped at lambda = {} (attempted {}): {}",
            result.reached_lambda(),
            f.lambda_attempted,
            f.reason
        );
        eprintln!("error: {}", run.manifest.status);
    }
    let set = OrbitSet {
        params,
        forcing: shape,
        integrator: icfg,
        options: *o,
        orbits: result.orbits,
        verification,
        failure: result.failure,
        halvings: result.halvings,
    };
    run.archive("orbits.json", ArchiveKind::Orbits, set)?;
    Ok(if complete { EXIT_OK } else { EXIT_CONTINUATION })
}

#[derive(Debug, Parser)]
#[command(
    name = "neel",
    version,
    about = "Neel wall statics, spectra and periodic wall motions"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Solve the static wall and write its profile.
    Wall(CommonArgs),
    /// Spectra of the linearised operators at the wall.
    Spectrum(CommonArgs),
    /// Integrate the full equations from configured initial data.
    Evolve(CommonArgs),
    /// Continuation of periodic orbits in the forcing amplitude.
    Periodic(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set grid.n_points=2048`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output root; the command writes into a subdirectory named after itself.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, short)]
    quiet: bool,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (command, args) = match cli.command {
        CliCommand::Wall(a) => (Command::Wall, a),
        CliCommand::Spectrum(a) => (Command::Spectrum, a),
        CliCommand::Evolve(a) => (Command::Evolve, a),
        CliCommand::Periodic(a) => (Command::Periodic, a),
    };
    let config = match load_config(args.config.as_deref(), &args.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&config).unwrap_or_default());
        return EXIT_OK;
    }
    let root = output_root(args.output.as_deref(), &config);
    log::info!("{} -> {}", command.name(), root.display());
    execute(command, &config, &root, args.quiet).exit_code
}
