//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and fails if any criterion fails. Timings are part of the check,
//! so the criteria run one at a time rather than under the parallel harness.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use faer::Mat;
use neel_core::cli::{execute, Command, RunConfig, EXIT_OK};
use neel_core::dynamics::{Dynamics, FieldValue, ForcingModel, Integrator, IntegratorConfig, Scheme, State};
use neel_core::energy::{reference_phase, solve_wall, SolverOptions, WallProfile};
use neel_core::io::{Archive, ArchiveKind, OrbitSet};
use neel_core::linalg::{expm, matvec};
use neel_core::linops::{
    quadratic_form_g, random_smooth_field, run_block_lemma_trials, spectrum, BlockLemmaTrials, SpectrumTolerances,
    WallOperators,
};
use neel_core::periodic::PoincareSetup;
use neel_core::{rescaled_symbol, Grid, Parity, RealField, RescaledParameters, StrayFieldOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn params() -> RescaledParameters {
    RescaledParameters::default()
}

fn wall(half_length: f64, n: usize) -> WallProfile {
    let g = Grid::new(half_length, n).unwrap();
    solve_wall(&params(), &g, &SolverOptions::default()).unwrap()
}

/// Default coarse grid used by the spectrum and periodic commands.
fn coarse_wall() -> WallProfile {
    let c = RunConfig::default().coarse_grid;
    wall(c.half_length, c.n_points)
}

fn stacked_norm(g: &Grid, a: &[f64], b: &[f64]) -> f64 {
    (g.dot(a, a) + g.dot(b, b)).sqrt()
}

fn multiplier_inequality() -> Verdict {
    let n = 10_000;
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for eps in [0.05, 0.1, 0.5] {
        for k in 0..n {
            let xi = 10f64.powf(-8.0 + 16.0 * k as f64 / (n - 1) as f64);
            let s = rescaled_symbol(xi, eps).map_err(|e| e.to_string())?;
            if s > xi {
                violations += 1;
            }
            worst = worst.max(s / xi);
        }
    }
    check(
        violations == 0,
        format!("{violations} violations, max ratio {worst:.6}"),
    )
}

fn operator_symmetry() -> Verdict {
    let g = Grid::new(50.0, 1024).unwrap();
    let op = StrayFieldOperator::new(&g, params().epsilon).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut sym, mut form) = (0.0f64, f64::INFINITY);
    for i in 0..100 {
        let parity = if i % 2 == 0 {
            Parity::Periodic
        } else {
            Parity::Antiperiodic
        };
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (su, sv) = (op.apply_with(&u, parity), op.apply_with(&v, parity));
        let scale = g.norm(&su) * g.norm(&v) + g.norm(&u) * g.norm(&sv);
        sym = sym.max((g.dot(&su, &v) - g.dot(&u, &sv)).abs() / scale);
        form = form.min(g.dot(&su, &u) / (g.dot(&u, &u) * op.max_multiplier()));
    }
    check(
        sym <= 1e-12 && form >= -1e-12,
        format!("symmetry defect {sym:.2e}, min normalised form {form:.3e}"),
    )
}

fn static_wall() -> Verdict {
    let w = wall(200.0, 4096);
    let g = w.grid();
    let th = w.theta();
    let slope_min = w.derivative().iter().copied().fold(f64::INFINITY, f64::min);
    let odd = (1..g.len())
        .map(|j| (th[j] + th[g.mirror(j)]).abs())
        .fold(th[g.center()].abs(), f64::max);
    let left = th[0];
    let right = reference_phase(g.half_length()) + w.profile.periodic_part()[0];
    let end_err = (left + std::f64::consts::FRAC_PI_2)
        .abs()
        .max((right - std::f64::consts::FRAC_PI_2).abs());
    let (e, e_ref) = (w.energy.total, w.diagnostics.reference_energy);
    check(
        w.el_residual_norm <= 1e-8 && slope_min >= -1e-10 && odd <= 1e-8 && end_err <= 1e-2 && e <= e_ref,
        format!(
            "EL residual {:.2e}, min theta' {slope_min:.2e}, oddness {odd:.2e}, end error {end_err:.2e}, energy {e:.6} vs reference {e_ref:.6}",
            w.el_residual_norm
        ),
    )
}

fn kernel_and_gap(w: &WallProfile, ops: &WallOperators) -> Verdict {
    let g = w.grid();
    let slope = w.derivative();
    let residual = g.norm(&ops.apply_l2(slope)) / g.norm(slope);
    let l2 = ops.assemble_l2();
    let rep = spectrum(&l2, &SpectrumTolerances::default()).map_err(|e| e.to_string())?;
    let zero = 1e-6 * rep.operator_norm;
    let kernel = rep.eigenvalues.iter().filter(|z| z[0].hypot(z[1]) <= zero).count();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_q = f64::INFINITY;
    for i in 0..20 {
        let mut u: Vec<f64> = if i % 2 == 0 {
            random_smooth_field(g, 4, &mut rng)
        } else {
            (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let c = g.dot(&u, slope) / g.dot(slope, slope);
        u.iter_mut().zip(slope).for_each(|(a, s)| *a -= c * s);
        let f = RealField::new(g, u).unwrap();
        let q = quadratic_form_g(&l2, &f, &f).map_err(|e| e.to_string())? / g.dot(f.values(), f.values());
        min_q = min_q.min(q);
    }
    check(
        residual <= 1e-6 && kernel == 1 && min_q >= -1e-8,
        format!("kernel residual {residual:.2e}, kernel dimension {kernel}, min Rayleigh quotient {min_q:.3e}"),
    )
}

fn l1_definite(ops: &WallOperators) -> Verdict {
    let rep = spectrum(&ops.assemble_l1(), &SpectrumTolerances::default()).map_err(|e| e.to_string())?;
    let top = rep.max_real();
    check(top < 0.0, format!("largest eigenvalue {top:.6e}"))
}

fn block_structure(w: &WallProfile, ops: &WallOperators) -> Verdict {
    let g = w.grid();
    let mut details = Vec::new();
    let mut ok = true;
    for alpha in [0.1, 0.5, 2.0] {
        let zero = vec![0.0; g.len()];
        let (a, b) = ops.apply_l0(alpha, &zero, w.derivative());
        let residual = stacked_norm(g, &a, &b) / g.norm(w.derivative());
        let rep = spectrum(&ops.assemble_l0(alpha), &SpectrumTolerances::default()).map_err(|e| e.to_string())?;
        let nrm = rep.operator_norm;
        let on_axis = rep
            .eigenvalues
            .iter()
            .filter(|z| z[0].abs() <= 1e-8 * nrm && z[0].hypot(z[1]) > 1e-6 * nrm)
            .count();
        ok &= residual <= 1e-6 && on_axis == 0;
        details.push(format!("alpha {alpha}: residual {residual:.2e}, {on_axis} on axis"));
    }
    check(ok, details.join("; "))
}

fn block_lemma() -> Verdict {
    let s = run_block_lemma_trials(&BlockLemmaTrials::default()).map_err(|e| e.to_string())?;
    check(
        s.violations.is_empty(),
        format!(
            "{} spectra, {} violations, min |Re|/norm {:.3e}",
            s.spectra_checked,
            s.violations.len(),
            s.min_relative_real_part
        ),
    )
}

fn linearization(w: &WallProfile, ops: &WallOperators) -> Verdict {
    let g = w.grid();
    let n = g.len();
    let mut details = Vec::new();
    let mut ok = true;
    for alpha in [0.1, 0.5, 2.0] {
        let p = params().with_alpha(alpha);
        let d = Dynamics::new(w, &p, &IntegratorConfig::default()).map_err(|e| e.to_string())?;
        let h0 = FieldValue::Uniform(0.0);
        let l0 = ops.assemble_l0(alpha).matrix;
        let step = 1e-6;
        let mut jac = Mat::<f64>::zeros(2 * n, 2 * n);
        let mut z = vec![0.0; 2 * n];
        for k in 0..2 * n {
            let mut eval = |s: f64| {
                z[k] = s;
                let r = d.rhs_raw(&z[..n], &z[n..], &h0, 0.0).unwrap();
                z[k] = 0.0;
                r
            };
            let (p1, p2) = eval(step);
            let (m1, m2) = eval(-step);
            for i in 0..n {
                jac[(i, k)] = (p1[i] - m1[i]) / (2.0 * step);
                jac[(n + i, k)] = (p2[i] - m2[i]) / (2.0 * step);
            }
        }
        let rel = (&jac - &l0).norm_l2() / l0.norm_l2();
        let zero = vec![0.0; n];
        let dg = 1e-3;
        let (a1, a2) = d.rhs_raw(&zero, &zero, &FieldValue::Uniform(dg), 0.0).unwrap();
        let (b1, b2) = d.rhs_raw(&zero, &zero, &FieldValue::Uniform(-dg), 0.0).unwrap();
        let mut gerr = 0.0f64;
        let mut gscale = 0.0f64;
        for j in 0..n {
            let c = w.theta()[j].cos() / p.epsilon;
            gerr = gerr
                .max(((a1[j] - b1[j]) / (2.0 * dg) - alpha * c).abs())
                .max(((a2[j] - b2[j]) / (2.0 * dg) - c).abs());
            gscale = gscale.max(c.abs());
        }
        let grel = gerr / gscale;
        ok &= rel <= 1e-5 && grel <= 1e-8;
        details.push(format!("alpha {alpha}: jacobian {rel:.2e}, gamma {grel:.2e}"));
    }
    check(ok, details.join("; "))
}

fn monodromy(w: &WallProfile, ops: &WallOperators) -> Verdict {
    let g = w.grid();
    let n = g.len();
    let p = params();
    let period = 1.0;
    let cfg = IntegratorConfig::for_period(period, RunConfig::default().integrator.steps_per_period);
    let setup = PoincareSetup::new(w, &p, &ForcingModel::sine(period, 0.0, 0.0), &cfg, &Default::default())
        .map_err(|e| e.to_string())?;
    let l0 = ops.assemble_l0(p.alpha).matrix;
    // e^{T L0} and ∫₀ᵀ e^{s L0} g ds from one exponential of [[L0, g], [0, 0]].
    let forcing: Vec<f64> = w
        .theta()
        .iter()
        .map(|t| p.alpha * t.cos() / p.epsilon)
        .chain(w.theta().iter().map(|t| t.cos() / p.epsilon))
        .collect();
    let aug = Mat::from_fn(2 * n + 1, 2 * n + 1, |i, j| match (i < 2 * n, j < 2 * n) {
        (true, true) => period * l0[(i, j)],
        (true, false) => period * forcing[i],
        _ => 0.0,
    });
    let e = expm(aug.as_ref()).map_err(|e| e.to_string())?;
    let flow = |z: &[f64], gamma: f64| setup.flow(z, gamma, 0.0, 1).unwrap();
    let rel = |fd: &[f64], exact: &[f64]| {
        let d: Vec<f64> = fd.iter().zip(exact).map(|(a, b)| a - b).collect();
        stacked_norm(g, &d[..n], &d[n..]) / stacked_norm(g, &exact[..n], &exact[n..])
    };
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut h = random_smooth_field(g, 4, &mut rng);
        h.extend(random_smooth_field(g, 4, &mut rng));
        let s = stacked_norm(g, &h[..n], &h[n..]);
        h.iter_mut().for_each(|v| *v /= s);
        let plus: Vec<f64> = h.iter().map(|v| step * v).collect();
        let minus: Vec<f64> = h.iter().map(|v| -step * v).collect();
        let (a, b) = (flow(&plus, 0.0), flow(&minus, 0.0));
        let fd: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * step)).collect();
        let mut hx = h.clone();
        hx.push(0.0);
        let exact = matvec(e.as_ref(), &hx)[..2 * n].to_vec();
        worst = worst.max(rel(&fd, &exact));
    }
    let zero = vec![0.0; 2 * n];
    let (a, b) = (flow(&zero, step), flow(&zero, -step));
    let fd: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * step)).collect();
    let exact: Vec<f64> = (0..2 * n).map(|i| e[(i, 2 * n)]).collect();
    let gamma_rel = rel(&fd, &exact);
    check(
        worst <= 1e-4 && gamma_rel <= 1e-4,
        format!("worst direction {worst:.2e}, gamma direction {gamma_rel:.2e}"),
    )
}

fn periodic_orbits() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = RunConfig::default();
    config.forcing.period = 1.0;
    config.periodic.lambda_max = 0.05;
    config.periodic.n_steps = 10;
    config.periodic.verify_periods = 3;
    let out = execute(Command::Periodic, &config, dir.path(), true);
    if out.exit_code != EXIT_OK {
        return Err(format!("periodic command exited with {}", out.exit_code));
    }
    let set: Archive<OrbitSet> =
        Archive::load(&out.output_dir.join("orbits.json"), ArchiveKind::Orbits).map_err(|e| e.to_string())?;
    let orbits = &set.payload.orbits;
    let checks = &set.payload.verification;
    let residual = orbits.iter().map(|o| o.residual_norm).fold(0.0, f64::max);
    let ret = checks
        .iter()
        .flat_map(|v| v.return_residuals.iter().copied())
        .fold(0.0, f64::max);
    let full_checks = checks.len() == orbits.len() && checks.iter().all(|v| v.return_residuals.len() == 3);
    let pinned = orbits.iter().all(|o| o.pin_value() == 0.0);
    let unit = checks.iter().map(|v| v.magnetization_defect).fold(0.0, f64::max);
    let gamma0 = orbits.first().map(|o| o.gamma);
    check(
        orbits.len() >= 10
            && residual <= 1e-8
            && full_checks
            && ret <= 1e-6
            && pinned
            && unit <= 1e-12
            && gamma0 == Some(0.0),
        format!(
            "{} orbits, max residual {residual:.2e}, max 3T return {ret:.2e}, pinned {pinned}, |m| defect {unit:.1e}, gamma(0) {gamma0:?}, gamma(0.05) {:?}",
            orbits.len(),
            orbits.last().map(|o| o.gamma)
        ),
    )
}

fn integrator_order() -> Verdict {
    let c = RunConfig::default().coarse_grid;
    let w = wall(c.half_length, c.n_points);
    let g = w.grid();
    let bump = |a: f64, x0: f64| g.sample(|x| a * (-(x - x0) * (x - x0) / 4.0).exp());
    let init = State::new(g, bump(0.02, 1.0), bump(0.02, -1.0), 0.0).unwrap();
    let forcing = ForcingModel::sine(1.0, 0.05, 0.0);
    let run = |steps: usize| {
        let cfg = IntegratorConfig {
            scheme: Scheme::ImexBdf2,
            ..IntegratorConfig::for_period(1.0, steps)
        };
        let d = Dynamics::new(&w, &w.params, &cfg).unwrap();
        let mut it = Integrator::new(&d, &forcing, &init).unwrap();
        it.advance(steps).unwrap();
        it.to_vec()
    };
    let u: Vec<Vec<f64>> = [500, 1000, 2000].into_iter().map(run).collect();
    let n = g.len();
    let diff = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        stacked_norm(g, &d[..n], &d[n..])
    };
    let (e1, e2) = (diff(&u[0], &u[1]), diff(&u[1], &u[2]));
    let slope = (e1 / e2).log2();
    check(
        slope >= 1.9,
        format!("slope {slope:.3} (differences {e1:.2e}, {e2:.2e})"),
    )
}

struct Criterion<'a> {
    name: &'static str,
    limit: Duration,
    run: Box<dyn FnOnce() -> Verdict + 'a>,
}

fn criterion<'a>(name: &'static str, seconds: u64, run: Box<dyn FnOnce() -> Verdict + 'a>) -> Criterion<'a> {
    Criterion {
        name,
        limit: Duration::from_secs(seconds),
        run,
    }
}

fn main() {
    // Shared setup, not timed: the wall on the default coarse grid and its operators.
    let coarse = coarse_wall();
    let ops = WallOperators::new(&coarse).unwrap();
    let (w, ops) = (&coarse, &ops);
    let criteria = vec![
        criterion("multiplier inequality", 1, Box::new(multiplier_inequality)),
        criterion("stray field symmetric and PSD", 5, Box::new(operator_symmetry)),
        criterion("static wall", 60, Box::new(static_wall)),
        criterion("L2 kernel and gap", 60, Box::new(move || kernel_and_gap(w, ops))),
        criterion("L1 negative definite", 30, Box::new(move || l1_definite(ops))),
        criterion("L0 block structure", 120, Box::new(move || block_structure(w, ops))),
        criterion("abstract block lemma", 30, Box::new(block_lemma)),
        criterion(
            "linearization consistency",
            120,
            Box::new(move || linearization(w, ops)),
        ),
        criterion(
            "monodromy derivatives",
            300,
            Box::new(|| {
                let small = wall(25.0, 512);
                monodromy(&small, &WallOperators::new(&small).unwrap())
            }),
        ),
        criterion("periodic orbits", 900, Box::new(periodic_orbits)),
        criterion("BDF2 order", 300, Box::new(integrator_order)),
    ];
    let mut failed = 0;
    for (i, c) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= c.limit;
        let (ok, detail) = match verdict {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} C{} {}: {detail} [{:.1} s of {} s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
