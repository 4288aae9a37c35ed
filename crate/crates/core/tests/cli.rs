//! End-to-end runs of the `neel` binary and of `cli::run`.

use std::fs;
use std::path::Path;
use std::process::Command;

use neel_core::cli::{self, EXIT_CONFIG, EXIT_CONTINUATION, EXIT_OK, EXIT_VALIDITY};
use neel_core::io::{self, read_columns, Archive, ArchiveKind, Manifest, OrbitSet};
use sha2::{Digest, Sha256};

const SMALL: [&str; 4] = [
    "--set",
    "coarse_grid.half_length=25",
    "--set",
    "coarse_grid.n_points=256",
];

fn neel(args: &[&str], root: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_neel"))
        .args(args)
        .env(cli::OUTPUT_ROOT_ENV, root)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["neel"];
    v.extend_from_slice(args);
    cli::run(v)
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn check_checksums(dir: &Path, m: &Manifest) {
    for o in &m.outputs {
        let bytes = fs::read(dir.join(&o.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), o.sha256, "{}", o.path);
        assert_eq!(bytes.len() as u64, o.bytes);
    }
}

#[test]
fn wall_defaults_write_three_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, _) = neel(&["wall"], tmp.path());
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("EL residual"));
    let dir = tmp.path().join("wall");
    for f in ["wall.json", "wall_profile.csv", "wall.svg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let m = manifest(&dir);
    assert_eq!(m.exit_code, 0);
    assert_eq!(m.command, "wall");
    assert!(m.tolerances.contains_key("wall.tol"));
    check_checksums(&dir, &m);
    let (wall, _) = io::load_wall(&dir.join("wall.json")).unwrap();
    assert!(wall.el_residual_norm <= 1e-8);
    let cols = read_columns(&dir.join("wall_profile.csv")).unwrap();
    assert_eq!(cols.len(), 4096);
    assert_eq!(cols[100][1], wall.theta()[100]);
}

#[test]
fn odd_grid_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, stderr) = neel(&["wall", "--set", "grid.n_points=1023"], tmp.path());
    assert_eq!(code, EXIT_CONFIG);
    assert!(stderr.contains("n_points must be even"), "{stderr}");
    assert!(!tmp.path().join("wall").exists());
}

#[test]
fn unknown_key_and_bad_file_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(
        run(&["wall", "--output", out, "--set", "solver.tolerance=1"]),
        EXIT_CONFIG
    );
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(
        run(&["wall", "--output", out, "--config", cfg.to_str().unwrap()]),
        EXIT_CONFIG
    );
    assert_eq!(run(&["frobnicate"]), EXIT_CONFIG);
}

#[test]
fn small_domain_warns_but_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let code = run(&[
        "wall",
        "-q",
        "--output",
        out,
        "--set",
        "grid.half_length=5",
        "--set",
        "grid.n_points=256",
    ]);
    assert_eq!(code, EXIT_OK);
    let m = manifest(&tmp.path().join("wall"));
    assert!(m.notes.iter().any(|n| n.contains("domain too small")), "{:?}", m.notes);
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"params": {"rescaled": {"kappa": 2.0}}, "grid": {"half_length": 30, "n_points": 512}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let code = run(&[
        "wall",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "params.rescaled.epsilon=0.2",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let (wall, _) = io::load_wall(&out.join("wall/wall.json")).unwrap();
    assert_eq!((wall.params.kappa, wall.params.epsilon), (2.0, 0.2));
    assert_eq!(wall.grid().len(), 512);
}

#[test]
fn print_config_shows_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, _) = neel(&["periodic", "--print-config"], tmp.path());
    assert_eq!(code, EXIT_OK);
    let c: cli::RunConfig = serde_json::from_str(&stdout).unwrap();
    assert_eq!(c, cli::RunConfig::default());
}

#[test]
fn spectrum_claims_pass_and_alpha_zero_is_block_diagonal() {
    let tmp = tempfile::tempdir().unwrap();
    // h = 0.1: the kernel residual of L0 sits near 1e-6 on coarser grids.
    let mut args = vec![
        "spectrum",
        "--set",
        "coarse_grid.half_length=25",
        "--set",
        "coarse_grid.n_points=512",
    ];
    args.extend_from_slice(&[
        "--set",
        "spectrum.alphas=[0, 0.5]",
        "--set",
        r#"spectrum.block_lemma={"trials": 5, "size": 10}"#,
    ]);
    let (code, stdout, _) = neel(&args, tmp.path());
    assert_eq!(code, EXIT_OK);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(stdout.contains("PASS L0(alpha=0):union_of_blocks"), "{stdout}");
    assert!(stdout.contains("PASS block_lemma"), "{stdout}");
    let dir = tmp.path().join("spectrum");
    let m = manifest(&dir);
    assert_eq!(m.status, "ok");
    check_checksums(&dir, &m);
    for f in [
        "l1_spectrum.json",
        "l2_spectrum.json",
        "l0_spectrum_alpha_0.json",
        "l0_spectrum_alpha_0.5.json",
    ] {
        let a: Archive<neel_core::linops::SpectrumReport> = Archive::load(&dir.join(f), ArchiveKind::Spectrum).unwrap();
        assert!(a.payload.all_claims_pass(), "{f}");
    }
    assert!(dir.join("spectrum.svg").is_file());
}

#[test]
fn spectrum_reuses_a_saved_wall() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(
        run(&[
            "wall",
            "-q",
            "--output",
            out,
            "--set",
            "grid.half_length=25",
            "--set",
            "grid.n_points=128"
        ]),
        EXIT_OK
    );
    let archive = tmp.path().join("wall/wall.json");
    let set = format!("wall_archive={}", archive.display());
    assert_eq!(
        run(&[
            "spectrum",
            "-q",
            "--output",
            out,
            "--set",
            &set,
            "--set",
            "spectrum.rayleigh_samples=0"
        ]),
        EXIT_OK
    );
    let m = manifest(&tmp.path().join("spectrum"));
    assert!(m.notes.iter().any(|n| n.contains("wall loaded")));

    // Same archive, different ε: refused.
    let code = run(&[
        "spectrum",
        "-q",
        "--output",
        out,
        "--set",
        &set,
        "--set",
        "params.rescaled.epsilon=0.2",
    ]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn evolve_zero_forcing_stays_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args = vec!["evolve", "-q", "--output", out, "--set", "forcing.kind=zero"];
    args.extend_from_slice(&SMALL);
    assert_eq!(run(&args), EXIT_OK);
    let dir = tmp.path().join("evolve");
    let m = manifest(&dir);
    check_checksums(&dir, &m);
    let snaps: Vec<_> = fs::read_dir(dir.join("snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 21);
    let last = read_columns(&dir.join("snapshots/snapshot_00020.csv")).unwrap();
    let worst = last.iter().map(|r| r[1].abs().max(r[2].abs())).fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
    assert!(dir.join("vartheta.svg").is_file());
}

#[test]
fn evolve_gamma_forcing_records_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args = vec![
        "evolve",
        "-q",
        "--output",
        out,
        "--set",
        "forcing.kind=zero",
        "--set",
        "forcing.gamma=0.01",
    ];
    args.extend_from_slice(&SMALL);
    assert_eq!(run(&args), EXIT_OK);
    let d = read_columns(&tmp.path().join("evolve/diagnostics.csv")).unwrap();
    let drift: Vec<f64> = d.iter().map(|r| r[4]).collect();
    assert_eq!(drift[0], 0.0);
    // A constant field pushes the wall one way.
    assert!(
        drift.windows(2).all(|w| (w[1] - w[0]) * drift[drift.len() - 1] > 0.0),
        "{drift:?}"
    );
}

#[test]
fn evolve_oversized_dt_exits_with_validity_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args = vec![
        "evolve",
        "-q",
        "--output",
        out,
        "--set",
        "forcing.lambda=5",
        "--set",
        "integrator.dt=0.05",
    ];
    args.extend_from_slice(&SMALL);
    assert_eq!(run(&args), EXIT_VALIDITY);
    let dir = tmp.path().join("evolve");
    let m = manifest(&dir);
    assert_eq!(m.exit_code, EXIT_VALIDITY);
    let t = m.metrics["exit_time"];
    assert!(t > 0.0 && t < 1.0);
    assert!(m.status.contains("validity"));
    assert!(dir.join("diagnostics.csv").is_file());
}

#[test]
fn evolve_reads_tabulated_and_space_time_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("h.csv");
    fs::write(&table, "t,h\n0,0\n0.25,1\n0.5,0\n0.75,-1\n").unwrap();
    let st = tmp.path().join("hx.csv");
    fs::write(&st, "t\\x,-25,0,25\n0,0,0.5,0\n1,0,0.5,0\n").unwrap();
    let out = tmp.path().to_str().unwrap();
    for (kind, path) in [("tabulated", &table), ("space_time", &st)] {
        let kind = format!("forcing.kind={kind}");
        let table = format!("forcing.table={}", path.display());
        let mut args = vec![
            "evolve",
            "-q",
            "--output",
            out,
            "--set",
            &kind,
            "--set",
            &table,
            "--set",
            "forcing.lambda=0.01",
            "--set",
            "evolve.t_final=0.1",
        ];
        args.extend_from_slice(&SMALL);
        assert_eq!(run(&args), EXIT_OK, "{kind}");
    }
    let missing = ["evolve", "-q", "--output", out, "--set", "forcing.kind=tabulated"];
    assert_eq!(run(&missing), EXIT_CONFIG);
}

fn small_periodic(out: &str, extra: &[&str]) -> i32 {
    let mut args = vec![
        "periodic",
        "-q",
        "--output",
        out,
        "--set",
        "coarse_grid.half_length=25",
        "--set",
        "coarse_grid.n_points=128",
        "--set",
        "integrator.steps_per_period=200",
        "--set",
        "periodic.lambda_max=0.02",
        "--set",
        "periodic.n_steps=2",
        "--set",
        "periodic.verify_periods=1",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn periodic_small_run_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(small_periodic(a.path().to_str().unwrap(), &[]), EXIT_OK);
    assert_eq!(small_periodic(b.path().to_str().unwrap(), &[]), EXIT_OK);
    let (da, db) = (a.path().join("periodic"), b.path().join("periodic"));
    for f in [
        "gamma_curve.csv",
        "orbits.json",
        "verification.json",
        "gamma_curve.svg",
        "manifest.json",
    ] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    let set: Archive<OrbitSet> = Archive::load(&da.join("orbits.json"), ArchiveKind::Orbits).unwrap();
    assert_eq!(set.payload.orbits.len(), 3);
    assert_eq!(set.payload.orbits[0].gamma, 0.0);
    assert!(set
        .payload
        .orbits
        .iter()
        .all(|o| o.residual_norm <= 1e-8 && o.pin_value() == 0.0));
    assert_eq!(set.payload.verification.len(), 3);
    check_checksums(&da, &manifest(&da));
}

#[test]
fn periodic_huge_amplitude_gives_partial_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let code = small_periodic(
        tmp.path().to_str().unwrap(),
        &[
            "--set",
            "periodic.lambda_max=10",
            "--set",
            "periodic.verify_periods=0",
            "--set",
            "periodic.options.min_dlambda=0.05",
        ],
    );
    assert_eq!(code, EXIT_CONTINUATION);
    let dir = tmp.path().join("periodic");
    let m = manifest(&dir);
    assert_eq!(m.exit_code, EXIT_CONTINUATION);
    assert!(m.status.contains("continuation stopped"), "{}", m.status);
    let curve = read_columns(&dir.join("gamma_curve.csv")).unwrap();
    assert!(curve.len() >= 2);
    assert!(curve.last().unwrap()[0] < 10.0);
    let set: Archive<OrbitSet> = Archive::load(&dir.join("orbits.json"), ArchiveKind::Orbits).unwrap();
    assert!(set.payload.failure.is_some());
}
