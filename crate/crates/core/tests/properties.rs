//! Randomized invariants of the building blocks.

use neel_core::cli::{apply_override, load_config, RunConfig};
use neel_core::dynamics::{ForcingModel, Waveform};
use neel_core::io::{read_columns, write_columns};
use neel_core::linops::{block_lemma_check, block_matrix, SpectrumTolerances};
use neel_core::{rescale, rescaled_symbol, symbol, Grid, Parity, PhysicalParameters, StrayFieldOperator};
use proptest::prelude::*;

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn symbol_lies_in_unit_interval(xi in -1e8f64..1e8, eps in 1e-3f64..10.0) {
        let s = symbol(xi, eps).unwrap();
        prop_assert!((0.0..1.0).contains(&s));
        prop_assert_eq!(s, symbol(-xi, eps).unwrap());
    }

    #[test]
    fn rescaled_symbol_below_frequency(xi in -1e8f64..1e8, eps in 1e-3f64..10.0) {
        prop_assert!(rescaled_symbol(xi, eps).unwrap() <= xi.abs());
    }

    #[test]
    fn symbol_is_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6, eps in 1e-3f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(symbol(lo, eps).unwrap() <= symbol(hi, eps).unwrap() + 1e-15);
    }

    #[test]
    fn stray_field_is_symmetric_and_nonnegative(
        u in field(64),
        v in field(64),
        eps in 0.01f64..1.0,
        anti in any::<bool>(),
    ) {
        let g = Grid::new(8.0, 64).unwrap();
        let op = StrayFieldOperator::new(&g, eps).unwrap();
        let parity = if anti { Parity::Antiperiodic } else { Parity::Periodic };
        let su = op.apply_with(&u, parity);
        let sv = op.apply_with(&v, parity);
        let scale = g.norm(&u) * g.norm(&v) * op.max_multiplier();
        prop_assert!((g.dot(&su, &v) - g.dot(&u, &sv)).abs() <= 1e-12 * scale.max(1e-300));
        prop_assert!(g.dot(&su, &u) >= -1e-12 * g.dot(&u, &u) * op.max_multiplier());
    }

    #[test]
    fn parseval(u in field(128)) {
        let g = Grid::new(10.0, 128).unwrap();
        let a = g.dot(&u, &u);
        prop_assert!((g.spectral_norm_sq(&u) - a).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn refine_then_coarsen_is_identity_on_band(coef in prop::collection::vec(-1.0f64..1.0, 8)) {
        let coarse = Grid::new(5.0, 32).unwrap();
        let fine = Grid::new(5.0, 64).unwrap();
        let l = coarse.half_length();
        let u = coarse.sample(|x| {
            coef.iter()
                .enumerate()
                .map(|(k, c)| c * (std::f64::consts::PI * k as f64 * x / l).cos())
                .sum()
        });
        let back = coarse.coarsen(&fine, &coarse.refine(&fine, &u).unwrap()).unwrap();
        for (a, b) in u.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_is_positive(d in 0.1f64..10.0, delta in 0.1f64..10.0, q in 1e-3f64..1.0, alpha in -2.0f64..2.0) {
        let r = rescale(&PhysicalParameters { d, delta, quality: q, alpha }).unwrap();
        prop_assert!(r.kappa > 0.0);
        prop_assert_eq!(r.epsilon, q);
        prop_assert_eq!(r.alpha, alpha);
    }

    #[test]
    fn sine_forcing_is_periodic(t in 0.0f64..10.0, period in 0.1f64..5.0, lambda in -1.0f64..1.0, gamma in -1.0f64..1.0) {
        let g = Grid::new(4.0, 8).unwrap();
        let f = ForcingModel::sine(period, lambda, gamma).resolve(&g).unwrap();
        let a = f.field(t).at(0);
        let b = f.field(t + period).at(0);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn tabulated_forcing_interpolates_linearly(v0 in -1.0f64..1.0, v1 in -1.0f64..1.0, s in 0.0f64..1.0) {
        let g = Grid::new(4.0, 8).unwrap();
        let f = ForcingModel {
            waveform: Waveform::Tabulated { times: vec![0.0, 0.5, 1.0], values: vec![v0, v1, v0] },
            period: 1.0,
            lambda: 1.0,
            gamma: 0.0,
        };
        let r = f.resolve(&g).unwrap();
        let t = 0.5 * s;
        prop_assert!((r.field(t).at(3) - (v0 + (v1 - v0) * s)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact(a in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        write_columns(&p, &["a", "b"], &[&a, &b]).unwrap();
        let rows = read_columns(&p).unwrap();
        prop_assert_eq!(rows.len(), a.len());
        for (r, (x, y)) in rows.iter().zip(a.iter().zip(&b)) {
            prop_assert_eq!(r[0].to_bits(), x.to_bits());
            prop_assert_eq!(r[1].to_bits(), y.to_bits());
        }
    }

    #[test]
    fn overrides_set_exactly_one_key(n in 2usize..5000, l in 1.0f64..500.0) {
        let c = load_config(None, &[format!("grid.n_points={}", 2 * n), format!("coarse_grid.half_length={l}")]).unwrap();
        prop_assert_eq!(c.grid.n_points, 2 * n);
        prop_assert_eq!(c.coarse_grid.half_length, l);
        let d = RunConfig::default();
        prop_assert_eq!(c.solver, d.solver);
        prop_assert_eq!(c.grid.half_length, d.grid.half_length);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn block_operator_avoids_imaginary_axis(
        a in prop::collection::vec(-1.0f64..1.0, 36),
        b in prop::collection::vec(-1.0f64..1.0, 36),
        alpha in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let n = 6;
        let sym = |m: &[f64]| faer::Mat::from_fn(n, n, |i, j| 0.5 * (m[i * n + j] + m[j * n + i]));
        let (a, b) = (sym(&a), sym(&b));
        let r = block_lemma_check(a.as_ref(), b.as_ref(), alpha, &SpectrumTolerances::default()).unwrap();
        prop_assert!(r.imaginary_axis_violations.is_empty(), "{:?}", r.imaginary_axis_violations);
        let t = block_matrix(a.as_ref(), b.as_ref(), alpha);
        prop_assert_eq!(t.nrows(), 2 * n);
    }
}

#[test]
fn override_value_falls_back_to_string() {
    let mut v = serde_json::json!({});
    apply_override(&mut v, "output_dir=some/dir").unwrap();
    assert_eq!(v["output_dir"], "some/dir");
    apply_override(&mut v, "a.b=[1, 2]").unwrap();
    assert_eq!(v["a"]["b"][1], 2);
}
