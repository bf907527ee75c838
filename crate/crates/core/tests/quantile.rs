use proptest::prelude::*;
use qfei::quantile::*;
use qfei::simulator::{
    simulate, true_quantile_function, CachedOracle, InputPoint, SyntheticModelSpec,
    SyntheticSimulator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn grid() -> ProbabilityGrid<f64> {
    ProbabilityGrid::default()
}

fn from_fn(f: impl Fn(f64) -> f64) -> DiscretizedQuantileFunction<f64> {
    let g = grid();
    let values = g.points().iter().map(|&p| f(p)).collect();
    DiscretizedQuantileFunction::new(g, values).unwrap()
}

fn batch(draws: Vec<f64>) -> SampleBatch<f64> {
    SampleBatch { draws, source: InputPoint::new(vec![0]), seed: 0 }
}

#[test]
fn uniform_sample_quantile_is_near_analytic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let f = empirical_quantile_function(&batch(draws), &grid()).unwrap();
    // sd of the order statistic is sqrt(0.9 * 0.1 / 1e4) = 0.003
    assert!((quantile_objective(&f, 0.9).unwrap() - 0.9).abs() < 0.02);
}

#[test]
fn small_and_degenerate_batches() {
    let g = ProbabilityGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
    let f = empirical_quantile_function(&batch(vec![3.0, 1.0, 2.0]), &g).unwrap();
    assert_eq!(f.values()[1], 2.0);
    let c = empirical_quantile_function(&batch(vec![7.5; 9]), &grid()).unwrap();
    assert!(c.values().iter().all(|&v| v == 7.5));
    assert!(empirical_quantile_function(&batch(vec![]), &grid()).is_err());
}

#[test]
fn l2_distance_matches_fine_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (a, b, c) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
        let f = move |p: f64| a + b * p + c * p.powi(3);
        let g = move |p: f64| u * p + v * p.powi(2);
        let d = l2_distance(&from_fn(f), &from_fn(g)).unwrap();
        let n = 200_000;
        let fine: f64 = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                (f(p) - g(p)).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let oracle = fine.sqrt();
        assert!((d - oracle).abs() <= 1e-3 * oracle, "{d} vs {oracle}");
    }
}

#[test]
fn l2_distance_of_constant_gap_and_mismatched_grids() {
    let zero = from_fn(|_| 0.0);
    let one = from_fn(|_| 1.0);
    assert!((l2_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(l2_distance(&one, &one).unwrap(), 0.0);
    let coarse = DiscretizedQuantileFunction::constant(ProbabilityGrid::uniform(9).unwrap(), 1.0);
    assert!(l2_distance(&zero, &coarse).is_err());
}

#[test]
fn normal_quantile_interpolation() {
    let n = Normal::new(0.0, 1.0).unwrap();
    let f = from_fn(|p| n.inverse_cdf(p));
    assert!((quantile_objective(&f, 0.975).unwrap() - 1.96).abs() < 0.01);
    assert_eq!(quantile_objective(&f, 0.5).unwrap(), f.values()[99]);
    let id = from_fn(|p| p);
    assert!((quantile_objective(&id, 0.4).unwrap() - 0.4).abs() < 1e-12);
    assert!(quantile_objective(&id, 1.0).is_err());
    assert!(quantile_objective(&id, 0.0).is_err());
}

#[test]
fn mean_objective_oracles() {
    assert!((mean_objective(&from_fn(|_| 3.25)) - 3.25).abs() < 1e-12);
    assert!((mean_objective(&from_fn(|p| p)) - 0.5).abs() < 1e-9);
    let n = Normal::new(0.0, 1.0).unwrap();
    let lognormal = from_fn(|p| n.inverse_cdf(p).exp());
    let truth = 0.5f64.exp();
    assert!((mean_objective(&lognormal) - truth).abs() < 0.02 * truth);
}

#[test]
fn objective_agrees_with_sample_quantile_at_grid_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<f64> = (0..1234).map(|_| rng.random::<f64>().powi(3)).collect();
    let f = empirical_quantile_function(&batch(draws.clone()), &grid()).unwrap();
    for &p in grid().points().iter().step_by(7) {
        assert_eq!(quantile_objective(&f, p).unwrap(), sample_quantile(&draws, p).unwrap());
    }
}

#[test]
fn csv_round_trip() {
    let f = from_fn(|p| (p * 3.0).exp());
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    assert!(buf.starts_with(b"p,value\n"));
    let back = DiscretizedQuantileFunction::<f64>::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, f);
}

#[test]
fn empirical_error_shrinks_with_sample_size() {
    let sim = SyntheticSimulator::new(SyntheticModelSpec::default()).unwrap();
    let oracle = CachedOracle::new(&sim, grid().points().to_vec());
    let x = InputPoint::new(vec![45, 47, 42, 49, 15]);
    let truth = true_quantile_function(&oracle, &x, &grid()).unwrap();
    let median_error = |n: usize| {
        let mut errs: Vec<f64> = (0..20u64)
            .map(|seed| {
                let b = simulate::<f64, _>(&sim, &x, n, seed).unwrap();
                l2_distance(&empirical_quantile_function(&b, &grid()).unwrap(), &truth).unwrap()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        0.5 * (errs[9] + errs[10])
    };
    assert!(median_error(4000) < median_error(2000));
}

fn monotone_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 199).prop_map(|steps| {
        steps
            .iter()
            .scan(-1.0, |acc, s| {
                *acc += s * 0.05;
                Some(*acc)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn triangle_inequality(a in monotone_values(), b in monotone_values(), c in monotone_values()) {
        let [f, g, h] = [a, b, c].map(|v| DiscretizedQuantileFunction::new(grid(), v).unwrap());
        let fg = l2_distance(&f, &g).unwrap();
        let gh = l2_distance(&g, &h).unwrap();
        let fh = l2_distance(&f, &h).unwrap();
        prop_assert!(fh <= fg + gh + 1e-12);
        prop_assert!((fg - l2_distance(&g, &f).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn empirical_functions_are_monotone(draws in prop::collection::vec(-1e3f64..1e3, 1..300)) {
        let f = empirical_quantile_function(&batch(draws), &grid()).unwrap();
        prop_assert!(f.is_monotone());
    }
}
