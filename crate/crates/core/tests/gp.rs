use proptest::prelude::*;
use qfei::gp::{GaussianProcessModel, GpConfig, Kernel, Trend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let ys = xs
        .iter()
        .map(|x| x.iter().enumerate().map(|(k, v)| ((k + 1) as f64 * 3.0 * v).sin()).sum::<f64>())
        .collect();
    (xs, ys)
}

fn sd(ys: &[f64]) -> f64 {
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64).sqrt()
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn dense_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if piv != c {
            a.swap(c, piv);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

fn se(a: &[f64], b: &[f64], lengths: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(lengths).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    (-0.5 * r2).exp()
}

#[test]
fn two_point_instance_matches_hand_solve() {
    let xs = vec![vec![0.0], vec![1.0]];
    let ys = vec![0.0, 1.0];
    let m = GaussianProcessModel::assemble(
        xs.clone(),
        ys.clone(),
        Kernel::SquaredExponential,
        Trend::Constant,
        vec![1.0],
        vec![0.0],
        1.0,
        0.0,
    )
    .unwrap();
    let r01 = (-0.5f64).exp();
    let k = (-0.125f64).exp();
    // R^{-1} = [[1, -r], [-r, 1]] / (1 - r^2)
    let det = 1.0 - r01 * r01;
    let w = [(k - r01 * k) / det, (k - r01 * k) / det];
    let mean = w[0] * ys[0] + w[1] * ys[1];
    let var = 1.0 - (w[0] * k + w[1] * k);
    let p = m.predict(&[0.5]);
    assert!((p.mean - mean).abs() < 1e-10, "{} vs {mean}", p.mean);
    assert!((p.variance - var).abs() < 1e-10, "{} vs {var}", p.variance);
}

#[test]
fn three_point_instance_matches_dense_solve() {
    let xs = vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.3, 0.9]];
    let ys = vec![1.0, -0.5, 2.0];
    let lengths = vec![0.6, 0.8];
    let beta = vec![0.25];
    let sigma2 = 1.7;
    let m = GaussianProcessModel::assemble(
        xs.clone(),
        ys.clone(),
        Kernel::SquaredExponential,
        Trend::Constant,
        lengths.clone(),
        beta.clone(),
        sigma2,
        0.0,
    )
    .unwrap();
    let r: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| se(a, b, &lengths)).collect()).collect();
    for xstar in [[0.5, 0.5], [0.0, 1.0], [0.9, 0.1]] {
        let k: Vec<f64> = xs.iter().map(|a| se(a, &xstar, &lengths)).collect();
        let resid: Vec<f64> = ys.iter().map(|y| y - beta[0]).collect();
        let alpha = dense_solve(r.clone(), resid);
        let rk = dense_solve(r.clone(), k.clone());
        let mean = beta[0] + k.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
        let var = sigma2 * (1.0 - k.iter().zip(&rk).map(|(a, b)| a * b).sum::<f64>());
        let p = m.predict(&xstar);
        assert!((p.mean - mean).abs() < 1e-10);
        assert!((p.variance - var).abs() < 1e-10);
    }
}

#[test]
fn log_likelihood_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (xs, ys) = random_instance(&mut rng, 10, 3);
        let lengths: Vec<f64> = (0..3).map(|_| 0.2 + rng.random::<f64>()).collect();
        let beta = vec![0.3, -0.2, 0.1, 0.5];
        let sigma2 = 0.5 + rng.random::<f64>();
        let nugget = 1e-6;
        let m = GaussianProcessModel::assemble(
            xs.clone(),
            ys.clone(),
            Kernel::SquaredExponential,
            Trend::Linear,
            lengths.clone(),
            beta.clone(),
            sigma2,
            nugget,
        )
        .unwrap();
        let n = xs.len();
        let cov: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| sigma2 * (se(&xs[i], &xs[j], &lengths) + if i == j { nugget } else { 0.0 }))
                    .collect()
            })
            .collect();
        let resid: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| y - beta[0] - x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let sol = dense_solve(cov.clone(), resid.clone());
        let quad: f64 = resid.iter().zip(&sol).map(|(a, b)| a * b).sum();
        let oracle = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + dense_det(cov).ln() + quad);
        let ll = m.log_likelihood();
        assert!((ll - oracle).abs() < 1e-8 * oracle.abs().max(1.0), "{ll} vs {oracle}");
    }
}

#[test]
fn single_point_likelihood_is_gaussian_density() {
    let m = GaussianProcessModel::assemble(
        vec![vec![0.4]],
        vec![1.5],
        Kernel::Matern52,
        Trend::Constant,
        vec![0.3],
        vec![0.5],
        2.0,
        0.0,
    )
    .unwrap();
    let oracle = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25;
    assert!((m.log_likelihood() - oracle).abs() < 1e-12);
}

#[test]
fn profiled_variance_is_a_likelihood_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (xs, ys) = random_instance(&mut rng, 30, 2);
    let m = GaussianProcessModel::fit(xs, ys, &GpConfig::default()).unwrap();
    let ll = m.log_likelihood();
    assert!(m.with_sigma2(2.0 * m.sigma2()).log_likelihood() < ll);
    assert!(m.with_sigma2(0.5 * m.sigma2()).log_likelihood() < ll);
}

#[test]
fn kriging_interpolates_on_random_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10 {
        let d = 1 + i % 5;
        let n = 10 + 4 * i;
        let (xs, ys) = random_instance(&mut rng, n, d);
        let m = GaussianProcessModel::fit(xs.clone(), ys.clone(), &GpConfig::default()).unwrap();
        let tol = 1e-6 * sd(&ys);
        for (x, y) in xs.iter().zip(&ys) {
            let p = m.predict(x);
            assert!((p.mean - y).abs() <= tol, "n={n} d={d}");
            assert!(p.variance <= 10.0 * m.nugget() * m.sigma2());
        }
        let off: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        assert!(m.predict(&off).variance > 0.0);
    }
}

#[test]
fn linear_data_is_absorbed_by_the_trend() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x[0] - 3.0 * x[1]).collect();
    let var = sd(&ys).powi(2);
    for kernel in [Kernel::Matern52, Kernel::SquaredExponential] {
        let cfg = GpConfig { kernel, ..Default::default() };
        let m = GaussianProcessModel::fit(xs.clone(), ys.clone(), &cfg).unwrap();
        assert!(m.sigma2() <= 1e-6 * var, "{kernel:?} sigma2 {}", m.sigma2());
        let p = m.predict(&[0.25, 0.75]);
        assert!((p.mean - (1.0 + 0.5 - 2.25)).abs() < 1e-6);
    }
}

/// Exact draw from a zero-mean unit-variance process with the given kernel.
fn draw_process(rng: &mut ChaCha8Rng, xs: &[Vec<f64>], theta: f64) -> Vec<f64> {
    let n = xs.len();
    let k = |a: &[f64], b: &[f64]| Kernel::Matern52.correlation(((a[0] - b[0]) / theta).powi(2));
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = k(&xs[i], &xs[j]) + if i == j { 1e-10 } else { 0.0 };
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    (0..n).map(|i| (0..=i).map(|j| l[i][j] * z[j]).sum()).collect()
}

#[test]
fn recovers_length_scale_of_simulated_process() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 39.0]).collect();
    let cfg = GpConfig { trend: Trend::Constant, ..Default::default() };
    let mut est: Vec<f64> = (0..20)
        .map(|_| {
            let ys = draw_process(&mut rng, &xs, 0.3);
            GaussianProcessModel::fit(xs.clone(), ys, &cfg).unwrap().lengths()[0]
        })
        .collect();
    est.sort_by(f64::total_cmp);
    let median = 0.5 * (est[9] + est[10]);
    assert!(median > 0.15 && median < 0.6, "median length {median}");
}

#[test]
fn minimal_design_fits_and_interpolates() {
    let xs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.7]];
    let ys: Vec<f64> = vec![0.3, 1.1, -0.4, 2.0];
    let m = GaussianProcessModel::fit(xs.clone(), ys.clone(), &GpConfig::default()).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert!((m.predict(x).mean - y).abs() < 1e-8);
    }
}

#[test]
fn dump_round_trip_reproduces_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (xs, ys) = random_instance(&mut rng, 25, 3);
    let m = GaussianProcessModel::fit(xs, ys, &GpConfig::default()).unwrap();
    let json = serde_json::to_string(&m).unwrap();
    let back: GaussianProcessModel<f64> = serde_json::from_str(&json).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let (a, b) = (m.predict(&x), back.predict(&x));
        assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean.abs().max(1.0));
        assert!((a.variance - b.variance).abs() <= 1e-12 * m.sigma2());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mean_is_invariant_under_row_permutation(seed in 0u64..1000, shift in 1usize..19) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, ys) = random_instance(&mut rng, 20, 2);
        let lengths = vec![0.4, 0.7];
        let cfg = GpConfig::default();
        let a = GaussianProcessModel::with_lengths(xs.clone(), ys.clone(), lengths.clone(), &cfg).unwrap();
        let mut idx: Vec<usize> = (0..20).collect();
        idx.rotate_left(shift);
        idx.swap(0, 19);
        let pxs = idx.iter().map(|&i| xs[i].clone()).collect();
        let pys = idx.iter().map(|&i| ys[i]).collect();
        let b = GaussianProcessModel::with_lengths(pxs, pys, lengths, &cfg).unwrap();
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        prop_assert!((a.predict(&x).mean - b.predict(&x).mean).abs() < 1e-9);
    }

    #[test]
    fn adding_a_point_never_increases_variance(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, ys) = random_instance(&mut rng, 16, 3);
        let model = |n: usize| {
            GaussianProcessModel::assemble(
                xs[..n].to_vec(),
                ys[..n].to_vec(),
                Kernel::Matern52,
                Trend::Linear,
                vec![0.5, 0.3, 0.8],
                vec![0.0; 4],
                1.0,
                1e-8,
            )
            .unwrap()
        };
        let small = model(15);
        let big = model(16);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            prop_assert!(big.predict(&x).variance <= small.predict(&x).variance + 1e-12);
        }
    }
}
