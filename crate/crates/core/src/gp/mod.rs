//! Scalar Gaussian-process regression (kriging).
//!
//! The response is modeled as `Y(x) = h(x) + Z(x)` with a polynomial trend
//! `h` and a centered stationary process `Z` of covariance
//! `sigma^2 (K_theta(x - u) + nugget 1{x = u})`. The nugget is a white-noise
//! component of the process, so it appears both in the design covariance and
//! in the cross-covariance at coincident points: the predictor interpolates
//! and the kriging variance vanishes at design points.
//!
//! Given length-scales `theta`, the trend coefficients and the process
//! variance are profiled out by generalized least squares; `theta` maximizes
//! the profiled likelihood through a multi-start bounded Nelder-Mead search
//! in log coordinates.

mod kernel;
pub mod optim;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::{Kernel, Trend};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, solve_spd, Cholesky, Matrix};
use crate::scalar::Scalar;
use optim::{halton_points, NelderMead};

/// Hyperparameter-search and model-structure settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub kernel: Kernel,
    pub trend: Trend,
    /// Relative nugget added to the correlation diagonal.
    pub nugget: f64,
    /// Space-filling starting points in log length-scale.
    pub n_starts: usize,
    /// How many of the best starts get a short local Nelder-Mead search.
    pub n_refine: usize,
    /// Likelihood evaluations per short search.
    pub screen_evals: usize,
    /// How many of the screened points are searched further.
    pub n_polish: usize,
    /// Likelihood evaluations per full search.
    pub max_evals: usize,
    /// Box for every length-scale, in normalized input units.
    pub length_bounds: (f64, f64),
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Matern52,
            trend: Trend::Linear,
            nugget: 1e-8,
            n_starts: 10,
            n_refine: 6,
            screen_evals: 40,
            n_polish: 1,
            max_evals: 150,
            length_bounds: (1e-2, 10.0),
        }
    }
}

/// Conditional mean and variance at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub mean: T,
    pub variance: T,
}

/// A fitted (or explicitly assembled) kriging model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GpDump<T>", into = "GpDump<T>", bound = "T: Scalar")]
pub struct GaussianProcessModel<T: Scalar> {
    kernel: Kernel,
    trend: Trend,
    nugget: T,
    beta: Vec<T>,
    sigma2: T,
    lengths: Vec<T>,
    design: Vec<Vec<T>>,
    outputs: Vec<T>,
    // derived
    inv_len2: Vec<T>,
    chol: Cholesky<T>,
    alpha: Vec<T>,
}

/// On-disk form of a model: everything needed to rebuild the factorization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GpDump<T> {
    pub kernel: Kernel,
    pub trend: Trend,
    pub nugget: T,
    pub beta: Vec<T>,
    pub sigma2: T,
    pub lengths: Vec<T>,
    pub design: Vec<Vec<T>>,
    pub outputs: Vec<T>,
}

impl<T: Scalar> TryFrom<GpDump<T>> for GaussianProcessModel<T> {
    type Error = Error;
    fn try_from(d: GpDump<T>) -> Result<Self> {
        GaussianProcessModel::assemble(
            d.design, d.outputs, d.kernel, d.trend, d.lengths, d.beta, d.sigma2, d.nugget,
        )
    }
}

impl<T: Scalar> From<GaussianProcessModel<T>> for GpDump<T> {
    fn from(m: GaussianProcessModel<T>) -> Self {
        GpDump {
            kernel: m.kernel,
            trend: m.trend,
            nugget: m.nugget,
            beta: m.beta,
            sigma2: m.sigma2,
            lengths: m.lengths,
            design: m.design,
            outputs: m.outputs,
        }
    }
}

/// Squared coordinate differences of every design pair `j < i`.
struct PairTable<T> {
    n: usize,
    d: usize,
    diff2: Vec<T>,
}

impl<T: Scalar> PairTable<T> {
    fn new(design: &[Vec<T>]) -> Self {
        let n = design.len();
        let d = design.first().map_or(0, Vec::len);
        let mut diff2 = Vec::with_capacity(n * n.saturating_sub(1) / 2 * d);
        for i in 0..n {
            for j in 0..i {
                for k in 0..d {
                    let t = design[i][k] - design[j][k];
                    diff2.push(t * t);
                }
            }
        }
        Self { n, d, diff2 }
    }

    /// Lower triangle of `K + nugget I`.
    fn correlation(&self, kernel: Kernel, inv_len2: &[T], nugget: T) -> Matrix<T> {
        let n = self.n;
        let mut r = Matrix::zeros(n, n);
        let mut chunks = self.diff2.chunks_exact(self.d);
        for i in 0..n {
            let row = r.row_mut(i);
            for v in row.iter_mut().take(i) {
                let c = chunks.next().expect("pair table size");
                *v = kernel.correlation(dot(c, inv_len2));
            }
            row[i] = T::one() + nugget;
        }
        r
    }
}

/// Trend coefficients and variances profiled out for fixed length-scales,
/// for one or several output columns sharing the correlation matrix.
struct Profile<T> {
    log_likelihood: T,
    estimates: Vec<(Vec<T>, T)>,
    chol: Cholesky<T>,
}

fn effective_nugget<T: Scalar>(nugget: f64) -> T {
    T::of(nugget).max(T::epsilon() * T::of(16.0))
}

fn profile<T: Scalar>(
    pairs: &PairTable<T>,
    trend_rows: &Matrix<T>,
    outputs: &[&[T]],
    kernel: Kernel,
    lengths: &[T],
    nugget: T,
) -> Option<Profile<T>> {
    let inv: Vec<T> = lengths.iter().map(|&l| T::one() / (l * l)).collect();
    let chol = Cholesky::new(pairs.correlation(kernel, &inv, nugget))?;
    let n = trend_rows.rows();
    let p = trend_rows.cols();

    let mut h: Vec<Vec<T>> = (0..p).map(|k| trend_rows.column(k)).collect();
    for col in &mut h {
        chol.solve_lower_in_place(col);
    }
    let mut gram = Matrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let v = dot(&h[a], &h[b]);
            gram.set(a, b, v);
            gram.set(b, a, v);
        }
    }
    let nn = T::of_usize(n);
    let two_pi = T::of(2.0) * T::PI();
    let half = T::of(0.5);
    let mut log_likelihood = T::zero();
    let mut estimates = Vec::with_capacity(outputs.len());
    for out in outputs {
        let mut y = out.to_vec();
        chol.solve_lower_in_place(&mut y);
        let rhs: Vec<T> = h.iter().map(|c| dot(c, &y)).collect();
        let beta = solve_spd(gram.clone(), &rhs)?;
        for (col, &b) in h.iter().zip(&beta) {
            for (yi, &ci) in y.iter_mut().zip(col) {
                *yi -= b * ci;
            }
        }
        let sigma2 = (dot(&y, &y) / nn).max(T::min_positive_value());
        log_likelihood += -half * nn * ((two_pi * sigma2).ln() + T::one()) - half * chol.log_det();
        estimates.push((beta, sigma2));
    }
    log_likelihood.is_finite().then_some(Profile { log_likelihood, estimates, chol })
}

fn trend_matrix<T: Scalar>(trend: Trend, design: &[Vec<T>]) -> Matrix<T> {
    let d = design.first().map_or(0, Vec::len);
    let p = trend.len(d);
    let data = design.iter().flat_map(|x| trend.basis(x)).collect();
    Matrix::from_rows(design.len(), p, data)
}

fn check_design<T: Scalar>(design: &[Vec<T>], outputs: &[T]) -> Result<usize> {
    if design.is_empty() {
        return Err(invalid("empty design"));
    }
    if design.len() != outputs.len() {
        return Err(invalid(format!(
            "{} design rows but {} outputs",
            design.len(),
            outputs.len()
        )));
    }
    let d = design[0].len();
    if design.iter().any(|x| x.len() != d) {
        return Err(invalid("design rows have different dimensions"));
    }
    if design.iter().flatten().chain(outputs).any(|v| !v.is_finite()) {
        return Err(invalid("design and outputs must be finite"));
    }
    for i in 0..design.len() {
        for j in 0..i {
            if design[i] == design[j] {
                return Err(invalid(format!("duplicate design rows {j} and {i}")));
            }
        }
    }
    Ok(d)
}

impl<T: Scalar> GaussianProcessModel<T> {
    /// Maximum-likelihood fit.
    pub fn fit(design: Vec<Vec<T>>, outputs: Vec<T>, config: &GpConfig) -> Result<Self> {
        let mut models = Self::fit_shared(design, vec![outputs], config)?;
        Ok(models.pop().expect("one output column"))
    }

    /// Independent models for several output columns over one design, with
    /// common length-scales maximizing the summed likelihood. Trend and
    /// variance stay specific to each column.
    pub fn fit_shared(
        design: Vec<Vec<T>>,
        columns: Vec<Vec<T>>,
        config: &GpConfig,
    ) -> Result<Vec<Self>> {
        if columns.is_empty() {
            return Err(invalid("no output columns"));
        }
        let mut d = 0;
        for c in &columns {
            d = check_design(&design, c)?;
        }
        let p = config.trend.len(d);
        if design.len() < p + 1 {
            return Err(invalid(format!(
                "{} design points cannot identify a trend with {p} coefficients",
                design.len()
            )));
        }
        let (lo_len, hi_len) = config.length_bounds;
        if !(lo_len > 0.0 && lo_len <= hi_len) {
            return Err(invalid("length-scale bounds must satisfy 0 < lower <= upper"));
        }
        let nugget = effective_nugget::<T>(config.nugget);
        let pairs = PairTable::new(&design);
        let hmat = trend_matrix(config.trend, &design);
        let refs: Vec<&[T]> = columns.iter().map(Vec::as_slice).collect();

        let lo = vec![lo_len.ln(); d];
        let hi = vec![hi_len.ln(); d];
        let neg_ll = |logl: &[f64]| -> f64 {
            let lengths: Vec<T> = logl.iter().map(|v| T::of(v.exp())).collect();
            profile(&pairs, &hmat, &refs, config.kernel, &lengths, nugget)
                .map_or(f64::INFINITY, |pr| -pr.log_likelihood.as_f64())
        };

        let mut starts: Vec<(Vec<f64>, f64)> = halton_points(config.n_starts.max(1), &lo, &hi)
            .into_iter()
            .map(|x| {
                let v = neg_ll(&x);
                (x, v)
            })
            .collect();
        starts.sort_by(|a, b| a.1.total_cmp(&b.1));

        let screen = NelderMead { max_evals: config.screen_evals, ..Default::default() };
        let mut screened: Vec<(Vec<f64>, f64)> = starts
            .iter()
            .take(config.n_refine)
            .filter(|(_, v)| v.is_finite())
            .map(|(x, _)| {
                let m = screen.minimize(neg_ll, x, &lo, &hi);
                (m.x, m.value)
            })
            .collect();
        screened.sort_by(|a, b| a.1.total_cmp(&b.1));
        let polish = NelderMead { max_evals: config.max_evals, ..Default::default() };
        let mut best = starts[0].clone();
        for (x, v) in &screened {
            if *v < best.1 {
                best = (x.clone(), *v);
            }
        }
        for (x, _) in screened.iter().take(config.n_polish) {
            let m = polish.minimize(neg_ll, x, &lo, &hi);
            if m.value < best.1 {
                best = (m.x, m.value);
            }
        }
        let lengths: Vec<T> = best.0.iter().map(|v| T::of(v.exp())).collect();
        if !best.1.is_finite() {
            return Err(Error::Singular { lengths: lengths.iter().map(|l| l.as_f64()).collect() });
        }
        drop(refs);
        Self::build_shared(design, columns, lengths, config, &pairs, &hmat, nugget)
    }

    /// Model with fixed length-scales; trend and variance by generalized least squares.
    pub fn with_lengths(
        design: Vec<Vec<T>>,
        outputs: Vec<T>,
        lengths: Vec<T>,
        config: &GpConfig,
    ) -> Result<Self> {
        let mut models = Self::shared_with_lengths(design, vec![outputs], lengths, config)?;
        Ok(models.pop().expect("one output column"))
    }

    /// [`GaussianProcessModel::with_lengths`] for several output columns.
    pub fn shared_with_lengths(
        design: Vec<Vec<T>>,
        columns: Vec<Vec<T>>,
        lengths: Vec<T>,
        config: &GpConfig,
    ) -> Result<Vec<Self>> {
        if columns.is_empty() {
            return Err(invalid("no output columns"));
        }
        let mut d = 0;
        for c in &columns {
            d = check_design(&design, c)?;
        }
        if lengths.len() != d || lengths.iter().any(|&l| !(l > T::zero())) {
            return Err(invalid(format!("need {d} positive length-scales")));
        }
        let nugget = effective_nugget::<T>(config.nugget);
        let pairs = PairTable::new(&design);
        let hmat = trend_matrix(config.trend, &design);
        Self::build_shared(design, columns, lengths, config, &pairs, &hmat, nugget)
    }

    fn build_shared(
        design: Vec<Vec<T>>,
        columns: Vec<Vec<T>>,
        lengths: Vec<T>,
        config: &GpConfig,
        pairs: &PairTable<T>,
        hmat: &Matrix<T>,
        nugget: T,
    ) -> Result<Vec<Self>> {
        let refs: Vec<&[T]> = columns.iter().map(Vec::as_slice).collect();
        let pr = profile(pairs, hmat, &refs, config.kernel, &lengths, nugget).ok_or_else(|| {
            Error::Singular { lengths: lengths.iter().map(|l| l.as_f64()).collect() }
        })?;
        drop(refs);
        columns
            .into_iter()
            .zip(pr.estimates)
            .map(|(outputs, (beta, sigma2))| {
                Self::finish(
                    design.clone(),
                    outputs,
                    config.kernel,
                    config.trend,
                    lengths.clone(),
                    beta,
                    sigma2,
                    nugget,
                    pr.chol.clone(),
                )
            })
            .collect()
    }

    /// Model with every hyperparameter given explicitly.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        design: Vec<Vec<T>>,
        outputs: Vec<T>,
        kernel: Kernel,
        trend: Trend,
        lengths: Vec<T>,
        beta: Vec<T>,
        sigma2: T,
        nugget: T,
    ) -> Result<Self> {
        let d = check_design(&design, &outputs)?;
        if lengths.len() != d || lengths.iter().any(|&l| !(l > T::zero())) {
            return Err(invalid(format!("need {d} positive length-scales")));
        }
        if beta.len() != trend.len(d) {
            return Err(invalid(format!("trend needs {} coefficients", trend.len(d))));
        }
        if !(sigma2 > T::zero()) || nugget < T::zero() {
            return Err(invalid("variance must be positive and nugget nonnegative"));
        }
        let inv: Vec<T> = lengths.iter().map(|&l| T::one() / (l * l)).collect();
        let chol = Cholesky::new(PairTable::new(&design).correlation(kernel, &inv, nugget))
            .ok_or_else(|| Error::Singular { lengths: lengths.iter().map(|l| l.as_f64()).collect() })?;
        Self::finish(design, outputs, kernel, trend, lengths, beta, sigma2, nugget, chol)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        design: Vec<Vec<T>>,
        outputs: Vec<T>,
        kernel: Kernel,
        trend: Trend,
        lengths: Vec<T>,
        beta: Vec<T>,
        sigma2: T,
        nugget: T,
        chol: Cholesky<T>,
    ) -> Result<Self> {
        let resid: Vec<T> =
            design.iter().zip(&outputs).map(|(x, &y)| y - trend.eval(&beta, x)).collect();
        let alpha = chol.solve(&resid);
        let inv_len2 = lengths.iter().map(|&l| T::one() / (l * l)).collect();
        Ok(Self { kernel, trend, nugget, beta, sigma2, lengths, design, outputs, inv_len2, chol, alpha })
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths
    }

    pub fn nugget(&self) -> T {
        self.nugget
    }

    pub fn design(&self) -> &[Vec<T>] {
        &self.design
    }

    pub fn outputs(&self) -> &[T] {
        &self.outputs
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    /// Correlations between `x` and every design point, nugget included at
    /// coincident points.
    fn cross_correlation(&self, x: &[T]) -> Vec<T> {
        self.design
            .iter()
            .map(|xi| {
                let mut r2 = T::zero();
                for ((&a, &b), &w) in xi.iter().zip(x).zip(&self.inv_len2) {
                    r2 += (a - b) * (a - b) * w;
                }
                let c = self.kernel.correlation(r2);
                if xi.as_slice() == x {
                    c + self.nugget
                } else {
                    c
                }
            })
            .collect()
    }

    /// Conditional mean and kriging variance at a normalized input.
    pub fn predict(&self, x: &[T]) -> Prediction<T> {
        assert_eq!(x.len(), self.dim(), "prediction input has wrong dimension");
        let mut k = self.cross_correlation(x);
        let mean = self.trend.eval(&self.beta, x) + dot(&k, &self.alpha);
        self.chol.solve_lower_in_place(&mut k);
        let variance = (self.sigma2 * (T::one() + self.nugget - dot(&k, &k))).max(T::zero());
        Prediction { mean, variance }
    }

    /// Conditional mean only; `O(n)` per point.
    pub fn predict_mean(&self, x: &[T]) -> T {
        let k = self.cross_correlation(x);
        self.trend.eval(&self.beta, x) + dot(&k, &self.alpha)
    }

    pub fn predict_many(&self, xs: &[Vec<T>]) -> Vec<Prediction<T>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    /// Gaussian log-density of the outputs under the model's own parameters.
    pub fn log_likelihood(&self) -> T {
        let n = T::of_usize(self.outputs.len());
        let half = T::of(0.5);
        let resid: Vec<T> = self
            .design
            .iter()
            .zip(&self.outputs)
            .map(|(x, &y)| y - self.trend.eval(&self.beta, x))
            .collect();
        let quad = dot(&resid, &self.alpha) / self.sigma2;
        let log_det = n * self.sigma2.ln() + self.chol.log_det();
        -half * (n * (T::of(2.0) * T::PI()).ln() + log_det + quad)
    }

    /// Same model with a different variance; for likelihood diagnostics.
    pub fn with_sigma2(&self, sigma2: T) -> Self {
        Self { sigma2, ..self.clone() }
    }

    /// Same length-scales and settings, refit on new data.
    pub fn refit_with_same_lengths(&self, design: Vec<Vec<T>>, outputs: Vec<T>) -> Result<Self> {
        let config = GpConfig {
            kernel: self.kernel,
            trend: self.trend,
            nugget: self.nugget.as_f64(),
            ..Default::default()
        };
        Self::with_lengths(design, outputs, self.lengths.clone(), &config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_design() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let ys = xs.iter().map(|x| (6.0 * x[0]).sin() + x[0]).collect();
        (xs, ys)
    }

    #[test]
    fn rejects_duplicates_and_tiny_designs() {
        let cfg = GpConfig::default();
        let design = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5], vec![1.0, 0.0]];
        let err = GaussianProcessModel::fit(design, vec![0.0, 1.0, 1.0, 2.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let design = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 0.0]];
        assert!(GaussianProcessModel::fit(design, vec![0.0, 1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn minimal_design_fits_and_interpolates() {
        // n = d + 2
        let design = vec![vec![0.1, 0.2], vec![0.9, 0.4], vec![0.3, 0.8], vec![0.6, 0.1]];
        let ys: Vec<f64> = vec![1.0, -0.5, 0.25, 2.0];
        let m = GaussianProcessModel::fit(design.clone(), ys.clone(), &GpConfig::default()).unwrap();
        for (x, y) in design.iter().zip(&ys) {
            assert!((m.predict(x).mean - y).abs() < 1e-8);
        }
    }

    #[test]
    fn prior_reversion_far_away() {
        let (xs, ys) = line_design();
        let m = GaussianProcessModel::fit(xs, ys, &GpConfig::default()).unwrap();
        let far = vec![1e4];
        let pr = m.predict(&far);
        assert!((pr.mean - m.trend().eval(m.beta(), &far)).abs() < 1e-9 * pr.mean.abs().max(1.0));
        assert!((pr.variance - m.sigma2()).abs() <= 1e-6 * m.sigma2());
    }

    #[test]
    fn singular_covariance_reports_lengths() {
        let design = vec![vec![0.0], vec![1e-12], vec![1.0]];
        let err = GaussianProcessModel::assemble(
            design,
            vec![0.0, 1.0, 0.0],
            Kernel::SquaredExponential,
            Trend::Constant,
            vec![10.0],
            vec![0.0],
            1.0,
            0.0,
        )
        .unwrap_err();
        match err {
            Error::Singular { lengths } => assert_eq!(lengths, vec![10.0]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn serde_round_trip_reproduces_predictions() {
        let (xs, ys) = line_design();
        let m = GaussianProcessModel::fit(xs, ys, &GpConfig::default()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: GaussianProcessModel<f64> = serde_json::from_str(&text).unwrap();
        for i in 0..20 {
            let x = vec![i as f64 / 19.0 + 0.013];
            let (a, b) = (m.predict(&x), back.predict(&x));
            assert!((a.mean - b.mean).abs() <= 1e-12 && (a.variance - b.variance).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_precision_fit() {
        let xs: Vec<Vec<f32>> = (0..8).map(|i| vec![i as f32 / 7.0]).collect();
        let ys: Vec<f32> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let m = GaussianProcessModel::fit(xs.clone(), ys.clone(), &GpConfig::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x).mean - y).abs() < 1e-3);
        }
    }
}
