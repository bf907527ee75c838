//! Quantile functions sampled on a fixed probability grid.
//!
//! A [`DiscretizedQuantileFunction`] stores the values of a quantile function
//! at the points of a [`ProbabilityGrid`]. Integrals over `(0, 1)` use the
//! trapezoid rule between grid points and constant continuation from the
//! first and last points to the endpoints 0 and 1, so every integral is a
//! fixed nonnegative weighting of the grid values.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::simulator::InputPoint;

/// Default number of grid points, `p_k = k / 200` for `k = 1..=199`.
pub const DEFAULT_GRID_SIZE: usize = 199;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound = "T: Scalar")]
pub struct ProbabilityGrid<T> {
    points: Arc<[T]>,
    weights: Arc<[T]>,
}

impl<T: Scalar> ProbabilityGrid<T> {
    /// Strictly increasing points inside the open interval `(0, 1)`, at least two.
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("probability grid needs at least two points"));
        }
        if points.iter().any(|&p| !(p > T::zero() && p < T::one())) {
            return Err(invalid("probability grid points must lie in (0, 1)"));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("probability grid must be strictly increasing"));
        }
        let weights = quadrature_weights(&points);
        Ok(Self { points: points.into(), weights: weights.into() })
    }

    /// Equispaced grid `k / (m + 1)`, `k = 1..=m`.
    pub fn uniform(m: usize) -> Result<Self> {
        let denom = (m + 1) as f64;
        Self::new((1..=m).map(|k| T::of(k as f64 / denom)).collect())
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// Quadrature weights; they sum to one.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of `p` when it is a grid point.
    pub fn index_of(&self, p: T) -> Option<usize> {
        self.points.iter().position(|&x| x == p)
    }

    /// Weighted inner product of two value vectors on this grid.
    pub fn inner(&self, a: &[T], b: &[T]) -> T {
        self.weights.iter().zip(a).zip(b).map(|((&w, &x), &y)| w * x * y).sum()
    }
}

impl<T: Scalar> Default for ProbabilityGrid<T> {
    fn default() -> Self {
        Self::uniform(DEFAULT_GRID_SIZE).expect("default grid is valid")
    }
}

impl<T: Scalar> PartialEq for ProbabilityGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.points, &other.points) || self.points == other.points
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for ProbabilityGrid<T> {
    type Error = Error;
    fn try_from(v: Vec<T>) -> Result<Self> {
        Self::new(v)
    }
}

impl<T: Scalar> From<ProbabilityGrid<T>> for Vec<T> {
    fn from(g: ProbabilityGrid<T>) -> Self {
        g.points.to_vec()
    }
}

fn quadrature_weights<T: Scalar>(p: &[T]) -> Vec<T> {
    let m = p.len();
    let half = T::of(0.5);
    let mut w = vec![T::zero(); m];
    w[0] = p[0];
    w[m - 1] = T::one() - p[m - 1];
    for k in 0..m - 1 {
        let h = (p[k + 1] - p[k]) * half;
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Quantile function values on a probability grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiscretizedQuantileFunction<T> {
    grid: ProbabilityGrid<T>,
    values: Vec<T>,
}

impl<T: Scalar> PartialEq for DiscretizedQuantileFunction<T> {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl<T: Scalar> DiscretizedQuantileFunction<T> {
    /// Checked constructor: values must be finite and non-decreasing.
    pub fn new(grid: ProbabilityGrid<T>, values: Vec<T>) -> Result<Self> {
        let f = Self::new_unchecked(grid, values)?;
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("quantile values must be finite"));
        }
        if !f.is_monotone() {
            return Err(invalid("quantile values must be non-decreasing"));
        }
        Ok(f)
    }

    /// Only checks the length. Used for emulator outputs, which may break
    /// monotonicity when coefficients leave the nonnegative orthant.
    pub fn new_unchecked(grid: ProbabilityGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "expected {} quantile values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: ProbabilityGrid<T>, c: T) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &ProbabilityGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    /// L² norm on `(0, 1)`.
    pub fn l2_norm(&self) -> T {
        self.grid.inner(&self.values, &self.values).sqrt()
    }

    /// Whether all values lie in `[support.lower, support.upper]`.
    pub fn within(&self, support: &Support<T>) -> bool {
        self.values.iter().all(|&v| v >= support.lower && v <= support.upper)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["p", "value"]).map_err(csv_io)?;
        for (p, v) in self.grid.points().iter().zip(&self.values) {
            out.write_record([p.to_string(), v.to_string()]).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the `p,value` format; the grid is rebuilt from the `p` column.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut ps = Vec::new();
        let mut vs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != 2 {
                return Err(Error::Parse { line, message: "expected 2 fields".into() });
            }
            ps.push(parse_field::<T>(&rec[0], line)?);
            vs.push(parse_field::<T>(&rec[1], line)?);
        }
        Self::new(ProbabilityGrid::new(ps)?, vs)
    }
}

pub(crate) fn parse_field<T: Scalar>(s: &str, line: usize) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::of)
        .map_err(|e| Error::Parse { line, message: format!("{s:?}: {e}") })
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

/// Declared output range `[a, b]`; a diagnostic bound, never a clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Support<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Support<T> {
    /// Observed min/max over `functions`, widened on each side by `widen`
    /// times the observed range.
    pub fn from_functions(functions: &[DiscretizedQuantileFunction<T>], widen: T) -> Option<Self> {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for v in functions.iter().flat_map(|f| f.values.iter()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if !lo.is_finite() {
            return None;
        }
        let pad = (hi - lo) * widen;
        Some(Self { lower: lo - pad, upper: hi + pad })
    }
}

/// Monte Carlo replications of the simulator at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<T> {
    pub draws: Vec<T>,
    pub source: InputPoint,
    pub seed: u64,
}

/// Rank `ceil(p N)` (1-based), robust to `p N` landing a few ulps above an integer.
fn order_rank(p: f64, n: usize) -> usize {
    let t = p * n as f64;
    let r = t.round();
    let rank = if (t - r).abs() <= 8.0 * f64::EPSILON * t.max(1.0) { r } else { t.ceil() };
    (rank as usize).clamp(1, n)
}

/// Left-continuous empirical quantile of `sorted` at `p`.
fn sorted_quantile<T: Scalar>(sorted: &[T], p: T) -> T {
    sorted[order_rank(p.as_f64(), sorted.len()) - 1]
}

/// Sample `p`-quantile: the order statistic of rank `ceil(p N)`.
pub fn sample_quantile<T: Scalar>(draws: &[T], p: T) -> Result<T> {
    if draws.is_empty() {
        return Err(invalid("empty sample"));
    }
    check_probability(p)?;
    let mut s = draws.to_vec();
    sort(&mut s)?;
    Ok(sorted_quantile(&s, p))
}

fn sort<T: Scalar>(v: &mut [T]) -> Result<()> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(())
}

fn check_probability<T: Scalar>(p: T) -> Result<()> {
    if p > T::zero() && p < T::one() {
        Ok(())
    } else {
        Err(invalid(format!("probability {p} is outside (0, 1)")))
    }
}

/// Empirical quantile function of a sample on `grid`.
pub fn empirical_quantile_function<T: Scalar>(
    batch: &SampleBatch<T>,
    grid: &ProbabilityGrid<T>,
) -> Result<DiscretizedQuantileFunction<T>> {
    if batch.draws.is_empty() {
        return Err(invalid("empty sample batch"));
    }
    let mut sorted = batch.draws.clone();
    sort(&mut sorted)?;
    let values = grid.points().iter().map(|&p| sorted_quantile(&sorted, p)).collect();
    DiscretizedQuantileFunction::new(grid.clone(), values)
}

/// L² distance on `(0, 1)`.
pub fn l2_distance<T: Scalar>(
    f: &DiscretizedQuantileFunction<T>,
    g: &DiscretizedQuantileFunction<T>,
) -> Result<T> {
    if f.grid != g.grid {
        return Err(invalid("quantile functions are on different grids"));
    }
    Ok(l2_distance_values(&f.grid, &f.values, &g.values))
}

pub(crate) fn l2_distance_values<T: Scalar>(grid: &ProbabilityGrid<T>, a: &[T], b: &[T]) -> T {
    grid.weights()
        .iter()
        .zip(a)
        .zip(b)
        .map(|((&w, &x), &y)| w * (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Value of the quantile function at `p`, linearly interpolated between grid
/// points and held constant beyond the first and last.
pub fn quantile_objective<T: Scalar>(f: &DiscretizedQuantileFunction<T>, p: T) -> Result<T> {
    check_probability(p)?;
    Ok(interpolate(f.grid.points(), &f.values, p))
}

pub(crate) fn interpolate<T: Scalar>(points: &[T], values: &[T], p: T) -> T {
    let m = points.len();
    if p <= points[0] {
        return values[0];
    }
    if p >= points[m - 1] {
        return values[m - 1];
    }
    // first index with points[k] > p
    let k = points.partition_point(|&x| x <= p);
    let (p0, p1) = (points[k - 1], points[k]);
    if p == p0 {
        return values[k - 1];
    }
    let t = (p - p0) / (p1 - p0);
    values[k - 1] + t * (values[k] - values[k - 1])
}

/// Integral of the quantile function over `(0, 1)`, i.e. the mean.
pub fn mean_objective<T: Scalar>(f: &DiscretizedQuantileFunction<T>) -> T {
    f.grid.inner(&f.values, &vec![T::one(); f.values.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ProbabilityGrid<f64> {
        ProbabilityGrid::default()
    }

    fn batch(draws: Vec<f64>) -> SampleBatch<f64> {
        SampleBatch { draws, source: InputPoint::new(vec![0]), seed: 0 }
    }

    #[test]
    fn grid_validation() {
        assert!(ProbabilityGrid::<f64>::new(vec![0.5]).is_err());
        assert!(ProbabilityGrid::<f64>::new(vec![0.0, 0.5]).is_err());
        assert!(ProbabilityGrid::<f64>::new(vec![0.5, 1.0]).is_err());
        assert!(ProbabilityGrid::<f64>::new(vec![0.5, 0.4]).is_err());
        assert!(ProbabilityGrid::<f64>::new(vec![0.4, 0.4]).is_err());
        let g = grid();
        assert_eq!(g.len(), 199);
        assert_eq!(g.points()[0], 0.005);
        let s: f64 = g.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn median_of_three() {
        let g = ProbabilityGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        let q = empirical_quantile_function(&batch(vec![3.0, 1.0, 2.0]), &g).unwrap();
        assert_eq!(q.values()[1], 2.0);
        assert_eq!(q.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_sample() {
        let q = empirical_quantile_function(&batch(vec![4.5; 17]), &grid()).unwrap();
        assert!(q.values().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(matches!(
            empirical_quantile_function(&batch(vec![]), &grid()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rank_convention_is_exact_on_round_products() {
        // 0.005 * 10_000 is 50.000000000000007 in floating point
        assert_eq!(order_rank(0.005, 10_000), 50);
        assert_eq!(order_rank(0.4, 10), 4);
        assert_eq!(order_rank(0.41, 10), 5);
        assert_eq!(order_rank(1e-9, 10), 1);
    }

    #[test]
    fn l2_identity_and_constant_gap() {
        let g = grid();
        let zero = DiscretizedQuantileFunction::constant(g.clone(), 0.0);
        let one = DiscretizedQuantileFunction::constant(g.clone(), 1.0);
        assert_eq!(l2_distance(&one, &one).unwrap(), 0.0);
        assert!((l2_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_grid_mismatch() {
        let a = DiscretizedQuantileFunction::constant(grid(), 0.0);
        let b = DiscretizedQuantileFunction::constant(ProbabilityGrid::uniform(9).unwrap(), 0.0);
        assert!(l2_distance(&a, &b).is_err());
    }

    #[test]
    fn objective_interpolates() {
        let g = grid();
        let id = DiscretizedQuantileFunction::new(g.clone(), g.points().to_vec()).unwrap();
        assert!((quantile_objective(&id, 0.4).unwrap() - 0.4).abs() < 1e-15);
        assert!((quantile_objective(&id, 0.4037).unwrap() - 0.4037).abs() < 1e-15);
        let sq: Vec<f64> = g.points().iter().map(|p| p * p).collect();
        let f = DiscretizedQuantileFunction::new(g.clone(), sq.clone()).unwrap();
        for k in [0, 17, 100, 198] {
            assert_eq!(quantile_objective(&f, g.points()[k]).unwrap(), sq[k]);
        }
        assert!(quantile_objective(&f, 0.0).is_err());
        assert!(quantile_objective(&f, 1.0).is_err());
        assert!(quantile_objective(&f, -0.3).is_err());
    }

    #[test]
    fn mean_of_constant_and_uniform() {
        let g = grid();
        let c = DiscretizedQuantileFunction::constant(g.clone(), -2.5);
        assert!((mean_objective(&c) + 2.5).abs() < 1e-14);
        let id = DiscretizedQuantileFunction::new(g.clone(), g.points().to_vec()).unwrap();
        assert!((mean_objective(&id) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_monotone_rejected() {
        let g = ProbabilityGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        assert!(DiscretizedQuantileFunction::new(g.clone(), vec![1.0, 0.0, 2.0]).is_err());
        assert!(DiscretizedQuantileFunction::new(g.clone(), vec![1.0, 2.0]).is_err());
        let f = DiscretizedQuantileFunction::new_unchecked(g, vec![1.0, 0.0, 2.0]).unwrap();
        assert!(!f.is_monotone());
    }

    #[test]
    fn csv_round_trip() {
        let g = grid();
        let v: Vec<f64> = g.points().iter().map(|p| (p * 7.0).exp() - 3.0).collect();
        let f = DiscretizedQuantileFunction::new(g, v).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("p,value\n0.005,"));
        let back = DiscretizedQuantileFunction::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn csv_parse_error_reports_line() {
        let text = "p,value\n0.25,1\n0.5,oops\n";
        match DiscretizedQuantileFunction::<f64>::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn support_widening() {
        let g = ProbabilityGrid::new(vec![0.25, 0.75]).unwrap();
        let f = DiscretizedQuantileFunction::new(g.clone(), vec![0.0, 10.0]).unwrap();
        let s = Support::from_functions(&[f.clone()], 0.1).unwrap();
        assert_eq!((s.lower, s.upper), (-1.0, 11.0));
        assert!(f.within(&s));
    }

    #[test]
    fn works_in_single_precision() {
        let g = ProbabilityGrid::<f32>::uniform(99).unwrap();
        let b = SampleBatch { draws: vec![3.0f32, 1.0, 2.0], source: InputPoint::new(vec![0]), seed: 1 };
        let q = empirical_quantile_function(&b, &g).unwrap();
        assert_eq!(quantile_objective(&q, 0.5).unwrap(), 2.0);
    }
}
