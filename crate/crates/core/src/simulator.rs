//! Stochastic simulators over a discrete product grid, and the synthetic
//! maintenance-planning testbed used in place of a production NPV code.
//!
//! The testbed output at input `x` is `NPV(x) = mu(x) + s(x) T`, where `T` is
//! a standardized two-component Gaussian mixture shared by all inputs. Its
//! quantile function is therefore known in closed form up to a scalar
//! root-find, which makes it usable as ground truth.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantile::{
    csv_io, csv_parse, DiscretizedQuantileFunction, ProbabilityGrid, SampleBatch,
};
use crate::scalar::{normal_cdf, Scalar};

/// A point of the discrete input space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputPoint(Vec<i64>);

impl InputPoint {
    pub fn new(coords: Vec<i64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::fmt::Display for InputPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Product of inclusive integer ranges: the full space `F`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteSpace {
    ranges: Vec<(i64, i64)>,
}

impl DiscreteSpace {
    pub fn new(ranges: Vec<(i64, i64)>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(invalid("design space needs at least one coordinate"));
        }
        if ranges.iter().any(|&(lo, hi)| lo > hi) {
            return Err(invalid("design space range with lower > upper"));
        }
        Ok(Self { ranges })
    }

    /// Four maintenance dates in `41..=50` and one recovery date in `11..=20`.
    pub fn maintenance() -> Self {
        Self { ranges: vec![(41, 50), (41, 50), (41, 50), (41, 50), (11, 20)] }
    }

    pub fn ranges(&self) -> &[(i64, i64)] {
        &self.ranges
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// `#F`.
    pub fn size(&self) -> usize {
        self.ranges.iter().map(|&(lo, hi)| (hi - lo + 1) as usize).product()
    }

    pub fn contains(&self, x: &InputPoint) -> bool {
        x.dim() == self.dim()
            && x.0.iter().zip(&self.ranges).all(|(&c, &(lo, hi))| c >= lo && c <= hi)
    }

    pub fn check(&self, x: &InputPoint) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { point: x.0.clone() })
        }
    }

    /// Mixed-radix enumeration, last coordinate fastest.
    pub fn point_at(&self, mut index: usize) -> InputPoint {
        let mut coords = vec![0; self.dim()];
        for (c, &(lo, hi)) in coords.iter_mut().zip(&self.ranges).rev() {
            let width = (hi - lo + 1) as usize;
            *c = lo + (index % width) as i64;
            index /= width;
        }
        InputPoint(coords)
    }

    pub fn index_of(&self, x: &InputPoint) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(x.0.iter().zip(&self.ranges).fold(0usize, |acc, (&c, &(lo, hi))| {
            acc * (hi - lo + 1) as usize + (c - lo) as usize
        }))
    }

    pub fn iter(&self) -> impl Iterator<Item = InputPoint> + '_ {
        (0..self.size()).map(move |i| self.point_at(i))
    }

    /// Affine map of every coordinate onto `[0, 1]`.
    pub fn normalize<T: Scalar>(&self, x: &InputPoint) -> Vec<T> {
        x.0.iter()
            .zip(&self.ranges)
            .map(|(&c, &(lo, hi))| {
                if hi == lo {
                    T::zero()
                } else {
                    T::of((c - lo) as f64 / (hi - lo) as f64)
                }
            })
            .collect()
    }
}

/// `k` distinct points of `space`, uniform without replacement.
pub fn sample_design(space: &DiscreteSpace, k: usize, seed: u64) -> Result<Vec<InputPoint>> {
    let total = space.size();
    if k > total {
        return Err(invalid(format!("cannot draw {k} distinct points from a space of {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, total, k).into_iter().map(|i| space.point_at(i)).collect())
}

/// Full space with its learning set `χ` and study set `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    pub full: DiscreteSpace,
    pub learning: Vec<InputPoint>,
    pub study: Vec<InputPoint>,
}

impl DesignSpace {
    pub fn new(full: DiscreteSpace, learning: Vec<InputPoint>, study: Vec<InputPoint>) -> Result<Self> {
        for (name, set) in [("learning", &learning), ("study", &study)] {
            let mut seen = HashSet::new();
            for x in set {
                full.check(x)?;
                if !seen.insert(x) {
                    return Err(invalid(format!("duplicate point {x} in {name} set")));
                }
            }
        }
        Ok(Self { full, learning, study })
    }

    /// Disjoint random learning and study sets drawn in one pass.
    pub fn sample(full: DiscreteSpace, n_learning: usize, n_study: usize, seed: u64) -> Result<Self> {
        let mut pts = sample_design(&full, n_learning + n_study, seed)?;
        let study = pts.split_off(n_learning);
        Self::new(full, pts, study)
    }
}

/// A stochastic code: every call maps an input and a seed to `n` i.i.d. draws.
pub trait StochasticSimulator: Sync {
    fn space(&self) -> &DiscreteSpace;

    /// Deterministic given `(x, n, seed)`.
    fn draw(&self, x: &InputPoint, n: usize, seed: u64) -> Result<Vec<f64>>;
}

/// Ground-truth quantile functions, when the simulator has them.
pub trait QuantileOracle: Sync {
    /// Quantiles of the output at `x` for each of `probabilities`.
    fn true_quantiles(&self, x: &InputPoint, probabilities: &[f64]) -> Result<Vec<f64>>;
}

/// Runs a simulator and packages the draws.
pub fn simulate<T: Scalar, S: StochasticSimulator + ?Sized>(
    sim: &S,
    x: &InputPoint,
    n: usize,
    seed: u64,
) -> Result<SampleBatch<T>> {
    if n == 0 {
        return Err(invalid("replication count must be at least 1"));
    }
    sim.space().check(x)?;
    let draws = sim.draw(x, n, seed)?.into_iter().map(T::of).collect();
    Ok(SampleBatch { draws, source: x.clone(), seed })
}

/// Ground-truth quantile function on `grid`.
pub fn true_quantile_function<T: Scalar, O: QuantileOracle + ?Sized>(
    oracle: &O,
    x: &InputPoint,
    grid: &ProbabilityGrid<T>,
) -> Result<DiscretizedQuantileFunction<T>> {
    let ps: Vec<f64> = grid.points().iter().map(|p| p.as_f64()).collect();
    let values = oracle.true_quantiles(x, &ps)?.into_iter().map(T::of).collect();
    DiscretizedQuantileFunction::new(grid.clone(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub i: usize,
    pub j: usize,
    pub coef: f64,
}

/// Raised-cosine bump `amplitude (1 + cos(pi r / radius)) / 2` for `r < radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub intercept: f64,
    pub linear: Vec<f64>,
}

/// Two-component Gaussian mixture, standardized to mean 0 and variance 1.
///
/// The weight of the second component may vary with the input:
/// `clamp(weight + weight_linear . z, 0, 1)` on normalized coordinates `z`.
/// An empty `weight_linear` keeps one fixed noise distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Weight of the second component.
    pub weight: f64,
    pub means: [f64; 2],
    pub sds: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_linear: Vec<f64>,
}

impl MixtureSpec {
    /// Right-skewed: a heavier second mode to the right.
    pub fn skewed() -> Self {
        Self { weight: 0.25, means: [0.0, 2.5], sds: [1.0, 1.5], weight_linear: Vec::new() }
    }

    pub fn symmetric() -> Self {
        Self { weight: 0.0, means: [0.0, 0.0], sds: [1.0, 1.0], weight_linear: Vec::new() }
    }

    /// Right-skewed with the second mode growing along two coordinates.
    pub fn varying() -> Self {
        Self { weight: 0.2, weight_linear: vec![0.0, 0.15, 0.0, 0.0, 0.15], ..Self::skewed() }
    }

    fn weight_at(&self, z: &[f64]) -> f64 {
        let w = self.weight + self.weight_linear.iter().zip(z).map(|(c, zi)| c * zi).sum::<f64>();
        w.clamp(0.0, 1.0)
    }

    /// The standardized distribution at second-component weight `weight`.
    pub fn shape(&self, weight: f64) -> NoiseShape {
        let w = [1.0 - weight, weight];
        let mean: f64 = (0..2).map(|k| w[k] * self.means[k]).sum();
        let second: f64 =
            (0..2).map(|k| w[k] * (self.sds[k].powi(2) + self.means[k].powi(2))).sum();
        NoiseShape {
            weight,
            means: self.means,
            sds: self.sds,
            mean,
            sd: (second - mean * mean).sqrt(),
        }
    }
}

/// A standardized two-component mixture with a fixed weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseShape {
    pub weight: f64,
    means: [f64; 2],
    sds: [f64; 2],
    mean: f64,
    sd: f64,
}

impl NoiseShape {
    pub fn cdf(&self, t: f64) -> f64 {
        let y = self.mean + self.sd * t;
        let c = |k: usize| normal_cdf((y - self.means[k]) / self.sds[k]);
        (1.0 - self.weight) * c(0) + self.weight * c(1)
    }

    /// Quantile by bisection on the CDF to `1e-10`.
    pub fn quantile(&self, p: f64) -> f64 {
        let lo_raw = (0..2).map(|k| self.means[k] - 40.0 * self.sds[k]).fold(f64::INFINITY, f64::min);
        let hi_raw =
            (0..2).map(|k| self.means[k] + 40.0 * self.sds[k]).fold(f64::NEG_INFINITY, f64::max);
        let mut lo = (lo_raw - self.mean) / self.sd;
        let mut hi = (hi_raw - self.mean) / self.sd;
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }
}

/// Configuration of the synthetic testbed (key-value schema, TOML on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticModelSpec {
    pub ranges: Vec<(i64, i64)>,
    /// Trend `mu` on normalized coordinates.
    pub intercept: f64,
    pub linear: Vec<f64>,
    pub interaction: Interaction,
    pub bump: Bump,
    /// Scale `s`, affine in normalized coordinates.
    pub scale: ScaleSpec,
    pub noise: MixtureSpec,
    /// Mixed into every per-call seed.
    pub seed: u64,
}

impl Default for SyntheticModelSpec {
    fn default() -> Self {
        Self {
            ranges: DiscreteSpace::maintenance().ranges,
            intercept: -3.2,
            linear: vec![1.35, 0.0, -1.08, 0.0, 0.81],
            interaction: Interaction { i: 1, j: 3, coef: 1.62 },
            bump: Bump { amplitude: 3.78, center: vec![0.2, 0.7, 0.6, 0.4, 0.7], radius: 0.7 },
            scale: ScaleSpec { intercept: 0.6, linear: vec![0.3, 0.0, 0.0, 0.25, -0.15] },
            noise: MixtureSpec::varying(),
            seed: 0,
        }
    }
}

/// The synthetic NPV simulator.
#[derive(Debug, Clone)]
pub struct SyntheticSimulator {
    spec: SyntheticModelSpec,
    space: DiscreteSpace,
}

impl SyntheticSimulator {
    pub fn new(spec: SyntheticModelSpec) -> Result<Self> {
        let space = DiscreteSpace::new(spec.ranges.clone())?;
        let d = space.dim();
        if spec.linear.len() != d || spec.scale.linear.len() != d || spec.bump.center.len() != d {
            return Err(invalid(format!("synthetic model coefficients must all have length {d}")));
        }
        if spec.interaction.i >= d || spec.interaction.j >= d {
            return Err(invalid("interaction index out of range"));
        }
        if !(spec.bump.radius > 0.0) {
            return Err(invalid("bump radius must be positive"));
        }
        // s is affine on [0,1]^d, so its minimum sits at a corner
        let s_min = spec.scale.intercept + spec.scale.linear.iter().map(|c| c.min(0.0)).sum::<f64>();
        if s_min < 0.0 {
            return Err(invalid(format!("scale function reaches {s_min} < 0 on the design space")));
        }
        let m = &spec.noise;
        if !(0.0..=1.0).contains(&m.weight) || m.sds.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("mixture needs a weight in [0, 1] and positive sds"));
        }
        if !m.weight_linear.is_empty() && m.weight_linear.len() != d {
            return Err(invalid(format!("mixture weight slopes must have length {d}")));
        }
        Ok(Self { spec, space })
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    /// Location `mu(x)`.
    pub fn location(&self, x: &InputPoint) -> f64 {
        let z: Vec<f64> = self.space.normalize(x);
        let s = &self.spec;
        let lin: f64 = s.linear.iter().zip(&z).map(|(b, zi)| b * zi).sum();
        let inter = s.interaction.coef * z[s.interaction.i] * z[s.interaction.j];
        let r = z.iter().zip(&s.bump.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let t = (r / s.bump.radius).min(1.0);
        let bump = s.bump.amplitude * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        s.intercept + lin + inter + bump
    }

    /// Scale `s(x) >= 0`.
    pub fn scale(&self, x: &InputPoint) -> f64 {
        let z: Vec<f64> = self.space.normalize(x);
        self.spec.scale.intercept
            + self.spec.scale.linear.iter().zip(&z).map(|(b, zi)| b * zi).sum::<f64>()
    }

    /// Standardized noise distribution at `x`.
    pub fn noise(&self, x: &InputPoint) -> NoiseShape {
        let z: Vec<f64> = self.space.normalize(x);
        self.spec.noise.shape(self.spec.noise.weight_at(&z))
    }

    fn stream_seed(&self, x: &InputPoint, seed: u64) -> u64 {
        let mut h = splitmix64(self.spec.seed ^ 0x5171_u64);
        h = splitmix64(h ^ seed);
        for &c in x.coords() {
            h = splitmix64(h ^ c as u64);
        }
        h
    }

    /// The point of `F` maximizing the true `p`-quantile, by enumeration.
    pub fn argmax_quantile(&self, p: f64) -> (InputPoint, f64) {
        let oracle = CachedOracle::new(self, vec![p]);
        let mut best: Option<(InputPoint, f64)> = None;
        for x in self.space.iter() {
            let v = oracle.quantile(&x, 0);
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((x, v));
            }
        }
        best.expect("space is non-empty")
    }
}

impl StochasticSimulator for SyntheticSimulator {
    fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    fn draw(&self, x: &InputPoint, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.space.check(x)?;
        let mu = self.location(x);
        let s = self.scale(x);
        let noise = self.noise(x);
        let m = &self.spec.noise;
        let mut rng = ChaCha8Rng::seed_from_u64(self.stream_seed(x, seed));
        Ok((0..n)
            .map(|_| {
                let k = usize::from(rng.random::<f64>() < noise.weight);
                let z: f64 = rng.sample(StandardNormal);
                mu + s * noise.standardize(m.means[k] + m.sds[k] * z)
            })
            .collect())
    }
}

impl QuantileOracle for SyntheticSimulator {
    fn true_quantiles(&self, x: &InputPoint, probabilities: &[f64]) -> Result<Vec<f64>> {
        self.space.check(x)?;
        let mu = self.location(x);
        let s = self.scale(x);
        let noise = self.noise(x);
        Ok(probabilities.iter().map(|&p| mu + s * noise.quantile(p)).collect())
    }
}

/// Noise quantiles precomputed for every mixture weight the space can
/// produce, on a fixed list of probabilities; cheap ground truth for large
/// study sets.
#[derive(Debug, Clone)]
pub struct CachedOracle<'a> {
    sim: &'a SyntheticSimulator,
    probabilities: Vec<f64>,
    noise: HashMap<u64, Vec<f64>>,
}

impl<'a> CachedOracle<'a> {
    pub fn new(sim: &'a SyntheticSimulator, probabilities: Vec<f64>) -> Self {
        let mut noise = HashMap::new();
        let weights: Vec<f64> = if sim.spec.noise.weight_linear.is_empty() {
            vec![sim.spec.noise.weight]
        } else {
            sim.space.iter().map(|x| sim.noise(&x).weight).collect()
        };
        for w in weights {
            noise.entry(w.to_bits()).or_insert_with(|| {
                let shape = sim.spec.noise.shape(w);
                probabilities.iter().map(|&p| shape.quantile(p)).collect()
            });
        }
        Self { sim, probabilities, noise }
    }

    fn quantile(&self, x: &InputPoint, k: usize) -> f64 {
        let w = self.sim.noise(x).weight;
        self.sim.location(x) + self.sim.scale(x) * self.noise[&w.to_bits()][k]
    }
}

impl QuantileOracle for CachedOracle<'_> {
    fn true_quantiles(&self, x: &InputPoint, probabilities: &[f64]) -> Result<Vec<f64>> {
        self.sim.space.check(x)?;
        let noise = self.sim.noise(x);
        let cached = self.noise.get(&noise.weight.to_bits());
        let mu = self.sim.location(x);
        let s = self.sim.scale(x);
        Ok(probabilities
            .iter()
            .map(|&p| {
                let t = match (cached, self.probabilities.iter().position(|&q| q == p)) {
                    (Some(c), Some(k)) => c[k],
                    _ => noise.quantile(p),
                };
                mu + s * t
            })
            .collect())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for item `index` of a campaign.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

fn header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Design CSV: header `x1..xd`, one point per row.
pub fn write_design<W: Write>(w: W, points: &[InputPoint]) -> Result<()> {
    let d = points.first().map_or(0, InputPoint::dim);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(d)).map_err(csv_io)?;
    for x in points {
        out.write_record(x.coords().iter().map(|c| c.to_string())).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_design<R: Read>(r: R) -> Result<Vec<InputPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let d = rdr.headers().map_err(csv_parse)?.len();
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_parse)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        pts.push(parse_point(&rec, d, line)?);
    }
    Ok(pts)
}

fn parse_point(rec: &csv::StringRecord, d: usize, line: usize) -> Result<InputPoint> {
    let coords = (0..d)
        .map(|k| {
            rec.get(k)
                .ok_or_else(|| Error::Parse { line, message: format!("missing column {}", k + 1) })?
                .trim()
                .parse::<i64>()
                .map_err(|e| Error::Parse { line, message: format!("{:?}: {e}", &rec[k]) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InputPoint(coords))
}

/// Appends `x1..xd,draw` rows, with a header when `with_header`.
pub fn write_archive<W: Write>(w: W, batches: &[(InputPoint, Vec<f64>)], with_header: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if with_header {
        let d = batches.first().map_or(0, |b| b.0.dim());
        let mut h = header(d);
        h.push("draw".into());
        out.write_record(h).map_err(csv_io)?;
    }
    for (x, draws) in batches {
        for v in draws {
            let mut rec: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
            rec.push(v.to_string());
            out.write_record(rec).map_err(csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads an archive, grouping consecutive rows by input point.
pub fn read_archive<R: Read>(r: R) -> Result<Vec<(InputPoint, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers().map_err(csv_parse)?.len();
    if width < 2 {
        return Err(Error::Parse { line: 1, message: "archive needs coordinate and draw columns".into() });
    }
    let d = width - 1;
    let mut out: Vec<(InputPoint, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_parse)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, got {}", rec.len()) });
        }
        let x = parse_point(&rec, d, line)?;
        let v: f64 = rec[d]
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line, message: format!("{:?}: {e}", &rec[d]) })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, message: "non-finite draw".into() });
        }
        match out.last_mut() {
            Some((last, draws)) if *last == x => draws.push(v),
            _ => out.push((x, vec![v])),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_enumeration_round_trips() {
        let f = DiscreteSpace::maintenance();
        assert_eq!(f.size(), 100_000);
        for i in [0, 1, 9, 10, 12_345, 99_999] {
            let x = f.point_at(i);
            assert!(f.contains(&x));
            assert_eq!(f.index_of(&x), Some(i));
        }
        assert_eq!(f.point_at(0).coords(), &[41, 41, 41, 41, 11]);
        assert_eq!(f.point_at(99_999).coords(), &[50, 50, 50, 50, 20]);
        let z: Vec<f64> = f.normalize(&InputPoint::new(vec![41, 50, 44, 41, 20]));
        assert_eq!(z, vec![0.0, 1.0, 1.0 / 3.0, 0.0, 1.0]);
    }

    #[test]
    fn domain_errors() {
        let sim = SyntheticSimulator::new(SyntheticModelSpec::default()).unwrap();
        let bad = InputPoint::new(vec![40, 41, 41, 41, 11]);
        assert!(matches!(simulate::<f64, _>(&sim, &bad, 3, 0), Err(Error::Domain { .. })));
        let wrong_dim = InputPoint::new(vec![41, 41]);
        assert!(sim.true_quantiles(&wrong_dim, &[0.5]).is_err());
        assert!(simulate::<f64, _>(&sim, &sim.space().point_at(0), 0, 0).is_err());
    }

    #[test]
    fn whole_space_when_k_equals_size() {
        let f = DiscreteSpace::new(vec![(0, 2), (5, 6)]).unwrap();
        let mut got = sample_design(&f, 6, 3).unwrap();
        got.sort();
        let mut all: Vec<_> = f.iter().collect();
        all.sort();
        assert_eq!(got, all);
        assert!(sample_design(&f, 7, 3).is_err());
    }

    #[test]
    fn design_is_seeded() {
        let f = DiscreteSpace::maintenance();
        let a = sample_design(&f, 200, 11).unwrap();
        assert_eq!(a, sample_design(&f, 200, 11).unwrap());
        assert_ne!(a, sample_design(&f, 200, 12).unwrap());
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 200);
    }

    #[test]
    fn design_space_rejects_duplicates() {
        let f = DiscreteSpace::maintenance();
        let x = f.point_at(5);
        assert!(DesignSpace::new(f.clone(), vec![x.clone(), x.clone()], vec![]).is_err());
        let ds = DesignSpace::sample(f, 20, 30, 1).unwrap();
        let all: HashSet<_> = ds.learning.iter().chain(&ds.study).collect();
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn symmetric_noise_median_is_location() {
        let spec = SyntheticModelSpec { noise: MixtureSpec::symmetric(), ..Default::default() };
        let sim = SyntheticSimulator::new(spec).unwrap();
        let x = InputPoint::new(vec![44, 47, 45, 49, 13]);
        let q = sim.true_quantiles(&x, &[0.5]).unwrap()[0];
        assert!((q - sim.location(&x)).abs() < 1e-9);
    }

    #[test]
    fn zero_scale_gives_constant_function() {
        let spec = SyntheticModelSpec {
            scale: ScaleSpec { intercept: 0.0, linear: vec![0.0; 5] },
            ..Default::default()
        };
        let sim = SyntheticSimulator::new(spec).unwrap();
        let x = InputPoint::new(vec![42, 43, 44, 45, 16]);
        let g = ProbabilityGrid::<f64>::default();
        let q = true_quantile_function(&sim, &x, &g).unwrap();
        assert!(q.values().iter().all(|&v| v == sim.location(&x)));
    }

    #[test]
    fn negative_scale_rejected() {
        let spec = SyntheticModelSpec {
            scale: ScaleSpec { intercept: 0.1, linear: vec![0.0, 0.0, -0.2, 0.0, 0.0] },
            ..Default::default()
        };
        assert!(SyntheticSimulator::new(spec).is_err());
    }

    #[test]
    fn noise_is_standardized_and_skewed() {
        let noise = MixtureSpec::skewed().shape(0.25);
        // mean 0 and variance 1 by quadrature of the quantile function
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for k in 0..n {
            let t = noise.quantile((k as f64 + 0.5) / n as f64);
            m1 += t;
            m2 += t * t;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 1e-3, "mean {m1}");
        assert!((m2 - 1.0).abs() < 5e-3, "variance {m2}");
        assert!(noise.quantile(0.5) < 0.0, "right skew puts the median below the mean");
        assert!((noise.cdf(noise.quantile(0.3)) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let a = InputPoint::new(vec![41, 42]);
        let b = InputPoint::new(vec![43, 44]);
        let batches = vec![(a.clone(), vec![1.5, -2.0]), (b.clone(), vec![0.25])];
        let mut buf = Vec::new();
        write_archive(&mut buf, &batches, true).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x1,x2,draw\n41,42,1.5\n"));
        assert_eq!(read_archive(&buf[..]).unwrap(), batches);

        let bad = "x1,x2,draw\n41,42,1.5\n41,42,nan?\n";
        match read_archive(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "x1,x2,draw\n41,42\n";
        assert!(matches!(read_archive(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn design_csv_round_trip() {
        let pts = sample_design(&DiscreteSpace::maintenance(), 5, 2).unwrap();
        let mut buf = Vec::new();
        write_design(&mut buf, &pts).unwrap();
        assert!(buf.starts_with(b"x1,x2,x3,x4,x5\n"));
        assert_eq!(read_design(&buf[..]).unwrap(), pts);
    }
}
