//! Quantile-function expected improvement (QFEI) and direct optimization.
//!
//! The objective is `U_x = Q_x(p)` for a fixed probability `p`. With the
//! identity transform the emulated coefficients are independent Gaussians,
//! so `U_x` is Gaussian with mean `sum_j psi_j(x) R_j(p)` and variance
//! `sum_j R_j(p)^2 MSE_j(x)`. Each iteration simulates the candidate of
//! largest expected improvement over the best observed value, then rebuilds
//! the basis and the coefficient models on the enlarged design.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::{basis_values_at, EmulatorConfig, QuantileEmulator, TransformMode};
use crate::error::{invalid, Error, Result};
use crate::quantile::{empirical_quantile_function, quantile_objective, DiscretizedQuantileFunction, ProbabilityGrid};
use crate::scalar::{normal_cdf, normal_pdf, Scalar};
use crate::simulator::{simulate, DiscreteSpace, InputPoint, QuantileOracle, StochasticSimulator};

/// Expected improvements below this fraction of the output scale count as zero
/// when picking the next input.
pub const DEAD_EI: f64 = 1e-12;

/// How the emulator is rebuilt after each new simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitMode {
    /// New basis and a full likelihood search for every coefficient model.
    #[default]
    Full,
    /// New basis; coefficient models keep their previous length-scales.
    LengthsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QfeiConfig {
    /// Probability of the optimized quantile.
    pub p: f64,
    pub max_iterations: usize,
    /// Replications per newly simulated input.
    pub n_mc: usize,
    /// Simulator seed for new inputs.
    pub seed: u64,
    pub emulator: EmulatorConfig,
    pub refit: RefitMode,
}

impl Default for QfeiConfig {
    fn default() -> Self {
        Self {
            p: 0.4,
            max_iterations: 50,
            n_mc: 10_000,
            seed: 0,
            emulator: EmulatorConfig { transform: TransformMode::Identity, ..Default::default() },
            refit: RefitMode::Full,
        }
    }
}

impl QfeiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(invalid(format!("p = {} is outside (0, 1)", self.p)));
        }
        if self.n_mc == 0 {
            return Err(invalid("n_mc must be at least 1"));
        }
        if self.emulator.transform != TransformMode::Identity {
            return Err(Error::UnsupportedMode(
                "expected improvement needs the identity transform".into(),
            ));
        }
        Ok(())
    }
}

/// Expected-improvement score of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EiScore<T> {
    /// Position of the candidate in the study set.
    pub index: usize,
    pub x: InputPoint,
    pub mean: T,
    pub sd: T,
    /// Standardized improvement `(mean - incumbent) / sd`; zero when `sd = 0`.
    pub u: T,
    pub ei: T,
}

/// One completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceEntry<T> {
    pub iteration: usize,
    pub x_new: InputPoint,
    pub ei: T,
    pub predicted_mean: T,
    pub predicted_sd: T,
    pub observed: T,
    pub incumbent: T,
    /// Iterations since the incumbent last changed, counted after this one.
    pub stable_for: usize,
}

/// Gaussian posterior `(mean, variance)` of `Q_x(p)`.
pub fn quantile_posterior<T: Scalar>(
    em: &QuantileEmulator<T>,
    x: &InputPoint,
    p: T,
) -> Result<(T, T)> {
    if em.transform() != TransformMode::Identity {
        return Err(Error::UnsupportedMode(
            "the quantile posterior is Gaussian only for the identity transform".into(),
        ));
    }
    if !(p > T::zero() && p < T::one()) {
        return Err(invalid(format!("probability {p} is outside (0, 1)")));
    }
    let r = basis_values_at(em.basis(), p);
    Ok(posterior_with(em, x, &r)?)
}

fn posterior_with<T: Scalar>(em: &QuantileEmulator<T>, x: &InputPoint, r: &[T]) -> Result<(T, T)> {
    let preds = em.coefficient_predictions(x)?;
    let mut mean = T::zero();
    let mut var = T::zero();
    for (pr, &rj) in preds.iter().zip(r) {
        mean += pr.mean * rj;
        var += rj * rj * pr.variance;
    }
    Ok((mean, var))
}

/// `E[(U - incumbent)^+]` for `U ~ N(mean, sd^2)`.
pub fn expected_improvement<T: Scalar>(mean: T, sd: T, incumbent: T) -> T {
    let gap = mean - incumbent;
    if !(sd > T::zero()) {
        return gap.max(T::zero());
    }
    let u = gap / sd;
    (sd * (u * normal_cdf(u) + normal_pdf(u))).max(T::zero())
}

/// Index of the largest value, lowest index on ties.
fn argmax_first<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// State of an adaptive run.
#[derive(Debug, Clone)]
pub struct QfeiState<T: Scalar> {
    config: QfeiConfig,
    space: DiscreteSpace,
    grid: ProbabilityGrid<T>,
    design: Vec<InputPoint>,
    outputs: Vec<DiscretizedQuantileFunction<T>>,
    observed: Vec<T>,
    initial_size: usize,
    study: Vec<InputPoint>,
    explored: HashSet<InputPoint>,
    emulator: QuantileEmulator<T>,
    incumbent: usize,
    incumbent_trace: Vec<T>,
    trace: Vec<TraceEntry<T>>,
    stable_for: usize,
}

impl<T: Scalar> QfeiState<T> {
    /// Starts from already simulated learning outputs.
    pub fn new(
        space: DiscreteSpace,
        learning: Vec<InputPoint>,
        outputs: Vec<DiscretizedQuantileFunction<T>>,
        study: Vec<InputPoint>,
        config: QfeiConfig,
    ) -> Result<Self> {
        config.validate()?;
        let Some(first) = outputs.first() else {
            return Err(invalid("no learning outputs"));
        };
        let grid = first.grid().clone();
        let mut seen = HashSet::new();
        if !learning.iter().all(|x| seen.insert(x.clone())) {
            return Err(invalid("learning set contains duplicates"));
        }
        for x in &study {
            space.check(x)?;
        }
        let p = T::of(config.p);
        let observed =
            outputs.iter().map(|f| quantile_objective(f, p)).collect::<Result<Vec<T>>>()?;
        let emulator = QuantileEmulator::train(&space, &learning, &outputs, &config.emulator)?;
        let (incumbent, best) = argmax_first(observed.iter().copied()).expect("non-empty");
        Ok(Self {
            initial_size: learning.len(),
            explored: seen,
            design: learning,
            config,
            space,
            grid,
            outputs,
            observed,
            study,
            emulator,
            incumbent,
            incumbent_trace: vec![best],
            trace: Vec::new(),
            stable_for: 0,
        })
    }

    /// Simulates the learning set with `config.n_mc` replications and starts.
    pub fn initialize<S: StochasticSimulator + ?Sized>(
        sim: &S,
        learning: Vec<InputPoint>,
        study: Vec<InputPoint>,
        grid: &ProbabilityGrid<T>,
        config: QfeiConfig,
    ) -> Result<Self> {
        let outputs = learning
            .par_iter()
            .map(|x| {
                let batch = simulate::<T, S>(sim, x, config.n_mc, config.seed)?;
                empirical_quantile_function(&batch, grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sim.space().clone(), learning, outputs, study, config)
    }

    pub fn config(&self) -> &QfeiConfig {
        &self.config
    }

    pub fn design(&self) -> &[InputPoint] {
        &self.design
    }

    pub fn outputs(&self) -> &[DiscretizedQuantileFunction<T>] {
        &self.outputs
    }

    /// Observed `p`-quantiles over the design.
    pub fn observed(&self) -> &[T] {
        &self.observed
    }

    pub fn study(&self) -> &[InputPoint] {
        &self.study
    }

    pub fn emulator(&self) -> &QuantileEmulator<T> {
        &self.emulator
    }

    /// Best observed input and its value.
    pub fn incumbent(&self) -> (&InputPoint, T) {
        (&self.design[self.incumbent], self.observed[self.incumbent])
    }

    /// Incumbent value before the first iteration and after every one.
    pub fn incumbent_trace(&self) -> &[T] {
        &self.incumbent_trace
    }

    pub fn trace(&self) -> &[TraceEntry<T>] {
        &self.trace
    }

    /// Iterations since the incumbent last changed.
    pub fn stable_for(&self) -> usize {
        self.stable_for
    }

    pub fn is_explored(&self, x: &InputPoint) -> bool {
        self.explored.contains(x)
    }

    /// Expected improvement of every unexplored study point, in study order.
    pub fn score_candidates(&self) -> Result<Vec<EiScore<T>>> {
        let p = T::of(self.config.p);
        let r = basis_values_at(self.emulator.basis(), p);
        let best = self.observed[self.incumbent];
        self.study
            .par_iter()
            .enumerate()
            .filter(|(_, x)| !self.explored.contains(*x))
            .map(|(index, x)| {
                let (mean, var) = posterior_with(&self.emulator, x, &r)?;
                let sd = var.sqrt();
                let u = if sd > T::zero() { (mean - best) / sd } else { T::zero() };
                Ok(EiScore { index, x: x.clone(), mean, sd, u, ei: expected_improvement(mean, sd, best) })
            })
            .collect()
    }

    /// One iteration; on any error the state is left unchanged.
    pub fn step<S: StochasticSimulator + ?Sized>(&mut self, sim: &S) -> Result<&TraceEntry<T>> {
        let scores = self.score_candidates()?;
        // improvements at rounding level are ties at zero
        let scale = self.observed.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let floor = T::of(DEAD_EI) * scale.max(T::one());
        let (pick, _) = argmax_first(scores.iter().map(|s| if s.ei > floor { s.ei } else { T::zero() }))
            .ok_or(Error::Exhausted)?;
        let chosen = &scores[pick];
        let batch = simulate::<T, S>(sim, &chosen.x, self.config.n_mc, self.config.seed)?;
        let output = empirical_quantile_function(&batch, &self.grid)?;
        let value = quantile_objective(&output, T::of(self.config.p))?;

        let mut design = self.design.clone();
        design.push(chosen.x.clone());
        let mut outputs = self.outputs.clone();
        outputs.push(output);
        let emulator = match self.config.refit {
            RefitMode::Full => {
                QuantileEmulator::train(&self.space, &design, &outputs, &self.config.emulator)?
            }
            RefitMode::LengthsOnly => QuantileEmulator::train_with_previous_lengths(
                &self.space,
                &design,
                &outputs,
                &self.config.emulator,
                &self.emulator,
            )?,
        };

        self.design = design;
        self.outputs = outputs;
        self.emulator = emulator;
        self.explored.insert(chosen.x.clone());
        self.observed.push(value);
        if value > self.observed[self.incumbent] {
            self.incumbent = self.observed.len() - 1;
            self.stable_for = 0;
        } else {
            self.stable_for += 1;
        }
        let incumbent = self.observed[self.incumbent];
        self.incumbent_trace.push(incumbent);
        self.trace.push(TraceEntry {
            iteration: self.trace.len() + 1,
            x_new: chosen.x.clone(),
            ei: chosen.ei,
            predicted_mean: chosen.mean,
            predicted_sd: chosen.sd,
            observed: value,
            incumbent,
            stable_for: self.stable_for,
        });
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Number of points added so far.
    pub fn iterations(&self) -> usize {
        self.design.len() - self.initial_size
    }
}

/// Outcome of an adaptive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QfeiReport<T> {
    pub best: InputPoint,
    /// Observed `p`-quantile at `best`.
    pub best_observed: T,
    /// Largest observed `p`-quantile over the initial learning set.
    pub initial_max: T,
    pub iterations: usize,
    pub exhausted: bool,
    pub stable_for: usize,
    pub incumbent_trace: Vec<T>,
    pub trace: Vec<TraceEntry<T>>,
    pub truth: Option<TruthSummary>,
}

/// Comparison of a returned input with the ground truth over the study set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    /// True `p`-quantile at the returned input.
    pub value: f64,
    /// Largest true `p`-quantile over the study set.
    pub study_max: f64,
    /// Study points with a strictly larger true value.
    pub rank: usize,
}

impl TruthSummary {
    pub fn in_top(&self, k: usize) -> bool {
        self.rank < k
    }
}

/// Rank of `x` among `study` by true `p`-quantile.
pub fn truth_summary<O: QuantileOracle + ?Sized>(
    oracle: &O,
    x: &InputPoint,
    study: &[InputPoint],
    p: f64,
) -> Result<TruthSummary> {
    let value = oracle.true_quantiles(x, &[p])?[0];
    let values = study
        .par_iter()
        .map(|s| Ok(oracle.true_quantiles(s, &[p])?[0]))
        .collect::<Result<Vec<f64>>>()?;
    let study_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rank = values.iter().filter(|&&v| v > value).count();
    Ok(TruthSummary { value, study_max, rank })
}

/// Runs up to `max_iterations` steps and summarizes the result.
pub fn run_qfei<T: Scalar, S: StochasticSimulator + ?Sized>(
    mut state: QfeiState<T>,
    sim: &S,
    oracle: Option<&dyn QuantileOracle>,
) -> Result<(QfeiReport<T>, QfeiState<T>)> {
    let mut exhausted = false;
    while state.iterations() < state.config.max_iterations {
        match state.step(sim) {
            Ok(entry) => log::info!(
                "iteration {}: {} ei={} observed={} incumbent={}",
                entry.iteration,
                entry.x_new,
                entry.ei,
                entry.observed,
                entry.incumbent
            ),
            Err(Error::Exhausted) => {
                exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let (best, best_observed) = state.incumbent();
    let truth = oracle
        .map(|o| truth_summary(o, best, &state.study, state.config.p))
        .transpose()?;
    let report = QfeiReport {
        best: best.clone(),
        best_observed,
        initial_max: state.incumbent_trace[0],
        iterations: state.iterations(),
        exhausted,
        stable_for: state.stable_for,
        incumbent_trace: state.incumbent_trace.clone(),
        trace: state.trace.clone(),
        truth,
    };
    Ok((report, state))
}

/// Writes the trace as JSON lines.
pub fn write_trace<T: Scalar, W: Write>(mut w: W, trace: &[TraceEntry<T>]) -> Result<()> {
    for entry in trace {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Result of maximizing the predicted `p`-quantile over a study set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectReport {
    pub argmax: InputPoint,
    pub predicted_max: f64,
    pub truth: Option<DirectTruth>,
}

/// The four-value diagnosis of direct optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectTruth {
    /// Largest true value over the study set.
    pub study_max: f64,
    /// Largest predicted value over the study set.
    pub predicted_max: f64,
    /// True value at the predicted argmax.
    pub true_at_argmax: f64,
    /// Largest true value over the learning set.
    pub learning_max: f64,
}

/// Maximizes an arbitrary predictor of `Q_x(p)` over `study`; ties go to the
/// lowest index.
pub fn direct_optimize_with<F>(
    predict: F,
    study: &[InputPoint],
    learning: &[InputPoint],
    p: f64,
    oracle: Option<&dyn QuantileOracle>,
) -> Result<DirectReport>
where
    F: Fn(&InputPoint) -> Result<f64> + Sync,
{
    if study.is_empty() {
        return Err(invalid("empty study set"));
    }
    let predicted = study.par_iter().map(&predict).collect::<Result<Vec<f64>>>()?;
    let (i, predicted_max) = argmax_first(predicted.iter().copied()).expect("non-empty");
    let argmax = study[i].clone();
    let truth = match oracle {
        None => None,
        Some(o) => {
            let at = |xs: &[InputPoint]| -> Result<f64> {
                let vals = xs
                    .par_iter()
                    .map(|x| Ok(o.true_quantiles(x, &[p])?[0]))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
            };
            Some(DirectTruth {
                study_max: at(study)?,
                predicted_max,
                true_at_argmax: o.true_quantiles(&argmax, &[p])?[0],
                learning_max: at(learning)?,
            })
        }
    };
    Ok(DirectReport { argmax, predicted_max, truth })
}

/// Direct optimization of the emulator's predicted `p`-quantile.
pub fn direct_optimize<T: Scalar>(
    em: &QuantileEmulator<T>,
    study: &[InputPoint],
    p: f64,
    oracle: Option<&dyn QuantileOracle>,
) -> Result<DirectReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probability {p} is outside (0, 1)")));
    }
    let pp = T::of(p);
    direct_optimize_with(|x| Ok(em.predict_at(x, pp)?.as_f64()), study, em.design(), p, oracle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_special_values() {
        assert!((expected_improvement(0.5f64, 1.0, 0.5) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(expected_improvement(0.2f64, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.7f64, 0.0, 0.5), 0.7 - 0.5);
        assert!(expected_improvement(-50.0f64, 1.0, 0.0) >= 0.0);
    }

    #[test]
    fn ei_monotonicity() {
        let mut last = 0.0;
        for i in 0..50 {
            let m = -2.0 + i as f64 * 0.1;
            let e = expected_improvement(m, 0.7, 0.5);
            assert!(e >= last);
            last = e;
        }
        let mut last = 0.0;
        for i in 1..50 {
            let e = expected_improvement(0.1, i as f64 * 0.05, 0.5);
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax_first([0.0, 1.0, 1.0, 0.5]), Some((1, 1.0)));
        assert_eq!(argmax_first([0.0f64; 3]), Some((0, 0.0)));
        assert_eq!(argmax_first(Vec::<f64>::new()), None);
    }

    #[test]
    fn config_rejects_log_mode() {
        let mut c = QfeiConfig::default();
        c.emulator.transform = TransformMode::Log;
        assert!(matches!(c.validate(), Err(Error::UnsupportedMode(_))));
        let c = QfeiConfig { p: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
