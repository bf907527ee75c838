//! The six verbs. Each reads its inputs from sibling command directories under
//! the experiment root, writes into its own directory and finishes with a
//! manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use qfei::basis::{mmp_select, relative_projection_errors, project_nonneg, reconstruct};
use qfei::emulator::{write_predictions, QuantileEmulator};
use qfei::qfei::{direct_optimize, run_qfei, write_trace, DirectReport, QfeiState, TruthSummary};
use qfei::quantile::{
    empirical_quantile_function, l2_distance, DiscretizedQuantileFunction, ProbabilityGrid, SampleBatch,
};
use qfei::simulator::{
    derive_seed, read_archive, read_design, simulate, true_quantile_function, write_archive, write_design,
    CachedOracle, DesignSpace, InputPoint, StochasticSimulator,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{config, CliError};
use crate::output::{create, fresh_dir, require, write_json, write_manifest, RunLock};

pub const DESIGN: &str = "design";
pub const SIMULATE: &str = "simulate";
pub const TRAIN: &str = "train";
pub const EVALUATE: &str = "evaluate";
pub const QFEI: &str = "qfei";
pub const FIGURES: &str = "figures";

/// Paths of every artifact, relative to the experiment root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, command: &str) -> PathBuf {
        self.root.join(command)
    }

    pub fn learning(&self) -> PathBuf {
        self.dir(DESIGN).join("chi.csv")
    }

    pub fn study(&self) -> PathBuf {
        self.dir(DESIGN).join("E.csv")
    }

    pub fn archive(&self) -> PathBuf {
        self.dir(SIMULATE).join("archive.csv")
    }

    pub fn quantile_file(&self, i: usize) -> PathBuf {
        self.dir(SIMULATE).join("quantiles").join(format!("q_{:04}.csv", i + 1))
    }

    pub fn emulator(&self) -> PathBuf {
        self.dir(TRAIN).join("emulator")
    }
}

fn grid(cfg: &ExperimentConfig) -> Result<ProbabilityGrid<f64>, CliError> {
    Ok(ProbabilityGrid::uniform(cfg.grid_size)?)
}

fn read_points(path: &Path, hint: &str) -> Result<Vec<InputPoint>, CliError> {
    require(path, hint)?;
    Ok(read_design(BufReader::new(File::open(path)?))?)
}

fn seeds(entries: &[(&str, u64)]) -> BTreeMap<String, u64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn simulation_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, 1)
}

/// Samples the disjoint learning and study sets.
pub fn design(cfg: &ExperimentConfig, force: bool) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out);
    let _lock = RunLock::acquire(&layout.root)?;
    let dir = layout.dir(DESIGN);
    fresh_dir(&dir, force)?;
    let sim = cfg.simulator();
    let d = DesignSpace::sample(sim.space().clone(), cfg.design.n_learning, cfg.design.n_study, cfg.seed)?;
    let mut w = create(&layout.learning())?;
    write_design(&mut w, &d.learning)?;
    w.flush()?;
    let mut w = create(&layout.study())?;
    write_design(&mut w, &d.study)?;
    w.flush()?;
    log::info!("wrote {} learning and {} study points", d.learning.len(), d.study.len());
    write_manifest(&dir, DESIGN, &cfg.hash(), &seeds(&[("design", cfg.seed)]))
}

/// Runs the simulator on the learning set; with `resume`, inputs already
/// complete in the archive are kept instead of simulated again.
pub fn simulate_learning(cfg: &ExperimentConfig, force: bool, resume: bool) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out);
    let _lock = RunLock::acquire(&layout.root)?;
    let learning = read_points(&layout.learning(), DESIGN)?;
    let dir = layout.dir(SIMULATE);
    let mut batches: Vec<(InputPoint, Vec<f64>)> = Vec::new();
    if resume && layout.archive().exists() {
        let archived = read_archive(BufReader::new(File::open(layout.archive())?))?;
        for ((x, draws), expected) in archived.into_iter().zip(&learning) {
            if &x != expected || draws.len() != cfg.n_mc {
                break;
            }
            batches.push((x, draws));
        }
        log::info!("resuming after {} complete inputs", batches.len());
    } else {
        fresh_dir(&dir, force)?;
    }
    let seed = simulation_seed(cfg);
    let sim = cfg.simulator();
    for x in &learning[batches.len()..] {
        let batch = simulate::<f64, _>(&sim, x, cfg.n_mc, seed)?;
        batches.push((x.clone(), batch.draws));
    }
    let _ = fs::remove_dir_all(dir.join("quantiles"));
    let mut w = create(&layout.archive())?;
    write_archive(&mut w, &batches, true)?;
    w.flush()?;
    let grid = grid(cfg)?;
    for (i, (x, draws)) in batches.into_iter().enumerate() {
        let batch = SampleBatch { draws, source: x, seed };
        let f = empirical_quantile_function(&batch, &grid)?;
        let mut w = create(&layout.quantile_file(i))?;
        f.write_csv(&mut w)?;
        w.flush()?;
    }
    log::info!("simulated {} inputs x {} replications", learning.len(), cfg.n_mc);
    write_manifest(&dir, SIMULATE, &cfg.hash(), &seeds(&[("simulate", seed)]))
}

fn learning_outputs(
    layout: &Layout,
    n: usize,
    grid: &ProbabilityGrid<f64>,
) -> Result<Vec<DiscretizedQuantileFunction<f64>>, CliError> {
    (0..n)
        .map(|i| {
            let path = layout.quantile_file(i);
            require(&path, SIMULATE)?;
            let f = DiscretizedQuantileFunction::read_csv(BufReader::new(File::open(&path)?))?;
            if f.grid() != grid {
                return Err(config(format!("{} was written on a different probability grid", path.display())));
            }
            Ok(f)
        })
        .collect()
}

#[derive(Serialize)]
struct TrainSummary {
    q: usize,
    transform: &'static str,
    shared_lengths: bool,
    selected: Vec<usize>,
    step_residuals: Vec<f64>,
    max_relative_projection_error: f64,
    lengths: Vec<Vec<f64>>,
}

/// Fits the emulator on the simulated learning set.
pub fn train(cfg: &ExperimentConfig, force: bool) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out);
    let _lock = RunLock::acquire(&layout.root)?;
    let learning = read_points(&layout.learning(), DESIGN)?;
    let grid = grid(cfg)?;
    let outputs = learning_outputs(&layout, learning.len(), &grid)?;
    let dir = layout.dir(TRAIN);
    fresh_dir(&dir, force)?;
    let sim = cfg.simulator();
    let em = QuantileEmulator::train(sim.space(), &learning, &outputs, &cfg.emulator)?;
    em.save(&layout.emulator())?;
    let rel = relative_projection_errors(&outputs, em.basis())?;
    let summary = TrainSummary {
        q: em.q(),
        transform: em.transform().name(),
        shared_lengths: cfg.emulator.shared_lengths,
        selected: em.basis().selected().to_vec(),
        step_residuals: em.basis().step_residuals().to_vec(),
        max_relative_projection_error: rel.iter().copied().fold(0.0, f64::max),
        lengths: em.models().iter().map(|m| m.lengths().to_vec()).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!("trained a q = {} emulator on {} inputs", em.q(), learning.len());
    write_manifest(&dir, TRAIN, &cfg.hash(), &seeds(&[("seed", cfg.seed)]))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Serialize)]
pub struct EvaluateSummary {
    pub p: f64,
    /// Mean absolute error at `p` over the study set, relative to the range
    /// of the true values there.
    pub err: f64,
    pub heldout_median_relative_l2: f64,
    pub heldout_mean_relative_l2: f64,
    pub heldout_max_relative_l2: f64,
    pub projection_median_relative_l2: f64,
    pub non_monotone_predictions: usize,
    pub direct: DirectReport,
}

/// Error tables of the trained emulator against the true quantile functions
/// on the study set, plus the direct-optimization report.
pub fn evaluate(cfg: &ExperimentConfig, force: bool) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out);
    let _lock = RunLock::acquire(&layout.root)?;
    let learning = read_points(&layout.learning(), DESIGN)?;
    let study = read_points(&layout.study(), DESIGN)?;
    let grid = grid(cfg)?;
    let outputs = learning_outputs(&layout, learning.len(), &grid)?;
    require(&layout.emulator().join("emulator.json"), TRAIN)?;
    let em = QuantileEmulator::<f64>::load(&layout.emulator())?;
    if em.grid() != &grid {
        return Err(config("trained emulator uses a different probability grid"));
    }
    let dir = layout.dir(EVALUATE);
    fresh_dir(&dir, force)?;
    let sim = cfg.simulator();
    let oracle = CachedOracle::new(&sim, grid.points().to_vec());

    let truth = study
        .iter()
        .map(|x| true_quantile_function(&oracle, x, &grid))
        .collect::<qfei::Result<Vec<_>>>()?;
    let predictions = study
        .iter()
        .map(|x| em.predict_quantile(x))
        .collect::<qfei::Result<Vec<_>>>()?;
    let mut rel = Vec::with_capacity(study.len());
    let mut w = csv::Writer::from_writer(create(&dir.join("heldout.csv"))?);
    let d = sim.space().dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend(["relative_l2".into(), "monotone".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for ((x, t), pred) in study.iter().zip(&truth).zip(&predictions) {
        let r = l2_distance(&pred.mean_function, t)? / t.l2_norm();
        rel.push(r);
        let mut rec: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
        rec.extend([r.to_string(), pred.monotone.to_string()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;

    let full = mmp_select(&outputs, cfg.evaluate.max_q.min(outputs.len()))?;
    let mut w = csv::Writer::from_writer(create(&dir.join("projection.csv"))?);
    w.write_record(["q", "median_relative_l2", "mean_relative_l2", "max_relative_l2", "step_residual"])
        .map_err(csv_err)?;
    let mut projection_at_q = f64::NAN;
    for q in 1..=full.q() {
        let errs = relative_projection_errors(&outputs, &full.truncate(q)?)?;
        if q == em.q() {
            projection_at_q = median(&errs);
        }
        w.write_record([
            q.to_string(),
            median(&errs).to_string(),
            mean(&errs).to_string(),
            errs.iter().copied().fold(0.0, f64::max).to_string(),
            full.step_residuals()[q - 1].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let shown: Vec<_> = study
        .iter()
        .zip(&predictions)
        .take(cfg.figures.curves)
        .map(|(x, p)| (x.clone(), p.mean_function.clone()))
        .collect();
    let mut w = create(&dir.join("predictions.csv"))?;
    write_predictions(&mut w, &shown)?;
    w.flush()?;

    let err = em.global_quantile_error(&study, &truth, cfg.evaluate.p)?;
    let direct = direct_optimize(&em, &study, cfg.evaluate.direct_p, Some(&sim))?;
    let summary = EvaluateSummary {
        p: cfg.evaluate.p,
        err,
        heldout_median_relative_l2: median(&rel),
        heldout_mean_relative_l2: mean(&rel),
        heldout_max_relative_l2: rel.iter().copied().fold(0.0, f64::max),
        projection_median_relative_l2: projection_at_q,
        non_monotone_predictions: predictions.iter().filter(|p| !p.monotone).count(),
        direct,
    };
    log::info!(
        "err = {:.4}, held-out median relative L2 = {:.4}",
        summary.err,
        summary.heldout_median_relative_l2
    );
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(&dir, EVALUATE, &cfg.hash(), &seeds(&[("seed", cfg.seed)]))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// One QFEI repetition with its ground-truth diagnosis.
#[derive(Debug, Clone, Serialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub seed: u64,
    pub best: InputPoint,
    pub best_observed: f64,
    pub initial_max: f64,
    pub iterations: usize,
    pub exhausted: bool,
    pub stable_for: usize,
    /// Truth at the returned input, ranked over the study set.
    pub truth: TruthSummary,
    /// Largest true value over the initial learning set.
    pub initial_true_max: f64,
    /// Direct optimization of an emulator trained on the initial learning set.
    pub direct: DirectReport,
}

impl RepetitionSummary {
    pub fn improved(&self) -> bool {
        self.best_observed >= self.initial_max
    }

    pub fn beats_direct(&self) -> bool {
        self.direct.truth.as_ref().is_some_and(|d| self.truth.value > d.true_at_argmax)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QfeiSummary {
    pub p: f64,
    pub repetitions: usize,
    pub top5_rate: f64,
    pub improvement_rate: f64,
    pub beats_direct_rate: f64,
    pub median_rank: f64,
}

/// Runs one repetition: fresh designs from `seed`, QFEI, then direct
/// optimization on the initial learning set for comparison.
pub fn qfei_repetition(cfg: &ExperimentConfig, repetition: usize) -> Result<(RepetitionSummary, Vec<u8>), CliError> {
    let seed = cfg.seed + repetition as u64;
    let sim = cfg.simulator();
    let q = &cfg.qfei;
    let d = DesignSpace::sample(sim.space().clone(), q.n_learning, q.n_study, derive_seed(seed, 0))?;
    let grid = grid(cfg)?;
    let run = q.run_config(cfg.n_mc, derive_seed(seed, 1));
    let state = QfeiState::initialize(&sim, d.learning.clone(), d.study.clone(), &grid, run)?;
    let initial_outputs = state.outputs().to_vec();
    let oracle = CachedOracle::new(&sim, vec![q.p]);
    let (report, _) = run_qfei(state, &sim, Some(&oracle))?;
    let truth = report.truth.clone().expect("oracle supplied");
    let initial_true_max = d
        .learning
        .iter()
        .map(|x| Ok(qfei::simulator::QuantileOracle::true_quantiles(&oracle, x, &[q.p])?[0]))
        .collect::<qfei::Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let em = QuantileEmulator::train(sim.space(), &d.learning, &initial_outputs, &cfg.emulator)?;
    let direct = direct_optimize(&em, &d.study, q.p, Some(&oracle))?;
    let mut trace = Vec::new();
    write_trace(&mut trace, &report.trace)?;
    let summary = RepetitionSummary {
        repetition,
        seed,
        best: report.best,
        best_observed: report.best_observed,
        initial_max: report.initial_max,
        iterations: report.iterations,
        exhausted: report.exhausted,
        stable_for: report.stable_for,
        truth,
        initial_true_max,
        direct,
    };
    log::info!(
        "repetition {repetition}: rank {} after {} iterations",
        summary.truth.rank,
        summary.iterations
    );
    Ok((summary, trace))
}

/// Aggregates repetitions into the rates reported by `qfei`.
pub fn summarize(p: f64, reps: &[RepetitionSummary]) -> QfeiSummary {
    let n = reps.len() as f64;
    let rate = |f: &dyn Fn(&RepetitionSummary) -> bool| reps.iter().filter(|r| f(r)).count() as f64 / n;
    let ranks: Vec<f64> = reps.iter().map(|r| r.truth.rank as f64).collect();
    QfeiSummary {
        p,
        repetitions: reps.len(),
        top5_rate: rate(&|r| r.truth.in_top(5)),
        improvement_rate: rate(&|r| r.improved()),
        beats_direct_rate: rate(&|r| r.beats_direct()),
        median_rank: median(&ranks),
    }
}

/// Repeated QFEI runs; repetition `r` draws its designs and simulations from
/// seed `seed + r`.
pub fn qfei(cfg: &ExperimentConfig, force: bool) -> Result<QfeiSummary, CliError> {
    let layout = Layout::new(&cfg.out);
    let _lock = RunLock::acquire(&layout.root)?;
    let dir = layout.dir(QFEI);
    fresh_dir(&dir, force)?;
    let mut reps = Vec::with_capacity(cfg.qfei.repetitions);
    let mut rep_seeds = Vec::new();
    for r in 0..cfg.qfei.repetitions {
        let (summary, trace) = qfei_repetition(cfg, r)?;
        let rep_dir = dir.join(format!("rep_{r:02}"));
        fs::create_dir_all(&rep_dir)?;
        fs::write(rep_dir.join("trace.jsonl"), trace)?;
        write_json(&rep_dir.join("summary.json"), &summary)?;
        rep_seeds.push((format!("rep_{r:02}"), summary.seed));
        reps.push(summary);
    }
    let mut w = csv::Writer::from_writer(create(&dir.join("repetitions.csv"))?);
    w.write_record([
        "repetition",
        "seed",
        "rank",
        "true_value",
        "study_max",
        "initial_max",
        "best_observed",
        "direct_true_at_argmax",
        "beats_direct",
    ])
    .map_err(csv_err)?;
    for r in &reps {
        let direct = r.direct.truth.as_ref().map_or(f64::NAN, |d| d.true_at_argmax);
        w.write_record([
            r.repetition.to_string(),
            r.seed.to_string(),
            r.truth.rank.to_string(),
            r.truth.value.to_string(),
            r.truth.study_max.to_string(),
            r.initial_max.to_string(),
            r.best_observed.to_string(),
            direct.to_string(),
            r.beats_direct().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let summary = summarize(cfg.qfei.p, &reps);
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!(
        "top-5 rate {:.2}, beats direct {:.2} over {} repetitions",
        summary.top5_rate,
        summary.beats_direct_rate,
        summary.repetitions
    );
    let mut seed_map: BTreeMap<String, u64> = rep_seeds.into_iter().collect();
    seed_map.insert("seed".into(), cfg.seed);
    write_manifest(&dir, QFEI, &cfg.hash(), &seed_map)?;
    Ok(summary)
}

fn curve_header(d: usize, value_columns: &[&str]) -> Vec<String> {
    let mut h = vec!["curve".to_string()];
    h.extend((1..=d).map(|i| format!("x{i}")));
    h.push("p".into());
    h.extend(value_columns.iter().map(|s| s.to_string()));
    h
}

fn curve_rows(
    w: &mut csv::Writer<impl Write>,
    curve: usize,
    x: &InputPoint,
    grid: &ProbabilityGrid<f64>,
    columns: &[&[f64]],
) -> Result<(), CliError> {
    for (k, p) in grid.points().iter().enumerate() {
        let mut rec = vec![curve.to_string()];
        rec.extend(x.coords().iter().map(|c| c.to_string()));
        rec.push(p.to_string());
        rec.extend(columns.iter().map(|c| c[k].to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    Ok(())
}

/// Plot-ready CSV series: true and empirical quantile curves of learning
/// points, their basis projections, and emulated curves on study points.
pub fn figures(cfg: &ExperimentConfig, force: bool) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.out);
    let _lock = RunLock::acquire(&layout.root)?;
    let learning = read_points(&layout.learning(), DESIGN)?;
    let study = read_points(&layout.study(), DESIGN)?;
    let grid = grid(cfg)?;
    let outputs = learning_outputs(&layout, learning.len(), &grid)?;
    require(&layout.emulator().join("emulator.json"), TRAIN)?;
    let em = QuantileEmulator::<f64>::load(&layout.emulator())?;
    let dir = layout.dir(FIGURES);
    fresh_dir(&dir, force)?;
    let sim = cfg.simulator();
    let d = sim.space().dim();
    let n = cfg.figures.curves;

    let mut fig1 = csv::Writer::from_writer(create(&dir.join("fig1_true_quantiles.csv"))?);
    let mut fig2 = csv::Writer::from_writer(create(&dir.join("fig2_empirical_quantiles.csv"))?);
    let mut fig3 = csv::Writer::from_writer(create(&dir.join("fig3_projection.csv"))?);
    fig1.write_record(curve_header(d, &["true"])).map_err(csv_err)?;
    fig2.write_record(curve_header(d, &["empirical"])).map_err(csv_err)?;
    fig3.write_record(curve_header(d, &["empirical", "projection"])).map_err(csv_err)?;
    for (i, (x, f)) in learning.iter().zip(&outputs).take(n).enumerate() {
        let truth = true_quantile_function(&sim, x, &grid)?;
        let (psi, _) = project_nonneg(f, em.basis())?;
        let projected = reconstruct(psi.values(), em.basis())?;
        curve_rows(&mut fig1, i, x, &grid, &[truth.values()])?;
        curve_rows(&mut fig2, i, x, &grid, &[f.values()])?;
        curve_rows(&mut fig3, i, x, &grid, &[f.values(), projected.values()])?;
    }
    fig1.flush()?;
    fig2.flush()?;
    fig3.flush()?;

    let mut fig4 = csv::Writer::from_writer(create(&dir.join("fig4_emulation.csv"))?);
    fig4.write_record(curve_header(d, &["true", "emulated"])).map_err(csv_err)?;
    for (i, x) in study.iter().take(n).enumerate() {
        let truth = true_quantile_function(&sim, x, &grid)?;
        let pred = em.predict_quantile(x)?;
        curve_rows(&mut fig4, i, x, &grid, &[truth.values(), pred.mean_function.values()])?;
    }
    fig4.flush()?;
    write_manifest(&dir, FIGURES, &cfg.hash(), &seeds(&[("seed", cfg.seed)]))
}
