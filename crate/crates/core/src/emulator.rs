//! Quantile-function metamodel.
//!
//! Every learning output is projected on a greedy basis; each coefficient,
//! optionally log-transformed, gets its own Gaussian process over the
//! normalized inputs. A prediction recombines the predicted coefficients
//! with the basis functions.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{mmp_select, project_nonneg, CoefficientVector, QuantileBasis, DEFAULT_BASIS_SIZE};
use crate::error::{invalid, Error, Result};
use crate::gp::{GaussianProcessModel, GpConfig, Prediction};
use crate::quantile::{interpolate, DiscretizedQuantileFunction, ProbabilityGrid};
use crate::scalar::Scalar;
use crate::simulator::{DiscreteSpace, InputPoint};

/// How coefficients are mapped before Gaussian-process modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    /// `phi = ln(psi + 1)`, inverted by `exp(phi) - 1` floored at zero.
    #[default]
    Log,
    /// Raw coefficients; predictions may leave the nonnegative cone.
    Identity,
}

impl TransformMode {
    pub fn name(self) -> &'static str {
        match self {
            TransformMode::Log => "log",
            TransformMode::Identity => "identity",
        }
    }
}

/// `ln(psi + 1)`, componentwise.
pub fn t1<T: Scalar>(psi: T) -> T {
    psi.ln_1p()
}

/// `exp(phi) - 1` floored at zero; the flag reports whether the floor applied.
pub fn t2<T: Scalar>(phi: T) -> (T, bool) {
    let v = phi.exp_m1();
    if v < T::zero() {
        (T::zero(), true)
    } else {
        (v, false)
    }
}

/// Emulator structure and coefficient-model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorConfig {
    pub q: usize,
    pub transform: TransformMode,
    /// One length-scale vector for all coefficient models, fitted on their
    /// summed likelihood; trends and variances stay per coefficient.
    pub shared_lengths: bool,
    pub gp: GpConfig,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_BASIS_SIZE,
            transform: TransformMode::Log,
            shared_lengths: false,
            gp: GpConfig::default(),
        }
    }
}

/// Predicted quantile function at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction<T: Scalar> {
    pub mean_function: DiscretizedQuantileFunction<T>,
    /// Predicted coefficients `psi`, after the inverse transform.
    pub coefficient_means: Vec<T>,
    /// Kriging variances of the modeled (possibly transformed) coefficients.
    pub coefficient_variances: Vec<T>,
    /// False when the recombined function decreases somewhere.
    pub monotone: bool,
    /// Number of coefficients floored at zero by the inverse transform.
    pub clamped: usize,
}

/// Trained quantile-function emulator.
#[derive(Debug, Clone)]
pub struct QuantileEmulator<T: Scalar> {
    space: DiscreteSpace,
    design: Vec<InputPoint>,
    basis: QuantileBasis<T>,
    coefficients: Vec<CoefficientVector<T>>,
    models: Vec<GaussianProcessModel<T>>,
    transform: TransformMode,
}

fn check_training<T: Scalar>(
    space: &DiscreteSpace,
    design: &[InputPoint],
    outputs: &[DiscretizedQuantileFunction<T>],
    q: usize,
) -> Result<()> {
    if design.len() != outputs.len() {
        return Err(invalid(format!("{} inputs but {} outputs", design.len(), outputs.len())));
    }
    for x in design {
        space.check(x)?;
    }
    if design.len() < q || design.len() < space.dim() + 2 {
        return Err(invalid(format!(
            "{} learning points are too few for q = {q} in dimension {}",
            design.len(),
            space.dim()
        )));
    }
    Ok(())
}

impl<T: Scalar> QuantileEmulator<T> {
    /// Selects the basis, projects the outputs and fits one model per coefficient.
    pub fn train(
        space: &DiscreteSpace,
        design: &[InputPoint],
        outputs: &[DiscretizedQuantileFunction<T>],
        config: &EmulatorConfig,
    ) -> Result<Self> {
        check_training(space, design, outputs, config.q)?;
        let basis = mmp_select(outputs, config.q)?;
        Self::fit_models(space, design, outputs, basis, config, None)
    }

    /// Like [`QuantileEmulator::train`], but every coefficient model keeps the
    /// length-scales of the matching model in `previous` instead of searching.
    pub fn train_with_previous_lengths(
        space: &DiscreteSpace,
        design: &[InputPoint],
        outputs: &[DiscretizedQuantileFunction<T>],
        config: &EmulatorConfig,
        previous: &Self,
    ) -> Result<Self> {
        check_training(space, design, outputs, config.q)?;
        if previous.q() != config.q {
            return Err(invalid("previous emulator has a different basis size"));
        }
        let basis = mmp_select(outputs, config.q)?;
        Self::fit_models(space, design, outputs, basis, config, Some(previous))
    }

    /// Fits the coefficient models for a given basis.
    pub fn train_with_basis(
        space: &DiscreteSpace,
        design: &[InputPoint],
        outputs: &[DiscretizedQuantileFunction<T>],
        basis: QuantileBasis<T>,
        config: &EmulatorConfig,
    ) -> Result<Self> {
        check_training(space, design, outputs, basis.q())?;
        Self::fit_models(space, design, outputs, basis, config, None)
    }

    fn fit_models(
        space: &DiscreteSpace,
        design: &[InputPoint],
        outputs: &[DiscretizedQuantileFunction<T>],
        basis: QuantileBasis<T>,
        config: &EmulatorConfig,
        previous: Option<&Self>,
    ) -> Result<Self> {
        let coefficients = outputs
            .par_iter()
            .map(|f| project_nonneg(f, &basis).map(|(psi, _)| psi))
            .collect::<Result<Vec<_>>>()?;
        let xs: Vec<Vec<T>> = design.iter().map(|x| space.normalize(x)).collect();
        let transform = config.transform;
        let columns: Vec<Vec<T>> = (0..basis.q())
            .map(|j| coefficients.iter().map(|c| forward(transform, c.values()[j])).collect())
            .collect();
        let models = if config.shared_lengths {
            let fitted = match previous {
                Some(prev) => GaussianProcessModel::shared_with_lengths(
                    xs,
                    columns,
                    prev.models[0].lengths().to_vec(),
                    &config.gp,
                ),
                None => GaussianProcessModel::fit_shared(xs, columns, &config.gp),
            };
            fitted.map_err(|e| Error::Coefficient { index: 0, source: Box::new(e) })?
        } else {
            columns
                .into_par_iter()
                .enumerate()
                .map(|(j, ys)| {
                    let fitted = match previous {
                        Some(prev) => GaussianProcessModel::with_lengths(
                            xs.clone(),
                            ys,
                            prev.models[j].lengths().to_vec(),
                            &config.gp,
                        ),
                        None => GaussianProcessModel::fit(xs.clone(), ys, &config.gp),
                    };
                    fitted.map_err(|e| Error::Coefficient { index: j, source: Box::new(e) })
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            space: space.clone(),
            design: design.to_vec(),
            basis,
            coefficients,
            models,
            transform,
        })
    }

    pub fn q(&self) -> usize {
        self.basis.q()
    }

    pub fn basis(&self) -> &QuantileBasis<T> {
        &self.basis
    }

    pub fn grid(&self) -> &ProbabilityGrid<T> {
        self.basis.grid()
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn design(&self) -> &[InputPoint] {
        &self.design
    }

    pub fn transform(&self) -> TransformMode {
        self.transform
    }

    pub fn models(&self) -> &[GaussianProcessModel<T>] {
        &self.models
    }

    /// Projection coefficients `psi(x)` of the learning outputs.
    pub fn coefficients(&self) -> &[CoefficientVector<T>] {
        &self.coefficients
    }

    /// Targets the coefficient models were fitted to, one row per learning point.
    pub fn training_targets(&self) -> Vec<Vec<T>> {
        self.coefficients
            .iter()
            .map(|c| c.values().iter().map(|&v| forward(self.transform, v)).collect())
            .collect()
    }

    /// Kriging predictions of the modeled coefficients at an input.
    pub fn coefficient_predictions(&self, x: &InputPoint) -> Result<Vec<Prediction<T>>> {
        self.space.check(x)?;
        let z = self.space.normalize(x);
        Ok(self.models.iter().map(|m| m.predict(&z)).collect())
    }

    /// Predicted quantile function at `x`.
    pub fn predict_quantile(&self, x: &InputPoint) -> Result<QuantilePrediction<T>> {
        let preds = self.coefficient_predictions(x)?;
        let mut clamped = 0;
        let coefficient_means: Vec<T> = preds
            .iter()
            .map(|p| match self.transform {
                TransformMode::Log => {
                    let (v, c) = t2(p.mean);
                    clamped += usize::from(c);
                    v
                }
                TransformMode::Identity => p.mean,
            })
            .collect();
        let values = self.basis.combine(&coefficient_means);
        let mean_function = DiscretizedQuantileFunction::new_unchecked(self.grid().clone(), values)?;
        let monotone = mean_function.is_monotone();
        if !monotone {
            log::debug!("predicted quantile function at {x} is not monotone");
        }
        Ok(QuantilePrediction {
            mean_function,
            coefficient_means,
            coefficient_variances: preds.iter().map(|p| p.variance).collect(),
            monotone,
            clamped,
        })
    }

    /// Predicted value of the quantile function at probability `p`.
    pub fn predict_at(&self, x: &InputPoint, p: T) -> Result<T> {
        let pred = self.predict_quantile(x)?;
        crate::quantile::quantile_objective(&pred.mean_function, p)
    }

    /// Mean absolute error at `p` over `points`, relative to the range of
    /// the true values.
    pub fn global_quantile_error(
        &self,
        points: &[InputPoint],
        truth: &[DiscretizedQuantileFunction<T>],
        p: T,
    ) -> Result<T> {
        if points.len() != truth.len() {
            return Err(invalid("evaluation points and truth differ in length"));
        }
        let predicted = points
            .par_iter()
            .map(|x| self.predict_at(x, p))
            .collect::<Result<Vec<_>>>()?;
        let actual = truth
            .iter()
            .map(|f| crate::quantile::quantile_objective(f, p))
            .collect::<Result<Vec<_>>>()?;
        global_quantile_error(&predicted, &actual)
    }

    /// Writes the emulator to a directory: basis files, one JSON model per
    /// coefficient and `emulator.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.basis.dump(dir)?;
        for (j, m) in self.models.iter().enumerate() {
            write_json(&dir.join(format!("gp_{}.json", j + 1)), m)?;
        }
        let manifest = EmulatorManifest {
            q: self.q(),
            transform: self.transform,
            grid: self.grid().points().iter().map(|p| p.as_f64()).collect(),
            ranges: self.space.ranges().to_vec(),
            design: self.design.iter().map(|x| x.coords().to_vec()).collect(),
            coefficients: self
                .coefficients
                .iter()
                .map(|c| c.values().iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        write_json(&dir.join("emulator.json"), &manifest)
    }

    /// Reads a directory written by [`QuantileEmulator::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: EmulatorManifest =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(dir.join("emulator.json"))?))?;
        let basis = QuantileBasis::load(dir)?;
        if basis.q() != manifest.q {
            return Err(invalid("basis files disagree with the emulator manifest"));
        }
        let models = (1..=manifest.q)
            .map(|j| {
                let file = std::fs::File::open(dir.join(format!("gp_{j}.json")))?;
                Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
            })
            .collect::<Result<Vec<GaussianProcessModel<T>>>>()?;
        let coefficients = manifest
            .coefficients
            .into_iter()
            .map(|c| CoefficientVector::new(c.into_iter().map(T::of).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space: DiscreteSpace::new(manifest.ranges)?,
            design: manifest.design.into_iter().map(InputPoint::new).collect(),
            basis,
            coefficients,
            models,
            transform: manifest.transform,
        })
    }
}

fn forward<T: Scalar>(mode: TransformMode, psi: T) -> T {
    match mode {
        TransformMode::Log => t1(psi),
        TransformMode::Identity => psi,
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EmulatorManifest {
    q: usize,
    transform: TransformMode,
    grid: Vec<f64>,
    ranges: Vec<(i64, i64)>,
    design: Vec<Vec<i64>>,
    coefficients: Vec<Vec<f64>>,
}

/// `mean |truth - predicted| / (max truth - min truth)`.
pub fn global_quantile_error<T: Scalar>(predicted: &[T], truth: &[T]) -> Result<T> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(invalid("need matching, non-empty prediction and truth vectors"));
    }
    let lo = truth.iter().fold(T::infinity(), |m, &v| m.min(v));
    let hi = truth.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let range = hi - lo;
    if !(range > T::zero()) {
        return Err(Error::Degenerate("true quantiles have zero range over the evaluation set".into()));
    }
    let total: T = predicted.iter().zip(truth).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(total / T::of_usize(truth.len()) / range)
}

/// Writes `x1..xd,p,qhat` rows for every point and grid probability.
pub fn write_predictions<T: Scalar, W: Write>(
    w: W,
    rows: &[(InputPoint, DiscretizedQuantileFunction<T>)],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if let Some((x, _)) = rows.first() {
        let mut header: Vec<String> = (1..=x.dim()).map(|i| format!("x{i}")).collect();
        header.push("p".into());
        header.push("qhat".into());
        out.write_record(&header).map_err(crate::quantile::csv_io)?;
    }
    for (x, f) in rows {
        for (p, v) in f.grid().points().iter().zip(f.values()) {
            let mut rec: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
            rec.push(p.to_string());
            rec.push(v.to_string());
            out.write_record(&rec).map_err(crate::quantile::csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Value at `p` of the linear combination of basis functions.
pub(crate) fn basis_values_at<T: Scalar>(basis: &QuantileBasis<T>, p: T) -> Vec<T> {
    let points = basis.grid().points();
    basis.functions().iter().map(|f| interpolate(points, f.values(), p)).collect()
}
