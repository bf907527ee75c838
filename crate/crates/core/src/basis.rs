//! Greedy functional basis (modified magic points) and nonnegative projection.
//!
//! The basis starts from the learning output of largest L² norm; every later
//! member is the learning output worst approximated by the nonnegative span
//! of the members already chosen. Coefficients come from nonnegative least
//! squares in the L² inner product of the probability grid, so any
//! reconstruction with admissible coefficients is itself a quantile function.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::nnls::nnls_gram;
use crate::quantile::{l2_distance_values, DiscretizedQuantileFunction, ProbabilityGrid};
use crate::scalar::Scalar;

/// Number of basis functions used when nothing else is configured.
pub const DEFAULT_BASIS_SIZE: usize = 5;

/// Steps whose selected residual falls below this fraction of the largest
/// learning norm are reported as degenerate.
const DEGENERACY_TOLERANCE: f64 = 1e-10;

/// Nonnegative coefficients of a quantile function in a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CoefficientVector<T>(Vec<T>);

impl<T: Scalar> CoefficientVector<T> {
    /// Rejects negative or non-finite entries.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Constraint { index, value: values[index].as_f64() });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }
}

/// Selected basis functions and the record of how they were chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBasis<T: Scalar> {
    functions: Vec<DiscretizedQuantileFunction<T>>,
    selected: Vec<usize>,
    step_residuals: Vec<T>,
    degenerate_steps: Vec<usize>,
    gram: Matrix<T>,
}

impl<T: Scalar> QuantileBasis<T> {
    /// Basis from explicit functions; they must share one grid.
    pub fn from_functions(functions: Vec<DiscretizedQuantileFunction<T>>) -> Result<Self> {
        let q = functions.len();
        Self::build(functions, (0..q).collect(), Vec::new(), Vec::new())
    }

    fn build(
        functions: Vec<DiscretizedQuantileFunction<T>>,
        selected: Vec<usize>,
        step_residuals: Vec<T>,
        degenerate_steps: Vec<usize>,
    ) -> Result<Self> {
        let Some(first) = functions.first() else {
            return Err(invalid("a basis needs at least one function"));
        };
        let grid = first.grid();
        if functions.iter().any(|f| f.grid() != grid) {
            return Err(invalid("basis functions are on different grids"));
        }
        let q = functions.len();
        let mut gram = Matrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let v = grid.inner(functions[i].values(), functions[j].values());
                gram.set(i, j, v);
                gram.set(j, i, v);
            }
        }
        Ok(Self { functions, selected, step_residuals, degenerate_steps, gram })
    }

    pub fn q(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[DiscretizedQuantileFunction<T>] {
        &self.functions
    }

    pub fn grid(&self) -> &ProbabilityGrid<T> {
        self.functions[0].grid()
    }

    /// Learning-set indices of the selected functions.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Residual of each selected function against the members chosen before
    /// it; the first entry is the norm of the first member.
    pub fn step_residuals(&self) -> &[T] {
        &self.step_residuals
    }

    /// Steps (0-based) whose selection carried no new direction.
    pub fn degenerate_steps(&self) -> &[usize] {
        &self.degenerate_steps
    }

    /// Basis restricted to its first `q` members.
    pub fn truncate(&self, q: usize) -> Result<Self> {
        if q == 0 || q > self.q() {
            return Err(invalid(format!("cannot truncate a basis of {} to {q}", self.q())));
        }
        Self::build(
            self.functions[..q].to_vec(),
            self.selected.iter().take(q).copied().collect(),
            self.step_residuals.iter().take(q).copied().collect(),
            self.degenerate_steps.iter().copied().filter(|&s| s < q).collect(),
        )
    }

    /// Values of every member at grid index `k`.
    pub fn column(&self, k: usize) -> Vec<T> {
        self.functions.iter().map(|f| f.values()[k]).collect()
    }

    /// `sum_j c_j R_j` for arbitrary real coefficients.
    pub fn combine(&self, coefficients: &[T]) -> Vec<T> {
        assert_eq!(coefficients.len(), self.q(), "coefficient count");
        let mut out = vec![T::zero(); self.grid().len()];
        for (f, &c) in self.functions.iter().zip(coefficients) {
            for (o, &v) in out.iter_mut().zip(f.values()) {
                *o += c * v;
            }
        }
        out
    }

    /// Writes `basis_<j>.csv` for every member plus `basis_manifest.json`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (j, f) in self.functions.iter().enumerate() {
            f.write_csv(std::fs::File::create(dir.join(format!("basis_{}.csv", j + 1)))?)?;
        }
        let manifest = BasisManifest {
            q: self.q(),
            selected: self.selected.clone(),
            step_residuals: self.step_residuals.iter().map(|r| r.as_f64()).collect(),
            degenerate_steps: self.degenerate_steps.clone(),
        };
        let mut file = std::fs::File::create(dir.join("basis_manifest.json"))?;
        serde_json::to_writer_pretty(&mut file, &manifest)?;
        file.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a basis written by [`QuantileBasis::dump`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BasisManifest =
            serde_json::from_reader(std::fs::File::open(dir.join("basis_manifest.json"))?)?;
        let functions = (1..=manifest.q)
            .map(|j| {
                DiscretizedQuantileFunction::read_csv(std::fs::File::open(
                    dir.join(format!("basis_{j}.csv")),
                )?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(
            functions,
            manifest.selected,
            manifest.step_residuals.into_iter().map(T::of).collect(),
            manifest.degenerate_steps,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisManifest {
    q: usize,
    selected: Vec<usize>,
    step_residuals: Vec<f64>,
    degenerate_steps: Vec<usize>,
}

/// Nonnegative L² projection of raw values onto the basis.
fn project_values<T: Scalar>(basis: &QuantileBasis<T>, values: &[T]) -> (Vec<T>, T) {
    let grid = basis.grid();
    let b: Vec<T> = basis.functions.iter().map(|r| grid.inner(r.values(), values)).collect();
    let psi = nnls_gram(&basis.gram, &b).x;
    let residual = l2_distance_values(grid, values, &basis.combine(&psi));
    (psi, residual)
}

/// Coefficients in `C` minimizing the L² distance to `f`, and that distance.
pub fn project_nonneg<T: Scalar>(
    f: &DiscretizedQuantileFunction<T>,
    basis: &QuantileBasis<T>,
) -> Result<(CoefficientVector<T>, T)> {
    if f.grid() != basis.grid() {
        return Err(invalid("function and basis are on different grids"));
    }
    let (psi, residual) = project_values(basis, f.values());
    Ok((CoefficientVector(psi), residual))
}

/// `sum_j psi_j R_j`; negative coefficients are rejected.
pub fn reconstruct<T: Scalar>(
    psi: &[T],
    basis: &QuantileBasis<T>,
) -> Result<DiscretizedQuantileFunction<T>> {
    if psi.len() != basis.q() {
        return Err(invalid(format!("{} coefficients for a basis of {}", psi.len(), basis.q())));
    }
    let psi = CoefficientVector::new(psi.to_vec())?;
    DiscretizedQuantileFunction::new(basis.grid().clone(), basis.combine(psi.values()))
}

/// Greedy selection of `q` basis functions among `outputs`.
pub fn mmp_select<T: Scalar>(
    outputs: &[DiscretizedQuantileFunction<T>],
    q: usize,
) -> Result<QuantileBasis<T>> {
    if outputs.is_empty() {
        return Err(invalid("no learning outputs"));
    }
    if q == 0 || q > outputs.len() {
        return Err(invalid(format!("cannot select {q} basis functions from {}", outputs.len())));
    }
    let grid = outputs[0].grid();
    if outputs.iter().any(|f| f.grid() != grid) {
        return Err(invalid("learning outputs are on different grids"));
    }

    let norms: Vec<T> = outputs.iter().map(|f| f.l2_norm()).collect();
    let scale = norms.iter().fold(T::zero(), |m, &v| m.max(v));
    let first = argmax_lowest(&norms);
    let mut selected = vec![first];
    let mut step_residuals = vec![norms[first]];
    let mut degenerate_steps = Vec::new();
    if norms[first] <= T::of(DEGENERACY_TOLERANCE) * scale.max(T::min_positive_value()) {
        degenerate_steps.push(0);
    }

    while selected.len() < q {
        let basis = QuantileBasis::build(
            selected.iter().map(|&i| outputs[i].clone()).collect(),
            selected.clone(),
            Vec::new(),
            Vec::new(),
        )?;
        let residuals: Vec<T> = outputs
            .par_iter()
            .map(|f| project_values(&basis, f.values()).1)
            .collect();
        let mut candidates = residuals.clone();
        for &i in &selected {
            candidates[i] = T::neg_infinity();
        }
        let next = argmax_lowest(&candidates);
        let step = selected.len();
        if residuals[next] <= T::of(DEGENERACY_TOLERANCE) * scale {
            log::warn!(
                "basis step {}: every learning output is already represented; \
                 selected output {next} adds no new direction",
                step + 1
            );
            degenerate_steps.push(step);
        }
        selected.push(next);
        step_residuals.push(residuals[next]);
    }

    QuantileBasis::build(
        selected.iter().map(|&i| outputs[i].clone()).collect(),
        selected,
        step_residuals,
        degenerate_steps,
    )
}

/// Smallest basis whose worst relative projection error over `outputs` is
/// below `threshold`, searching up to `q_max`; returns `q_max` members when
/// none qualifies.
pub fn select_basis_size<T: Scalar>(
    outputs: &[DiscretizedQuantileFunction<T>],
    threshold: T,
    q_max: usize,
) -> Result<QuantileBasis<T>> {
    let full = mmp_select(outputs, q_max.min(outputs.len()))?;
    for q in 1..=full.q() {
        let basis = full.truncate(q)?;
        if max_relative_projection_error(outputs, &basis)? < threshold {
            return Ok(basis);
        }
    }
    Ok(full)
}

/// Largest `residual / norm` over `outputs`.
pub fn max_relative_projection_error<T: Scalar>(
    outputs: &[DiscretizedQuantileFunction<T>],
    basis: &QuantileBasis<T>,
) -> Result<T> {
    Ok(relative_projection_errors(outputs, basis)?
        .into_iter()
        .fold(T::zero(), |m, v| m.max(v)))
}

/// `residual / norm` for each output (zero for zero functions projected exactly).
pub fn relative_projection_errors<T: Scalar>(
    outputs: &[DiscretizedQuantileFunction<T>],
    basis: &QuantileBasis<T>,
) -> Result<Vec<T>> {
    outputs
        .par_iter()
        .map(|f| {
            let (_, r) = project_nonneg(f, basis)?;
            let n = f.l2_norm();
            Ok(if n > T::zero() { r / n } else { r })
        })
        .collect()
}

fn argmax_lowest<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
