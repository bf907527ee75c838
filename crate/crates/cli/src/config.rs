//! Experiment configuration: one TOML file, overridable from the command line.
//!
//! Every key has a default, so an empty file (or no file) is a valid
//! configuration. Dotted `--set` overrides address nested tables, for example
//! `--set emulator.q=3` or `--set qfei.repetitions=20`.

use std::path::{Path, PathBuf};

use qfei::emulator::{EmulatorConfig, TransformMode};
use qfei::qfei::{QfeiConfig, RefitMode};
use qfei::quantile::DEFAULT_GRID_SIZE;
use qfei::simulator::{SyntheticModelSpec, SyntheticSimulator};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    /// Experiment directory; each command writes its own subdirectory.
    pub out: PathBuf,
    /// Number of equispaced probabilities `k / (m + 1)`.
    pub grid_size: usize,
    /// Replications per simulated input.
    pub n_mc: usize,
    pub simulator: SyntheticModelSpec,
    pub design: DesignConfig,
    pub emulator: EmulatorConfig,
    pub evaluate: EvaluateConfig,
    pub qfei: QfeiExperiment,
    pub figures: FiguresConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            grid_size: DEFAULT_GRID_SIZE,
            n_mc: 10_000,
            simulator: SyntheticModelSpec::default(),
            design: DesignConfig::default(),
            emulator: EmulatorConfig::default(),
            evaluate: EvaluateConfig::default(),
            qfei: QfeiExperiment::default(),
            figures: FiguresConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub n_learning: usize,
    pub n_study: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { n_learning: 200, n_study: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Probability for the global quantile error.
    pub p: f64,
    /// Probability optimized by the direct-optimization experiment.
    pub direct_p: f64,
    /// Largest basis size in the projection-error table.
    pub max_q: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { p: 0.5, direct_p: 0.4, max_q: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QfeiExperiment {
    pub p: f64,
    pub max_iterations: usize,
    pub n_learning: usize,
    pub n_study: usize,
    /// Repetition `r` uses seed `seed + r` for its designs and simulations.
    pub repetitions: usize,
    pub refit: RefitMode,
    pub emulator: EmulatorConfig,
}

impl Default for QfeiExperiment {
    fn default() -> Self {
        let run = QfeiConfig::default();
        Self {
            p: run.p,
            max_iterations: run.max_iterations,
            n_learning: 200,
            n_study: 5000,
            repetitions: 1,
            refit: run.refit,
            emulator: run.emulator,
        }
    }
}

impl QfeiExperiment {
    pub fn run_config(&self, n_mc: usize, seed: u64) -> QfeiConfig {
        QfeiConfig {
            p: self.p,
            max_iterations: self.max_iterations,
            n_mc,
            seed,
            emulator: self.emulator.clone(),
            refit: self.refit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiguresConfig {
    /// Learning points drawn as curves.
    pub curves: usize,
}

impl Default for FiguresConfig {
    fn default() -> Self {
        Self { curves: 10 }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `overrides` and validates the result.
    ///
    /// Keys are laid over the serialized defaults, so a partial table such as
    /// `[qfei.emulator]` keeps the defaults of its own section.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let mut table = toml::Table::try_from(Self::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let file = text
                .parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for (key, value) in overrides {
            set_dotted(&mut table, key, value.clone())?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let sim = SyntheticSimulator::new(self.simulator.clone())
            .map_err(|e| CliError::Config(format!("simulator: {e}")))?;
        let size = qfei::simulator::StochasticSimulator::space(&sim).size();
        if self.grid_size < 2 {
            return bad("grid_size must be at least 2".into());
        }
        if self.n_mc == 0 {
            return bad("n_mc must be at least 1".into());
        }
        for (name, n_learning, n_study) in [
            ("design", self.design.n_learning, self.design.n_study),
            ("qfei", self.qfei.n_learning, self.qfei.n_study),
        ] {
            if n_learning + n_study > size {
                return bad(format!(
                    "{name}: {n_learning} learning + {n_study} study points exceed the {size} inputs of the design space"
                ));
            }
        }
        let q = self.emulator.q;
        if q == 0 || q > self.design.n_learning {
            return bad(format!("emulator.q = {q} must lie in 1..={}", self.design.n_learning));
        }
        if self.qfei.emulator.q == 0 || self.qfei.emulator.q > self.qfei.n_learning {
            return bad(format!("qfei.emulator.q must lie in 1..={}", self.qfei.n_learning));
        }
        for (name, p) in [("evaluate.p", self.evaluate.p), ("evaluate.direct_p", self.evaluate.direct_p)] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} = {p} is outside (0, 1)"));
            }
        }
        if self.qfei.emulator.transform != TransformMode::Identity {
            return bad("qfei.emulator.transform must be \"identity\"".into());
        }
        self.qfei.run_config(self.n_mc, self.seed).validate().map_err(|e| CliError::Config(format!("qfei: {e}")))?;
        if self.evaluate.max_q == 0 {
            return bad("evaluate.max_q must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn simulator(&self) -> SyntheticSimulator {
        SyntheticSimulator::new(self.simulator.clone()).expect("validated")
    }
}

/// `key=value`, with the value read as a TOML literal when possible.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    if k.trim().is_empty() {
        return Err("empty key".into());
    }
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
