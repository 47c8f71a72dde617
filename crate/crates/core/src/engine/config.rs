//! Run and grid configuration files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::negex::DEFAULT_SCOPE_WINDOW;
use crate::metrics::{Aggregation, ConceptLexicon, EvalOptions, Evaluator, NegexRules, ReferenceSource, RulesError};
use crate::model::{AdapterSpec, ModelHyperparams};
use crate::strategies::{HlStrategy, PlStrategy, ScoreNormalization, StrategySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{0}")]
    Rules(#[from] RulesError),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HlMode {
    #[default]
    SimulatedOracle,
    LiveHuman,
}

fn default_epochs() -> u32 {
    ModelHyperparams::default().epochs
}
fn default_batch() -> u32 {
    ModelHyperparams::default().effective_batch_size
}
fn default_dropout() -> f64 {
    ModelHyperparams::default().dropout
}
fn default_scope_window() -> usize {
    DEFAULT_SCOPE_WINDOW
}

/// Training settings other than dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub effective_batch_size: u32,
    /// Passed to external adapters untouched.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            effective_batch_size: default_batch(),
            extra: BTreeMap::new(),
        }
    }
}

/// Where the samples and the evaluation resources come from. Relative paths
/// are resolved against the directory of the file that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Samples split into `L_0` and `U_0`.
    pub corpus: PathBuf,
    /// Held-out test set; ids must not occur in `corpus`.
    pub test: PathBuf,
    /// Concept lexicon TSV; the builtin lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Negation rule TSV; the builtin rules when absent.
    #[serde(default)]
    pub negex: Option<PathBuf>,
    #[serde(default = "default_scope_window")]
    pub scope_window: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub reference_source: ReferenceSource,
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            let joined = base.join(&*p);
            *p = std::path::absolute(&joined).unwrap_or(joined);
        };
        fix(&mut self.corpus);
        fix(&mut self.test);
        if let Some(p) = self.lexicon.as_mut() {
            fix(p);
        }
        if let Some(p) = self.negex.as_mut() {
            fix(p);
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.scope_window == 0 {
            return Err(invalid("data.scope_window", "must be >= 1"));
        }
        Ok(())
    }

    pub fn evaluator(&self) -> Result<Evaluator, ConfigError> {
        let lexicon = match &self.lexicon {
            Some(p) => ConceptLexicon::load(p)?,
            None => ConceptLexicon::builtin(),
        };
        let rules = match &self.negex {
            Some(p) => NegexRules::load(p)?,
            None => NegexRules::builtin(),
        }
        .with_scope_window(self.scope_window)?;
        Ok(Evaluator::new(
            lexicon,
            rules,
            EvalOptions {
                aggregation: self.aggregation,
                reference_source: self.reference_source,
            },
        ))
    }
}

/// One labeling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Derived from the other fields when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub l0_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub strategy: StrategySpec,
    /// Defaults to 3 with an active strategy and 0 otherwise.
    #[serde(default)]
    pub n_iterations: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub score_normalization: ScoreNormalization,
    #[serde(default)]
    pub hl_mode: HlMode,
    #[serde(default)]
    pub training: TrainingConfig,
    pub adapter: AdapterSpec,
    pub data: DataConfig,
}

pub const DEFAULT_ITERATIONS: u32 = 3;

fn fmt_num(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x}").unwrap();
    s
}

/// Run ids double as directory names: ASCII letters, digits, `-`, `_` and
/// `.`, not starting with a dot.
pub fn is_valid_run_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and validate a TOML run config; data paths are made relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        cfg.data.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn iterations(&self) -> u32 {
        self.n_iterations.unwrap_or(if self.strategy.is_active() {
            DEFAULT_ITERATIONS
        } else {
            0
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.l0_size == 0 {
            return Err(invalid("l0_size", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(invalid("dropout", format!("{} is outside [0, 1]", self.dropout)));
        }
        self.strategy
            .validate()
            .map_err(|e| invalid("strategy", e.to_string()))?;
        match (self.strategy.is_active(), self.n_iterations) {
            (false, Some(n)) if n > 0 => {
                return Err(invalid(
                    "n_iterations",
                    "must be 0 when both pl and hl are none",
                ))
            }
            (true, Some(0)) => {
                return Err(invalid(
                    "n_iterations",
                    "must be > 0 when a labeling strategy is active",
                ))
            }
            _ => {}
        }
        if self.hl_mode == HlMode::LiveHuman && self.strategy.hl == HlStrategy::None {
            return Err(invalid("hl_mode", "live_human needs an hl strategy"));
        }
        if let Some(id) = &self.run_id {
            if !is_valid_run_id(id) {
                return Err(invalid("run_id", "use letters, digits, '-', '_' and '.' only"));
            }
        }
        self.hyperparams()
            .validate()
            .map_err(|m| invalid("training", m))?;
        self.adapter.validate().map_err(|m| invalid("adapter", m))?;
        self.data.validate()
    }

    pub fn hyperparams(&self) -> ModelHyperparams {
        ModelHyperparams {
            dropout: self.dropout,
            epochs: self.training.epochs,
            effective_batch_size: self.training.effective_batch_size,
            extra: self.training.extra.clone(),
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.derived_run_id())
    }

    /// `d<dropout>-l<l0>-pl<pl>-hl<hl>-s<seed>`, with the fractions appended
    /// when they differ from 0.01.
    pub fn derived_run_id(&self) -> String {
        let s = &self.strategy;
        let mut id = format!(
            "d{}-l{}-pl{}-hl{}-s{}",
            fmt_num(self.dropout),
            self.l0_size,
            s.pl,
            s.hl,
            self.seed
        );
        let default = StrategySpec::default();
        if s.pl_fraction != default.pl_fraction || s.hl_fraction != default.hl_fraction {
            write!(id, "-f{}-{}", fmt_num(s.pl_fraction), fmt_num(s.hl_fraction)).unwrap();
        }
        id
    }
}

fn default_dropouts() -> Vec<f64> {
    vec![0.1, 0.5]
}
fn default_pl() -> Vec<PlStrategy> {
    vec![PlStrategy::None, PlStrategy::Top]
}
fn default_hl() -> Vec<HlStrategy> {
    vec![
        HlStrategy::None,
        HlStrategy::Bottom,
        HlStrategy::Middle,
        HlStrategy::Random,
    ]
}
fn default_sizes() -> Vec<usize> {
    vec![100, 250, 500, 750, 1000, 1250]
}
fn default_iterations() -> u32 {
    DEFAULT_ITERATIONS
}
fn default_fraction() -> f64 {
    StrategySpec::default().pl_fraction
}

/// A cross product of run settings. Every list defaults to the full
/// dropout × PL × HL × |L_0| campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_dropouts")]
    pub dropout: Vec<f64>,
    #[serde(default = "default_pl")]
    pub pl: Vec<PlStrategy>,
    #[serde(default = "default_hl")]
    pub hl: Vec<HlStrategy>,
    #[serde(default = "default_sizes")]
    pub l0_sizes: Vec<usize>,
    #[serde(default = "default_iterations")]
    pub n_iterations: u32,
    #[serde(default = "default_fraction")]
    pub pl_fraction: f64,
    #[serde(default = "default_fraction")]
    pub hl_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub score_normalization: ScoreNormalization,
    #[serde(default)]
    pub hl_mode: HlMode,
    #[serde(default)]
    pub training: TrainingConfig,
    pub adapter: AdapterSpec,
    pub data: DataConfig,
}

impl GridSpec {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = Self::from_toml_str(&text, &path.display().to_string())?;
        spec.data.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
l0_size = 100
[adapter]
kind = "oracle_noise"
[data]
corpus = "pool.jsonl"
test = "test.jsonl"
"#;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml_str(MINIMAL, "t").unwrap();
        assert_eq!(c.iterations(), 0);
        assert_eq!(c.dropout, 0.1);
        assert_eq!(c.training.epochs, 6);
        assert_eq!(c.training.effective_batch_size, 128);
        assert_eq!(c.strategy.pl_fraction, 0.01);
        assert_eq!(c.run_id(), "d0.1-l100-plnone-hlnone-s0");
    }

    #[test]
    fn active_strategy_defaults_to_three_iterations() {
        let text = format!("{MINIMAL}\n[strategy]\npl = \"top\"\n");
        let c = RunConfig::from_toml_str(&text, "t").unwrap();
        assert_eq!(c.iterations(), 3);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::from_toml_str(&MINIMAL.replace("l0_size = 100", "l0_size = 100\nbogus = 1"), "t")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");

        let err = RunConfig::from_toml_str(&format!("{MINIMAL}\n[strategy]\nhl = \"sideways\"\n"), "t")
            .unwrap_err()
            .to_string();
        assert!(err.contains("sideways"), "{err}");

        let err = RunConfig::from_toml_str(&MINIMAL.replace("l0_size = 100", "l0_size = 100\nn_iterations = 2"), "t")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "n_iterations"));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.data.corpus, dir.path().join("pool.jsonl"));
    }
}
