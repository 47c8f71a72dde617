//! The model boundary: fit a summarizer on the labeled set, then predict
//! summaries with sequence log-likelihoods.
//!
//! Every fit starts again from the base model; a [`ModelHandle`] is only
//! good for predictions until the adapter is fitted again.

pub mod builtin;
pub mod external;
pub mod protocol;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelRecord, Sample};

pub use builtin::{ExtractiveLead, OracleNoise};
pub use external::ExternalAdapter;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter unreachable: {0}")]
    Unreachable(String),
    #[error("adapter timed out after {secs}s waiting for {op}")]
    Timeout { op: &'static str, secs: u64 },
    #[error("protocol error: {message}{}", last_line.as_ref().map(|l| format!(" (last received line: {l})")).unwrap_or_default())]
    Protocol {
        message: String,
        last_line: Option<String>,
    },
    #[error("adapter reported an error: {0}")]
    Remote(String),
    #[error("predict called with a handle that is not the adapter's current fit ({0})")]
    InvalidHandle(String),
    #[error("invalid adapter input: {0}")]
    InvalidInput(String),
    #[error("adapter io error: {0}")]
    Io(#[from] std::io::Error),
}

fn default_dropout() -> f64 {
    0.1
}
fn default_epochs() -> u32 {
    6
}
fn default_batch() -> u32 {
    128
}

/// Training settings passed through to the adapter. Defaults: dropout 0.1,
/// 6 epochs, effective batch size 128.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHyperparams {
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub effective_batch_size: u32,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        Self {
            dropout: default_dropout(),
            epochs: default_epochs(),
            effective_batch_size: default_batch(),
            extra: BTreeMap::new(),
        }
    }
}

impl ModelHyperparams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1]", self.dropout));
        }
        if self.epochs == 0 {
            return Err("epochs must be > 0".into());
        }
        if self.effective_batch_size == 0 {
            return Err("effective_batch_size must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    ExternalProcess,
    OracleNoise,
    ExtractiveLead,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelHandle {
    pub run_id: String,
    pub adapter_kind: AdapterKind,
    pub fitted_on_count: usize,
    pub(crate) generation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub summary: String,
    /// Natural-log sum over generated tokens.
    pub log_likelihood: f64,
    pub token_count: u32,
}

pub trait SummaryModel: Send {
    fn kind(&self) -> AdapterKind;

    fn fit(
        &mut self,
        run_id: &str,
        seed: u64,
        labeled: &[(&Sample, &LabelRecord)],
        hp: &ModelHyperparams,
    ) -> Result<ModelHandle, AdapterError>;

    /// One prediction per sample, in input order.
    fn predict(&mut self, handle: &ModelHandle, samples: &[&Sample]) -> Result<Vec<Prediction>, AdapterError>;
}

pub(crate) fn check_fit_input(labeled: &[(&Sample, &LabelRecord)]) -> Result<(), AdapterError> {
    if labeled.is_empty() {
        return Err(AdapterError::InvalidInput("fit on an empty labeled set".into()));
    }
    if let Some((s, _)) = labeled.iter().find(|(_, r)| r.summary.trim().is_empty()) {
        return Err(AdapterError::InvalidInput(format!("empty summary for {:?}", s.id)));
    }
    Ok(())
}

fn default_lead_k() -> usize {
    2
}
fn default_predict_timeout() -> u64 {
    600
}

/// How to obtain a model, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    /// Gold summaries with per-token noise at rate `noise`, shrinking as
    /// `noise · c / (c + |labeled|)` when `skill_c` is set.
    OracleNoise {
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        skill_c: Option<f64>,
    },
    ExtractiveLead {
        #[serde(default = "default_lead_k")]
        k: usize,
    },
    /// A child process speaking the protocol on stdin/stdout.
    ExternalProcess {
        command: Vec<String>,
        #[serde(default)]
        fit_timeout_secs: Option<u64>,
        #[serde(default = "default_predict_timeout")]
        predict_timeout_secs: u64,
    },
    /// An adapter already listening on a local TCP socket.
    ExternalTcp {
        address: String,
        #[serde(default)]
        fit_timeout_secs: Option<u64>,
        #[serde(default = "default_predict_timeout")]
        predict_timeout_secs: u64,
    },
}

impl AdapterSpec {
    pub fn kind(&self) -> AdapterKind {
        match self {
            Self::OracleNoise { .. } => AdapterKind::OracleNoise,
            Self::ExtractiveLead { .. } => AdapterKind::ExtractiveLead,
            Self::ExternalProcess { .. } | Self::ExternalTcp { .. } => AdapterKind::ExternalProcess,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::OracleNoise { noise, skill_c } => {
                if !(0.0..=1.0).contains(noise) {
                    return Err(format!("noise {noise} outside [0, 1]"));
                }
                if let Some(c) = skill_c {
                    if !(*c > 0.0 && c.is_finite()) {
                        return Err(format!("skill_c {c} must be a positive number"));
                    }
                }
            }
            Self::ExtractiveLead { k } => {
                if *k == 0 {
                    return Err("k must be >= 1".into());
                }
            }
            Self::ExternalProcess { command, .. } => {
                if command.is_empty() {
                    return Err("command must not be empty".into());
                }
            }
            Self::ExternalTcp { address, .. } => {
                if address.is_empty() {
                    return Err("address must not be empty".into());
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn SummaryModel>, AdapterError> {
        Ok(match self {
            Self::OracleNoise { noise, skill_c } => Box::new(OracleNoise::new(*noise, *skill_c)),
            Self::ExtractiveLead { k } => Box::new(ExtractiveLead::new(*k)),
            Self::ExternalProcess {
                command,
                fit_timeout_secs,
                predict_timeout_secs,
            } => Box::new(ExternalAdapter::spawn(
                command,
                timeouts(*fit_timeout_secs, *predict_timeout_secs),
            )?),
            Self::ExternalTcp {
                address,
                fit_timeout_secs,
                predict_timeout_secs,
            } => Box::new(ExternalAdapter::connect(
                address,
                timeouts(*fit_timeout_secs, *predict_timeout_secs),
            )?),
        })
    }
}

fn timeouts(fit: Option<u64>, predict: u64) -> external::Timeouts {
    external::Timeouts {
        fit: fit.map(Duration::from_secs),
        predict: Some(Duration::from_secs(predict)),
    }
}
