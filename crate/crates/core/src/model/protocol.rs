//! Newline-delimited JSON protocol spoken with model adapters.
//!
//! One request object per line, answered by exactly one response object per
//! line. `fit` is answered by `fit_done` (or `error`), `predict` by
//! `predictions` (or `error`).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AdapterError, ModelHyperparams, Prediction, SummaryModel};
use crate::corpus::{LabelRecord, Provenance, Sample, Turn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSample {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireItem {
    pub id: String,
    pub summary: String,
    pub log_likelihood: f64,
    pub token_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Fit {
        run_id: String,
        seed: u64,
        hyperparams: ModelHyperparams,
        samples: Vec<WireSample>,
    },
    Predict {
        run_id: String,
        samples: Vec<WireSample>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Response {
    FitDone {
        run_id: String,
    },
    Predictions {
        run_id: String,
        items: Vec<WireItem>,
    },
    Error {
        message: String,
    },
}

impl Request {
    pub fn fit(run_id: &str, seed: u64, labeled: &[(&Sample, &LabelRecord)], hp: &ModelHyperparams) -> Self {
        Self::Fit {
            run_id: run_id.to_string(),
            seed,
            hyperparams: hp.clone(),
            samples: labeled
                .iter()
                .map(|(s, r)| WireSample {
                    id: s.id.clone(),
                    turns: s.turns.clone(),
                    summary: Some(r.summary.clone()),
                })
                .collect(),
        }
    }

    pub fn predict(run_id: &str, samples: &[&Sample]) -> Self {
        Self::Predict {
            run_id: run_id.to_string(),
            samples: samples
                .iter()
                .map(|s| WireSample {
                    id: s.id.clone(),
                    turns: s.turns.clone(),
                    summary: None,
                })
                .collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

impl Response {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

impl From<WireItem> for Prediction {
    fn from(w: WireItem) -> Self {
        Prediction {
            sample_id: w.id,
            summary: w.summary,
            log_likelihood: w.log_likelihood,
            token_count: w.token_count,
        }
    }
}

impl From<&Prediction> for WireItem {
    fn from(p: &Prediction) -> Self {
        WireItem {
            id: p.sample_id.clone(),
            summary: p.summary.clone(),
            log_likelihood: p.log_likelihood,
            token_count: p.token_count,
        }
    }
}

/// Serve `model` over the protocol until `input` reaches end of stream.
///
/// Built-in models use this to run as stand-alone adapter processes. Fit
/// samples carry the training label in `summary`; predict samples carry no
/// label, so a model that needs gold text (the noisy oracle) receives it
/// through `gold_lookup`.
pub fn serve<R, W, F>(
    model: &mut dyn SummaryModel,
    input: R,
    mut output: W,
    gold_lookup: F,
) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: Fn(&str) -> Option<String>,
{
    let mut handle = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response::Error {
                message: format!("bad request: {e}"),
            },
            Ok(Request::Fit {
                run_id,
                seed,
                hyperparams,
                samples,
            }) => {
                let owned: Vec<(Sample, LabelRecord)> = samples
                    .into_iter()
                    .map(|w| {
                        let summary = w.summary.clone().unwrap_or_default();
                        let sample = Sample {
                            gold_summary: gold_lookup(&w.id).or_else(|| w.summary.clone()),
                            id: w.id.clone(),
                            turns: w.turns,
                        };
                        let record = LabelRecord {
                            sample_id: w.id,
                            summary,
                            provenance: Provenance::Gold,
                            iteration_added: 0,
                            confidence_at_selection: None,
                        };
                        (sample, record)
                    })
                    .collect();
                let pairs: Vec<(&Sample, &LabelRecord)> = owned.iter().map(|(s, r)| (s, r)).collect();
                match model.fit(&run_id, seed, &pairs, &hyperparams) {
                    Ok(h) => {
                        handle = Some(h);
                        Response::FitDone { run_id }
                    }
                    Err(e) => Response::Error {
                        message: e.to_string(),
                    },
                }
            }
            Ok(Request::Predict { run_id, samples }) => match &handle {
                Some(h) if h.run_id == run_id => {
                    let owned: Vec<Sample> = samples
                        .into_iter()
                        .map(|w| Sample {
                            gold_summary: gold_lookup(&w.id),
                            id: w.id,
                            turns: w.turns,
                        })
                        .collect();
                    let refs: Vec<&Sample> = owned.iter().collect();
                    match model.predict(h, &refs) {
                        Ok(preds) => Response::Predictions {
                            run_id,
                            items: preds.iter().map(WireItem::from).collect(),
                        },
                        Err(e) => Response::Error {
                            message: e.to_string(),
                        },
                    }
                }
                _ => Response::Error {
                    message: format!("predict for {run_id:?} before a successful fit"),
                },
            },
        };
        writeln!(output, "{}", response.to_line())?;
        output.flush()?;
    }
    Ok(())
}

/// Check a predictions response against its request: same run, one item per
/// requested id in request order, finite non-positive log-likelihoods.
pub fn validate_predictions(
    run_id: &str,
    requested: &[&Sample],
    response_run_id: &str,
    items: &[WireItem],
) -> Result<(), AdapterError> {
    let bad = |message: String| AdapterError::Protocol {
        message,
        last_line: None,
    };
    if response_run_id != run_id {
        return Err(bad(format!(
            "predictions for run {response_run_id:?}, expected {run_id:?}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for it in items {
        if !seen.insert(it.id.as_str()) {
            return Err(bad(format!("duplicate prediction for {:?}", it.id)));
        }
    }
    for s in requested {
        if !seen.contains(s.id.as_str()) {
            return Err(bad(format!("missing prediction for {:?}", s.id)));
        }
    }
    if items.len() != requested.len() {
        let extra = items
            .iter()
            .find(|it| !requested.iter().any(|s| s.id == it.id))
            .map(|it| it.id.clone())
            .unwrap_or_default();
        return Err(bad(format!("prediction for unrequested sample {extra:?}")));
    }
    for (i, (s, it)) in requested.iter().zip(items).enumerate() {
        if s.id != it.id {
            return Err(bad(format!(
                "predictions out of order at position {i}: got {:?}, expected {:?}",
                it.id, s.id
            )));
        }
        if !it.log_likelihood.is_finite() || it.log_likelihood > 0.0 {
            return Err(bad(format!(
                "log_likelihood {} for {:?} is not a finite value <= 0",
                it.log_likelihood, it.id
            )));
        }
        if it.token_count == 0 {
            return Err(bad(format!("token_count 0 for {:?}", it.id)));
        }
    }
    Ok(())
}
