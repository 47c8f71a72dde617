//! Deterministic reference models for tests and smoke runs.

use std::collections::HashSet;

use super::{check_fit_input, AdapterError, AdapterKind, ModelHandle, ModelHyperparams, Prediction, SummaryModel};
use crate::corpus::{LabelRecord, Sample, Speaker};
use crate::metrics::tokenize;
use crate::rng::{derive_seed, DetRng};

/// Placeholder written in place of a replaced token.
pub const NOISE_TOKEN: &str = "<unk>";

/// Returns each sample's gold summary with token noise.
///
/// Corruption rule: split the gold summary on whitespace. For every token
/// draw `u` then `v` from `DetRng::new(derive_seed(seed, sample_id))`. If
/// `u < rate` the token is corrupted: dropped when `v < 0.5`, otherwise
/// replaced by [`NOISE_TOKEN`]. Surviving tokens are joined by single spaces;
/// with nothing corrupted the gold text is returned verbatim.
/// `token_count` is the number of whitespace tokens emitted (at least 1) and
/// `log_likelihood = -rate · token_count`.
///
/// Both draws happen for every token whatever the rate, so for a fixed seed
/// the corrupted set at a lower rate is a subset of the one at a higher rate.
#[derive(Debug, Clone)]
pub struct OracleNoise {
    base_rate: f64,
    skill_c: Option<f64>,
    state: Option<OracleState>,
    generation: u64,
}

#[derive(Debug, Clone)]
struct OracleState {
    run_id: String,
    seed: u64,
    rate: f64,
}

impl OracleNoise {
    pub fn new(base_rate: f64, skill_c: Option<f64>) -> Self {
        Self {
            base_rate,
            skill_c,
            state: None,
            generation: 0,
        }
    }

    /// Noise rate after fitting on `n` labeled samples.
    pub fn rate_for(&self, n: usize) -> f64 {
        match self.skill_c {
            Some(c) => self.base_rate * c / (c + n as f64),
            None => self.base_rate,
        }
    }

    /// Apply the corruption rule to `gold`.
    pub fn corrupt(gold: &str, rate: f64, seed: u64, sample_id: &str) -> (String, u32) {
        let mut rng = DetRng::new(derive_seed(seed, sample_id));
        let mut out: Vec<&str> = Vec::new();
        let mut corrupted = false;
        for tok in gold.split_whitespace() {
            let u = rng.unit();
            let v = rng.unit();
            if u < rate {
                corrupted = true;
                if v >= 0.5 {
                    out.push(NOISE_TOKEN);
                }
            } else {
                out.push(tok);
            }
        }
        let count = out.len().max(1) as u32;
        if corrupted {
            (out.join(" "), count)
        } else {
            (gold.to_string(), count)
        }
    }
}

impl SummaryModel for OracleNoise {
    fn kind(&self) -> AdapterKind {
        AdapterKind::OracleNoise
    }

    fn fit(
        &mut self,
        run_id: &str,
        seed: u64,
        labeled: &[(&Sample, &LabelRecord)],
        _hp: &ModelHyperparams,
    ) -> Result<ModelHandle, AdapterError> {
        check_fit_input(labeled)?;
        self.generation += 1;
        self.state = Some(OracleState {
            run_id: run_id.to_string(),
            seed,
            rate: self.rate_for(labeled.len()),
        });
        Ok(ModelHandle {
            run_id: run_id.to_string(),
            adapter_kind: AdapterKind::OracleNoise,
            fitted_on_count: labeled.len(),
            generation: self.generation,
        })
    }

    fn predict(&mut self, handle: &ModelHandle, samples: &[&Sample]) -> Result<Vec<Prediction>, AdapterError> {
        let state = current(&self.state, self.generation, handle, |s| &s.run_id)?;
        samples
            .iter()
            .map(|s| {
                let gold = s.gold_summary.as_deref().ok_or_else(|| {
                    AdapterError::InvalidInput(format!("oracle needs a gold summary for {:?}", s.id))
                })?;
                let (summary, token_count) = Self::corrupt(gold, state.rate, state.seed, &s.id);
                Ok(Prediction {
                    sample_id: s.id.clone(),
                    summary,
                    log_likelihood: -state.rate * token_count as f64 + 0.0,
                    token_count,
                })
            })
            .collect()
    }
}

/// Leading-turns baseline: the first `k` patient turns joined by spaces.
///
/// `token_count` is the number of tokens (shared metric tokenizer) in that
/// text, at least 1, and the log-likelihood is
/// `-(fraction of tokens unseen in the labeled summaries) · token_count`.
#[derive(Debug, Clone)]
pub struct ExtractiveLead {
    k: usize,
    state: Option<LeadState>,
    generation: u64,
}

#[derive(Debug, Clone)]
struct LeadState {
    run_id: String,
    vocabulary: HashSet<String>,
}

impl ExtractiveLead {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            state: None,
            generation: 0,
        }
    }

    pub fn lead_text(&self, sample: &Sample) -> String {
        sample
            .turns
            .iter()
            .filter(|t| t.speaker == Speaker::Patient)
            .take(self.k)
            .map(|t| t.text.trim())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl SummaryModel for ExtractiveLead {
    fn kind(&self) -> AdapterKind {
        AdapterKind::ExtractiveLead
    }

    fn fit(
        &mut self,
        run_id: &str,
        _seed: u64,
        labeled: &[(&Sample, &LabelRecord)],
        _hp: &ModelHyperparams,
    ) -> Result<ModelHandle, AdapterError> {
        check_fit_input(labeled)?;
        let vocabulary = labeled
            .iter()
            .flat_map(|(_, r)| tokenize(&r.summary))
            .collect();
        self.generation += 1;
        self.state = Some(LeadState {
            run_id: run_id.to_string(),
            vocabulary,
        });
        Ok(ModelHandle {
            run_id: run_id.to_string(),
            adapter_kind: AdapterKind::ExtractiveLead,
            fitted_on_count: labeled.len(),
            generation: self.generation,
        })
    }

    fn predict(&mut self, handle: &ModelHandle, samples: &[&Sample]) -> Result<Vec<Prediction>, AdapterError> {
        let state = current(&self.state, self.generation, handle, |s| &s.run_id)?;
        Ok(samples
            .iter()
            .map(|s| {
                let summary = self.lead_text(s);
                let toks = tokenize(&summary);
                let token_count = toks.len().max(1) as u32;
                let unseen = toks.iter().filter(|t| !state.vocabulary.contains(*t)).count();
                let fraction = if toks.is_empty() {
                    0.0
                } else {
                    unseen as f64 / toks.len() as f64
                };
                Prediction {
                    sample_id: s.id.clone(),
                    summary,
                    log_likelihood: -fraction * token_count as f64 + 0.0,
                    token_count,
                }
            })
            .collect())
    }
}

fn current<'s, S>(
    state: &'s Option<S>,
    generation: u64,
    handle: &ModelHandle,
    run_id: impl Fn(&S) -> &String,
) -> Result<&'s S, AdapterError> {
    match state {
        Some(s) if handle.generation == generation && *run_id(s) == handle.run_id => Ok(s),
        _ => Err(AdapterError::InvalidHandle(handle.run_id.clone())),
    }
}
