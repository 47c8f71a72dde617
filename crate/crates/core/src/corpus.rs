//! Conversation corpora and the labeled/unlabeled pool lifecycle.
//!
//! A [`Corpus`] is immutable once loaded. Pools are index sets over it: the
//! labeled side maps sample ids to the [`LabelRecord`] that put them there, the
//! unlabeled side is a plain id set. [`PoolState::commit`] is the only way
//! ids move between the two.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::DetRng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?}: {message}")]
    InvalidSample { id: String, message: String },
    #[error("l0_size {l0_size} out of range for a corpus of {corpus_size} samples (need 0 < l0_size < corpus size)")]
    L0OutOfRange { l0_size: usize, corpus_size: usize },
    #[error("sample {0:?} has no gold summary")]
    MissingGold(String),
    #[error("sample {0:?} is not in the unlabeled pool")]
    NotUnlabeled(String),
    #[error("sample {0:?} is not in the corpus")]
    UnknownId(String),
    #[error("invalid label record for {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("invalid pool state: {0}")]
    InvalidPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Patient,
    Doctor,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(rename = "summary", default, skip_serializing_if = "Option::is_none")]
    pub gold_summary: Option<String>,
}

impl Sample {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.turns.is_empty() {
            return Err("no turns".into());
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(format!("turn {i} has empty text"));
        }
        Ok(())
    }

    /// All turn texts joined by newlines.
    pub fn conversation_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&t.text);
        }
        out
    }

    pub fn gold(&self) -> Result<&str, CorpusError> {
        self.gold_summary
            .as_deref()
            .ok_or_else(|| CorpusError::MissingGold(self.id.clone()))
    }
}

/// An ordered, id-unique list of samples.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            s.validate().map_err(|message| CorpusError::InvalidSample {
                id: s.id.clone(),
                message,
            })?;
            if index.insert(s.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { samples, index })
    }

    /// Load a newline-delimited corpus file. Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(BufReader::new(file))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut samples = Vec::new();
        let mut index = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: Sample =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            sample
                .validate()
                .map_err(|message| CorpusError::Malformed {
                    line: line_no,
                    message: format!("sample {:?}: {message}", sample.id),
                })?;
            if index.insert(sample.id.clone(), samples.len()).is_some() {
                return Err(CorpusError::DuplicateId(sample.id));
            }
            samples.push(sample);
        }
        Ok(Self { samples, index })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn require(&self, id: &str) -> Result<&Sample, CorpusError> {
        self.get(id).ok_or_else(|| CorpusError::UnknownId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    ExpertHuman,
    PseudoModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sample_id: String,
    pub summary: String,
    pub provenance: Provenance,
    pub iteration_added: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_at_selection: Option<f64>,
}

impl LabelRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: &str| CorpusError::InvalidRecord {
            id: self.sample_id.clone(),
            message: message.to_string(),
        };
        if self.provenance == Provenance::PseudoModel && self.confidence_at_selection.is_none() {
            return Err(bad("pseudo_model record without confidence_at_selection"));
        }
        if (self.iteration_added == 0) != (self.provenance == Provenance::Gold) {
            return Err(bad("iteration 0 is reserved for gold seed records"));
        }
        if let Some(c) = self.confidence_at_selection {
            if !c.is_finite() {
                return Err(bad("non-finite confidence"));
            }
        }
        Ok(())
    }
}

/// Labeled set `L_i`, unlabeled set `U_i` and the iteration counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolCheckpoint", into = "PoolCheckpoint")]
pub struct PoolState {
    labeled: BTreeMap<String, LabelRecord>,
    unlabeled: BTreeSet<String>,
    iteration: u32,
    rng_seed: u64,
}

/// On-disk form of [`PoolState`].
#[derive(Serialize, Deserialize)]
struct PoolCheckpoint {
    iteration: u32,
    rng_seed: u64,
    labeled: Vec<LabelRecord>,
    unlabeled: Vec<String>,
}

impl From<PoolState> for PoolCheckpoint {
    fn from(p: PoolState) -> Self {
        Self {
            iteration: p.iteration,
            rng_seed: p.rng_seed,
            labeled: p.labeled.into_values().collect(),
            unlabeled: p.unlabeled.into_iter().collect(),
        }
    }
}

impl TryFrom<PoolCheckpoint> for PoolState {
    type Error = CorpusError;

    fn try_from(c: PoolCheckpoint) -> Result<Self, Self::Error> {
        let mut labeled = BTreeMap::new();
        for r in c.labeled {
            r.validate()?;
            if r.iteration_added > c.iteration {
                return Err(CorpusError::InvalidPool(format!(
                    "record {:?} added after the pool iteration",
                    r.sample_id
                )));
            }
            let id = r.sample_id.clone();
            if labeled.insert(id.clone(), r).is_some() {
                return Err(CorpusError::InvalidPool(format!("{id:?} labeled twice")));
            }
        }
        let mut unlabeled = BTreeSet::new();
        for id in c.unlabeled {
            if labeled.contains_key(&id) {
                return Err(CorpusError::InvalidPool(format!(
                    "{id:?} is both labeled and unlabeled"
                )));
            }
            if !unlabeled.insert(id.clone()) {
                return Err(CorpusError::InvalidPool(format!("{id:?} listed twice")));
            }
        }
        Ok(Self {
            labeled,
            unlabeled,
            iteration: c.iteration,
            rng_seed: c.rng_seed,
        })
    }
}

/// Draw the seed set `L_0` uniformly from `corpus`.
///
/// Sample order is the corpus order, shuffled with [`DetRng::shuffle`] under
/// `seed`; the first `l0_size` become gold-labeled.
pub fn split_pools(corpus: &Corpus, l0_size: usize, seed: u64) -> Result<PoolState, CorpusError> {
    if l0_size == 0 || l0_size >= corpus.len() {
        return Err(CorpusError::L0OutOfRange {
            l0_size,
            corpus_size: corpus.len(),
        });
    }
    for s in corpus.samples() {
        s.gold()?;
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    DetRng::new(seed).shuffle(&mut order);

    let mut labeled = BTreeMap::new();
    let mut unlabeled = BTreeSet::new();
    for (rank, &i) in order.iter().enumerate() {
        let s = &corpus.samples()[i];
        if rank < l0_size {
            labeled.insert(
                s.id.clone(),
                LabelRecord {
                    sample_id: s.id.clone(),
                    summary: s.gold()?.to_string(),
                    provenance: Provenance::Gold,
                    iteration_added: 0,
                    confidence_at_selection: None,
                },
            );
        } else {
            unlabeled.insert(s.id.clone());
        }
    }
    Ok(PoolState {
        labeled,
        unlabeled,
        iteration: 0,
        rng_seed: seed,
    })
}

impl PoolState {
    pub fn labeled(&self) -> &BTreeMap<String, LabelRecord> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<String> {
        &self.unlabeled
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled.len()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled.len()
    }

    /// Every id ever in the pool, labeled or not.
    pub fn universe(&self) -> BTreeSet<String> {
        self.labeled
            .keys()
            .chain(self.unlabeled.iter())
            .cloned()
            .collect()
    }

    /// Simulated expert labeling: the stored gold summary of each id, stamped
    /// as an expert record for `iteration`. The pool itself is not touched.
    pub fn reveal_gold<'a, I>(
        &self,
        corpus: &Corpus,
        ids: I,
        iteration: u32,
    ) -> Result<Vec<LabelRecord>, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        ids.into_iter()
            .map(|id| {
                if !self.unlabeled.contains(id) {
                    return Err(CorpusError::NotUnlabeled(id.to_string()));
                }
                let s = corpus.require(id)?;
                Ok(LabelRecord {
                    sample_id: id.to_string(),
                    summary: s.gold()?.to_string(),
                    provenance: Provenance::ExpertHuman,
                    iteration_added: iteration,
                    confidence_at_selection: None,
                })
            })
            .collect()
    }

    /// Move the records' ids from unlabeled to labeled and advance to
    /// `iteration`. Either every record is committed or none is.
    pub fn commit(&mut self, records: Vec<LabelRecord>, iteration: u32) -> Result<(), CorpusError> {
        if iteration <= self.iteration {
            return Err(CorpusError::InvalidPool(format!(
                "commit for iteration {iteration} but pool is at {}",
                self.iteration
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if r.provenance == Provenance::Gold || r.iteration_added != iteration {
                return Err(CorpusError::InvalidRecord {
                    id: r.sample_id.clone(),
                    message: format!("record must be a non-gold label for iteration {iteration}"),
                });
            }
            if !self.unlabeled.contains(&r.sample_id) || !seen.insert(r.sample_id.as_str()) {
                return Err(CorpusError::NotUnlabeled(r.sample_id.clone()));
            }
        }
        for r in records {
            self.unlabeled.remove(&r.sample_id);
            self.labeled.insert(r.sample_id.clone(), r);
        }
        self.iteration = iteration;
        Ok(())
    }

    /// Labeled samples paired with their records, in id order.
    pub fn labeled_pairs<'c>(
        &'c self,
        corpus: &'c Corpus,
    ) -> Result<Vec<(&'c Sample, &'c LabelRecord)>, CorpusError> {
        self.labeled
            .values()
            .map(|r| Ok((corpus.require(&r.sample_id)?, r)))
            .collect()
    }

    pub fn unlabeled_samples<'c>(&self, corpus: &'c Corpus) -> Result<Vec<&'c Sample>, CorpusError> {
        self.unlabeled.iter().map(|id| corpus.require(id)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(s).map_err(|e| CorpusError::InvalidPool(e.to_string()))
    }
}
