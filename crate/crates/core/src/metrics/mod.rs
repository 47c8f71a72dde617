//! Summary evaluation: ROUGE-L F1, lexicon concept F1 and NegEx affirmation F1.
//!
//! Per example, concept F1 compares the concept sets of prediction and
//! reference; affirmation F1 compares `(concept, status)` pair sets. An
//! example whose sets share nothing (including the case where neither side
//! has any concept) scores 0. Aggregates are the mean of per-example scores
//! unless [`Aggregation::Micro`] is requested.

pub mod lexicon;
pub mod negex;
pub mod rouge;
pub mod tokenize;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
pub use lexicon::{extract_concepts, ConceptLexicon, Mention};
pub use negex::{tag_affirmations, Affirmation, ConceptMention, NegexRules};
pub use rouge::{lcs_len, rouge_l_f1, rouge_l_f1_text};
pub use tokenize::tokenize;

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl RulesError {
    pub(crate) fn at(line: usize, message: impl Into<String>) -> Self {
        Self::Line {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no prediction for test sample {0:?}")]
    MissingPrediction(String),
    #[error("prediction for {0:?} which is not in the test set")]
    ExtraPrediction(String),
    #[error("more than one prediction for {0:?}")]
    DuplicatePrediction(String),
    #[error("test sample {0:?} has no gold summary")]
    MissingGold(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Macro,
    Micro,
}

/// Where reference concepts come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    #[default]
    Summary,
    Conversation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub reference_source: ReferenceSource,
}

/// Overlap counts between a predicted and a reference set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub matched: usize,
    pub predicted: usize,
    pub reference: usize,
}

impl Overlap {
    pub fn of<T: Ord>(predicted: &BTreeSet<T>, reference: &BTreeSet<T>) -> Self {
        Self {
            matched: predicted.intersection(reference).count(),
            predicted: predicted.len(),
            reference: reference.len(),
        }
    }

    /// `2PR/(P+R)` written as `2·matched/(predicted+reference)`; 0 when
    /// nothing matches.
    pub fn f1(&self) -> f64 {
        if self.matched == 0 {
            return 0.0;
        }
        2.0 * self.matched as f64 / (self.predicted + self.reference) as f64
    }

    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.matched as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.reference == 0 {
            0.0
        } else {
            self.matched as f64 / self.reference as f64
        }
    }

    fn add(self, o: Overlap) -> Self {
        Self {
            matched: self.matched + o.matched,
            predicted: self.predicted + o.predicted,
            reference: self.reference + o.reference,
        }
    }
}

pub fn concept_overlap(predicted: &str, reference: &str, lexicon: &ConceptLexicon) -> Overlap {
    Overlap::of(
        &extract_concepts(predicted, lexicon),
        &extract_concepts(reference, lexicon),
    )
}

pub fn concept_f1(predicted: &str, reference: &str, lexicon: &ConceptLexicon) -> f64 {
    concept_overlap(predicted, reference, lexicon).f1()
}

pub fn affirmation_pairs(
    text: &str,
    lexicon: &ConceptLexicon,
    rules: &NegexRules,
) -> BTreeSet<(String, Affirmation)> {
    tag_affirmations(text, lexicon, rules)
        .into_iter()
        .map(|m| (m.concept, m.affirmation))
        .collect()
}

pub fn affirmation_overlap(
    predicted: &str,
    reference: &str,
    lexicon: &ConceptLexicon,
    rules: &NegexRules,
) -> Overlap {
    Overlap::of(
        &affirmation_pairs(predicted, lexicon, rules),
        &affirmation_pairs(reference, lexicon, rules),
    )
}

pub fn affirmation_f1(
    predicted: &str,
    reference: &str,
    lexicon: &ConceptLexicon,
    rules: &NegexRules,
) -> f64 {
    affirmation_overlap(predicted, reference, lexicon, rules).f1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub concept_f1: f64,
    pub affirmation_f1: f64,
    pub rouge_l_f1: f64,
    pub concepts: Overlap,
    pub affirmations: Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub concept_f1: f64,
    pub affirmation_f1: f64,
    pub rouge_l_f1: f64,
    pub n_examples: usize,
    pub aggregation: Aggregation,
    pub per_example: Vec<ExampleScores>,
}

/// The aggregate part of a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub concept_f1: f64,
    pub affirmation_f1: f64,
    pub rouge_l_f1: f64,
    pub n_examples: usize,
}

impl MetricsReport {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            concept_f1: self.concept_f1,
            affirmation_f1: self.affirmation_f1,
            rouge_l_f1: self.rouge_l_f1,
            n_examples: self.n_examples,
        }
    }

    pub fn write_per_example_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "concept_f1",
            "affirmation_f1",
            "rouge_l_f1",
            "concepts_matched",
            "concepts_predicted",
            "concepts_reference",
        ])?;
        for e in &self.per_example {
            w.write_record([
                e.id.clone(),
                e.concept_f1.to_string(),
                e.affirmation_f1.to_string(),
                e.rouge_l_f1.to_string(),
                e.concepts.matched.to_string(),
                e.concepts.predicted.to_string(),
                e.concepts.reference.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lexicon, negation rules and options bundled for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub lexicon: ConceptLexicon,
    pub rules: NegexRules,
    pub options: EvalOptions,
}

impl Evaluator {
    pub fn new(lexicon: ConceptLexicon, rules: NegexRules, options: EvalOptions) -> Self {
        Self {
            lexicon,
            rules,
            options,
        }
    }

    pub fn builtin() -> Self {
        Self::new(
            ConceptLexicon::builtin(),
            NegexRules::builtin(),
            EvalOptions::default(),
        )
    }

    fn score_example(&self, id: &str, predicted: &str, gold: &str, conversation: &str) -> ExampleScores {
        let concept_ref = match self.options.reference_source {
            ReferenceSource::Summary => gold,
            ReferenceSource::Conversation => conversation,
        };
        let concepts = concept_overlap(predicted, concept_ref, &self.lexicon);
        let affirmations = affirmation_overlap(predicted, concept_ref, &self.lexicon, &self.rules);
        ExampleScores {
            id: id.to_string(),
            concept_f1: concepts.f1(),
            affirmation_f1: affirmations.f1(),
            rouge_l_f1: rouge_l_f1_text(predicted, gold),
            concepts,
            affirmations,
        }
    }

    /// Score `predictions` (id, summary) against the gold summaries of
    /// `test_set`. Prediction ids must cover the test set exactly.
    pub fn evaluate<'a, I>(&self, predictions: I, test_set: &Corpus) -> Result<MetricsReport, EvalError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
        for (id, summary) in predictions {
            if !test_set.contains(id) {
                return Err(EvalError::ExtraPrediction(id.to_string()));
            }
            if by_id.insert(id, summary).is_some() {
                return Err(EvalError::DuplicatePrediction(id.to_string()));
            }
        }
        let mut per_example = Vec::with_capacity(test_set.len());
        let mut ids: Vec<&str> = test_set.ids().collect();
        ids.sort_unstable();
        for id in ids {
            let sample = test_set.get(id).expect("id from test set");
            let predicted = by_id
                .get(id)
                .ok_or_else(|| EvalError::MissingPrediction(id.to_string()))?;
            let gold = sample
                .gold_summary
                .as_deref()
                .ok_or_else(|| EvalError::MissingGold(id.to_string()))?;
            per_example.push(self.score_example(id, predicted, gold, &sample.conversation_text()));
        }
        Ok(self.aggregate(per_example))
    }

    /// Scores obtained when every prediction equals its gold summary.
    pub fn theoretical_max(&self, test_set: &Corpus) -> Result<MetricsReport, EvalError> {
        let mut preds = Vec::with_capacity(test_set.len());
        for s in test_set.samples() {
            let gold = s
                .gold_summary
                .as_deref()
                .ok_or_else(|| EvalError::MissingGold(s.id.clone()))?;
            preds.push((s.id.as_str(), gold));
        }
        self.evaluate(preds, test_set)
    }

    fn aggregate(&self, per_example: Vec<ExampleScores>) -> MetricsReport {
        let n = per_example.len();
        let mean = |f: fn(&ExampleScores) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_example.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let rouge_l_f1 = mean(|e| e.rouge_l_f1);
        let (concept_f1, affirmation_f1) = match self.options.aggregation {
            Aggregation::Macro => (mean(|e| e.concept_f1), mean(|e| e.affirmation_f1)),
            Aggregation::Micro => {
                let c = per_example.iter().fold(Overlap::default(), |acc, e| acc.add(e.concepts));
                let a = per_example
                    .iter()
                    .fold(Overlap::default(), |acc, e| acc.add(e.affirmations));
                (c.f1(), a.f1())
            }
        };
        MetricsReport {
            concept_f1,
            affirmation_f1,
            rouge_l_f1,
            n_examples: n,
            aggregation: self.options.aggregation,
            per_example,
        }
    }
}
