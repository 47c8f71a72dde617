//! Pseudo-label and expert-label selection over confidence scores.
//!
//! Every rank-based selection works on the ascending sort by
//! `(score, sample_id)`, so equal scores break ties by id.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Prediction;
use crate::rng::DetRng;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("budget {budget} exceeds the {available} scored samples")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("duplicate id {0:?} in score table")]
    DuplicateId(String),
    #[error("non-finite score for {0:?}")]
    NonFinite(String),
    #[error("{0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNormalization {
    #[default]
    None,
    PerToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub sample_id: String,
    pub score: f64,
    pub token_count: u32,
}

/// Confidence of the current model on each unlabeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    entries: Vec<ScoreEntry>,
    normalization: ScoreNormalization,
}

impl ScoreTable {
    pub fn new(entries: Vec<ScoreEntry>, normalization: ScoreNormalization) -> Result<Self, StrategyError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(StrategyError::NonFinite(e.sample_id.clone()));
            }
            if !seen.insert(e.sample_id.as_str()) {
                return Err(StrategyError::DuplicateId(e.sample_id.clone()));
            }
        }
        Ok(Self {
            entries,
            normalization,
        })
    }

    /// Raw sequence log-likelihood, or log-likelihood per generated token.
    pub fn from_predictions(
        predictions: &[Prediction],
        normalization: ScoreNormalization,
    ) -> Result<Self, StrategyError> {
        let entries = predictions
            .iter()
            .map(|p| ScoreEntry {
                sample_id: p.sample_id.clone(),
                score: match normalization {
                    ScoreNormalization::None => p.log_likelihood,
                    ScoreNormalization::PerToken => p.log_likelihood / p.token_count.max(1) as f64,
                },
                token_count: p.token_count,
            })
            .collect();
        Self::new(entries, normalization)
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn normalization(&self) -> ScoreNormalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.sample_id == id).map(|e| e.score)
    }

    /// A copy without the given ids.
    pub fn without(&self, ids: &BTreeSet<String>) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| !ids.contains(&e.sample_id))
                .cloned()
                .collect(),
            normalization: self.normalization,
        }
    }

    fn ascending(&self) -> Vec<&ScoreEntry> {
        let mut v: Vec<&ScoreEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| match a.score.total_cmp(&b.score) {
            Ordering::Equal => a.sample_id.cmp(&b.sample_id),
            o => o,
        });
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Top,
    Bottom,
    Middle,
    Random,
    None,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlStrategy {
    #[default]
    None,
    Top,
}

/// Expert-label selection. `top` is not part of the default grid but is
/// accepted so high-confidence expert labeling can be run as well.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HlStrategy {
    #[default]
    None,
    Bottom,
    Middle,
    Random,
    Top,
}

impl From<PlStrategy> for SelectionKind {
    fn from(s: PlStrategy) -> Self {
        match s {
            PlStrategy::None => Self::None,
            PlStrategy::Top => Self::Top,
        }
    }
}

impl From<HlStrategy> for SelectionKind {
    fn from(s: HlStrategy) -> Self {
        match s {
            HlStrategy::None => Self::None,
            HlStrategy::Bottom => Self::Bottom,
            HlStrategy::Middle => Self::Middle,
            HlStrategy::Random => Self::Random,
            HlStrategy::Top => Self::Top,
        }
    }
}

impl fmt::Display for PlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Top => "top",
        })
    }
}

impl fmt::Display for HlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Bottom => "bottom",
            Self::Middle => "middle",
            Self::Random => "random",
            Self::Top => "top",
        })
    }
}

fn default_fraction() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    #[serde(default)]
    pub pl: PlStrategy,
    #[serde(default)]
    pub hl: HlStrategy,
    #[serde(default = "default_fraction")]
    pub pl_fraction: f64,
    #[serde(default = "default_fraction")]
    pub hl_fraction: f64,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            pl: PlStrategy::None,
            hl: HlStrategy::None,
            pl_fraction: default_fraction(),
            hl_fraction: default_fraction(),
        }
    }
}

impl StrategySpec {
    pub fn validate(&self) -> Result<(), StrategyError> {
        for (key, v) in [("pl_fraction", self.pl_fraction), ("hl_fraction", self.hl_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StrategyError::InvalidSpec(format!("{key} = {v} is outside [0, 1]")));
            }
        }
        if self.pl == PlStrategy::Top && self.pl_fraction <= 0.0 {
            return Err(StrategyError::InvalidSpec(
                "pl_fraction must be > 0 when pl = top".into(),
            ));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.pl != PlStrategy::None || self.hl != HlStrategy::None
    }

    pub fn budgets(&self, u0_size: usize) -> Budgets {
        Budgets {
            b_pseudo: match self.pl {
                PlStrategy::None => 0,
                _ => compute_budget(u0_size, self.pl_fraction),
            },
            b_expert: match self.hl {
                HlStrategy::None => 0,
                _ => compute_budget(u0_size, self.hl_fraction),
            },
        }
    }
}

/// Per-iteration label counts, fixed from `|U_0|` for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub b_pseudo: usize,
    pub b_expert: usize,
}

/// `ceil(fraction · u0_size)`. Products within 1e-9 of an integer are taken
/// as that integer, so `0.01 · 900` is 9 despite binary rounding.
pub fn compute_budget(u0_size: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || u0_size == 0 {
        return 0;
    }
    let x = fraction * u0_size as f64;
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// Select `budget` ids from `scores`.
///
/// * `top`: highest scores, highest first.
/// * `bottom`: lowest scores, lowest first.
/// * `middle`: ascending ranks `⌊(n−b)/2⌋ ..` of length `b`.
/// * `random`: seeded draw without replacement from the id-sorted entries.
/// * `none`: nothing.
pub fn select(
    kind: SelectionKind,
    scores: &ScoreTable,
    budget: usize,
    seed: u64,
) -> Result<Vec<String>, StrategyError> {
    if kind == SelectionKind::None || budget == 0 {
        return Ok(Vec::new());
    }
    let n = scores.len();
    if budget > n {
        return Err(StrategyError::BudgetTooLarge {
            budget,
            available: n,
        });
    }
    let ids = |v: &[&ScoreEntry]| v.iter().map(|e| e.sample_id.clone()).collect::<Vec<_>>();
    Ok(match kind {
        SelectionKind::Top => {
            let asc = scores.ascending();
            let mut v = ids(&asc[n - budget..]);
            v.reverse();
            v
        }
        SelectionKind::Bottom => ids(&scores.ascending()[..budget]),
        SelectionKind::Middle => {
            let start = (n - budget) / 2;
            ids(&scores.ascending()[start..start + budget])
        }
        SelectionKind::Random => {
            let mut by_id: Vec<&ScoreEntry> = scores.entries.iter().collect();
            by_id.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            DetRng::new(seed)
                .sample_indices(n, budget)
                .into_iter()
                .map(|i| by_id[i].sample_id.clone())
                .collect()
        }
        SelectionKind::None => unreachable!(),
    })
}

/// [`select`] with the budget clamped to the table size; clamping is logged.
pub fn select_clamped(kind: SelectionKind, scores: &ScoreTable, budget: usize, seed: u64) -> Vec<String> {
    let effective = if kind == SelectionKind::None {
        0
    } else {
        budget.min(scores.len())
    };
    if effective < budget && kind != SelectionKind::None {
        log::warn!(
            "{kind:?} selection: budget {budget} clamped to the {} remaining unlabeled samples",
            scores.len()
        );
    }
    select(kind, scores, effective, seed).expect("clamped budget fits")
}
