//! Best-of-dropout tables and saturation-curve data.
//!
//! Runs are grouped by every config field except dropout. Within a group the
//! default rule picks, per iteration, the run with the higher concept F1 and
//! reports all of that run's metrics; [`BestRule::PerMetricMax`] takes each
//! metric's maximum independently instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::result::ExperimentResult;
use crate::strategies::{HlStrategy, PlStrategy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestRule {
    #[default]
    BestRun,
    PerMetricMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedRow {
    pub l0_size: usize,
    pub pl: PlStrategy,
    pub hl: HlStrategy,
    pub iteration: u32,
    pub n_train_points: usize,
    pub concept_f1: f64,
    pub affirmation_f1: f64,
    pub rouge_l_f1: f64,
    /// Dropout of the run each metric came from, as
    /// (concept, affirmation, rouge).
    pub dropout: (f64, f64, f64),
    /// Number of dropout variants compared.
    pub candidates: usize,
    pub note: Option<String>,
}

/// Everything but dropout and the run id.
fn group_key(r: &ExperimentResult) -> String {
    let mut c = r.config.clone();
    c.dropout = 0.0;
    c.run_id = None;
    serde_json::to_string(&c).expect("config serializes")
}

fn pick<'a>(cands: &[&'a ExperimentResult], metric: impl Fn(&ExperimentResult) -> f64) -> &'a ExperimentResult {
    // strictly greater keeps the lower dropout on ties
    let mut best = cands[0];
    for c in &cands[1..] {
        if metric(c) > metric(best) {
            best = c;
        }
    }
    best
}

pub fn report_best_dropout(results: &[ExperimentResult], rule: BestRule) -> Vec<ReportedRow> {
    let mut groups: BTreeMap<String, Vec<&ExperimentResult>> = BTreeMap::new();
    for r in results {
        groups.entry(group_key(r)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for mut members in groups.into_values() {
        members.sort_by(|a, b| a.config.dropout.total_cmp(&b.config.dropout).then(a.run_id.cmp(&b.run_id)));
        let n_iter = members.iter().map(|m| m.per_iteration.len()).min().unwrap_or(0);
        let note = (members.len() == 1).then(|| "single dropout variant".to_string());
        for i in 0..n_iter {
            let m = |r: &ExperimentResult| r.per_iteration[i].metrics;
            let concept = pick(&members, |r| m(r).concept_f1);
            let (aff, rouge) = match rule {
                BestRule::BestRun => (concept, concept),
                BestRule::PerMetricMax => (
                    pick(&members, |r| m(r).affirmation_f1),
                    pick(&members, |r| m(r).rouge_l_f1),
                ),
            };
            let it = &concept.per_iteration[i];
            rows.push(ReportedRow {
                l0_size: concept.config.l0_size,
                pl: concept.config.strategy.pl,
                hl: concept.config.strategy.hl,
                iteration: it.iteration,
                n_train_points: it.n_train_points,
                concept_f1: it.metrics.concept_f1,
                affirmation_f1: m(aff).affirmation_f1,
                rouge_l_f1: m(rouge).rouge_l_f1,
                dropout: (concept.config.dropout, aff.config.dropout, rouge.config.dropout),
                candidates: members.len(),
                note: note.clone(),
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.pl, a.hl, a.l0_size, a.iteration)
            .cmp(&(b.pl, b.hl, b.l0_size, b.iteration))
    });
    rows
}

/// The reported table, one row per (config, iteration) with its dropout
/// choice.
pub fn best_dropout_csv(rows: &[ReportedRow]) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "l0_size",
        "pl",
        "hl",
        "iteration",
        "n_train_points",
        "concept_f1",
        "affirmation_f1",
        "rouge_l_f1",
        "dropout_concept",
        "dropout_affirmation",
        "dropout_rouge",
        "candidates",
        "note",
    ])?;
    for r in rows {
        w.write_record([
            r.l0_size.to_string(),
            r.pl.to_string(),
            r.hl.to_string(),
            r.iteration.to_string(),
            r.n_train_points.to_string(),
            r.concept_f1.to_string(),
            r.affirmation_f1.to_string(),
            r.rouge_l_f1.to_string(),
            r.dropout.0.to_string(),
            r.dropout.1.to_string(),
            r.dropout.2.to_string(),
            r.candidates.to_string(),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Metrics against training-set size, one series per PL strategy, sorted by
/// series, HL strategy and size.
pub fn saturation_csv(rows: &[ReportedRow]) -> csv::Result<Vec<u8>> {
    let mut sorted: Vec<&ReportedRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.pl, r.hl, r.n_train_points, r.l0_size));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "series",
        "hl",
        "l0_size",
        "iteration",
        "n_train_points",
        "concept_f1",
        "affirmation_f1",
        "rouge_l_f1",
    ])?;
    for r in sorted {
        w.write_record([
            format!("pl={}", r.pl),
            r.hl.to_string(),
            r.l0_size.to_string(),
            r.iteration.to_string(),
            r.n_train_points.to_string(),
            r.concept_f1.to_string(),
            r.affirmation_f1.to_string(),
            r.rouge_l_f1.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}
