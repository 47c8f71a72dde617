//! Experiment results and the append-only results store.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::EngineError;
use crate::fsutil::atomic_write;
use crate::metrics::MetricsSummary;
use crate::strategies::Budgets;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const RESULTS_CSV: &str = "results.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// `|L_i|`
    pub n_train_points: usize,
    /// `|U_i|`
    pub n_unlabeled: usize,
    pub added_pseudo: usize,
    pub added_expert: usize,
    /// Test-set scores of the model fitted on `L_i`.
    pub metrics: MetricsSummary,
}

/// Wall-clock milliseconds spent in each phase of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub select_ms: f64,
    pub fit_ms: f64,
    pub eval_ms: f64,
    pub predict_ms: f64,
}

/// Everything about a finished run that is reproducible from its config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub run_id: String,
    pub config: RunConfig,
    pub budgets: Budgets,
    pub per_iteration: Vec<IterationRecord>,
}

/// One line of the results store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub result: ExperimentResult,
    pub timings: Vec<PhaseTimings>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// `results.jsonl` under the campaign root: one record per completed run,
/// appended under a lock, at most one record per run id.
pub struct ResultsStore {
    path: PathBuf,
    inner: Mutex<StoreInner>,
}

struct StoreInner {
    file: File,
    completed: BTreeSet<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> EngineError {
    EngineError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl ResultsStore {
    /// Open or create the store in `root`. A final line cut short by a crash
    /// is discarded.
    pub fn open(root: &Path) -> Result<Self, EngineError> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let path = root.join(RESULTS_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| io_err(&path, e))?;
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
            log::warn!(
                "{}: dropping {} bytes of an incomplete final record",
                path.display(),
                text.len() - keep
            );
            file.set_len(keep as u64).map_err(|e| io_err(&path, e))?;
            file.seek(SeekFrom::End(0)).map_err(|e| io_err(&path, e))?;
            text.truncate(keep);
        }
        let mut completed = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ResultRecord = serde_json::from_str(line).map_err(|e| EngineError::Checkpoint {
                path: path.display().to_string(),
                message: format!("line {}: {e}", n + 1),
            })?;
            completed.insert(rec.result.run_id);
        }
        Ok(Self {
            path,
            inner: Mutex::new(StoreInner { file, completed }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.inner.lock().unwrap().completed.contains(run_id)
    }

    /// Append `record` unless its run is already stored. Returns whether a
    /// line was written.
    pub fn append(&self, record: &ResultRecord) -> Result<bool, EngineError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.completed.contains(&record.result.run_id) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.sync_data())
            .map_err(|e| io_err(&self.path, e))?;
        inner.completed.insert(record.result.run_id.clone());
        Ok(true)
    }

    pub fn records(&self) -> Result<Vec<ResultRecord>, EngineError> {
        let _guard = self.inner.lock().unwrap();
        read_records(&self.path)
    }

    /// Rewrite `results.csv` next to the store from all records.
    pub fn write_csv(&self) -> Result<PathBuf, EngineError> {
        let records = self.records()?;
        let path = self.path.with_file_name(RESULTS_CSV);
        let results: Vec<ExperimentResult> = records.into_iter().map(|r| r.result).collect();
        let bytes = results_csv(&results).map_err(|e| EngineError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        atomic_write(&path, &bytes).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// Parse a results file, skipping an incomplete final line.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| EngineError::Checkpoint {
                path: path.display().to_string(),
                message: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

pub const CSV_COLUMNS: [&str; 10] = [
    "run_id",
    "dropout",
    "l0_size",
    "pl",
    "hl",
    "iteration",
    "n_train_points",
    "concept_f1",
    "affirmation_f1",
    "rouge_l_f1",
];

/// One row per (run, iteration), sorted by run id then iteration.
pub fn results_csv(results: &[ExperimentResult]) -> csv::Result<Vec<u8>> {
    let mut sorted: Vec<&ExperimentResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in sorted {
        for it in &r.per_iteration {
            w.write_record([
                r.run_id.clone(),
                r.config.dropout.to_string(),
                r.config.l0_size.to_string(),
                r.config.strategy.pl.to_string(),
                r.config.strategy.hl.to_string(),
                it.iteration.to_string(),
                it.n_train_points.to_string(),
                it.metrics.concept_f1.to_string(),
                it.metrics.affirmation_f1.to_string(),
                it.metrics.rouge_l_f1.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}
