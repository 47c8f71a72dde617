//! Per-run checkpoint directory.
//!
//! ```text
//! <root>/<run_id>/meta.json          config echo and start time
//! <root>/<run_id>/iter<i>/pool.state L_i and U_i
//! <root>/<run_id>/iter<i>/metrics    test-set report of the model fitted on L_i
//! <root>/<run_id>/iter<i>/scores.jsonl  that model's predictions over U_i
//! <root>/<run_id>/iter<i>/iteration.json  counts and timings; written last
//! <root>/<run_id>/awaiting.json      selection waiting for live expert labels
//! ```
//!
//! Every file is replaced atomically, and an iteration only counts as done
//! once its `iteration.json` exists.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::result::{IterationRecord, PhaseTimings};
use super::EngineError;
use crate::corpus::{LabelRecord, PoolState};
use crate::fsutil::atomic_write;
use crate::metrics::MetricsReport;
use crate::model::Prediction;

pub const POOL_FILE: &str = "pool.state";
pub const METRICS_FILE: &str = "metrics";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const ITERATION_FILE: &str = "iteration.json";
pub const META_FILE: &str = "meta.json";
pub const AWAITING_FILE: &str = "awaiting.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub config: RunConfig,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationInfo {
    pub record: IterationRecord,
    pub timings: PhaseTimings,
    /// Run whose iteration-0 artifacts were copied instead of refitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reused_from: Option<String>,
}

#[derive(Debug, Clone)]
pub struct IterationCheckpoint {
    pub pool: PoolState,
    pub metrics: MetricsReport,
    pub scores: Option<Vec<Prediction>>,
    pub info: IterationInfo,
}

/// Labels chosen for an iteration whose expert half is still with the
/// annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwaitingLabels {
    pub iteration: u32,
    pub pseudo: Vec<LabelRecord>,
    pub expert_ids: Vec<String>,
    pub select_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

fn ck_err(path: &Path, message: impl ToString) -> EngineError {
    EngineError::Checkpoint {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| ck_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| ck_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EngineError> {
    let bytes = serde_json::to_vec_pretty(value).expect("checkpoint serializes");
    atomic_write(path, &bytes).map_err(|e| ck_err(path, e))
}

impl RunDir {
    pub fn new(root: &Path, run_id: &str) -> Self {
        Self {
            path: root.join(run_id),
        }
    }

    pub fn at(path: PathBuf) -> Self {
        Self { path }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn iter_dir(&self, i: u32) -> PathBuf {
        self.path.join(format!("iter{i}"))
    }

    /// Create the directory for `config`, or check that an existing one was
    /// made for the same config.
    pub fn init(&self, run_id: &str, config: &RunConfig) -> Result<RunMeta, EngineError> {
        let meta_path = self.path.join(META_FILE);
        if meta_path.exists() {
            let meta: RunMeta = read_json(&meta_path)?;
            if meta.config != *config {
                return Err(ck_err(
                    &meta_path,
                    format!("run {run_id:?} already exists with a different config"),
                ));
            }
            return Ok(meta);
        }
        std::fs::create_dir_all(&self.path).map_err(|e| ck_err(&self.path, e))?;
        let meta = RunMeta {
            run_id: run_id.to_string(),
            config: config.clone(),
            started_at: Utc::now(),
        };
        write_json(&meta_path, &meta)?;
        Ok(meta)
    }

    pub fn meta(&self) -> Result<Option<RunMeta>, EngineError> {
        let p = self.path.join(META_FILE);
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn is_complete(&self, i: u32) -> bool {
        self.iter_dir(i).join(ITERATION_FILE).exists()
    }

    /// Number of consecutive completed iterations starting at 0.
    pub fn completed_iterations(&self) -> u32 {
        let mut i = 0;
        while self.is_complete(i) {
            i += 1;
        }
        i
    }

    pub fn write_iteration(&self, i: u32, cp: &IterationCheckpoint) -> Result<(), EngineError> {
        let dir = self.iter_dir(i);
        std::fs::create_dir_all(&dir).map_err(|e| ck_err(&dir, e))?;
        let marker = dir.join(ITERATION_FILE);
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| ck_err(&marker, e))?;
        }
        let pool_path = dir.join(POOL_FILE);
        atomic_write(&pool_path, cp.pool.to_json().as_bytes()).map_err(|e| ck_err(&pool_path, e))?;
        write_json(&dir.join(METRICS_FILE), &cp.metrics)?;
        let scores_path = dir.join(SCORES_FILE);
        match &cp.scores {
            Some(preds) => {
                let mut buf = Vec::new();
                for p in preds {
                    serde_json::to_writer(&mut buf, p).expect("prediction serializes");
                    buf.write_all(b"\n").unwrap();
                }
                atomic_write(&scores_path, &buf).map_err(|e| ck_err(&scores_path, e))?;
            }
            None if scores_path.exists() => {
                std::fs::remove_file(&scores_path).map_err(|e| ck_err(&scores_path, e))?
            }
            None => {}
        }
        write_json(&marker, &cp.info)
    }

    pub fn read_iteration(&self, i: u32) -> Result<IterationCheckpoint, EngineError> {
        let dir = self.iter_dir(i);
        let info: IterationInfo = read_json(&dir.join(ITERATION_FILE))?;
        let pool_path = dir.join(POOL_FILE);
        let pool_text = std::fs::read_to_string(&pool_path).map_err(|e| ck_err(&pool_path, e))?;
        let pool = PoolState::from_json(&pool_text).map_err(|e| ck_err(&pool_path, e))?;
        let metrics = read_json(&dir.join(METRICS_FILE))?;
        let scores_path = dir.join(SCORES_FILE);
        let scores = if scores_path.exists() {
            let f = std::fs::File::open(&scores_path).map_err(|e| ck_err(&scores_path, e))?;
            let mut out = Vec::new();
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| ck_err(&scores_path, e))?;
                if !line.trim().is_empty() {
                    out.push(serde_json::from_str(&line).map_err(|e| ck_err(&scores_path, e))?);
                }
            }
            Some(out)
        } else {
            None
        };
        if pool.iteration() != i {
            return Err(ck_err(&pool_path, format!("pool is at iteration {}, expected {i}", pool.iteration())));
        }
        Ok(IterationCheckpoint {
            pool,
            metrics,
            scores,
            info,
        })
    }

    pub fn awaiting(&self) -> Result<Option<AwaitingLabels>, EngineError> {
        let p = self.path.join(AWAITING_FILE);
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write_awaiting(&self, a: &AwaitingLabels) -> Result<(), EngineError> {
        write_json(&self.path.join(AWAITING_FILE), a)
    }

    pub fn clear_awaiting(&self) -> Result<(), EngineError> {
        let p = self.path.join(AWAITING_FILE);
        match std::fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(ck_err(&p, e)),
            _ => Ok(()),
        }
    }
}
