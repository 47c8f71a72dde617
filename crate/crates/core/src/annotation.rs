//! Persisted task queue for live expert labeling.
//!
//! The queue lives in one JSON file inside the run's checkpoint directory and
//! is re-read before every operation, so the loop engine and the annotation
//! service can run as separate processes. Writes go through a single mutex
//! and an atomic file replace. The first submission for a task wins.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelRecord, Provenance, Sample, Turn};
use crate::fsutil::atomic_write;

pub const TASKS_FILE: &str = "annotations.json";

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("summary must not be empty")]
    EmptySummary,
    #[error("task {0:?} was already submitted")]
    Conflict(String),
    #[error("iteration {pending_iteration} still has {pending} pending task(s)")]
    PreviousUnfulfilled { pending_iteration: u32, pending: usize },
    #[error("task store {path}: {message}")]
    Storage { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub sample_id: String,
    pub turns: Vec<Turn>,
    pub status: TaskStatus,
    #[serde(default)]
    pub submitted_summary: Option<String>,
    pub iteration: u32,
    #[serde(default)]
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStatus {
    pub iteration: u32,
    pub pending_count: usize,
    pub resumable: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TaskFile {
    run_id: String,
    tasks: Vec<AnnotationTask>,
}

pub struct TaskStore {
    path: PathBuf,
    run_id: String,
    lock: Mutex<()>,
}

impl TaskStore {
    /// The store for `run_id` inside `run_dir`. Nothing is written until the
    /// first enqueue.
    pub fn open(run_dir: &Path, run_id: &str) -> Self {
        Self {
            path: run_dir.join(TASKS_FILE),
            run_id: run_id.to_string(),
            lock: Mutex::new(()),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    fn storage_err(&self, message: impl ToString) -> AnnotationError {
        AnnotationError::Storage {
            path: self.path.display().to_string(),
            message: message.to_string(),
        }
    }

    fn read(&self) -> Result<TaskFile, AnnotationError> {
        match std::fs::read_to_string(&self.path) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| self.storage_err(e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(TaskFile {
                run_id: self.run_id.clone(),
                tasks: Vec::new(),
            }),
            Err(e) => Err(self.storage_err(e)),
        }
    }

    fn write(&self, file: &TaskFile) -> Result<(), AnnotationError> {
        let bytes = serde_json::to_vec_pretty(file).map_err(|e| self.storage_err(e))?;
        atomic_write(&self.path, &bytes).map_err(|e| self.storage_err(e))
    }

    /// Create pending tasks for `selected` at `iteration`. Tasks that already
    /// exist for a `(sample, iteration)` pair are returned unchanged.
    pub fn enqueue(&self, selected: &[&Sample], iteration: u32) -> Result<Vec<AnnotationTask>, AnnotationError> {
        let _guard = self.lock.lock().unwrap();
        let mut file = self.read()?;
        if let Some(earlier) = file
            .tasks
            .iter()
            .filter(|t| t.iteration < iteration && t.status == TaskStatus::Pending)
            .map(|t| t.iteration)
            .min()
        {
            let pending = file
                .tasks
                .iter()
                .filter(|t| t.iteration == earlier && t.status == TaskStatus::Pending)
                .count();
            return Err(AnnotationError::PreviousUnfulfilled {
                pending_iteration: earlier,
                pending,
            });
        }
        let mut out = Vec::with_capacity(selected.len());
        let mut changed = false;
        for s in selected {
            if let Some(t) = file
                .tasks
                .iter()
                .find(|t| t.iteration == iteration && t.sample_id == s.id)
            {
                out.push(t.clone());
                continue;
            }
            let index = file.tasks.iter().filter(|t| t.iteration == iteration).count();
            let task = AnnotationTask {
                task_id: format!("i{iteration}-{index:04}"),
                sample_id: s.id.clone(),
                turns: s.turns.clone(),
                status: TaskStatus::Pending,
                submitted_summary: None,
                iteration,
                submitted_at: None,
            };
            file.tasks.push(task.clone());
            out.push(task);
            changed = true;
        }
        if changed {
            self.write(&file)?;
        }
        Ok(out)
    }

    pub fn submit(&self, task_id: &str, summary: &str) -> Result<AnnotationTask, AnnotationError> {
        if summary.trim().is_empty() {
            return Err(AnnotationError::EmptySummary);
        }
        let _guard = self.lock.lock().unwrap();
        let mut file = self.read()?;
        let task = file
            .tasks
            .iter_mut()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| AnnotationError::UnknownTask(task_id.to_string()))?;
        if task.status == TaskStatus::Submitted {
            return Err(AnnotationError::Conflict(task_id.to_string()));
        }
        task.status = TaskStatus::Submitted;
        task.submitted_summary = Some(summary.to_string());
        task.submitted_at = Some(Utc::now());
        let updated = task.clone();
        self.write(&file)?;
        Ok(updated)
    }

    pub fn get(&self, task_id: &str) -> Result<AnnotationTask, AnnotationError> {
        self.read()?
            .tasks
            .into_iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| AnnotationError::UnknownTask(task_id.to_string()))
    }

    pub fn tasks(&self) -> Result<Vec<AnnotationTask>, AnnotationError> {
        Ok(self.read()?.tasks)
    }

    pub fn pending(&self) -> Result<Vec<AnnotationTask>, AnnotationError> {
        Ok(self
            .read()?
            .tasks
            .into_iter()
            .filter(|t| t.status == TaskStatus::Pending)
            .collect())
    }

    /// Queue state for the latest iteration that has tasks.
    pub fn status(&self) -> Result<QueueStatus, AnnotationError> {
        let file = self.read()?;
        let iteration = file.tasks.iter().map(|t| t.iteration).max().unwrap_or(0);
        let pending_count = file
            .tasks
            .iter()
            .filter(|t| t.iteration == iteration && t.status == TaskStatus::Pending)
            .count();
        Ok(QueueStatus {
            iteration,
            pending_count,
            resumable: !file.tasks.is_empty() && pending_count == 0,
        })
    }

    /// Expert records for `sample_ids` at `iteration`, or `None` while any of
    /// them is still pending.
    pub fn fulfilled_records(
        &self,
        sample_ids: &[String],
        iteration: u32,
    ) -> Result<Option<Vec<LabelRecord>>, AnnotationError> {
        let file = self.read()?;
        let mut out = Vec::with_capacity(sample_ids.len());
        for id in sample_ids {
            let Some(task) = file
                .tasks
                .iter()
                .find(|t| t.iteration == iteration && &t.sample_id == id)
            else {
                return Ok(None);
            };
            match (&task.status, &task.submitted_summary) {
                (TaskStatus::Submitted, Some(summary)) => out.push(LabelRecord {
                    sample_id: id.clone(),
                    summary: summary.clone(),
                    provenance: Provenance::ExpertHuman,
                    iteration_added: iteration,
                    confidence_at_selection: None,
                }),
                _ => return Ok(None),
            }
        }
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("u{i}"),
                turns: vec![Turn {
                    speaker: Speaker::Patient,
                    text: format!("patient says {i}"),
                }],
                gold_summary: None,
            })
            .collect()
    }

    #[test]
    fn enqueue_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = TaskStore::open(dir.path(), "run");
        let s = samples(9);
        let refs: Vec<&Sample> = s.iter().collect();
        let tasks = store.enqueue(&refs, 1).unwrap();
        assert_eq!(tasks.len(), 9);
        assert!(tasks.iter().all(|t| t.status == TaskStatus::Pending));
        for t in &tasks[..4] {
            store.submit(&t.task_id, "summary").unwrap();
        }
        // a restart re-enqueues the same selection
        let again = TaskStore::open(dir.path(), "run").enqueue(&refs, 1).unwrap();
        assert_eq!(again.len(), 9);
        assert_eq!(store.tasks().unwrap().len(), 9);
        assert_eq!(store.pending().unwrap().len(), 5);
        assert!(!store.status().unwrap().resumable);
    }

    #[test]
    fn submit_rules() {
        let dir = tempfile::tempdir().unwrap();
        let store = TaskStore::open(dir.path(), "run");
        let s = samples(2);
        let t = store.enqueue(&[&s[0], &s[1]], 1).unwrap();
        assert!(matches!(store.submit(&t[0].task_id, "  "), Err(AnnotationError::EmptySummary)));
        assert!(matches!(store.submit("nope", "x"), Err(AnnotationError::UnknownTask(_))));
        store.submit(&t[0].task_id, "first").unwrap();
        assert!(matches!(store.submit(&t[0].task_id, "second"), Err(AnnotationError::Conflict(_))));
        assert_eq!(store.get(&t[0].task_id).unwrap().submitted_summary.as_deref(), Some("first"));
        assert_eq!(store.fulfilled_records(&["u0".into(), "u1".into()], 1).unwrap(), None);
        store.submit(&t[1].task_id, "Pt has fever ✓").unwrap();
        let st = store.status().unwrap();
        assert_eq!((st.iteration, st.pending_count, st.resumable), (1, 0, true));
        let recs = store.fulfilled_records(&["u0".into(), "u1".into()], 1).unwrap().unwrap();
        assert_eq!(recs[1].summary, "Pt has fever ✓");
        assert_eq!(recs[1].provenance, Provenance::ExpertHuman);
    }

    #[test]
    fn earlier_iteration_must_be_drained() {
        let dir = tempfile::tempdir().unwrap();
        let store = TaskStore::open(dir.path(), "run");
        let s = samples(2);
        store.enqueue(&[&s[0]], 1).unwrap();
        assert!(matches!(
            store.enqueue(&[&s[1]], 2),
            Err(AnnotationError::PreviousUnfulfilled { pending_iteration: 1, pending: 1 })
        ));
        assert!(store.enqueue(&[], 1).unwrap().is_empty());
        assert!(!store.status().unwrap().resumable);
    }
}
