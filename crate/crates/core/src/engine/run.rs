//! One labeling experiment, iteration by iteration.
//!
//! Iteration `i` takes the predictions the model fitted on `L_{i-1}` made over
//! `U_{i-1}`, moves the pseudo-labeled and expert-labeled picks into the
//! labeled set, fits on `L_i`, scores the held-out test set and, unless this
//! was the last iteration, predicts over `U_i` for the next selection.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;

use super::checkpoint::{AwaitingLabels, IterationCheckpoint, IterationInfo, RunDir};
use super::config::{HlMode, RunConfig};
use super::result::{ExperimentResult, IterationRecord, PhaseTimings, ResultRecord};
use super::EngineError;
use crate::annotation::TaskStore;
use crate::corpus::{split_pools, Corpus, LabelRecord, PoolState, Provenance};
use crate::metrics::{Evaluator, MetricsReport};
use crate::model::{AdapterError, ModelHandle, Prediction, SummaryModel};
use crate::rng::derive_seed;
use crate::strategies::{select_clamped, Budgets, ScoreTable, SelectionKind};

/// Shared, read-only inputs of a run.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub corpus: &'a Corpus,
    pub test_set: &'a Corpus,
    pub evaluator: &'a Evaluator,
    pub runs_root: &'a Path,
}

/// Observation points for callers, e.g. progress output or fault injection.
pub trait RunHooks: Sync {
    fn checkpoint_written(&self, _run_id: &str, _iteration: u32) {}
}

pub struct NoHooks;

impl RunHooks for NoHooks {}

#[derive(Default, Clone)]
pub struct RunOptions {
    /// Also predict over `U_0` when the run has no labeling iterations, so
    /// strategy runs sharing this baseline can reuse its iteration 0.
    pub score_unlabeled: bool,
    /// Run directory whose iteration 0 stands in for this run's.
    pub reuse_iteration0: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum RunOutcome {
    Completed(Box<ResultRecord>),
    /// Waiting on `pending` expert labels for `iteration`.
    Suspended {
        run_id: String,
        iteration: u32,
        pending: usize,
    },
}

/// `L_0`, `U_0` and the fixed budgets of a config.
pub fn initial_pool(config: &RunConfig, corpus: &Corpus) -> Result<(PoolState, Budgets), EngineError> {
    let pool = split_pools(corpus, config.l0_size, config.seed)?;
    let budgets = config.strategy.budgets(pool.unlabeled_len());
    Ok((pool, budgets))
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn check_disjoint(corpus: &Corpus, test_set: &Corpus) -> Result<(), EngineError> {
    if let Some(id) = test_set.ids().find(|id| corpus.contains(id)) {
        return Err(EngineError::Overlap(id.to_string()));
    }
    Ok(())
}

struct Runner<'a> {
    config: &'a RunConfig,
    ctx: RunContext<'a>,
    model: &'a mut dyn SummaryModel,
    run_id: String,
    dir: RunDir,
    budgets: Budgets,
}

impl Runner<'_> {
    fn adapter(&self, iteration: u32) -> impl Fn(AdapterError) -> EngineError {
        let run_id = self.run_id.clone();
        move |source| EngineError::Adapter {
            run_id: run_id.clone(),
            iteration,
            source,
        }
    }

    /// Fit on the pool's labeled set, evaluate on the test set and, when
    /// `score_pool`, predict over the pool's unlabeled set.
    fn fit_and_score(
        &mut self,
        pool: &PoolState,
        score_pool: bool,
        timings: &mut PhaseTimings,
    ) -> Result<(MetricsReport, Option<Vec<Prediction>>), EngineError> {
        let i = pool.iteration();
        let labeled = pool.labeled_pairs(self.ctx.corpus)?;
        let t = Instant::now();
        let fit_id = format!("{}/iter{i}", self.run_id);
        let handle: ModelHandle = self
            .model
            .fit(&fit_id, self.config.seed, &labeled, &self.config.hyperparams())
            .map_err(self.adapter(i))?;
        timings.fit_ms = ms_since(t);

        let t = Instant::now();
        let test: Vec<_> = self.ctx.test_set.samples().iter().collect();
        let test_preds = self.model.predict(&handle, &test).map_err(self.adapter(i))?;
        let metrics = self.ctx.evaluator.evaluate(
            test_preds.iter().map(|p| (p.sample_id.as_str(), p.summary.as_str())),
            self.ctx.test_set,
        )?;
        timings.eval_ms = ms_since(t);

        let scores = if score_pool {
            let t = Instant::now();
            let unlabeled = pool.unlabeled_samples(self.ctx.corpus)?;
            let preds = self.model.predict(&handle, &unlabeled).map_err(self.adapter(i))?;
            timings.predict_ms = ms_since(t);
            Some(preds)
        } else {
            None
        };
        Ok((metrics, scores))
    }

    fn iteration0(&mut self, pool: PoolState, opts: &RunOptions, n: u32) -> Result<IterationCheckpoint, EngineError> {
        let want_scores = n > 0 || opts.score_unlabeled;
        if let Some(src) = &opts.reuse_iteration0 {
            match RunDir::at(src.clone()).read_iteration(0) {
                Ok(cp) if cp.pool == pool && (cp.scores.is_some() || !want_scores) => {
                    let mut info = cp.info.clone();
                    info.reused_from = Some(src.file_name().unwrap_or_default().to_string_lossy().into_owned());
                    return Ok(IterationCheckpoint {
                        scores: if want_scores { cp.scores } else { None },
                        info,
                        ..cp
                    });
                }
                Ok(_) => log::warn!(
                    "{}: iteration 0 of {} does not match this run; fitting again",
                    self.run_id,
                    src.display()
                ),
                Err(e) => log::warn!("{}: cannot reuse iteration 0 ({e}); fitting again", self.run_id),
            }
        }
        let mut timings = PhaseTimings::default();
        let (metrics, scores) = self.fit_and_score(&pool, want_scores, &mut timings)?;
        Ok(IterationCheckpoint {
            info: IterationInfo {
                record: IterationRecord {
                    iteration: 0,
                    n_train_points: pool.labeled_len(),
                    n_unlabeled: pool.unlabeled_len(),
                    added_pseudo: 0,
                    added_expert: 0,
                    metrics: metrics.summary(),
                },
                timings,
                reused_from: None,
            },
            pool,
            metrics,
            scores,
        })
    }

    /// Choose `P_i` and the `E_i` ids from the previous model's predictions.
    fn select(&self, i: u32, scores: &[Prediction]) -> Result<AwaitingLabels, EngineError> {
        let t = Instant::now();
        let table = ScoreTable::from_predictions(scores, self.config.score_normalization)?;
        let strategy = &self.config.strategy;
        let pl_ids = select_clamped(
            SelectionKind::from(strategy.pl),
            &table,
            self.budgets.b_pseudo,
            derive_seed(self.config.seed, &format!("pl/{i}")),
        );
        let pseudo: Vec<LabelRecord> = pl_ids
            .iter()
            .map(|id| {
                let p = scores.iter().find(|p| &p.sample_id == id).expect("selected id was scored");
                LabelRecord {
                    sample_id: id.clone(),
                    summary: p.summary.clone(),
                    provenance: Provenance::PseudoModel,
                    iteration_added: i,
                    confidence_at_selection: Some(p.log_likelihood),
                }
            })
            .collect();
        let taken: BTreeSet<String> = pl_ids.into_iter().collect();
        let remaining = table.without(&taken);
        let expert_ids = select_clamped(
            SelectionKind::from(strategy.hl),
            &remaining,
            self.budgets.b_expert,
            derive_seed(self.config.seed, &format!("hl/{i}")),
        );
        Ok(AwaitingLabels {
            iteration: i,
            pseudo,
            expert_ids,
            select_ms: ms_since(t),
        })
    }

    /// Expert records for the selection, or `None` while annotators still
    /// owe labels.
    fn expert_records(&self, pool: &PoolState, sel: &AwaitingLabels) -> Result<Option<Vec<LabelRecord>>, EngineError> {
        let i = sel.iteration;
        match self.config.hl_mode {
            HlMode::SimulatedOracle => Ok(Some(pool.reveal_gold(
                self.ctx.corpus,
                sel.expert_ids.iter().map(String::as_str),
                i,
            )?)),
            HlMode::LiveHuman => {
                let store = TaskStore::open(self.dir.path(), &self.run_id);
                let samples = sel
                    .expert_ids
                    .iter()
                    .map(|id| self.ctx.corpus.require(id))
                    .collect::<Result<Vec<_>, _>>()?;
                store.enqueue(&samples, i)?;
                Ok(store.fulfilled_records(&sel.expert_ids, i)?)
            }
        }
    }
}

/// Run `config` to completion or until it waits on annotators, resuming
/// from whatever checkpoints exist under `ctx.runs_root`.
pub fn run_experiment(
    config: &RunConfig,
    ctx: RunContext<'_>,
    model: &mut dyn SummaryModel,
    opts: &RunOptions,
    hooks: &dyn RunHooks,
) -> Result<RunOutcome, EngineError> {
    config.validate()?;
    check_disjoint(ctx.corpus, ctx.test_set)?;
    let run_id = config.run_id();
    let dir = RunDir::new(ctx.runs_root, &run_id);
    let meta = dir.init(&run_id, config)?;
    let (pool0, budgets) = initial_pool(config, ctx.corpus)?;
    let n = config.iterations();
    let mut runner = Runner {
        config,
        ctx,
        model,
        run_id: run_id.clone(),
        dir,
        budgets,
    };

    let done = runner.dir.completed_iterations().min(n + 1);
    let mut infos: Vec<IterationInfo> = Vec::with_capacity(n as usize + 1);
    for i in 0..done {
        infos.push(runner.dir.read_iteration(i)?.info);
    }
    let mut last = if done == 0 {
        let cp = runner.iteration0(pool0, opts, n)?;
        runner.dir.write_iteration(0, &cp)?;
        hooks.checkpoint_written(&run_id, 0);
        infos.push(cp.info.clone());
        cp
    } else {
        let cp = runner.dir.read_iteration(done - 1)?;
        if done == 1 && cp.pool != pool0 {
            return Err(EngineError::Checkpoint {
                path: runner.dir.iter_dir(0).display().to_string(),
                message: "stored L_0 does not match the configured split".into(),
            });
        }
        cp
    };

    for i in infos.len() as u32..=n {
        let scores = last.scores.as_deref().ok_or_else(|| EngineError::Checkpoint {
            path: runner.dir.iter_dir(i - 1).display().to_string(),
            message: "missing unlabeled-pool predictions".into(),
        })?;
        let sel = match runner.dir.awaiting()? {
            Some(a) if a.iteration == i => a,
            _ => runner.select(i, scores)?,
        };
        let Some(expert) = runner.expert_records(&last.pool, &sel)? else {
            runner.dir.write_awaiting(&sel)?;
            let pending = sel.expert_ids.len()
                - TaskStore::open(runner.dir.path(), &run_id)
                    .tasks()?
                    .iter()
                    .filter(|t| t.iteration == i && t.submitted_summary.is_some())
                    .count();
            return Ok(RunOutcome::Suspended {
                run_id,
                iteration: i,
                pending,
            });
        };
        let mut pool = last.pool.clone();
        let (added_pseudo, added_expert) = (sel.pseudo.len(), expert.len());
        let mut records = sel.pseudo.clone();
        records.extend(expert);
        pool.commit(records, i)?;

        let mut timings = PhaseTimings {
            select_ms: sel.select_ms,
            ..Default::default()
        };
        let (metrics, scores) = runner.fit_and_score(&pool, i < n, &mut timings)?;
        let cp = IterationCheckpoint {
            info: IterationInfo {
                record: IterationRecord {
                    iteration: i,
                    n_train_points: pool.labeled_len(),
                    n_unlabeled: pool.unlabeled_len(),
                    added_pseudo,
                    added_expert,
                    metrics: metrics.summary(),
                },
                timings,
                reused_from: None,
            },
            pool,
            metrics,
            scores,
        };
        runner.dir.write_iteration(i, &cp)?;
        runner.dir.clear_awaiting()?;
        hooks.checkpoint_written(&run_id, i);
        infos.push(cp.info.clone());
        last = cp;
    }

    Ok(RunOutcome::Completed(Box::new(ResultRecord {
        result: ExperimentResult {
            run_id,
            config: config.clone(),
            budgets,
            per_iteration: infos.iter().map(|i| i.record.clone()).collect(),
        },
        timings: infos.iter().map(|i| i.timings).collect(),
        started_at: meta.started_at,
        finished_at: Utc::now(),
    })))
}
