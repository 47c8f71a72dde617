//! Grid expansion and the parallel campaign runner.
//!
//! Runs that share `(dropout, |L_0|)` have the same iteration 0, so each such
//! cell gets one baseline run that fits `L_0` once; every strategy run in the
//! cell copies that baseline's iteration 0 and only trains iterations
//! `1..=n`. A cell therefore costs `1 + combos · n` training runs, where
//! `combos` counts the (PL, HL) pairs other than (none, none).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::checkpoint::RunDir;
use super::config::{GridSpec, RunConfig};
use super::result::ResultsStore;
use super::run::{run_experiment, RunContext, RunHooks, RunOptions, RunOutcome};
use super::EngineError;
use crate::model::{AdapterError, SummaryModel};
use crate::strategies::{HlStrategy, PlStrategy, StrategySpec};

/// One model fit of the campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRun {
    /// The experiment whose checkpoint holds this fit.
    pub run_id: String,
    pub dropout: f64,
    pub l0_size: usize,
    pub pl: PlStrategy,
    pub hl: HlStrategy,
    pub iteration: u32,
}

#[derive(Debug, Clone)]
pub struct GridPlan {
    /// One metrics-only run per `(dropout, |L_0|)` cell.
    pub baselines: Vec<RunConfig>,
    /// Strategy runs with their cell's baseline run id.
    pub experiments: Vec<(RunConfig, String)>,
    pub cells: usize,
    pub combos: usize,
    pub n_iterations: u32,
}

impl GridPlan {
    /// Every distinct fit, baselines first.
    pub fn training_runs(&self) -> Vec<TrainingRun> {
        let desc = |c: &RunConfig, iteration| TrainingRun {
            run_id: c.run_id(),
            dropout: c.dropout,
            l0_size: c.l0_size,
            pl: c.strategy.pl,
            hl: c.strategy.hl,
            iteration,
        };
        let mut out: Vec<TrainingRun> = self.baselines.iter().map(|c| desc(c, 0)).collect();
        for (c, _) in &self.experiments {
            out.extend((1..=c.iterations()).map(|i| desc(c, i)));
        }
        out
    }

    pub fn runs_per_cell(&self) -> usize {
        1 + self.combos * self.n_iterations as usize
    }

    pub fn total_training_runs(&self) -> usize {
        self.cells * self.runs_per_cell()
    }

    pub fn all_configs(&self) -> impl Iterator<Item = &RunConfig> {
        self.baselines.iter().chain(self.experiments.iter().map(|(c, _)| c))
    }
}

impl fmt::Display for GridPlan {
    /// `264 training runs = 12 cells × (1 + 7 combos × 3 iterations) = 12×(1+21)`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} training runs = {} cells × (1 + {} combos × {} iterations) = {}×(1+{})",
            self.total_training_runs(),
            self.cells,
            self.combos,
            self.n_iterations,
            self.cells,
            self.runs_per_cell() - 1
        )
    }
}

fn dedup_floats(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in values {
        if !out.iter().any(|o| o.to_bits() == v.to_bits()) {
            out.push(v);
        }
    }
    out
}

fn dedup<T: Ord + Copy>(values: &[T]) -> Vec<T> {
    let mut seen = BTreeSet::new();
    values.iter().copied().filter(|v| seen.insert(*v)).collect()
}

/// Expand `spec` into baseline and strategy runs.
pub fn expand_grid(spec: &GridSpec) -> Result<GridPlan, EngineError> {
    let dropouts = dedup_floats(&spec.dropout);
    let sizes = dedup(&spec.l0_sizes);
    let pls = dedup(&spec.pl);
    let hls = dedup(&spec.hl);
    for (key, empty) in [
        ("dropout", dropouts.is_empty()),
        ("l0_sizes", sizes.is_empty()),
        ("pl", pls.is_empty()),
        ("hl", hls.is_empty()),
    ] {
        if empty {
            return Err(EngineError::Config(super::ConfigError::Invalid {
                key: key.into(),
                message: "must list at least one value".into(),
            }));
        }
    }
    let combos: Vec<(PlStrategy, HlStrategy)> = pls
        .iter()
        .flat_map(|&pl| hls.iter().map(move |&hl| (pl, hl)))
        .filter(|&(pl, hl)| pl != PlStrategy::None || hl != HlStrategy::None)
        .collect();
    if spec.n_iterations == 0 && !combos.is_empty() {
        return Err(EngineError::Config(super::ConfigError::Invalid {
            key: "n_iterations".into(),
            message: "must be > 0 when the grid has labeling strategies".into(),
        }));
    }

    let make = |dropout: f64, l0_size: usize, pl, hl| {
        let active = pl != PlStrategy::None || hl != HlStrategy::None;
        let cfg = RunConfig {
            run_id: None,
            l0_size,
            dropout,
            strategy: StrategySpec {
                pl,
                hl,
                pl_fraction: spec.pl_fraction,
                hl_fraction: spec.hl_fraction,
            },
            n_iterations: Some(if active { spec.n_iterations } else { 0 }),
            seed: spec.seed,
            score_normalization: spec.score_normalization,
            hl_mode: if hl == HlStrategy::None {
                Default::default()
            } else {
                spec.hl_mode
            },
            training: spec.training.clone(),
            adapter: spec.adapter.clone(),
            data: spec.data.clone(),
        };
        cfg.validate().map(|_| cfg).map_err(EngineError::from)
    };

    let mut baselines = Vec::new();
    let mut experiments = Vec::new();
    for &d in &dropouts {
        for &l0 in &sizes {
            let base = make(d, l0, PlStrategy::None, HlStrategy::None)?;
            let base_id = base.run_id();
            baselines.push(base);
            for &(pl, hl) in &combos {
                experiments.push((make(d, l0, pl, hl)?, base_id.clone()));
            }
        }
    }
    Ok(GridPlan {
        cells: baselines.len(),
        baselines,
        experiments,
        combos: combos.len(),
        n_iterations: if combos.is_empty() { 0 } else { spec.n_iterations },
    })
}

/// Builds one adapter per worker.
pub type ModelFactory<'a> = dyn Fn(&RunConfig) -> Result<Box<dyn SummaryModel>, AdapterError> + Sync + 'a;

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct GridOutcome {
    pub completed: usize,
    pub skipped: usize,
    pub suspended: Vec<String>,
}

struct Job {
    config: RunConfig,
    opts: RunOptions,
}

/// Execute every run in `plan` not yet in `store`, on `workers` threads.
/// Baselines go first so strategy runs can reuse their iteration 0.
pub fn run_grid(
    plan: &GridPlan,
    ctx: RunContext<'_>,
    store: &ResultsStore,
    workers: usize,
    factory: &ModelFactory<'_>,
    hooks: &dyn RunHooks,
) -> Result<GridOutcome, EngineError> {
    let needs_scores: BTreeSet<&str> = plan.experiments.iter().map(|(_, b)| b.as_str()).collect();
    let mut outcome = GridOutcome::default();

    let phase = |jobs: Vec<Job>, outcome: &mut GridOutcome| -> Result<(), EngineError> {
        let (todo, done): (Vec<Job>, Vec<Job>) = jobs.into_iter().partition(|j| !store.contains(&j.config.run_id()));
        outcome.skipped += done.len();
        let results = run_jobs(todo, ctx, store, workers, factory, hooks)?;
        for r in results {
            match r {
                RunOutcome::Completed(_) => outcome.completed += 1,
                RunOutcome::Suspended { run_id, .. } => outcome.suspended.push(run_id),
            }
        }
        Ok(())
    };

    let baselines = plan
        .baselines
        .iter()
        .map(|c| Job {
            opts: RunOptions {
                score_unlabeled: needs_scores.contains(c.run_id().as_str()),
                reuse_iteration0: None,
            },
            config: c.clone(),
        })
        .collect();
    phase(baselines, &mut outcome)?;

    let experiments = plan
        .experiments
        .iter()
        .map(|(c, base)| Job {
            opts: RunOptions {
                score_unlabeled: false,
                reuse_iteration0: Some(RunDir::new(ctx.runs_root, base).path().to_path_buf()),
            },
            config: c.clone(),
        })
        .collect();
    phase(experiments, &mut outcome)?;
    outcome.suspended.sort();
    Ok(outcome)
}

fn run_jobs(
    jobs: Vec<Job>,
    ctx: RunContext<'_>,
    store: &ResultsStore,
    workers: usize,
    factory: &ModelFactory<'_>,
    hooks: &dyn RunHooks,
) -> Result<Vec<RunOutcome>, EngineError> {
    let n_jobs = jobs.len();
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<VecDeque<_>>());
    let failed = AtomicBool::new(false);
    let results: Mutex<BTreeMap<usize, RunOutcome>> = Mutex::new(BTreeMap::new());
    let first_error: Mutex<Option<EngineError>> = Mutex::new(None);
    let fail = |e: EngineError| {
        failed.store(true, Ordering::SeqCst);
        first_error.lock().unwrap().get_or_insert(e);
    };

    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n_jobs.max(1)) {
            s.spawn(|| {
                let mut model: Option<Box<dyn SummaryModel>> = None;
                while !failed.load(Ordering::SeqCst) {
                    let Some((idx, job)) = queue.lock().unwrap().pop_front() else {
                        break;
                    };
                    let run_id = job.config.run_id();
                    if model.is_none() {
                        match factory(&job.config) {
                            Ok(m) => model = Some(m),
                            Err(source) => {
                                fail(EngineError::Adapter {
                                    run_id,
                                    iteration: 0,
                                    source,
                                });
                                break;
                            }
                        }
                    }
                    let m = model.as_mut().expect("model built above");
                    match run_experiment(&job.config, ctx, m.as_mut(), &job.opts, hooks) {
                        Ok(out) => {
                            if let RunOutcome::Completed(rec) = &out {
                                if let Err(e) = store.append(rec) {
                                    fail(e);
                                    break;
                                }
                                log::info!("completed {run_id}");
                            }
                            results.lock().unwrap().insert(idx, out);
                        }
                        Err(e) => {
                            fail(e);
                            break;
                        }
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(results.into_inner().unwrap().into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(extra: &str) -> GridSpec {
        GridSpec::from_toml_str(
            &format!(
                "{extra}\n[adapter]\nkind = \"oracle_noise\"\n[data]\ncorpus = \"c\"\ntest = \"t\"\n"
            ),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn full_grid_is_264() {
        let plan = expand_grid(&spec("")).unwrap();
        assert_eq!(plan.training_runs().len(), 264);
        assert_eq!(plan.total_training_runs(), 264);
        assert_eq!((plan.cells, plan.combos, plan.n_iterations), (12, 7, 3));
        assert_eq!(plan.baselines.len() + plan.experiments.len(), 12 * 8);
        let ids: BTreeSet<String> = plan.all_configs().map(|c| c.run_id()).collect();
        assert_eq!(ids.len(), 96);
    }

    #[test]
    fn baseline_only_grid() {
        let plan = expand_grid(&spec("pl = [\"none\"]\nhl = [\"none\"]")).unwrap();
        assert_eq!(plan.training_runs().len(), 12);
        assert!(plan.experiments.is_empty());
    }

    #[test]
    fn single_cell_bottom_only() {
        let plan = expand_grid(&spec("dropout = [0.1]\nl0_sizes = [100]\npl = [\"none\"]\nhl = [\"bottom\"]")).unwrap();
        assert_eq!(plan.training_runs().len(), 4);
        let plan = expand_grid(&spec("dropout = [0.1]\nl0_sizes = [100]\nhl = [\"bottom\"]")).unwrap();
        // (none, bottom), (top, bottom)
        assert_eq!(plan.training_runs().len(), 1 + 2 * 3);
    }

    #[test]
    fn unknown_variant_is_rejected() {
        let err = GridSpec::from_toml_str(
            "hl = [\"sideways\"]\n[adapter]\nkind = \"oracle_noise\"\n[data]\ncorpus = \"c\"\ntest = \"t\"\n",
            "t",
        )
        .unwrap_err();
        assert!(err.to_string().contains("sideways"));
    }
}
