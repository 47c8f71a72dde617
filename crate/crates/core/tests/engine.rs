use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use sumloop::annotation::TaskStore;
use sumloop::corpus::{Corpus, LabelRecord, PoolState, Provenance, Sample};
use sumloop::engine::checkpoint::RunDir;
use sumloop::engine::report::{report_best_dropout, BestRule};
use sumloop::engine::result::results_csv;
use sumloop::engine::{
    expand_grid, run_experiment, run_grid, DataConfig, ExperimentResult, GridSpec, HlMode, NoHooks, ResultsStore,
    RunConfig, RunContext, RunHooks, RunOptions, RunOutcome,
};
use sumloop::metrics::Evaluator;
use sumloop::model::{AdapterError, AdapterSpec, ModelHandle, ModelHyperparams, OracleNoise, Prediction, SummaryModel};
use sumloop::strategies::{HlStrategy, PlStrategy, StrategySpec};
use sumloop::synth::{generate, SynthOptions};

fn corpora(pool: usize, test: usize) -> (Corpus, Corpus) {
    let mut p = SynthOptions::new(pool, 11);
    p.id_prefix = "p".into();
    let mut t = SynthOptions::new(test, 12);
    t.id_prefix = "t".into();
    (generate(&p), generate(&t))
}

fn config(l0: usize, pl: PlStrategy, hl: HlStrategy, n: u32) -> RunConfig {
    RunConfig {
        run_id: None,
        l0_size: l0,
        dropout: 0.1,
        strategy: StrategySpec {
            pl,
            hl,
            ..Default::default()
        },
        n_iterations: Some(n),
        seed: 7,
        score_normalization: Default::default(),
        hl_mode: HlMode::SimulatedOracle,
        training: Default::default(),
        adapter: AdapterSpec::OracleNoise {
            noise: 0.3,
            skill_c: Some(200.0),
        },
        data: DataConfig {
            corpus: "unused".into(),
            test: "unused".into(),
            lexicon: None,
            negex: None,
            scope_window: 5,
            aggregation: Default::default(),
            reference_source: Default::default(),
        },
    }
}

fn run(cfg: &RunConfig, corpus: &Corpus, test: &Corpus, root: &Path) -> ExperimentResult {
    let ev = Evaluator::builtin();
    let ctx = RunContext {
        corpus,
        test_set: test,
        evaluator: &ev,
        runs_root: root,
    };
    let mut model = cfg.adapter.build().unwrap();
    match run_experiment(cfg, ctx, model.as_mut(), &RunOptions::default(), &NoHooks).unwrap() {
        RunOutcome::Completed(r) => r.result,
        other => panic!("{other:?}"),
    }
}

fn pools(root: &Path, run_id: &str, n: u32) -> Vec<PoolState> {
    let dir = RunDir::new(root, run_id);
    (0..=n).map(|i| dir.read_iteration(i).unwrap().pool).collect()
}

#[test]
fn bookkeeping_on_eighteen_per_iteration() {
    // 1000 pool samples: |L_0| = 100, |U_0| = 900, budgets 9 + 9
    let (corpus, test) = corpora(1000, 100);
    let root = tempfile::tempdir().unwrap();
    let cfg = config(100, PlStrategy::Top, HlStrategy::Random, 3);
    let res = run(&cfg, &corpus, &test, root.path());
    assert_eq!((res.budgets.b_pseudo, res.budgets.b_expert), (9, 9));
    assert_eq!(res.per_iteration.len(), 4);
    let ps = pools(root.path(), &res.run_id, 3);
    let universe = ps[0].universe();
    let mut seen: BTreeSet<String> = ps[0].labeled().keys().cloned().collect();
    for i in 1..=3 {
        let (prev, cur) = (&ps[i - 1], &ps[i]);
        assert_eq!(cur.labeled_len() - prev.labeled_len(), 18);
        assert_eq!(cur.unlabeled_len(), prev.unlabeled_len() - 18);
        assert!(cur.labeled().keys().all(|k| !cur.unlabeled().contains(k)));
        assert_eq!(cur.universe(), universe);
        let added: Vec<&LabelRecord> = cur.labeled().values().filter(|r| r.iteration_added == i as u32).collect();
        assert_eq!(added.len(), 18);
        for r in &added {
            assert!(seen.insert(r.sample_id.clone()), "{} selected twice", r.sample_id);
        }
        assert_eq!(added.iter().filter(|r| r.provenance == Provenance::PseudoModel).count(), 9);
        let rec = &res.per_iteration[i];
        assert_eq!(rec.n_train_points, cur.labeled_len());
        assert_eq!(rec.n_train_points, res.per_iteration[i - 1].n_train_points + rec.added_pseudo + rec.added_expert);
    }
}

#[test]
fn baseline_has_one_entry_and_pool_is_unchanged() {
    let (corpus, test) = corpora(300, 40);
    let root = tempfile::tempdir().unwrap();
    let res = run(&config(100, PlStrategy::None, HlStrategy::None, 0), &corpus, &test, root.path());
    assert_eq!(res.per_iteration.len(), 1);
    assert_eq!(res.per_iteration[0].n_train_points, 100);
    assert_eq!(res.per_iteration[0].n_unlabeled, 200);
}

#[test]
fn pseudo_only_adds_twenty_seven() {
    let (corpus, test) = corpora(1000, 40);
    let root = tempfile::tempdir().unwrap();
    let res = run(&config(100, PlStrategy::Top, HlStrategy::None, 3), &corpus, &test, root.path());
    assert_eq!(res.per_iteration[3].n_train_points, 127);
    assert!(res.per_iteration[1..].iter().all(|r| r.added_expert == 0 && r.added_pseudo == 9));
}

#[test]
fn noiseless_oracle_pseudo_labels_equal_gold() {
    let (corpus, test) = corpora(400, 20);
    let root = tempfile::tempdir().unwrap();
    let mut cfg = config(100, PlStrategy::Top, HlStrategy::Bottom, 2);
    cfg.adapter = AdapterSpec::OracleNoise {
        noise: 0.0,
        skill_c: None,
    };
    let res = run(&cfg, &corpus, &test, root.path());
    let last = &pools(root.path(), &res.run_id, 2)[2];
    let pseudo: Vec<_> = last.labeled().values().filter(|r| r.provenance == Provenance::PseudoModel).collect();
    assert_eq!(pseudo.len(), 6);
    for r in pseudo {
        assert_eq!(Some(r.summary.as_str()), corpus.get(&r.sample_id).unwrap().gold_summary.as_deref());
    }
}

#[test]
fn rerun_is_identical() {
    let (corpus, test) = corpora(500, 30);
    let cfg = config(100, PlStrategy::Top, HlStrategy::Random, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = serde_json::to_string(&run(&cfg, &corpus, &test, a.path())).unwrap();
    let rb = serde_json::to_string(&run(&cfg, &corpus, &test, b.path())).unwrap();
    assert_eq!(ra, rb);
    // a finished run re-invoked returns the stored result without refitting
    assert_eq!(serde_json::to_string(&run(&cfg, &corpus, &test, a.path())).unwrap(), ra);
}

struct AbortAfter(usize, AtomicUsize);

impl RunHooks for AbortAfter {
    fn checkpoint_written(&self, _run_id: &str, _iteration: u32) {
        if self.1.fetch_add(1, Ordering::SeqCst) + 1 == self.0 {
            panic!("simulated crash");
        }
    }
}

#[test]
fn resume_after_crash_matches_uninterrupted_run() {
    let (corpus, test) = corpora(500, 30);
    let cfg = config(100, PlStrategy::Top, HlStrategy::Middle, 3);
    let clean = tempfile::tempdir().unwrap();
    let expected = run(&cfg, &corpus, &test, clean.path());

    let crashed = tempfile::tempdir().unwrap();
    let ev = Evaluator::builtin();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: crashed.path(),
    };
    let hooks = AbortAfter(2, AtomicUsize::new(0));
    let mut model = cfg.adapter.build().unwrap();
    let r = catch_unwind(AssertUnwindSafe(|| {
        run_experiment(&cfg, ctx, model.as_mut(), &RunOptions::default(), &hooks)
    }));
    assert!(r.is_err());
    assert_eq!(RunDir::new(crashed.path(), &cfg.run_id()).completed_iterations(), 2);
    assert_eq!(run(&cfg, &corpus, &test, crashed.path()), expected);
}

#[test]
fn changed_config_under_same_run_id_is_rejected() {
    let (corpus, test) = corpora(300, 20);
    let root = tempfile::tempdir().unwrap();
    let mut cfg = config(100, PlStrategy::Top, HlStrategy::None, 1);
    cfg.run_id = Some("fixed".into());
    run(&cfg, &corpus, &test, root.path());
    cfg.seed = 8;
    let ev = Evaluator::builtin();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: root.path(),
    };
    let mut model = cfg.adapter.build().unwrap();
    let err = run_experiment(&cfg, ctx, model.as_mut(), &RunOptions::default(), &NoHooks).unwrap_err();
    assert!(err.to_string().contains("different config"), "{err}");
}

#[test]
fn overlapping_test_set_is_rejected() {
    let (corpus, _) = corpora(300, 20);
    let test = Corpus::from_samples(corpus.samples()[..5].to_vec()).unwrap();
    let root = tempfile::tempdir().unwrap();
    let cfg = config(100, PlStrategy::None, HlStrategy::None, 0);
    let ev = Evaluator::builtin();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: root.path(),
    };
    let mut model = cfg.adapter.build().unwrap();
    assert!(run_experiment(&cfg, ctx, model.as_mut(), &RunOptions::default(), &NoHooks).is_err());
}

#[test]
fn live_human_mode_suspends_until_tasks_are_submitted() {
    let (corpus, test) = corpora(400, 20);
    let root = tempfile::tempdir().unwrap();
    let mut cfg = config(100, PlStrategy::None, HlStrategy::Random, 2);
    cfg.strategy.hl_fraction = 0.01; // 3 of 300
    cfg.hl_mode = HlMode::LiveHuman;
    let ev = Evaluator::builtin();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: root.path(),
    };
    let go = || {
        let mut model = cfg.adapter.build().unwrap();
        run_experiment(&cfg, ctx, model.as_mut(), &RunOptions::default(), &NoHooks).unwrap()
    };
    let run_id = cfg.run_id();
    let store = TaskStore::open(&root.path().join(&run_id), &run_id);

    let RunOutcome::Suspended { iteration, pending, .. } = go() else {
        panic!("expected suspension")
    };
    assert_eq!((iteration, pending), (1, 3));
    // resuming without labels stays suspended and does not duplicate tasks
    assert!(matches!(go(), RunOutcome::Suspended { pending: 3, .. }));
    let tasks = store.pending().unwrap();
    assert_eq!(tasks.len(), 3);

    let texts = ["Fiebre y tos ✓", "  leading space kept", "line one\nline two"];
    for (t, text) in tasks.iter().zip(texts) {
        store.submit(&t.task_id, text).unwrap();
    }
    assert!(store.status().unwrap().resumable);
    assert!(matches!(go(), RunOutcome::Suspended { iteration: 2, pending: 3, .. }));
    let pool = RunDir::new(root.path(), &run_id).read_iteration(1).unwrap().pool;
    for (t, text) in tasks.iter().zip(texts) {
        let rec = &pool.labeled()[&t.sample_id];
        assert_eq!(rec.summary, text);
        assert_eq!(rec.provenance, Provenance::ExpertHuman);
    }
    for t in store.pending().unwrap() {
        store.submit(&t.task_id, "done").unwrap();
    }
    let RunOutcome::Completed(rec) = go() else {
        panic!("expected completion")
    };
    assert_eq!(rec.result.per_iteration[2].n_train_points, 106);
}

/// Counts fits and delegates to an oracle.
struct Counting(OracleNoise, Arc<AtomicUsize>);

impl SummaryModel for Counting {
    fn kind(&self) -> sumloop::model::AdapterKind {
        self.0.kind()
    }
    fn fit(
        &mut self,
        run_id: &str,
        seed: u64,
        labeled: &[(&Sample, &LabelRecord)],
        hp: &ModelHyperparams,
    ) -> Result<ModelHandle, AdapterError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        self.0.fit(run_id, seed, labeled, hp)
    }
    fn predict(&mut self, handle: &ModelHandle, samples: &[&Sample]) -> Result<Vec<Prediction>, AdapterError> {
        self.0.predict(handle, samples)
    }
}

fn small_grid() -> GridSpec {
    GridSpec::from_toml_str(
        r#"
dropout = [0.1, 0.5]
l0_sizes = [50, 100]
hl = ["none", "bottom", "random"]
n_iterations = 2
seed = 3
[adapter]
kind = "oracle_noise"
noise = 0.5
skill_c = 100.0
[data]
corpus = "unused"
test = "unused"
"#,
        "grid",
    )
    .unwrap()
}

#[test]
fn grid_fits_each_training_run_once_and_resumes() {
    let (corpus, test) = corpora(400, 30);
    let plan = expand_grid(&small_grid()).unwrap();
    // 4 cells × (1 + 5 combos × 2)
    assert_eq!(plan.total_training_runs(), 44);
    let ev = Evaluator::builtin();
    let root = tempfile::tempdir().unwrap();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: root.path(),
    };
    let fits = Arc::new(AtomicUsize::new(0));
    let factory = |_: &RunConfig| -> Result<Box<dyn SummaryModel>, AdapterError> {
        Ok(Box::new(Counting(OracleNoise::new(0.5, Some(100.0)), Arc::clone(&fits))))
    };
    let store = ResultsStore::open(root.path()).unwrap();
    let out = run_grid(&plan, ctx, &store, 3, &factory, &NoHooks).unwrap();
    assert_eq!(out.completed, 4 + 20);
    assert_eq!(fits.load(Ordering::SeqCst), 44);

    let again = run_grid(&plan, ctx, &store, 3, &factory, &NoHooks).unwrap();
    assert_eq!((again.completed, again.skipped), (0, 24));
    assert_eq!(fits.load(Ordering::SeqCst), 44);
    assert_eq!(store.records().unwrap().len(), 24);

    // strategy runs report the baseline's iteration 0
    let results: Vec<ExperimentResult> = store.records().unwrap().into_iter().map(|r| r.result).collect();
    for r in &results {
        let base = results
            .iter()
            .find(|b| {
                b.config.strategy.pl == PlStrategy::None
                    && b.config.strategy.hl == HlStrategy::None
                    && b.config.dropout == r.config.dropout
                    && b.config.l0_size == r.config.l0_size
            })
            .unwrap();
        assert_eq!(r.per_iteration[0], base.per_iteration[0]);
    }
    let csv = String::from_utf8(results_csv(&results).unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 20 * 3);
}

#[test]
fn grid_crash_leaves_no_duplicates() {
    let (corpus, test) = corpora(400, 30);
    let plan = expand_grid(&small_grid()).unwrap();
    let ev = Evaluator::builtin();
    let factory = |c: &RunConfig| c.adapter.build();

    let clean = tempfile::tempdir().unwrap();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: clean.path(),
    };
    let store = ResultsStore::open(clean.path()).unwrap();
    run_grid(&plan, ctx, &store, 2, &factory, &NoHooks).unwrap();
    let expected = std::fs::read(store.write_csv().unwrap()).unwrap();

    let crashed = tempfile::tempdir().unwrap();
    let ctx = RunContext {
        runs_root: crashed.path(),
        ..ctx
    };
    {
        let store = ResultsStore::open(crashed.path()).unwrap();
        let hooks = AbortAfter(17, AtomicUsize::new(0));
        let r = catch_unwind(AssertUnwindSafe(|| run_grid(&plan, ctx, &store, 1, &factory, &hooks)));
        assert!(r.is_err());
        assert!(store.records().unwrap().len() < 24);
    }
    // a torn final line from the crash is dropped on reopen
    let results = crashed.path().join("results.jsonl");
    let mut bytes = std::fs::read(&results).unwrap();
    bytes.extend_from_slice(b"{\"result\":{\"run_id\":\"torn");
    std::fs::write(&results, bytes).unwrap();

    let store = ResultsStore::open(crashed.path()).unwrap();
    run_grid(&plan, ctx, &store, 2, &factory, &NoHooks).unwrap();
    let ids: Vec<String> = store.records().unwrap().into_iter().map(|r| r.result.run_id).collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    assert_eq!((ids.len(), unique.len()), (24, 24));
    assert_eq!(std::fs::read(store.write_csv().unwrap()).unwrap(), expected);
}

/// Dropout 0.1 emits only the gold concepts (high concept F1, low ROUGE);
/// dropout 0.5 emits the gold text with its first half dropped.
struct DropoutDependent {
    dropout: f64,
    handle: Option<ModelHandle>,
}

impl SummaryModel for DropoutDependent {
    fn kind(&self) -> sumloop::model::AdapterKind {
        sumloop::model::AdapterKind::OracleNoise
    }
    fn fit(
        &mut self,
        run_id: &str,
        seed: u64,
        labeled: &[(&Sample, &LabelRecord)],
        hp: &ModelHyperparams,
    ) -> Result<ModelHandle, AdapterError> {
        self.dropout = hp.dropout;
        let h = OracleNoise::new(0.0, None).fit(run_id, seed, labeled, hp)?;
        self.handle = Some(h.clone());
        Ok(h)
    }
    fn predict(&mut self, _handle: &ModelHandle, samples: &[&Sample]) -> Result<Vec<Prediction>, AdapterError> {
        let lex = sumloop::metrics::ConceptLexicon::builtin();
        Ok(samples
            .iter()
            .map(|s| {
                let gold = s.gold_summary.clone().unwrap();
                let summary = if self.dropout < 0.3 {
                    sumloop::metrics::extract_concepts(&gold, &lex).into_iter().collect::<Vec<_>>().join(" ")
                } else {
                    let toks: Vec<&str> = gold.split_whitespace().collect();
                    toks[toks.len() / 2..].join(" ")
                };
                Prediction {
                    sample_id: s.id.clone(),
                    summary: if summary.is_empty() { "none".into() } else { summary },
                    log_likelihood: -1.0,
                    token_count: 1,
                }
            })
            .collect())
    }
}

#[test]
fn best_run_rule_keeps_one_runs_metrics() {
    let (corpus, test) = corpora(300, 40);
    let ev = Evaluator::builtin();
    let root = tempfile::tempdir().unwrap();
    let ctx = RunContext {
        corpus: &corpus,
        test_set: &test,
        evaluator: &ev,
        runs_root: root.path(),
    };
    let mut results = Vec::new();
    for d in [0.1, 0.5] {
        let mut cfg = config(100, PlStrategy::None, HlStrategy::None, 0);
        cfg.dropout = d;
        let mut m = DropoutDependent {
            dropout: 0.0,
            handle: None,
        };
        match run_experiment(&cfg, ctx, &mut m, &RunOptions::default(), &NoHooks).unwrap() {
            RunOutcome::Completed(r) => results.push(r.result),
            _ => unreachable!(),
        }
    }
    let (a, b) = (results[0].per_iteration[0].metrics, results[1].per_iteration[0].metrics);
    assert!(a.concept_f1 > b.concept_f1 && b.rouge_l_f1 > a.rouge_l_f1, "{a:?} {b:?}");

    let best = report_best_dropout(&results, BestRule::BestRun);
    assert_eq!(best.len(), 1);
    assert_eq!((best[0].concept_f1, best[0].rouge_l_f1), (a.concept_f1, a.rouge_l_f1));
    assert_eq!(best[0].dropout, (0.1, 0.1, 0.1));
    assert_eq!(best[0].candidates, 2);

    let chimera = report_best_dropout(&results, BestRule::PerMetricMax);
    assert_eq!((chimera[0].concept_f1, chimera[0].rouge_l_f1), (a.concept_f1, b.rouge_l_f1));
    assert_eq!(chimera[0].dropout.2, 0.5);

    let single = report_best_dropout(&results[1..], BestRule::BestRun);
    assert_eq!(single[0].rouge_l_f1, b.rouge_l_f1);
    assert_eq!(single[0].note.as_deref(), Some("single dropout variant"));
}
