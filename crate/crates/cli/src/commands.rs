use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;
use sumloop::corpus::Corpus;
use sumloop::engine::checkpoint::RunDir;
use sumloop::engine::report::{best_dropout_csv, saturation_csv};
use sumloop::engine::result::{read_records, RESULTS_FILE};
use sumloop::engine::{
    expand_grid, report_best_dropout, run_experiment, run_grid, BestRule, GridSpec, NoHooks, ResultRecord,
    ResultsStore, RunConfig, RunContext, RunHooks, RunOptions, RunOutcome,
};
use sumloop::fsutil::atomic_write;
use sumloop::metrics::{
    Aggregation, ConceptLexicon, EvalOptions, Evaluator, MetricsReport, NegexRules, ReferenceSource,
};
use sumloop::model::{protocol, AdapterSpec};
use sumloop::synth::{generate, SynthOptions};
use sumloop_service::AppState;

use crate::error::{CliError, EXIT_SUSPENDED};
use crate::{AggregationArg, Command, EvalArgs, ModelArg, ReferenceArg, RuleArg};

pub fn dispatch(command: Command, runs_root: &Path) -> Result<ExitCode, CliError> {
    match command {
        Command::Run { config, resume } => match (config, resume) {
            (_, Some(run_id)) => resume_run(&run_id, runs_root),
            (Some(path), None) => run(&RunConfig::load(&path)?, runs_root),
            (None, None) => unreachable!("clap requires --config or --resume"),
        },
        Command::Grid {
            spec,
            workers,
            dry_run,
            abort_after_checkpoints,
        } => grid(&spec, workers, dry_run, abort_after_checkpoints, runs_root),
        Command::Eval {
            predictions,
            eval,
            per_example,
        } => {
            let evaluator = evaluator(&eval)?;
            let test = Corpus::load(&eval.test)?;
            let preds = read_predictions(&predictions)?;
            let report = evaluator.evaluate(preds.iter().map(|(i, s)| (i.as_str(), s.as_str())), &test)?;
            if let Some(path) = per_example {
                report.write_per_example_csv(BufWriter::new(File::create(&path)?))?;
            }
            print_report(&report)
        }
        Command::Max { eval } => {
            let report = evaluator(&eval)?.theoretical_max(&Corpus::load(&eval.test)?)?;
            print_report(&report)
        }
        Command::Synth {
            n,
            seed,
            prefix,
            density,
            negation_rate,
            conceptless_every,
            out,
        } => {
            let opts = SynthOptions {
                n,
                seed,
                id_prefix: prefix,
                density,
                negation_rate,
                conceptless_every,
            };
            let corpus = generate(&opts);
            let mut buf = Vec::new();
            corpus.write_jsonl(&mut buf)?;
            match out {
                Some(path) => atomic_write(&path, &buf)?,
                None => io::stdout().lock().write_all(&buf)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            run,
            port,
            host,
            static_dir,
        } => {
            let state = AppState::new(runs_root, run);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(sumloop_service::serve((host, port).into(), state, static_dir.as_deref()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { out: _, dir, rule } => report(runs_root, dir.as_deref().unwrap_or(runs_root), rule),
        Command::Adapter {
            model,
            noise,
            skill_c,
            k,
            gold,
        } => {
            let spec = match model {
                ModelArg::OracleNoise => AdapterSpec::OracleNoise { noise, skill_c },
                ModelArg::ExtractiveLead => AdapterSpec::ExtractiveLead { k },
            };
            spec.validate().map_err(CliError::invalid)?;
            let mut golds: HashMap<String, String> = HashMap::new();
            for path in &gold {
                for s in Corpus::load(path)?.samples() {
                    if let Some(g) = &s.gold_summary {
                        golds.insert(s.id.clone(), g.clone());
                    }
                }
            }
            let mut m = spec.build()?;
            protocol::serve(m.as_mut(), io::stdin().lock(), io::stdout().lock(), |id| golds.get(id).cloned())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

struct Data {
    corpus: Corpus,
    test: Corpus,
    evaluator: Evaluator,
}

fn load_data(data: &sumloop::engine::DataConfig) -> Result<Data, CliError> {
    Ok(Data {
        corpus: Corpus::load(&data.corpus)?,
        test: Corpus::load(&data.test)?,
        evaluator: data.evaluator()?,
    })
}

fn run(config: &RunConfig, runs_root: &Path) -> Result<ExitCode, CliError> {
    let data = load_data(&config.data)?;
    let ctx = RunContext {
        corpus: &data.corpus,
        test_set: &data.test,
        evaluator: &data.evaluator,
        runs_root,
    };
    let run_id = config.run_id();
    log::info!("run {run_id}: {} iteration(s)", config.iterations());
    let mut model = config.adapter.build()?;
    match run_experiment(config, ctx, model.as_mut(), &RunOptions::default(), &NoHooks)? {
        RunOutcome::Completed(record) => {
            let store = ResultsStore::open(runs_root)?;
            if !store.append(&record)? {
                println!("run {run_id} was already recorded; results unchanged");
            }
            let csv = store.write_csv()?;
            print_iterations(&record);
            println!("results: {}", csv.display());
            Ok(ExitCode::SUCCESS)
        }
        RunOutcome::Suspended {
            run_id,
            iteration,
            pending,
        } => {
            println!(
                "run {run_id} is waiting for {pending} expert label(s) for iteration {iteration}; \
                 serve them with `sumloop serve --run {run_id}` and continue with `sumloop run --resume {run_id}`"
            );
            Ok(ExitCode::from(EXIT_SUSPENDED))
        }
    }
}

fn resume_run(run_id: &str, runs_root: &Path) -> Result<ExitCode, CliError> {
    let meta = RunDir::new(runs_root, run_id)
        .meta()?
        .ok_or_else(|| CliError::invalid(format!("no stored run {run_id:?} under {}", runs_root.display())))?;
    if runs_root.join(RESULTS_FILE).exists() && ResultsStore::open(runs_root)?.contains(run_id) {
        println!("run {run_id} is already complete; nothing to do");
        return Ok(ExitCode::SUCCESS);
    }
    run(&meta.config, runs_root)
}

/// Aborts the process once a number of checkpoints has been written, for
/// crash testing.
struct AbortAfter {
    limit: usize,
    seen: AtomicUsize,
}

impl RunHooks for AbortAfter {
    fn checkpoint_written(&self, run_id: &str, iteration: u32) {
        if self.seen.fetch_add(1, Ordering::SeqCst) + 1 >= self.limit {
            eprintln!("aborting after checkpoint {run_id}/iter{iteration}");
            std::process::abort();
        }
    }
}

fn grid(
    spec_path: &Path,
    workers: usize,
    dry_run: bool,
    abort_after: Option<usize>,
    runs_root: &Path,
) -> Result<ExitCode, CliError> {
    let spec = GridSpec::load(spec_path)?;
    let plan = expand_grid(&spec)?;
    if dry_run {
        let mut out = io::stdout().lock();
        for r in plan.training_runs() {
            writeln!(out, "{}\titer{}", r.run_id, r.iteration)?;
        }
        writeln!(out, "{plan}")?;
        return Ok(ExitCode::SUCCESS);
    }
    log::info!("{plan}");
    let data = load_data(&spec.data)?;
    let ctx = RunContext {
        corpus: &data.corpus,
        test_set: &data.test,
        evaluator: &data.evaluator,
        runs_root,
    };
    std::fs::create_dir_all(runs_root)?;
    let store = ResultsStore::open(runs_root)?;
    let abort = abort_after.map(|limit| AbortAfter {
        limit,
        seen: AtomicUsize::new(0),
    });
    let hooks: &dyn RunHooks = match &abort {
        Some(a) => a,
        None => &NoHooks,
    };
    let outcome = run_grid(&plan, ctx, &store, workers, &|c: &RunConfig| c.adapter.build(), hooks)?;
    let csv = store.write_csv()?;
    println!(
        "{} run(s) completed, {} already recorded; results: {}",
        outcome.completed,
        outcome.skipped,
        csv.display()
    );
    if outcome.suspended.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("waiting for expert labels: {}", outcome.suspended.join(", "));
        Ok(ExitCode::from(EXIT_SUSPENDED))
    }
}

fn report(runs_root: &Path, out_dir: &Path, rule: RuleArg) -> Result<ExitCode, CliError> {
    let path = runs_root.join(RESULTS_FILE);
    if !path.exists() {
        return Err(CliError::invalid(format!("no results at {}", path.display())));
    }
    let results: Vec<_> = read_records(&path)?.into_iter().map(|r| r.result).collect();
    let rule = match rule {
        RuleArg::BestRun => BestRule::BestRun,
        RuleArg::PerMetricMax => BestRule::PerMetricMax,
    };
    let rows = report_best_dropout(&results, rule);
    std::fs::create_dir_all(out_dir)?;
    let best = out_dir.join("best_dropout.csv");
    let saturation = out_dir.join("saturation.csv");
    atomic_write(&best, &best_dropout_csv(&rows)?)?;
    atomic_write(&saturation, &saturation_csv(&rows)?)?;
    println!("{} row(s): {}, {}", rows.len(), best.display(), saturation.display());
    Ok(ExitCode::SUCCESS)
}

fn evaluator(args: &EvalArgs) -> Result<Evaluator, CliError> {
    let lexicon = match &args.lexicon {
        Some(p) => ConceptLexicon::load(p)?,
        None => ConceptLexicon::builtin(),
    };
    let rules = match &args.negex {
        Some(p) => NegexRules::load(p)?,
        None => NegexRules::builtin(),
    }
    .with_scope_window(args.scope_window)?;
    let options = EvalOptions {
        aggregation: match args.aggregation {
            AggregationArg::Macro => Aggregation::Macro,
            AggregationArg::Micro => Aggregation::Micro,
        },
        reference_source: match args.reference_source {
            ReferenceArg::Summary => ReferenceSource::Summary,
            ReferenceArg::Conversation => ReferenceSource::Conversation,
        },
    };
    Ok(Evaluator::new(lexicon, rules, options))
}

#[derive(Deserialize)]
struct PredictionLine {
    #[serde(alias = "sample_id")]
    id: String,
    summary: String,
}

fn read_predictions(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let file = File::open(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| CliError::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if !seen.insert(p.id.clone()) {
            return Err(CliError::invalid(format!("{}:{}: duplicate id {:?}", path.display(), n + 1, p.id)));
        }
        out.push((p.id, p.summary));
    }
    Ok(out)
}

fn print_report(report: &MetricsReport) -> Result<ExitCode, CliError> {
    let summary = serde_json::json!({
        "concept_f1": report.concept_f1,
        "affirmation_f1": report.affirmation_f1,
        "rouge_l_f1": report.rouge_l_f1,
        "n_examples": report.n_examples,
        "aggregation": report.aggregation,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("report serializes"));
    Ok(ExitCode::SUCCESS)
}

fn print_iterations(record: &ResultRecord) {
    println!("run {}", record.result.run_id);
    for it in &record.result.per_iteration {
        println!(
            "  iter {}  n_train={:<5} concept_f1={:.4}  affirmation_f1={:.4}  rouge_l_f1={:.4}",
            it.iteration, it.n_train_points, it.metrics.concept_f1, it.metrics.affirmation_f1, it.metrics.rouge_l_f1
        );
    }
}
