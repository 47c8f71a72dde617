use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sumloop::engine::RUNS_DIR_ENV;

mod commands;
mod error;

use error::CliError;

/// Summarization labeling-loop experiments: pseudo labels, simulated or live
/// expert labels, concept-based evaluation.
#[derive(Debug, Parser)]
#[command(name = "sumloop", version)]
struct Cli {
    /// Checkpoint and results root.
    #[arg(long, global = true, env = RUNS_DIR_ENV)]
    runs_dir: Option<PathBuf>,

    /// Log more (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment, or continue an interrupted or suspended one.
    Run {
        #[arg(long, required_unless_present = "resume", conflicts_with = "resume")]
        config: Option<PathBuf>,
        /// Continue the stored run with this id.
        #[arg(long, value_name = "RUN_ID")]
        resume: Option<String>,
    },
    /// Expand a grid specification and run every configuration.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Print the training runs and their count; write nothing.
        #[arg(long)]
        dry_run: bool,
        /// Abort the process after this many iteration checkpoints.
        #[arg(long, hide = true)]
        abort_after_checkpoints: Option<usize>,
    },
    /// Score a predictions file against a test set.
    Eval {
        /// JSON lines with `id` (or `sample_id`) and `summary`.
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        /// Also write per-example scores here.
        #[arg(long)]
        per_example: Option<PathBuf>,
    },
    /// Scores reached when every prediction equals its gold summary.
    Max {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Generate a synthetic corpus as JSON lines.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "s")]
        prefix: String,
        /// Mean number of symptoms per clinical sample.
        #[arg(long, default_value_t = 3.0)]
        density: f64,
        /// Probability that a mentioned symptom is denied.
        #[arg(long, default_value_t = 0.3)]
        negation_rate: f64,
        /// Make every k-th sample an exchange without clinical concepts.
        #[arg(long, value_name = "K")]
        conceptless_every: Option<usize>,
        /// Output file; standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Serve the annotation API for live expert labeling.
    Serve {
        /// Run used when a request names none.
        #[arg(long, value_name = "RUN_ID")]
        run: Option<String>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory of a built annotation UI to serve at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Best-of-dropout tables and saturation-curve data from finished runs.
    Report {
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        out: ReportFormat,
        /// Where to write the tables; the runs root when absent.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = RuleArg::BestRun)]
        rule: RuleArg,
    },
    /// Serve a built-in model over the adapter protocol on stdin/stdout.
    Adapter {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Oracle noise rate.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Oracle skill constant: the rate shrinks as noise·c/(c+n).
        #[arg(long)]
        skill_c: Option<f64>,
        /// Patient turns kept by the lead baseline.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Corpora whose gold summaries the oracle may look up.
        #[arg(long)]
        gold: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    test: PathBuf,
    /// Concept lexicon TSV; the built-in lexicon when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Negation rules TSV; the built-in rules when absent.
    #[arg(long)]
    negex: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    scope_window: usize,
    #[arg(long, value_enum, default_value_t = AggregationArg::Macro)]
    aggregation: AggregationArg,
    #[arg(long, value_enum, default_value_t = ReferenceArg::Summary)]
    reference_source: ReferenceArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    BestRun,
    PerMetricMax,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    OracleNoise,
    ExtractiveLead,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AggregationArg {
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Summary,
    Conversation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    let runs_root = cli.runs_dir.unwrap_or_else(sumloop::engine::default_runs_root);
    match commands::dispatch(cli.command, &runs_root) {
        Ok(code) => code,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
