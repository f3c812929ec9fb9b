use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Sparse factor analysis of graded responses joined with a Poisson topic
/// model of question text.
#[derive(Parser, Debug)]
#[command(name = "topicfactor", version, about)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially, 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the joint model to responses and question text.
    Fit(FitCmd),
    /// Fit the responses-only baseline.
    FitBaseline(BaselineCmd),
    /// Predicted probability of a correct answer for listed pairs.
    Predict(PredictCmd),
    /// Mean predicted likelihood of observed grades under a model.
    Evaluate(EvaluateCmd),
    /// Score a hyperparameter grid on held-out grades.
    Cv(CvCmd),
    /// Top keywords of each concept.
    Keywords(KeywordsCmd),
    /// Question-concept association graph as DOT or JSON.
    ExportGraph(ExportGraphCmd),
    /// Draw synthetic responses and text from random factors.
    Simulate(SimulateCmd),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Number of concepts K.
    #[arg(long, short = 'k', default_value_t = 3)]
    concepts: usize,
    /// Floor on Poisson rates.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    /// Relative objective decrease per sweep below which fitting stops.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Seeds the initialization and any holdout split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct TextArgs {
    /// Stop-word file (one word per line, `#` comments); defaults to the
    /// bundled English list.
    #[arg(long, conflicts_with = "no_stop_words")]
    stop_words: Option<PathBuf>,
    #[arg(long)]
    no_stop_words: bool,
    /// Drop words seen fewer times than this across the corpus.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct FitCmd {
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    text: TextArgs,
    /// Hold out this fraction of grades (split seeded by --seed) and fit on
    /// the rest.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// Model archive to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Fit report (objective trace, timing) to write as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct BaselineCmd {
    #[arg(long)]
    responses: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct PredictCmd {
    #[arg(long)]
    archive: PathBuf,
    /// CSV with `question_id` and `learner_id` columns.
    #[arg(long)]
    entries: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct EvaluateCmd {
    #[arg(long)]
    archive: PathBuf,
    /// Graded responses to score.
    #[arg(long)]
    responses: PathBuf,
    /// Score only the held-out part of a split made the same way as
    /// `fit --holdout-fraction`.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct CvCmd {
    #[arg(long)]
    responses: PathBuf,
    /// Required unless every grid point is `responses_only`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Grid CSV with columns lambda,gamma,eta,tau,k and optional epsilon, model.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    text: TextArgs,
    #[arg(long, default_value_t = 0.2, conflicts_with = "folds")]
    holdout_fraction: f64,
    /// Use k-fold cross-validation instead of a single holdout.
    #[arg(long)]
    folds: Option<usize>,
    /// Score table CSV; standard output when omitted.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Refit the best grid point on all grades and write its archive.
    #[arg(long)]
    best_archive: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct KeywordsCmd {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct ExportGraphCmd {
    #[arg(long)]
    archive: PathBuf,
    /// `dot` or `json`.
    #[arg(long, default_value = "dot")]
    format: String,
    /// Edges need a weight above this; defaults to 5% of the largest weight.
    #[arg(long)]
    weight_floor: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SimulateCmd {
    /// Directory receiving responses.csv, corpus.jsonl and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    questions: usize,
    #[arg(long, default_value_t = 100)]
    learners: usize,
    #[arg(long, default_value_t = 60)]
    words: usize,
    #[arg(long, short = 'k', default_value_t = 3)]
    concepts: usize,
    /// Nonzero associations per question.
    #[arg(long, default_value_t = 2)]
    sparsity: usize,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    missing_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<topicfactor::Error>())
        .map_or("other", topicfactor::Error::kind)
}

/// The error chain joined with `: `, skipping causes already spelled out by
/// the message above them.
fn error_message(err: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if message.contains(&text) {
            continue;
        }
        if !message.is_empty() {
            message.push_str(": ");
        }
        message.push_str(&text);
    }
    message
}

fn report_error(kind: &str, message: &str) {
    // One line: the message is quoted with `"`, `\` and control characters escaped.
    eprintln!("error kind={kind} msg={message:?}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report_error("usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            report_error(error_kind(&err), &error_message(&err));
            ExitCode::FAILURE
        }
    }
}
