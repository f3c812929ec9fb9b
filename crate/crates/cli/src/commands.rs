use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use topicfactor::eval::{concept_summaries, kfold_splits, mean_log_likelihood};
use topicfactor::io::{
    load_corpus, load_grid, load_responses, render_graph, simulation_files, write_corpus,
    write_keyword_table, write_responses, write_score_table, GraphFormat, ModelArchive,
    ResponseTable,
};
use topicfactor::{
    build_vocabulary, count_matrix, cross_validate, fit, fit_responses_only, holdout_split,
    mean_predicted_likelihood, predict_response_prob, simulate, CvProtocol, Error, FactorState,
    FitConfig, FitReport, GradedResponseSet, HyperParams, ModelKind, Response, SimulationSpec,
    StopWordList, WordCountMatrix,
};

use crate::{
    BaselineCmd, Cli, Command, CvCmd, EvaluateCmd, ExportGraphCmd, FitCmd, KeywordsCmd, ModelArgs,
    PredictCmd, SimulateCmd, SolverArgs, TextArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let parallel = configure_threads(cli.threads)?;
    match cli.command {
        Command::Fit(cmd) => fit_joint(cmd, parallel),
        Command::FitBaseline(cmd) => fit_baseline(cmd, parallel),
        Command::Predict(cmd) => predict(cmd),
        Command::Evaluate(cmd) => evaluate(cmd),
        Command::Cv(cmd) => cv(cmd, parallel),
        Command::Keywords(cmd) => keywords(cmd),
        Command::ExportGraph(cmd) => export_graph(cmd),
        Command::Simulate(cmd) => simulate_files(cmd),
    }
}

fn configure_threads(threads: usize) -> Result<bool> {
    if threads == 1 {
        return Ok(false);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(true)
}

impl ModelArgs {
    fn params(&self) -> Result<HyperParams> {
        let h = HyperParams {
            lambda: self.lambda,
            gamma: self.gamma,
            eta: self.eta,
            tau: self.tau,
            epsilon: self.epsilon,
            num_concepts: self.concepts,
        };
        h.validate()?;
        Ok(h)
    }
}

impl SolverArgs {
    fn config(&self, parallel: bool) -> Result<FitConfig> {
        let cfg = FitConfig {
            max_outer_iterations: self.max_sweeps,
            outer_relative_tolerance: self.tolerance,
            rng_seed: self.seed,
            parallel,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TextArgs {
    fn stop_words(&self) -> Result<StopWordList> {
        Ok(match (&self.stop_words, self.no_stop_words) {
            (Some(path), _) => StopWordList::load(path)?,
            (None, true) => StopWordList::empty(),
            (None, false) => StopWordList::english(),
        })
    }

    /// Word counts for the response questions, rows in `question_ids` order.
    fn counts(&self, corpus_path: &Path, question_ids: &[String]) -> Result<WordCountMatrix> {
        let corpus = load_corpus(corpus_path)?.aligned_to(question_ids)?;
        let vocab = build_vocabulary(&corpus, &self.stop_words()?, self.min_count)?;
        Ok(count_matrix(&corpus, &vocab)?)
    }
}

fn training_set(
    y: &GradedResponseSet,
    holdout: Option<f64>,
    seed: u64,
) -> Result<GradedResponseSet> {
    match holdout {
        None => Ok(y.clone()),
        Some(fraction) => Ok(holdout_split(y, fraction, seed)?.train_set(y)?),
    }
}

fn write_output(path: Option<&Path>, contents: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(|e| Error::io(p, e))?,
        None => io::stdout().lock().write_all(contents)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn save_fit(
    state: &FactorState,
    report: &FitReport,
    params: HyperParams,
    model: ModelKind,
    vocab: Vec<String>,
    table: &ResponseTable,
    out: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let archive = ModelArchive::new(
        state,
        params,
        model,
        vocab,
        table.question_ids.clone(),
        table.learner_ids.clone(),
        Some(report),
    )?;
    archive.save(out)?;
    if let Some(path) = report_path {
        let mut json = serde_json::to_string_pretty(report)?;
        json.push('\n');
        write_output(Some(path), json.as_bytes())?;
    }
    eprintln!(
        "sweeps={} converged={} objective={} wall_time={:.3}",
        report.outer_iterations,
        report.converged,
        report
            .objective_trace
            .last()
            .copied()
            .unwrap_or(report.initial_objective),
        report.wall_time
    );
    Ok(())
}

fn fit_joint(cmd: FitCmd, parallel: bool) -> Result<()> {
    let params = cmd.model.params()?;
    let cfg = cmd.solver.config(parallel)?;
    let table = load_responses(&cmd.responses)?;
    let counts = cmd.text.counts(&cmd.corpus, &table.question_ids)?;
    let train = training_set(&table.responses, cmd.holdout_fraction, cmd.solver.seed)?;
    let (state, report) = fit(&train, &counts, &params, &cfg)?;
    save_fit(
        &state,
        &report,
        params,
        ModelKind::Joint,
        counts.vocabulary().to_vec(),
        &table,
        &cmd.out,
        cmd.report.as_deref(),
    )
}

fn fit_baseline(cmd: BaselineCmd, parallel: bool) -> Result<()> {
    let params = cmd.model.params()?;
    let cfg = cmd.solver.config(parallel)?;
    let table = load_responses(&cmd.responses)?;
    let train = training_set(&table.responses, cmd.holdout_fraction, cmd.solver.seed)?;
    let (state, report) = fit_responses_only(&train, &params, &cfg)?;
    save_fit(
        &state,
        &report,
        params,
        ModelKind::ResponsesOnly,
        Vec::new(),
        &table,
        &cmd.out,
        cmd.report.as_deref(),
    )
}

#[derive(Deserialize)]
struct EntryRecord {
    question_id: String,
    learner_id: String,
}

struct IdIndex<'a> {
    archive: &'a ModelArchive,
    questions: std::collections::HashMap<&'a str, usize>,
    learners: std::collections::HashMap<&'a str, usize>,
}

impl<'a> IdIndex<'a> {
    fn new(archive: &'a ModelArchive) -> Self {
        let index = |ids: &'a [String]| {
            ids.iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect()
        };
        Self {
            archive,
            questions: index(&archive.question_ids),
            learners: index(&archive.learner_ids),
        }
    }

    fn lookup(&self, question_id: &str, learner_id: &str) -> Result<(usize, usize)> {
        let q = self.questions.get(question_id).ok_or_else(|| {
            Error::InvalidArgument(format!("question_id {question_id:?} is not in the model"))
        })?;
        let l = self.learners.get(learner_id).ok_or_else(|| {
            Error::InvalidArgument(format!("learner_id {learner_id:?} is not in the model"))
        })?;
        Ok((*q, *l))
    }

    fn tau(&self) -> f64 {
        self.archive.hyperparameters.tau
    }
}

fn predict(cmd: PredictCmd) -> Result<()> {
    let archive = ModelArchive::load(&cmd.archive)?;
    let state = archive.state()?;
    let ids = IdIndex::new(&archive);
    let source = cmd.entries.display().to_string();
    let file = File::open(&cmd.entries).map_err(|e| Error::io(&cmd.entries, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut buf = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut buf);
        wtr.write_record(["question_id", "learner_id", "probability"])?;
        for (row, record) in rdr.deserialize::<EntryRecord>().enumerate() {
            let rec = record.map_err(|e| Error::Parse {
                path: source.clone(),
                line: e.position().map_or(row as u64 + 2, |p| p.line()),
                message: e.to_string(),
            })?;
            let (q, l) = ids.lookup(&rec.question_id, &rec.learner_id)?;
            let p = predict_response_prob(&state, q, l, ids.tau())?;
            wtr.write_record([rec.question_id, rec.learner_id, p.to_string()])?;
        }
        wtr.flush()?;
    }
    write_output(cmd.out.as_deref(), &buf)
}

fn evaluate(cmd: EvaluateCmd) -> Result<()> {
    let archive = ModelArchive::load(&cmd.archive)?;
    let state = archive.state()?;
    let table = load_responses(&cmd.responses)?;
    let scored: Vec<Response> = match cmd.holdout_fraction {
        None => table.responses.entries().to_vec(),
        Some(fraction) => {
            holdout_split(&table.responses, fraction, cmd.seed)?.test_responses(&table.responses)
        }
    };
    let ids = IdIndex::new(&archive);
    let mapped = scored
        .iter()
        .map(|r| {
            let (q, l) = ids.lookup(
                &table.question_ids[r.question],
                &table.learner_ids[r.learner],
            )?;
            Ok(Response::new(q, l, r.correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_predicted_likelihood(&state, &mapped, ids.tau())?;
    let log_mean = mean_log_likelihood(&state, &mapped, ids.tau())?;
    println!(
        "mean_likelihood={mean} mean_log_likelihood={log_mean} entries={}",
        mapped.len()
    );
    Ok(())
}

fn cv(cmd: CvCmd, parallel: bool) -> Result<()> {
    let cfg = cmd.solver.config(parallel)?;
    let grid = load_grid(&cmd.grid)?;
    let table = load_responses(&cmd.responses)?;
    let y = &table.responses;
    let counts = match &cmd.corpus {
        Some(path) => cmd.text.counts(path, &table.question_ids)?,
        None if grid.iter().all(|p| p.model == ModelKind::ResponsesOnly) => {
            WordCountMatrix::zeros(y.num_questions(), 0)
        }
        None => {
            return Err(Error::InvalidArgument(
                "--corpus is required when the grid has joint points".into(),
            )
            .into())
        }
    };
    let protocol = match cmd.folds {
        Some(folds) => {
            // Validate early so a bad fold count is reported before any fitting.
            kfold_splits(y, folds, cmd.solver.seed)?;
            CvProtocol::KFold {
                folds,
                seed: cmd.solver.seed,
            }
        }
        None => CvProtocol::Holdout {
            fraction: cmd.holdout_fraction,
            seed: cmd.solver.seed,
        },
    };
    let outcome = cross_validate(y, &counts, &grid, &cfg, &protocol)?;
    for (i, row) in outcome.table.iter().enumerate() {
        if let Some(msg) = &row.failure {
            eprintln!("grid point {} failed: {msg}", i + 1);
        }
    }

    let mut buf = Vec::new();
    write_score_table(&outcome, &mut buf)?;
    write_output(cmd.scores.as_deref(), &buf)?;
    let best = *outcome.best();
    eprintln!(
        "best: row={} lambda={} gamma={} eta={} tau={} k={} mean_likelihood={}",
        outcome.best_index + 1,
        best.params.lambda,
        best.params.gamma,
        best.params.eta,
        best.params.tau,
        best.params.num_concepts,
        outcome.best_score()
    );

    if let Some(out) = &cmd.best_archive {
        let (state, report) = match best.model {
            ModelKind::Joint => fit(y, &counts, &best.params, &cfg)?,
            ModelKind::ResponsesOnly => fit_responses_only(y, &best.params, &cfg)?,
        };
        let vocab = match best.model {
            ModelKind::Joint => counts.vocabulary().to_vec(),
            ModelKind::ResponsesOnly => Vec::new(),
        };
        save_fit(
            &state,
            &report,
            best.params,
            best.model,
            vocab,
            &table,
            out,
            None,
        )?;
    }
    Ok(())
}

fn keywords(cmd: KeywordsCmd) -> Result<()> {
    let archive = ModelArchive::load(&cmd.archive)?;
    let state = archive.state()?;
    let summaries = concept_summaries(&state, &archive.vocabulary, cmd.top, 0.0);
    let mut buf = Vec::new();
    write_keyword_table(&summaries, cmd.top, &mut buf)?;
    write_output(cmd.out.as_deref(), &buf)
}

fn export_graph(cmd: ExportGraphCmd) -> Result<()> {
    let archive = ModelArchive::load(&cmd.archive)?;
    let format: GraphFormat = cmd.format.parse()?;
    let text = render_graph(&archive, format, cmd.weight_floor)?;
    write_output(cmd.out.as_deref(), text.as_bytes())
}

fn simulate_files(cmd: SimulateCmd) -> Result<()> {
    let data = simulate(&SimulationSpec {
        num_questions: cmd.questions,
        num_learners: cmd.learners,
        num_words: cmd.words,
        num_concepts: cmd.concepts,
        sparsity: cmd.sparsity,
        tau: cmd.tau,
        missing_fraction: cmd.missing_fraction,
        seed: cmd.seed,
    })?;
    let files = simulation_files(&data, cmd.tau)?;
    let dir = &cmd.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let create = |name: &str| -> Result<BufWriter<File>> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BufWriter::new(file))
    };
    let mut out = create("responses.csv")?;
    write_responses(&files.responses, &mut out)?;
    out.flush().context("writing responses.csv")?;
    let mut out = create("corpus.jsonl")?;
    write_corpus(&files.corpus, &mut out)?;
    out.flush().context("writing corpus.jsonl")?;
    files.truth.save(&dir.join("truth.json"))?;
    eprintln!(
        "questions={} learners={} observed={} words={}",
        cmd.questions,
        cmd.learners,
        files.responses.responses.len(),
        data.counts.num_words()
    );
    Ok(())
}
