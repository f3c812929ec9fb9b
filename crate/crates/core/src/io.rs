//! File formats: response CSV, corpus JSONL, model archives, grid and score
//! tables, and graph exports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    association_graph, default_weight_floor, top_keywords, ConceptSummary, CvOutcome, GridPoint,
    ModelKind,
};
use crate::model::{FactorState, FitReport, GradedResponseSet, HyperParams, Response};
use crate::simulate::SimulatedData;
use crate::text::{Corpus, Document, DocumentContent};

pub const SCHEMA_VERSION: u32 = 1;

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_error(source: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_error(source: &str, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    parse_error(source, line, err.to_string())
}

/// Graded responses together with the external ids behind the dense indices.
#[derive(Clone, Debug)]
pub struct ResponseTable {
    pub responses: GradedResponseSet,
    pub question_ids: Vec<String>,
    pub learner_ids: Vec<String>,
}

impl ResponseTable {
    pub fn question_index(&self) -> HashMap<&str, usize> {
        index_of(&self.question_ids)
    }

    pub fn learner_index(&self) -> HashMap<&str, usize> {
        index_of(&self.learner_ids)
    }
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter()
        .enumerate()
        .map(|(k, s)| (s.as_str(), k))
        .collect()
}

const RESPONSE_HEADER: [&str; 3] = ["question_id", "learner_id", "grade"];

/// Parses `question_id,learner_id,grade` CSV. Ids map to dense indices in
/// order of first appearance.
pub fn parse_responses<R: Read>(reader: R, source: &str) -> Result<ResponseTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if header.iter().map(str::trim).ne(RESPONSE_HEADER) {
        return Err(parse_error(
            source,
            1,
            format!(
                "expected header `question_id,learner_id,grade`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut question_ids: Vec<String> = Vec::new();
    let mut learner_ids: Vec<String> = Vec::new();
    let mut q_index: HashMap<String, usize> = HashMap::new();
    let mut l_index: HashMap<String, usize> = HashMap::new();
    let mut first_seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut entries = Vec::new();

    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(k).unwrap_or("").trim();
        let (qid, lid, grade) = (field(0), field(1), field(2));
        if qid.is_empty() || lid.is_empty() {
            return Err(parse_error(source, line, "empty question_id or learner_id"));
        }
        let correct = match grade {
            "1" => true,
            "0" => false,
            other => {
                return Err(parse_error(
                    source,
                    line,
                    format!("grade must be 0 or 1, found {other:?}"),
                ))
            }
        };
        let i = *q_index.entry(qid.to_string()).or_insert_with(|| {
            question_ids.push(qid.to_string());
            question_ids.len() - 1
        });
        let j = *l_index.entry(lid.to_string()).or_insert_with(|| {
            learner_ids.push(lid.to_string());
            learner_ids.len() - 1
        });
        if let Some(prev) = first_seen.insert((i, j), line) {
            return Err(parse_error(
                source,
                line,
                format!("duplicate response for ({qid}, {lid}); first seen on line {prev}"),
            ));
        }
        entries.push(Response::new(i, j, correct));
    }
    if entries.is_empty() {
        return Err(parse_error(source, 1, "no responses"));
    }
    let responses = GradedResponseSet::new(question_ids.len(), learner_ids.len(), entries)?;
    Ok(ResponseTable {
        responses,
        question_ids,
        learner_ids,
    })
}

pub fn load_responses(path: &Path) -> Result<ResponseTable> {
    parse_responses(open(path)?, &path.display().to_string())
}

pub fn write_responses<W: Write>(table: &ResponseTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    wtr.write_record(RESPONSE_HEADER).map_err(to_err)?;
    for r in table.responses.entries() {
        wtr.write_record([
            table.question_ids[r.question].as_str(),
            table.learner_ids[r.learner].as_str(),
            if r.correct { "1" } else { "0" },
        ])
        .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Parses JSON lines of `{"question_id": .., "text": ..}` or
/// `{"question_id": .., "terms": [..]}`. Blank lines are skipped.
pub fn parse_corpus<R: Read>(reader: R, source: &str) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut lines_by_id: HashMap<String, u64> = HashMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| parse_error(source, line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| parse_error(source, line_no, format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_error(source, line_no, "expected a JSON object"))?;
        let question_id = match obj.get("question_id") {
            Some(serde_json::Value::String(s)) if !s.trim().is_empty() => s.clone(),
            _ => {
                return Err(parse_error(
                    source,
                    line_no,
                    "missing or non-string question_id",
                ))
            }
        };
        let content = match (obj.get("text"), obj.get("terms")) {
            (Some(_), Some(_)) => {
                return Err(parse_error(
                    source,
                    line_no,
                    format!("question {question_id:?} has both `text` and `terms`"),
                ))
            }
            (Some(serde_json::Value::String(s)), None) => DocumentContent::Text(s.clone()),
            (None, Some(serde_json::Value::Array(items))) => {
                let terms = items
                    .iter()
                    .map(|t| t.as_str().map(str::to_string))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| parse_error(source, line_no, "`terms` must be strings"))?;
                DocumentContent::Terms(terms)
            }
            (None, None) => {
                return Err(parse_error(
                    source,
                    line_no,
                    format!("question {question_id:?} has neither `text` nor `terms`"),
                ))
            }
            _ => {
                return Err(parse_error(
                    source,
                    line_no,
                    "`text` must be a string and `terms` an array",
                ))
            }
        };
        if let Some(prev) = lines_by_id.insert(question_id.clone(), line_no) {
            return Err(parse_error(
                source,
                line_no,
                format!("duplicate question_id {question_id:?}; first seen on line {prev}"),
            ));
        }
        documents.push(Document {
            question_id,
            content,
        });
    }
    Corpus::new(documents)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(open(path)?, &path.display().to_string())
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for doc in corpus.documents() {
        let value = match &doc.content {
            DocumentContent::Text(text) => {
                serde_json::json!({ "question_id": doc.question_id, "text": text })
            }
            DocumentContent::Terms(terms) => {
                serde_json::json!({ "question_id": doc.question_id, "terms": terms })
            }
        };
        serde_json::to_writer(&mut writer, &value)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub questions: usize,
    pub learners: usize,
    pub words: usize,
    pub concepts: usize,
}

/// Fit summary as stored in archives; wall time is left out so identical
/// fits produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchivedFitReport {
    pub initial_objective: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
}

impl From<&FitReport> for ArchivedFitReport {
    fn from(r: &FitReport) -> Self {
        Self {
            initial_objective: r.initial_objective,
            objective_trace: r.objective_trace.clone(),
            converged: r.converged,
            outer_iterations: r.outer_iterations,
        }
    }
}

/// A fitted (or generating) model with everything needed to interpret it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub schema_version: u32,
    pub dimensions: Dimensions,
    pub model: ModelKind,
    pub hyperparameters: HyperParams,
    pub w: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    pub vocabulary: Vec<String>,
    pub question_ids: Vec<String>,
    pub learner_ids: Vec<String>,
    pub fit_report: Option<ArchivedFitReport>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(
    name: &'static str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<Array2<f64>> {
    if rows.len() != nrows {
        return Err(Error::DimensionMismatch {
            axis: name,
            expected: nrows,
            found: rows.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            axis: name,
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(Array2::from_shape_fn((nrows, ncols), |(r, c)| rows[r][c]))
}

impl ModelArchive {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: &FactorState,
        hyperparameters: HyperParams,
        model: ModelKind,
        vocabulary: Vec<String>,
        question_ids: Vec<String>,
        learner_ids: Vec<String>,
        report: Option<&FitReport>,
    ) -> Result<Self> {
        let archive = Self {
            schema_version: SCHEMA_VERSION,
            dimensions: Dimensions {
                questions: state.num_questions(),
                learners: state.num_learners(),
                words: state.num_words(),
                concepts: state.num_concepts(),
            },
            model,
            hyperparameters,
            w: rows(&state.w),
            mu: state.mu.to_vec(),
            c: rows(&state.c),
            t: rows(&state.t),
            vocabulary,
            question_ids,
            learner_ids,
            fit_report: report.map(ArchivedFitReport::from),
        };
        archive.validate()?;
        Ok(archive)
    }

    pub fn state(&self) -> Result<FactorState> {
        let d = self.dimensions;
        let state = FactorState {
            w: from_rows("W", &self.w, d.questions, d.concepts)?,
            mu: Array1::from(self.mu.clone()),
            c: from_rows("C", &self.c, d.concepts, d.learners)?,
            t: from_rows("T", &self.t, d.concepts, d.words)?,
        };
        state.validate()?;
        Ok(state)
    }

    /// Checks the schema version, every shape against `dimensions`, and the
    /// nonnegativity of `W` and `T`.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let d = self.dimensions;
        let checks = [
            ("difficulties", d.questions, self.mu.len()),
            ("vocabulary", d.words, self.vocabulary.len()),
            ("question_ids", d.questions, self.question_ids.len()),
            ("learner_ids", d.learners, self.learner_ids.len()),
            ("concepts", d.concepts, self.hyperparameters.num_concepts),
        ];
        for (axis, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    axis,
                    expected,
                    found,
                });
            }
        }
        self.state()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let archive: ModelArchive = serde_json::from_str(s)?;
        archive.validate()?;
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph format {other:?} (expected dot or json)"
            ))),
        }
    }
}

/// Keywords shown on each concept node.
pub const GRAPH_KEYWORDS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keywords: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

fn question_node(i: usize) -> String {
    format!("q{i}")
}

fn concept_node(k: usize) -> String {
    format!("c{k}")
}

/// Nodes and edges of the association graph with ids and keyword labels.
pub fn graph_document(archive: &ModelArchive, weight_floor: Option<f64>) -> Result<GraphDocument> {
    let state = archive.state()?;
    let floor = weight_floor.unwrap_or_else(|| default_weight_floor(&state));
    let graph = association_graph(&state, floor);
    let keywords = top_keywords(&state, &archive.vocabulary, GRAPH_KEYWORDS);

    let mut nodes: Vec<GraphNode> = archive
        .question_ids
        .iter()
        .zip(&graph.difficulties)
        .enumerate()
        .map(|(i, (id, &mu))| GraphNode {
            id: question_node(i),
            kind: "question".into(),
            label: id.clone(),
            difficulty: Some(mu),
            keywords: None,
        })
        .collect();
    nodes.extend(keywords.iter().map(|summary: &ConceptSummary| GraphNode {
        id: concept_node(summary.concept_index),
        kind: "concept".into(),
        label: format!("Concept {}", summary.concept_index + 1),
        difficulty: None,
        keywords: Some(summary.keywords.iter().map(|(w, _)| w.clone()).collect()),
    }));
    let edges = graph
        .edges
        .iter()
        .map(|e| GraphEdge {
            source: question_node(e.question),
            target: concept_node(e.concept),
            weight: e.weight,
        })
        .collect();
    Ok(GraphDocument { nodes, edges })
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: questions are boxes labeled with id and difficulty,
/// concepts are circles labeled with their top keywords, and edge pen width
/// is proportional to the association weight (5 at the largest weight).
pub fn render_dot(doc: &GraphDocument) -> String {
    let max_weight = doc.edges.iter().map(|e| e.weight).fold(0.0, f64::max);
    let mut out = String::from("graph associations {\n  rankdir=LR;\n");
    for node in &doc.nodes {
        let (shape, label) = match (&node.difficulty, &node.keywords) {
            (Some(mu), _) => ("box", format!("{}\\nmu={:.2}", dot_escape(&node.label), mu)),
            (None, Some(words)) => {
                let mut label = dot_escape(&node.label);
                for w in words {
                    label.push_str("\\n");
                    label.push_str(&dot_escape(w));
                }
                ("circle", label)
            }
            (None, None) => ("circle", dot_escape(&node.label)),
        };
        let _ = writeln!(out, "  {} [shape={shape}, label=\"{label}\"];", node.id);
    }
    for e in &doc.edges {
        let width = if max_weight > 0.0 {
            5.0 * e.weight / max_weight
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            "  {} -- {} [penwidth={width:.3}, weight={}];",
            e.source, e.target, e.weight
        );
    }
    out.push_str("}\n");
    out
}

pub fn render_graph(
    archive: &ModelArchive,
    format: GraphFormat,
    weight_floor: Option<f64>,
) -> Result<String> {
    let doc = graph_document(archive, weight_floor)?;
    Ok(match format {
        GraphFormat::Dot => render_dot(&doc),
        GraphFormat::Json => {
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            s
        }
    })
}

/// Writes the association graph; `weight_floor` defaults to `0.05 * max(W)`.
pub fn export_graph(
    archive: &ModelArchive,
    format: GraphFormat,
    weight_floor: Option<f64>,
    path: &Path,
) -> Result<()> {
    write_file(
        path,
        render_graph(archive, format, weight_floor)?.as_bytes(),
    )
}

#[derive(Debug, Deserialize)]
struct GridRecord {
    lambda: f64,
    gamma: f64,
    eta: f64,
    tau: f64,
    k: usize,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    model: Option<ModelKind>,
}

/// Hyperparameter grid CSV with columns `lambda,gamma,eta,tau,k` and optional
/// `epsilon` and `model` (`joint` or `responses_only`).
pub fn parse_grid<R: Read>(reader: R, source: &str) -> Result<Vec<GridPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut grid = Vec::new();
    for record in rdr.deserialize::<GridRecord>() {
        let rec = record.map_err(|e| csv_error(source, e))?;
        let params = HyperParams {
            lambda: rec.lambda,
            gamma: rec.gamma,
            eta: rec.eta,
            tau: rec.tau,
            epsilon: rec.epsilon.unwrap_or(crate::model::DEFAULT_EPSILON),
            num_concepts: rec.k,
        };
        params.validate()?;
        grid.push(GridPoint {
            params,
            model: rec.model.unwrap_or_default(),
        });
    }
    if grid.is_empty() {
        return Err(parse_error(source, 1, "empty grid"));
    }
    Ok(grid)
}

pub fn load_grid(path: &Path) -> Result<Vec<GridPoint>> {
    parse_grid(open(path)?, &path.display().to_string())
}

fn model_name(model: ModelKind) -> &'static str {
    match model {
        ModelKind::Joint => "joint",
        ModelKind::ResponsesOnly => "responses_only",
    }
}

/// Score table CSV: `lambda,gamma,eta,tau,mean_likelihood,converged,k,model`;
/// failed grid points have an empty score.
pub fn write_score_table<W: Write>(outcome: &CvOutcome, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    wtr.write_record([
        "lambda",
        "gamma",
        "eta",
        "tau",
        "mean_likelihood",
        "converged",
        "k",
        "model",
    ])
    .map_err(to_err)?;
    for row in &outcome.table {
        let p = &row.point.params;
        wtr.write_record([
            p.lambda.to_string(),
            p.gamma.to_string(),
            p.eta.to_string(),
            p.tau.to_string(),
            row.score.map(|s| s.to_string()).unwrap_or_default(),
            row.converged.to_string(),
            p.num_concepts.to_string(),
            model_name(row.point.model).to_string(),
        ])
        .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Keyword table CSV: `concept,keyword_1,...,keyword_{top}`, one row per
/// concept, blank cells where a concept has fewer positive keywords.
pub fn write_keyword_table<W: Write>(
    summaries: &[ConceptSummary],
    top: usize,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["concept".to_string()];
    header.extend((1..=top).map(|r| format!("keyword_{r}")));
    wtr.write_record(&header).map_err(to_err)?;
    for s in summaries {
        let mut row = vec![(s.concept_index + 1).to_string()];
        row.extend((0..top).map(|r| {
            s.keywords
                .get(r)
                .map(|(w, _)| w.clone())
                .unwrap_or_default()
        }));
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Simulated data in the on-disk formats.
#[derive(Clone, Debug)]
pub struct SimulationFiles {
    pub responses: ResponseTable,
    /// One text document per question that has at least one observed grade;
    /// each word is repeated as many times as it was counted.
    pub corpus: Corpus,
    /// Generating factors, over every question and learner.
    pub truth: ModelArchive,
}

/// Ids `q000, q001, ...` and `s000, s001, ...`.
pub fn simulation_files(data: &SimulatedData, tau: f64) -> Result<SimulationFiles> {
    let ids = |prefix: char, n: usize| -> Vec<String> {
        let width = n.saturating_sub(1).to_string().len().max(3);
        (0..n).map(|k| format!("{prefix}{k:0width$}")).collect()
    };
    let question_ids = ids('q', data.truth.num_questions());
    let learner_ids = ids('s', data.truth.num_learners());
    let vocab = data.counts.vocabulary();
    let documents = (0..data.truth.num_questions())
        .filter(|&i| !data.responses.question_entries(i).is_empty())
        .map(|i| {
            let mut words = Vec::new();
            for (v, &n) in data.counts.counts().row(i).iter().enumerate() {
                words.extend(std::iter::repeat_n(vocab[v].as_str(), n as usize));
            }
            Document::text(question_ids[i].clone(), words.join(" "))
        })
        .collect();
    let params = HyperParams {
        tau,
        num_concepts: data.truth.num_concepts(),
        ..Default::default()
    };
    let truth = ModelArchive::new(
        &data.truth,
        params,
        ModelKind::Joint,
        vocab.to_vec(),
        question_ids.clone(),
        learner_ids.clone(),
        None,
    )?;
    Ok(SimulationFiles {
        responses: ResponseTable {
            responses: data.responses.clone(),
            question_ids,
            learner_ids,
        },
        corpus: Corpus::new(documents)?,
        truth,
    })
}
