use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topicfactor::eval::{concept_summaries, cross_validate, CvProtocol};
use topicfactor::io::{
    export_graph, load_corpus, load_grid, load_responses, parse_responses, write_keyword_table,
    write_responses, write_score_table, GraphDocument, GraphFormat, ModelArchive, ResponseTable,
};
use topicfactor::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn parse_line(err: &Error) -> u64 {
    match err {
        Error::Parse { line, .. } => *line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn well_formed_responses_load() {
    let table = load_responses(&fixture("responses_ok.csv")).unwrap();
    assert_eq!(table.question_ids, ["q1", "q2"]);
    assert_eq!(table.learner_ids, ["s1", "s2"]);
    assert_eq!(table.responses.len(), 4);
    assert_eq!(table.responses.density(), 1.0);
}

#[test]
fn malformed_responses_report_line_numbers() {
    let err = load_responses(&fixture("responses_bad_grade.csv")).unwrap_err();
    assert_eq!(parse_line(&err), 3);
    assert!(err.to_string().contains("yes"));

    let err = load_responses(&fixture("responses_grade_two.csv")).unwrap_err();
    assert_eq!(parse_line(&err), 2);

    let err = load_responses(&fixture("responses_short_row.csv")).unwrap_err();
    assert_eq!(parse_line(&err), 3);

    let err = load_responses(&fixture("responses_bad_header.csv")).unwrap_err();
    assert_eq!(parse_line(&err), 1);

    let err = load_responses(&fixture("responses_duplicate.csv")).unwrap_err();
    assert_eq!(parse_line(&err), 5);
    let msg = err.to_string();
    assert!(
        msg.contains("line 3") && msg.contains("q2") && msg.contains("s2"),
        "{msg}"
    );
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_responses(&fixture("no_such_file.csv")).unwrap_err();
    assert_eq!(err.kind(), "io");
    assert!(err.to_string().contains("no_such_file.csv"));
}

#[test]
fn corpus_fixtures() {
    let corpus = load_corpus(&fixture("corpus_ok.jsonl")).unwrap();
    assert_eq!(corpus.len(), 2);
    assert_eq!(corpus.documents()[1].tokens(), ["heat", "energy transfer"]);

    for (name, line) in [
        ("corpus_both_fields.jsonl", 2),
        ("corpus_bad_json.jsonl", 3),
        ("corpus_duplicate.jsonl", 2),
        ("corpus_no_content.jsonl", 1),
    ] {
        let err = load_corpus(&fixture(name)).unwrap_err();
        assert_eq!(parse_line(&err), line, "{name}: {err}");
    }
}

#[test]
fn corpus_must_cover_exactly_the_response_questions() {
    let corpus = load_corpus(&fixture("corpus_ok.jsonl")).unwrap();
    let ids = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert!(corpus.aligned_to(&ids(&["q2", "q1"])).is_ok());
    let err = corpus.aligned_to(&ids(&["q1"])).unwrap_err();
    assert!(err.to_string().contains("q2"));
    let err = corpus.aligned_to(&ids(&["q1", "q2", "q9"])).unwrap_err();
    assert!(err.to_string().contains("q9"));
}

#[test]
fn sparse_classroom_scale_file_loads() {
    // 80 questions, 145 learners, about 13.5% of the grades observed.
    let (q, n) = (80usize, 145usize);
    let target = (q as f64 * n as f64 * 0.135).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(145);
    let picks = rand::seq::index::sample(&mut rng, q * n, target).into_vec();
    let mut csv = String::from("question_id,learner_id,grade\n");
    for &cell in &picks {
        let (i, j) = (cell / n, cell % n);
        csv.push_str(&format!("q{i},s{j},{}\n", u8::from(rng.random_bool(0.6))));
    }
    let table = parse_responses(csv.as_bytes(), "classroom.csv").unwrap();
    assert_eq!(table.responses.len(), 1566);
    let (seen_q, seen_n) = (table.question_ids.len(), table.learner_ids.len());
    assert!(seen_q <= q && seen_n <= n);
    let density = table.responses.len() as f64 / (q * n) as f64;
    assert!((density - 0.135).abs() < 1e-3, "{density}");
}

#[test]
fn responses_round_trip_through_csv() {
    let data = simulate(&SimulationSpec {
        num_questions: 6,
        num_learners: 8,
        num_words: 4,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let table = ResponseTable {
        responses: data.responses.clone(),
        question_ids: (0..6).map(|i| format!("q{i}")).collect(),
        learner_ids: (0..8).map(|j| format!("s{j}")).collect(),
    };
    let mut buf = Vec::new();
    write_responses(&table, &mut buf).unwrap();
    let back = parse_responses(buf.as_slice(), "mem").unwrap();
    let external = |t: &ResponseTable| {
        let mut rows: Vec<(String, String, bool)> = t
            .responses
            .entries()
            .iter()
            .map(|r| {
                (
                    t.question_ids[r.question].clone(),
                    t.learner_ids[r.learner].clone(),
                    r.correct,
                )
            })
            .collect();
        rows.sort();
        rows
    };
    assert_eq!(external(&back), external(&table));
}

#[test]
fn grid_files() {
    let grid = load_grid(&fixture("grid_ok.csv")).unwrap();
    assert_eq!(grid.len(), 2);
    assert_eq!(grid[1].params.tau, 4.0);
    assert!(grid.iter().all(|p| p.model == ModelKind::Joint));

    let grid = load_grid(&fixture("grid_models.csv")).unwrap();
    assert_eq!(grid[1].model, ModelKind::ResponsesOnly);

    let err = load_grid(&fixture("grid_bad_tau.csv")).unwrap_err();
    assert_eq!(err.kind(), "invalid_hyperparameter");
}

fn fitted_archive() -> (ModelArchive, SimulatedData) {
    let data = simulate(&SimulationSpec {
        num_questions: 15,
        num_learners: 25,
        num_words: 12,
        num_concepts: 3,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let h = HyperParams {
        tau: 2.0,
        ..Default::default()
    };
    let (s, r) = fit(&data.responses, &data.counts, &h, &FitConfig::default()).unwrap();
    let archive = ModelArchive::new(
        &s,
        h,
        ModelKind::Joint,
        data.counts.vocabulary().to_vec(),
        (0..15).map(|i| format!("item-{i}")).collect(),
        (0..25).map(|j| format!("learner-{j}")).collect(),
        Some(&r),
    )
    .unwrap();
    (archive, data)
}

#[test]
fn score_table_columns() {
    let (_, data) = fitted_archive();
    let grid = vec![
        GridPoint::joint(HyperParams {
            tau: 2.0,
            ..Default::default()
        }),
        GridPoint::responses_only(HyperParams {
            tau: 2.0,
            ..Default::default()
        }),
    ];
    let outcome = cross_validate(
        &data.responses,
        &data.counts,
        &grid,
        &FitConfig::default(),
        &CvProtocol::Holdout {
            fraction: 0.2,
            seed: 1,
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_score_table(&outcome, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,gamma,eta,tau,mean_likelihood,converged,k,model"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with(",3,joint"));
    assert!(rows[1].ends_with(",3,responses_only"));
    let score: f64 = rows[0].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(score, outcome.table[0].score.unwrap());
}

#[test]
fn keyword_table_has_one_row_per_concept() {
    let (archive, _) = fitted_archive();
    let s = archive.state().unwrap();
    let summaries = concept_summaries(&s, &archive.vocabulary, 3, 0.0);
    let mut buf = Vec::new();
    write_keyword_table(&summaries, 3, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "concept,keyword_1,keyword_2,keyword_3");
    assert_eq!(lines.len(), 4);
    for summary in &summaries {
        assert!(summary.keywords.windows(2).all(|p| p[0].1 >= p[1].1));
        assert!(summary.questions.iter().all(|&(_, w, _)| w > 0.0));
    }
}

#[test]
fn graph_exports() {
    let (archive, _) = fitted_archive();
    let dir = tempfile::tempdir().unwrap();

    let dot_path = dir.path().join("graph.dot");
    export_graph(&archive, GraphFormat::Dot, None, &dot_path).unwrap();
    let dot = std::fs::read_to_string(&dot_path).unwrap();
    assert!(dot.starts_with("graph associations {"));
    assert!(dot.contains("[shape=box, label=\"item-0\\nmu="));
    for line in dot.lines().filter(|l| l.contains("shape=circle")) {
        let label = line.split("label=\"").nth(1).unwrap();
        // "Concept k" followed by at most three keywords.
        assert!(label.matches("\\n").count() <= 3, "{line}");
    }
    let widths: Vec<f64> = dot
        .lines()
        .filter_map(|l| l.split("penwidth=").nth(1))
        .map(|w| w.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!widths.is_empty());
    assert!(widths.iter().all(|&w| w > 0.0 && w <= 5.0));
    assert!(widths.iter().any(|&w| (w - 5.0).abs() < 1e-9));

    let json_path = dir.path().join("graph.json");
    export_graph(&archive, GraphFormat::Json, Some(0.0), &json_path).unwrap();
    let doc: GraphDocument =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let positive = archive.w.iter().flatten().filter(|&&w| w > 0.0).count();
    assert_eq!(doc.edges.len(), positive);
    assert_eq!(doc.nodes.len(), 15 + 3);

    assert_eq!(
        "svg".parse::<GraphFormat>().unwrap_err().kind(),
        "invalid_argument"
    );
}

#[test]
fn archive_rejects_tampering() {
    let (archive, _) = fitted_archive();
    let mut json: serde_json::Value = serde_json::from_str(&archive.to_json().unwrap()).unwrap();
    json["w"][0][0] = serde_json::json!(-1.0);
    let err = ModelArchive::from_json(&json.to_string()).unwrap_err();
    assert_eq!(err.kind(), "infeasible_state");

    let mut json: serde_json::Value = serde_json::from_str(&archive.to_json().unwrap()).unwrap();
    json["mu"].as_array_mut().unwrap().pop();
    assert!(ModelArchive::from_json(&json.to_string()).is_err());

    let mut json: serde_json::Value = serde_json::from_str(&archive.to_json().unwrap()).unwrap();
    json["schema_version"] = serde_json::json!(99);
    assert_eq!(
        ModelArchive::from_json(&json.to_string())
            .unwrap_err()
            .kind(),
        "format"
    );
}
