//! Holdout scoring, cross-validation, and concept interpretation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, fit_responses_only, FitConfig};
use crate::model::{
    bernoulli_nll, inverse_logit, FactorState, GradedResponseSet, HyperParams, Response,
    WordCountMatrix,
};

/// A partition of the observed entries into training and test indices
/// (positions in [`GradedResponseSet::entries`]).
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutSplit {
    pub train_entries: Vec<usize>,
    pub test_entries: Vec<usize>,
    pub fraction: f64,
    pub seed: u64,
}

impl HoldoutSplit {
    pub fn train_set(&self, y: &GradedResponseSet) -> Result<GradedResponseSet> {
        y.subset(&self.train_entries)
    }

    pub fn test_responses(&self, y: &GradedResponseSet) -> Vec<Response> {
        self.test_entries.iter().map(|&k| y.entries()[k]).collect()
    }
}

/// Moves entries from `candidates`, in order, into the test set until it holds
/// `target` entries, skipping any whose removal would leave its question or
/// learner without training data.
fn greedy_holdout(
    y: &GradedResponseSet,
    candidates: &[usize],
    remaining_q: &mut [usize],
    remaining_l: &mut [usize],
    target: usize,
) -> Vec<usize> {
    let mut test = Vec::with_capacity(target);
    for &k in candidates {
        if test.len() == target {
            break;
        }
        let r = y.entries()[k];
        if remaining_q[r.question] > 1 && remaining_l[r.learner] > 1 {
            remaining_q[r.question] -= 1;
            remaining_l[r.learner] -= 1;
            test.push(k);
        }
    }
    test
}

fn observation_counts(y: &GradedResponseSet) -> (Vec<usize>, Vec<usize>) {
    let q = (0..y.num_questions())
        .map(|i| y.question_entries(i).len())
        .collect();
    let l = (0..y.num_learners())
        .map(|j| y.learner_entries(j).len())
        .collect();
    (q, l)
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut held = vec![false; n];
    test.iter().for_each(|&k| held[k] = true);
    (0..n).filter(|&k| !held[k]).collect()
}

/// Uniformly random holdout of `round(fraction * |entries|)` observations.
/// Every question and learner keeps at least one training entry.
pub fn holdout_split(y: &GradedResponseSet, fraction: f64, seed: u64) -> Result<HoldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "holdout needs at least two observed entries".into(),
        ));
    }
    let target = (fraction * n as f64).round() as usize;
    if target == 0 {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {fraction} of {n} entries rounds to an empty test set"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut rq, mut rl) = observation_counts(y);
    let mut test = greedy_holdout(y, &order, &mut rq, &mut rl, target);
    if test.len() < target {
        return Err(Error::InfeasibleHoldout {
            requested: target,
            achieved: test.len(),
        });
    }
    test.sort_unstable();
    Ok(HoldoutSplit {
        train_entries: complement(n, &test),
        test_entries: test,
        fraction,
        seed,
    })
}

/// `folds` disjoint test sets from one shuffle. An entry whose removal would
/// leave its question or learner untrained stays in training for its fold.
pub fn kfold_splits(y: &GradedResponseSet, folds: usize, seed: u64) -> Result<Vec<HoldoutSplit>> {
    if folds < 2 || folds > y.len() {
        return Err(Error::InvalidArgument(format!(
            "fold count {folds} must lie in [2, {}]",
            y.len()
        )));
    }
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|f| {
            let members: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
            let (mut rq, mut rl) = observation_counts(y);
            let mut test = greedy_holdout(y, &members, &mut rq, &mut rl, members.len());
            if test.is_empty() {
                return Err(Error::InfeasibleHoldout {
                    requested: members.len(),
                    achieved: 0,
                });
            }
            test.sort_unstable();
            Ok(HoldoutSplit {
                train_entries: complement(n, &test),
                test_entries: test,
                fraction: 1.0 / folds as f64,
                seed,
            })
        })
        .collect()
}

/// How held-out predictions are summarized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    /// Mean probability assigned to the observed grade.
    #[default]
    Probability,
    /// Mean log of that probability.
    LogProbability,
}

/// Mean over `test` of the probability the model assigns to each observed grade.
pub fn mean_predicted_likelihood(s: &FactorState, test: &[Response], tau: f64) -> Result<f64> {
    score_predictions(s, test, tau, ScoreKind::Probability)
}

pub fn mean_log_likelihood(s: &FactorState, test: &[Response], tau: f64) -> Result<f64> {
    score_predictions(s, test, tau, ScoreKind::LogProbability)
}

pub fn score_predictions(
    s: &FactorState,
    test: &[Response],
    tau: f64,
    kind: ScoreKind,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut total = 0.0;
    for r in test {
        if r.question >= s.num_questions() {
            return Err(Error::IndexOutOfRange {
                what: "question",
                index: r.question,
                size: s.num_questions(),
            });
        }
        if r.learner >= s.num_learners() {
            return Err(Error::IndexOutOfRange {
                what: "learner",
                index: r.learner,
                size: s.num_learners(),
            });
        }
        let z = s.logit(r.question, r.learner);
        total += match kind {
            ScoreKind::Probability => {
                let p = inverse_logit(tau * z);
                if r.correct {
                    p
                } else {
                    1.0 - p
                }
            }
            ScoreKind::LogProbability => -bernoulli_nll(r.correct, z, tau),
        };
    }
    Ok(total / test.len() as f64)
}

/// Which model a grid point fits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Grades and text.
    #[default]
    Joint,
    /// Grades only; the large-precision limit of the joint model.
    ResponsesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: HyperParams,
    pub model: ModelKind,
}

impl GridPoint {
    pub fn joint(params: HyperParams) -> Self {
        Self {
            params,
            model: ModelKind::Joint,
        }
    }

    pub fn responses_only(params: HyperParams) -> Self {
        Self {
            params,
            model: ModelKind::ResponsesOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CvProtocol {
    Holdout { fraction: f64, seed: u64 },
    KFold { folds: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvRow {
    pub point: GridPoint,
    /// Mean held-out predicted likelihood; `None` when a fit failed.
    pub score: Option<f64>,
    /// Whether every fold's fit converged.
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOutcome {
    pub best_index: usize,
    pub table: Vec<CvRow>,
}

impl CvOutcome {
    pub fn best(&self) -> &GridPoint {
        &self.table[self.best_index].point
    }

    pub fn best_score(&self) -> f64 {
        self.table[self.best_index]
            .score
            .expect("best row always has a score")
    }
}

/// Fits one grid point on the training part of `y` and scores the test part.
pub fn fit_and_score(
    y: &GradedResponseSet,
    b: &WordCountMatrix,
    point: &GridPoint,
    cfg: &FitConfig,
    split: &HoldoutSplit,
) -> Result<(f64, bool)> {
    let train = split.train_set(y)?;
    let (state, report) = match point.model {
        ModelKind::Joint => fit(&train, b, &point.params, cfg)?,
        ModelKind::ResponsesOnly => fit_responses_only(&train, &point.params, cfg)?,
    };
    let score = mean_predicted_likelihood(&state, &split.test_responses(y), point.params.tau)?;
    Ok((score, report.converged))
}

/// Scores every grid point by held-out predicted likelihood and picks the best.
///
/// Ties go to the larger `lambda`, then the smaller `tau`, then the earlier
/// grid position. Grid points whose fit fails are kept in the table without
/// a score.
pub fn cross_validate(
    y: &GradedResponseSet,
    b: &WordCountMatrix,
    grid: &[GridPoint],
    cfg: &FitConfig,
    protocol: &CvProtocol,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    let splits = match *protocol {
        CvProtocol::Holdout { fraction, seed } => vec![holdout_split(y, fraction, seed)?],
        CvProtocol::KFold { folds, seed } => kfold_splits(y, folds, seed)?,
    };
    let evaluate = |point: &GridPoint| -> CvRow {
        let mut total = 0.0;
        let mut converged = true;
        for split in &splits {
            match fit_and_score(y, b, point, cfg, split) {
                Ok((score, conv)) => {
                    total += score;
                    converged &= conv;
                }
                Err(e) => {
                    return CvRow {
                        point: *point,
                        score: None,
                        converged: false,
                        failure: Some(e.to_string()),
                    }
                }
            }
        }
        CvRow {
            point: *point,
            score: Some(total / splits.len() as f64),
            converged,
            failure: None,
        }
    };
    let table: Vec<CvRow> = if cfg.parallel {
        grid.par_iter().map(evaluate).collect()
    } else {
        grid.iter().map(evaluate).collect()
    };

    let mut best: Option<usize> = None;
    for (idx, row) in table.iter().enumerate() {
        let Some(score) = row.score else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let current = &table[b];
                let cs = current.score.unwrap();
                let (p, q) = (&row.point.params, &current.point.params);
                score > cs
                    || (score == cs
                        && (p.lambda > q.lambda || (p.lambda == q.lambda && p.tau < q.tau)))
            }
        };
        if better {
            best = Some(idx);
        }
    }
    let best_index = best.ok_or(Error::NoScoredGridPoint)?;
    Ok(CvOutcome { best_index, table })
}

/// Interpretation of one concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub concept_index: usize,
    /// `(word, T[k, v])`, descending weight, all weights positive.
    pub keywords: Vec<(String, f64)>,
    /// `(question, W[i, k], mu_i)`, descending weight.
    pub questions: Vec<(usize, f64, f64)>,
}

fn ranked_positive(weights: impl Iterator<Item = f64>) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = weights.enumerate().filter(|&(_, w)| w > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// The `k_words` largest entries of each row of `T`, as words.
pub fn top_keywords(s: &FactorState, vocab: &[String], k_words: usize) -> Vec<ConceptSummary> {
    (0..s.num_concepts())
        .map(|k| {
            let mut ranked = ranked_positive(s.t.row(k).iter().copied());
            ranked.truncate(k_words);
            ConceptSummary {
                concept_index: k,
                keywords: ranked
                    .into_iter()
                    .map(|(v, w)| (vocab[v].clone(), w))
                    .collect(),
                questions: Vec::new(),
            }
        })
        .collect()
}

/// Keywords plus the questions associated with each concept above
/// `weight_floor`.
pub fn concept_summaries(
    s: &FactorState,
    vocab: &[String],
    k_words: usize,
    weight_floor: f64,
) -> Vec<ConceptSummary> {
    let mut out = top_keywords(s, vocab, k_words);
    for summary in &mut out {
        let k = summary.concept_index;
        summary.questions = ranked_positive(s.w.column(k).iter().copied())
            .into_iter()
            .filter(|&(_, w)| w > weight_floor)
            .map(|(i, w)| (i, w, s.mu[i]))
            .collect();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub question: usize,
    pub concept: usize,
    pub weight: f64,
}

/// Bipartite question/concept graph; question nodes carry their difficulty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationGraph {
    pub num_concepts: usize,
    pub difficulties: Vec<f64>,
    pub edges: Vec<Edge>,
}

impl AssociationGraph {
    pub fn num_questions(&self) -> usize {
        self.difficulties.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_questions() + self.num_concepts
    }

    pub fn degree_of_question(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.question == i).count()
    }
}

/// `0.05 * max(W)`.
pub fn default_weight_floor(s: &FactorState) -> f64 {
    0.05 * s.w.iter().copied().fold(0.0, f64::max)
}

/// Edge `(i, k)` for every `W[i, k] > weight_floor`.
pub fn association_graph(s: &FactorState, weight_floor: f64) -> AssociationGraph {
    let edges =
        s.w.indexed_iter()
            .filter(|&(_, &w)| w > weight_floor)
            .map(|((question, concept), &weight)| Edge {
                question,
                concept,
                weight,
            })
            .collect();
    AssociationGraph {
        num_concepts: s.num_concepts(),
        difficulties: s.mu.to_vec(),
        edges,
    }
}
