//! Domain types and the statistical model.
//!
//! Grades follow a Bernoulli-logit model with precision `tau`,
//! `P(Y[i,j] = 1) = inverse_logit(tau * (w_i . c_j + mu_i))`, and word counts
//! follow a Poisson model with rate `A[i,v] = w_i . t_v`, floored at `epsilon`.
//! [`objective`] sums both negative log-likelihoods with an l1 penalty on `W`
//! and ridge penalties on `C` and `T`.

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor applied to every Poisson rate.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// One observed grade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Response {
    pub question: usize,
    pub learner: usize,
    pub correct: bool,
}

impl Response {
    pub fn new(question: usize, learner: usize, correct: bool) -> Self {
        Self {
            question,
            learner,
            correct,
        }
    }

    #[inline]
    pub fn grade(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// The observed entries of a `Q x N` binary grade matrix.
///
/// Unobserved pairs are simply absent. Per-question and per-learner adjacency
/// lists are built once at construction so the row and column subproblems can
/// walk only their own observations.
#[derive(Clone, Debug)]
pub struct GradedResponseSet {
    num_questions: usize,
    num_learners: usize,
    entries: Vec<Response>,
    by_question: Vec<Vec<(usize, bool)>>,
    by_learner: Vec<Vec<(usize, bool)>>,
}

impl GradedResponseSet {
    pub fn new(num_questions: usize, num_learners: usize, entries: Vec<Response>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoObservations);
        }
        let mut seen = HashSet::with_capacity(entries.len());
        let mut by_question = vec![Vec::new(); num_questions];
        let mut by_learner = vec![Vec::new(); num_learners];
        for r in &entries {
            if r.question >= num_questions {
                return Err(Error::IndexOutOfRange {
                    what: "question",
                    index: r.question,
                    size: num_questions,
                });
            }
            if r.learner >= num_learners {
                return Err(Error::IndexOutOfRange {
                    what: "learner",
                    index: r.learner,
                    size: num_learners,
                });
            }
            if !seen.insert((r.question, r.learner)) {
                return Err(Error::DuplicateEntry {
                    question: r.question,
                    learner: r.learner,
                });
            }
            by_question[r.question].push((r.learner, r.correct));
            by_learner[r.learner].push((r.question, r.correct));
        }
        Ok(Self {
            num_questions,
            num_learners,
            entries,
            by_question,
            by_learner,
        })
    }

    /// Same dimensions, restricted to `entries[k]` for each `k` in `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let picked = indices.iter().map(|&k| self.entries[k]).collect();
        Self::new(self.num_questions, self.num_learners, picked)
    }

    pub fn num_questions(&self) -> usize {
        self.num_questions
    }

    pub fn num_learners(&self) -> usize {
        self.num_learners
    }

    pub fn entries(&self) -> &[Response] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(learner, correct)` pairs observed for question `i`.
    pub fn question_entries(&self, i: usize) -> &[(usize, bool)] {
        &self.by_question[i]
    }

    /// `(question, correct)` pairs observed for learner `j`.
    pub fn learner_entries(&self, j: usize) -> &[(usize, bool)] {
        &self.by_learner[j]
    }

    /// Fraction of the full `Q x N` grid that is observed.
    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / (self.num_questions * self.num_learners) as f64
    }
}

/// Bag-of-words counts, one row per question, one column per vocabulary word.
#[derive(Clone, Debug, PartialEq)]
pub struct WordCountMatrix {
    vocabulary: Vec<String>,
    counts: Array2<u32>,
}

impl WordCountMatrix {
    pub fn new(vocabulary: Vec<String>, counts: Array2<u32>) -> Result<Self> {
        if counts.ncols() != vocabulary.len() {
            return Err(Error::DimensionMismatch {
                axis: "vocabulary",
                expected: vocabulary.len(),
                found: counts.ncols(),
            });
        }
        let mut seen = HashSet::with_capacity(vocabulary.len());
        for word in &vocabulary {
            if word.is_empty() {
                return Err(Error::InvalidArgument("empty vocabulary word".into()));
            }
            if !seen.insert(word.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary word {word:?}"
                )));
            }
        }
        Ok(Self { vocabulary, counts })
    }

    /// All-zero counts over `num_words` placeholder words.
    pub fn zeros(num_questions: usize, num_words: usize) -> Self {
        Self {
            vocabulary: (0..num_words).map(|v| format!("w{v}")).collect(),
            counts: Array2::zeros((num_questions, num_words)),
        }
    }

    pub fn num_questions(&self) -> usize {
        self.counts.nrows()
    }

    pub fn num_words(&self) -> usize {
        self.counts.ncols()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn counts(&self) -> &Array2<u32> {
        &self.counts
    }

    #[inline]
    pub fn get(&self, i: usize, v: usize) -> u32 {
        self.counts[[i, v]]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// The four estimated factors.
///
/// `w` is `Q x K`, `mu` has length `Q`, `c` is `K x N` and `t` is `K x V`.
/// `w` and `t` are entrywise nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorState {
    pub w: Array2<f64>,
    pub mu: Array1<f64>,
    pub c: Array2<f64>,
    pub t: Array2<f64>,
}

impl FactorState {
    pub fn zeros(
        num_questions: usize,
        num_learners: usize,
        num_words: usize,
        num_concepts: usize,
    ) -> Self {
        Self {
            w: Array2::zeros((num_questions, num_concepts)),
            mu: Array1::zeros(num_questions),
            c: Array2::zeros((num_concepts, num_learners)),
            t: Array2::zeros((num_concepts, num_words)),
        }
    }

    pub fn num_questions(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_learners(&self) -> usize {
        self.c.ncols()
    }

    pub fn num_words(&self) -> usize {
        self.t.ncols()
    }

    pub fn num_concepts(&self) -> usize {
        self.w.ncols()
    }

    /// Checks shape consistency, finiteness, and nonnegativity of `w` and `t`.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_concepts();
        check_dim("difficulties", self.num_questions(), self.mu.len())?;
        check_dim("concepts", k, self.c.nrows())?;
        check_dim("concepts", k, self.t.nrows())?;
        let all = self
            .w
            .iter()
            .chain(self.mu.iter())
            .chain(self.c.iter())
            .chain(self.t.iter());
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Infeasible("non-finite factor entry".into()));
        }
        if self.w.iter().any(|&x| x < 0.0) {
            return Err(Error::Infeasible("negative entry in W".into()));
        }
        if self.t.iter().any(|&x| x < 0.0) {
            return Err(Error::Infeasible("negative entry in T".into()));
        }
        Ok(())
    }

    /// `w_i . c_j + mu_i`.
    #[inline]
    pub fn logit(&self, i: usize, j: usize) -> f64 {
        self.w.row(i).dot(&self.c.column(j)) + self.mu[i]
    }

    /// `w_i . t_v`, before the epsilon floor.
    #[inline]
    pub fn raw_rate(&self, i: usize, v: usize) -> f64 {
        self.w.row(i).dot(&self.t.column(v))
    }

    /// Relabels concepts: new concept `k` is old concept `perm[k]`.
    pub fn permute_concepts(&self, perm: &[usize]) -> FactorState {
        assert_eq!(perm.len(), self.num_concepts());
        FactorState {
            w: self.w.select(Axis(1), perm),
            mu: self.mu.clone(),
            c: self.c.select(Axis(0), perm),
            t: self.t.select(Axis(0), perm),
        }
    }

    pub fn l1_norm_w(&self) -> f64 {
        self.w.iter().map(|x| x.abs()).sum()
    }
}

fn check_dim(axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            axis,
            expected,
            found,
        })
    }
}

/// Regularization weights, response precision, rate floor, and concept count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// l1 weight on `W`.
    pub lambda: f64,
    /// Ridge weight on `C`.
    pub gamma: f64,
    /// Ridge weight on `T`.
    pub eta: f64,
    /// Precision scaling the response logits.
    pub tau: f64,
    /// Floor on every Poisson rate.
    pub epsilon: f64,
    pub num_concepts: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 1.0,
            eta: 1.0,
            tau: 1.0,
            epsilon: DEFAULT_EPSILON,
            num_concepts: 3,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidHyperParam {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        if self.num_concepts == 0 {
            return Err(Error::InvalidHyperParam {
                name: "num_concepts",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(())
    }
}

/// Outcome of a block coordinate descent run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective at the initial state, before any sweep.
    pub initial_objective: f64,
    /// Objective after each completed sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Seconds; excluded from model archives so they stay reproducible.
    #[serde(default)]
    pub wall_time: f64,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace
            .last()
            .copied()
            .unwrap_or(self.initial_objective)
    }
}

/// `1 / (1 + e^-x)` without overflow for large `|x|`. NaN maps to NaN.
#[inline]
pub fn inverse_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^u)`.
#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `-log P(y | inverse_logit(tau * z))`.
#[inline]
pub fn bernoulli_nll(correct: bool, z: f64, tau: f64) -> f64 {
    let s = tau * z;
    if correct {
        softplus(-s)
    } else {
        softplus(-s) + s
    }
}

/// Poisson negative log-likelihood of count `b` at rate `max(rate, epsilon)`,
/// without the `log(b!)` constant.
#[inline]
pub fn poisson_nll(b: u32, rate: f64, epsilon: f64) -> f64 {
    let a = rate.max(epsilon);
    if b == 0 {
        a
    } else {
        a - b as f64 * a.ln()
    }
}

/// Individual terms of the objective; [`ObjectiveTerms::total`] is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub responses: f64,
    pub words: f64,
    pub l1_w: f64,
    pub ridge_c: f64,
    pub ridge_t: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.responses + self.words + self.l1_w + self.ridge_c + self.ridge_t
    }
}

fn check_response_dims(y: &GradedResponseSet, s: &FactorState) -> Result<()> {
    check_dim("questions", y.num_questions(), s.num_questions())?;
    check_dim("difficulties", y.num_questions(), s.mu.len())?;
    check_dim("learners", y.num_learners(), s.num_learners())?;
    check_dim("concepts", s.num_concepts(), s.c.nrows())
}

fn response_terms(y: &GradedResponseSet, s: &FactorState, h: &HyperParams) -> ObjectiveTerms {
    let responses = y
        .entries()
        .iter()
        .map(|r| bernoulli_nll(r.correct, s.logit(r.question, r.learner), h.tau))
        .sum();
    ObjectiveTerms {
        responses,
        l1_w: h.lambda * s.l1_norm_w(),
        ridge_c: 0.5 * h.gamma * s.c.iter().map(|x| x * x).sum::<f64>(),
        ..Default::default()
    }
}

/// Full joint objective, broken into terms.
pub fn objective_terms(
    y: &GradedResponseSet,
    b: &WordCountMatrix,
    s: &FactorState,
    h: &HyperParams,
) -> Result<ObjectiveTerms> {
    check_response_dims(y, s)?;
    check_dim("questions", s.num_questions(), b.num_questions())?;
    check_dim("vocabulary", b.num_words(), s.num_words())?;
    check_dim("concepts", s.num_concepts(), s.t.nrows())?;

    let mut terms = response_terms(y, s, h);
    // A = W T, then the Poisson term entrywise.
    let rates = s.w.dot(&s.t);
    terms.words = rates
        .iter()
        .zip(b.counts().iter())
        .map(|(&a, &count)| poisson_nll(count, a, h.epsilon))
        .sum();
    terms.ridge_t = 0.5 * h.eta * s.t.iter().map(|x| x * x).sum::<f64>();
    Ok(terms)
}

/// Joint objective: response NLL over observed entries, word-count NLL over all
/// entries, `lambda * |W|_1`, `gamma/2 * |C|^2` and `eta/2 * |T|^2`.
/// `mu` is not penalized.
pub fn objective(
    y: &GradedResponseSet,
    b: &WordCountMatrix,
    s: &FactorState,
    h: &HyperParams,
) -> Result<f64> {
    objective_terms(y, b, s, h).map(|t| t.total())
}

/// Objective of the response-only model: no word-count term and no `T` penalty.
pub fn response_objective(y: &GradedResponseSet, s: &FactorState, h: &HyperParams) -> Result<f64> {
    check_response_dims(y, s)?;
    Ok(response_terms(y, s, h).total())
}

/// `inverse_logit(tau * (w_i . c_j + mu_i))`.
pub fn predict_response_prob(s: &FactorState, i: usize, j: usize, tau: f64) -> Result<f64> {
    if i >= s.num_questions() {
        return Err(Error::IndexOutOfRange {
            what: "question",
            index: i,
            size: s.num_questions(),
        });
    }
    if j >= s.num_learners() {
        return Err(Error::IndexOutOfRange {
            what: "learner",
            index: j,
            size: s.num_learners(),
        });
    }
    Ok(inverse_logit(tau * s.logit(i, j)))
}
