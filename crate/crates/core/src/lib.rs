//! Joint sparse factor analysis of binary graded responses and Poisson topic
//! modeling of question text.
//!
//! Given which learners answered which questions correctly, and the words
//! each question's text contains, the estimator recovers
//!
//! - `W`: sparse, nonnegative question-concept associations,
//! - `mu`: per-question intrinsic difficulties,
//! - `C`: per-learner concept knowledge,
//! - `T`: nonnegative word-concept expressions, whose largest entries name
//!   each concept,
//!
//! by block coordinate descent on the penalized joint negative log-likelihood,
//! with FISTA solving each convex block.
//!
//! ```no_run
//! use topicfactor::{fit, simulate, FitConfig, HyperParams, SimulationSpec};
//!
//! let data = simulate(&SimulationSpec::default()).unwrap();
//! let params = HyperParams { tau: 2.0, ..Default::default() };
//! let (state, report) = fit(&data.responses, &data.counts, &params, &FitConfig::default()).unwrap();
//! println!("{} sweeps, converged: {}", report.outer_iterations, report.converged);
//! # let _ = state;
//! ```

pub mod error;
pub mod estimator;
pub mod eval;
pub mod io;
pub mod model;
pub mod prox;
pub mod simulate;
pub mod text;

pub use error::{Error, Result};
pub use estimator::{fit, fit_responses_only, initialize, FitConfig};
pub use eval::{
    association_graph, cross_validate, holdout_split, mean_predicted_likelihood, top_keywords,
    AssociationGraph, ConceptSummary, CvOutcome, CvProtocol, GridPoint, HoldoutSplit, ModelKind,
};
pub use model::{
    bernoulli_nll, inverse_logit, objective, poisson_nll, predict_response_prob, FactorState,
    FitReport, GradedResponseSet, HyperParams, Response, WordCountMatrix,
};
pub use prox::{fista_minimize, FistaConfig, SubproblemResult};
pub use simulate::{simulate, simulate_from_factors, SimulatedData, SimulationSpec};
pub use text::{build_vocabulary, count_matrix, tokenize, Corpus, Document, StopWordList};
