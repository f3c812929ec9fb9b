//! Block coordinate descent over `W`, `C` and `T`.
//!
//! One outer sweep updates every row of `(W, mu)`, then every column of `C`,
//! then every column of `T`, each by FISTA with the other factors fixed.
//! Each block step starts from the current value and never returns a worse
//! subproblem objective, so the full objective is nonincreasing across sweeps.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    objective, response_objective, FactorState, FitReport, GradedResponseSet, HyperParams,
    WordCountMatrix,
};
use crate::prox::subproblems::words_major;
use crate::prox::{CColumnProblem, FistaConfig, SubproblemResult, TColumnProblem, WRowProblem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_outer_iterations: usize,
    /// Stop once one sweep lowers the objective by less than this, relative.
    pub outer_relative_tolerance: f64,
    pub inner: FistaConfig,
    pub rng_seed: u64,
    /// Solve the rows/columns of a block on the rayon pool. Results are the
    /// same either way; each subproblem is solved independently.
    pub parallel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 100,
            outer_relative_tolerance: 1e-5,
            inner: FistaConfig::default(),
            rng_seed: 0,
            parallel: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_relative_tolerance.is_nan() || self.outer_relative_tolerance <= 0.0 {
            return Err(Error::InvalidArgument(
                "outer_relative_tolerance must be positive".into(),
            ));
        }
        self.inner.validate()
    }
}

/// Random starting point: `W` and `T` i.i.d. uniform on (0, 1), `C` standard
/// normal, `mu` zero. Draws `W`, then `C`, then `T`, so two calls that differ
/// only in `num_words` agree on `W` and `C`.
pub fn initialize(
    num_questions: usize,
    num_learners: usize,
    num_words: usize,
    num_concepts: usize,
    rng_seed: u64,
) -> FactorState {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = Array2::from_shape_simple_fn((num_questions, num_concepts), || {
        rng.sample::<f64, _>(Open01)
    });
    let c = Array2::from_shape_simple_fn((num_concepts, num_learners), || {
        rng.sample::<f64, _>(StandardNormal)
    });
    let t =
        Array2::from_shape_simple_fn((num_concepts, num_words), || rng.sample::<f64, _>(Open01));
    FactorState {
        w,
        mu: Array1::zeros(num_questions),
        c,
        t,
    }
}

/// Fits all four factors to grades and word counts.
pub fn fit(
    y: &GradedResponseSet,
    b: &WordCountMatrix,
    h: &HyperParams,
    cfg: &FitConfig,
) -> Result<(FactorState, FitReport)> {
    if b.num_questions() != y.num_questions() {
        return Err(Error::DimensionMismatch {
            axis: "questions",
            expected: y.num_questions(),
            found: b.num_questions(),
        });
    }
    BlockDescent::new(y, Some(b), h, cfg)?.run()
}

/// Response-only fit: the word-count term and the `T` block are dropped.
/// The returned `T` has zero columns.
pub fn fit_responses_only(
    y: &GradedResponseSet,
    h: &HyperParams,
    cfg: &FitConfig,
) -> Result<(FactorState, FitReport)> {
    BlockDescent::new(y, None, h, cfg)?.run()
}

#[derive(Clone, Copy, Debug)]
enum Block {
    W,
    C,
    T,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::W => "W",
            Block::C => "C",
            Block::T => "T",
        }
    }
}

struct BlockDescent<'a> {
    y: &'a GradedResponseSet,
    b: Option<&'a WordCountMatrix>,
    h: &'a HyperParams,
    cfg: &'a FitConfig,
}

impl<'a> BlockDescent<'a> {
    fn new(
        y: &'a GradedResponseSet,
        b: Option<&'a WordCountMatrix>,
        h: &'a HyperParams,
        cfg: &'a FitConfig,
    ) -> Result<Self> {
        h.validate()?;
        cfg.validate()?;
        if y.is_empty() {
            return Err(Error::NoObservations);
        }
        Ok(Self { y, b, h, cfg })
    }

    fn objective(&self, s: &FactorState) -> Result<f64> {
        match self.b {
            Some(b) => objective(self.y, b, s, self.h),
            None => response_objective(self.y, s, self.h),
        }
    }

    fn solve_all<F>(&self, count: usize, solve: F) -> Result<Vec<SubproblemResult>>
    where
        F: Fn(usize) -> Result<SubproblemResult> + Sync + Send,
    {
        if self.cfg.parallel {
            (0..count).into_par_iter().map(solve).collect()
        } else {
            (0..count).map(solve).collect()
        }
    }

    fn step(&self, s: &mut FactorState, block: Block) -> Result<()> {
        let (h, cfg) = (self.h, &self.cfg.inner);
        let k = s.num_concepts();
        match block {
            Block::W => {
                let t_by_word = words_major(&s.t);
                let results = self.solve_all(s.num_questions(), |i| {
                    let text = self.b.map(|b| (b.counts().row(i), t_by_word.as_slice()));
                    let problem =
                        WRowProblem::new(self.y.question_entries(i), &s.c, text, h.tau, h.epsilon);
                    let mut x0: Vec<f64> = s.w.row(i).to_vec();
                    x0.push(s.mu[i]);
                    problem.solve(&x0, h.lambda, cfg)
                })?;
                for (i, r) in results.into_iter().enumerate() {
                    for (dst, &src) in s.w.row_mut(i).iter_mut().zip(&r.solution[..k]) {
                        *dst = src;
                    }
                    s.mu[i] = r.solution[k];
                }
            }
            Block::C => {
                let results = self.solve_all(s.num_learners(), |j| {
                    let problem =
                        CColumnProblem::new(self.y.learner_entries(j), &s.w, &s.mu, h.gamma, h.tau);
                    problem.solve(&s.c.column(j).to_vec(), cfg)
                })?;
                for (j, r) in results.into_iter().enumerate() {
                    for (dst, &src) in s.c.column_mut(j).iter_mut().zip(&r.solution) {
                        *dst = src;
                    }
                }
            }
            Block::T => {
                let Some(b) = self.b else {
                    return Ok(());
                };
                let w_rows: Vec<f64> = s.w.iter().copied().collect();
                let results = self.solve_all(s.num_words(), |v| {
                    let counts = b.counts().column(v).to_vec();
                    let problem = TColumnProblem::new(&w_rows, k, counts, h.eta, h.epsilon);
                    problem.solve(&s.t.column(v).to_vec(), cfg)
                })?;
                for (v, r) in results.into_iter().enumerate() {
                    for (dst, &src) in s.t.column_mut(v).iter_mut().zip(&r.solution) {
                        *dst = src;
                    }
                }
            }
        }
        Ok(())
    }

    /// A word never counted has `t_v = 0` as its exact minimizer whatever
    /// `W` is; setting it before the first `W` step keeps random starting
    /// values of such words from weighing on `W`.
    fn clear_unused_words(&self, s: &mut FactorState) {
        let Some(b) = self.b else { return };
        for (v, counts) in b.counts().columns().into_iter().enumerate() {
            if counts.iter().all(|&n| n == 0) {
                s.t.column_mut(v).fill(0.0);
            }
        }
    }

    fn run(&self) -> Result<(FactorState, FitReport)> {
        let started = Instant::now();
        let num_words = self.b.map_or(0, |b| b.num_words());
        let mut state = initialize(
            self.y.num_questions(),
            self.y.num_learners(),
            num_words,
            self.h.num_concepts,
            self.cfg.rng_seed,
        );
        let initial = self.objective(&state)?;
        let mut report = FitReport {
            initial_objective: initial,
            objective_trace: Vec::new(),
            converged: false,
            outer_iterations: 0,
            wall_time: 0.0,
        };
        if !initial.is_finite() {
            return Err(Error::Diverged {
                iteration: 0,
                block: "initialization",
                last_finite: Box::new((state, report)),
            });
        }

        let blocks: &[Block] = if self.b.is_some() {
            &[Block::W, Block::C, Block::T]
        } else {
            &[Block::W, Block::C]
        };
        let mut previous = initial;
        for sweep in 1..=self.cfg.max_outer_iterations {
            if sweep == 1 {
                self.clear_unused_words(&mut state);
            }
            for &block in blocks {
                let before = state.clone();
                let outcome = self
                    .step(&mut state, block)
                    .and_then(|_| self.objective(&state));
                match outcome {
                    Ok(value) if value.is_finite() => {}
                    Ok(_) | Err(Error::NonFiniteGradient { .. }) => {
                        report.wall_time = started.elapsed().as_secs_f64();
                        return Err(Error::Diverged {
                            iteration: sweep,
                            block: block.name(),
                            last_finite: Box::new((before, report)),
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
            let current = self.objective(&state)?;
            report.objective_trace.push(current);
            report.outer_iterations = sweep;
            if (previous - current) <= self.cfg.outer_relative_tolerance * previous.abs() {
                report.converged = true;
                break;
            }
            previous = current;
        }
        report.wall_time = started.elapsed().as_secs_f64();
        Ok((state, report))
    }
}
