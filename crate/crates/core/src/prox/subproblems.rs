//! Row and column subproblems of the block coordinate descent.
//!
//! Every problem copies the slices of the fixed factors it needs into
//! contiguous row-major buffers, so evaluation is a handful of short dot
//! products per observation.

use ndarray::{Array1, Array2, ArrayView1};

use super::fista::{
    fista_minimize, FistaConfig, Identity, NonNegative, NonNegativeL1, SmoothObjective,
    SubproblemResult,
};
use crate::error::Result;
use crate::model::{bernoulli_nll, inverse_logit, poisson_nll, WordCountMatrix};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn grade(correct: bool) -> f64 {
    if correct {
        1.0
    } else {
        0.0
    }
}

/// `T` (K x V) laid out word-major: entry `v * K + k` is `T[k, v]`.
pub(crate) fn words_major(t: &Array2<f64>) -> Vec<f64> {
    t.t().iter().copied().collect()
}

/// Poisson term of one question's text: `sum_v (a_v - b_v log a_v)` with
/// `a_v = max(w . t_v, epsilon)`.
#[derive(Clone, Debug)]
struct WordTerm<'a> {
    t_by_word: &'a [f64],
    counts: Vec<u32>,
}

/// Problem over `(w_i, mu_i)` for one question, packed as a `(K+1)` vector
/// with `mu_i` last.
///
/// Smooth part: response NLL over the learners who answered question `i`,
/// plus the word-count NLL of the question's text when present. Penalty:
/// `lambda * |w_i|_1` with `w_i >= 0`; `mu_i` is free.
#[derive(Clone, Debug)]
pub struct WRowProblem<'a> {
    k: usize,
    c_obs: Vec<f64>,
    grades: Vec<bool>,
    words: Option<WordTerm<'a>>,
    tau: f64,
    epsilon: f64,
}

impl<'a> WRowProblem<'a> {
    /// `t_by_word` is `T` in word-major layout (see [`TColumnProblem`]), paired
    /// with this question's row of counts.
    pub fn new(
        y_row: &[(usize, bool)],
        c: &Array2<f64>,
        text: Option<(ArrayView1<'_, u32>, &'a [f64])>,
        tau: f64,
        epsilon: f64,
    ) -> Self {
        let k = c.nrows();
        let mut c_obs = Vec::with_capacity(y_row.len() * k);
        let mut grades = Vec::with_capacity(y_row.len());
        for &(j, correct) in y_row {
            c_obs.extend(c.column(j).iter());
            grades.push(correct);
        }
        let words = text.map(|(counts, t_by_word)| {
            debug_assert_eq!(t_by_word.len(), counts.len() * k);
            WordTerm {
                t_by_word,
                counts: counts.to_vec(),
            }
        });
        Self {
            k,
            c_obs,
            grades,
            words,
            tau,
            epsilon,
        }
    }

    pub fn solve(&self, w_aug: &[f64], lambda: f64, cfg: &FistaConfig) -> Result<SubproblemResult> {
        let penalty = NonNegativeL1 {
            lambda,
            free_tail: 1,
        };
        fista_minimize(self, &penalty, w_aug, cfg)
    }
}

impl SmoothObjective for WRowProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (w, mu) = (&x[..self.k], x[self.k]);
        let mut total: f64 = self
            .c_obs
            .chunks_exact(self.k)
            .zip(&self.grades)
            .map(|(cj, &y)| bernoulli_nll(y, dot(w, cj) + mu, self.tau))
            .sum();
        if let Some(words) = &self.words {
            total += words
                .t_by_word
                .chunks_exact(self.k)
                .zip(&words.counts)
                .map(|(tv, &b)| poisson_nll(b, dot(w, tv), self.epsilon))
                .sum::<f64>();
        }
        total
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let (w, mu) = (&x[..self.k], x[self.k]);
        grad.fill(0.0);
        let (gw, gmu) = grad.split_at_mut(self.k);
        for (cj, &y) in self.c_obs.chunks_exact(self.k).zip(&self.grades) {
            let p = inverse_logit(self.tau * (dot(w, cj) + mu));
            let dz = self.tau * (p - grade(y));
            axpy(dz, cj, gw);
            gmu[0] += dz;
        }
        if let Some(words) = &self.words {
            for (tv, &b) in words.t_by_word.chunks_exact(self.k).zip(&words.counts) {
                let s = 1.0 - b as f64 / dot(w, tv).max(self.epsilon);
                axpy(s, tv, gw);
            }
        }
    }
}

/// Problem over one learner's knowledge vector `c_j`: response NLL over the
/// questions that learner answered plus `gamma/2 * |c_j|^2`. Unconstrained.
#[derive(Clone, Debug)]
pub struct CColumnProblem {
    k: usize,
    w_obs: Vec<f64>,
    mu_obs: Vec<f64>,
    grades: Vec<bool>,
    gamma: f64,
    tau: f64,
}

impl CColumnProblem {
    pub fn new(
        y_col: &[(usize, bool)],
        w: &Array2<f64>,
        mu: &Array1<f64>,
        gamma: f64,
        tau: f64,
    ) -> Self {
        let k = w.ncols();
        let mut w_obs = Vec::with_capacity(y_col.len() * k);
        let mut mu_obs = Vec::with_capacity(y_col.len());
        let mut grades = Vec::with_capacity(y_col.len());
        for &(i, correct) in y_col {
            w_obs.extend(w.row(i).iter());
            mu_obs.push(mu[i]);
            grades.push(correct);
        }
        Self {
            k,
            w_obs,
            mu_obs,
            grades,
            gamma,
            tau,
        }
    }

    pub fn solve(&self, c_j: &[f64], cfg: &FistaConfig) -> Result<SubproblemResult> {
        fista_minimize(self, &Identity, c_j, cfg)
    }

    fn observations(&self) -> impl Iterator<Item = (&[f64], f64, bool)> {
        self.w_obs
            .chunks_exact(self.k)
            .zip(&self.mu_obs)
            .zip(&self.grades)
            .map(|((wi, &mu), &y)| (wi, mu, y))
    }
}

impl SmoothObjective for CColumnProblem {
    fn value(&self, x: &[f64]) -> f64 {
        let nll: f64 = self
            .observations()
            .map(|(wi, mu, y)| bernoulli_nll(y, dot(wi, x) + mu, self.tau))
            .sum();
        nll + 0.5 * self.gamma * dot(x, x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = self.gamma * xi;
        }
        for (wi, mu, y) in self.observations() {
            let p = inverse_logit(self.tau * (dot(wi, x) + mu));
            axpy(self.tau * (p - grade(y)), wi, grad);
        }
    }
}

/// Problem over one word's concept profile `t_v`: word-count NLL down column
/// `v` of the counts plus `eta/2 * |t_v|^2`, subject to `t_v >= 0`.
#[derive(Clone, Debug)]
pub struct TColumnProblem<'a> {
    k: usize,
    w_rows: &'a [f64],
    counts: Vec<u32>,
    eta: f64,
    epsilon: f64,
}

impl<'a> TColumnProblem<'a> {
    /// `w_rows` is `W` row-major (`Q x K`), `counts` is column `v` of the counts.
    pub fn new(w_rows: &'a [f64], k: usize, counts: Vec<u32>, eta: f64, epsilon: f64) -> Self {
        debug_assert_eq!(w_rows.len(), counts.len() * k);
        Self {
            k,
            w_rows,
            counts,
            eta,
            epsilon,
        }
    }

    pub fn solve(&self, t_v: &[f64], cfg: &FistaConfig) -> Result<SubproblemResult> {
        fista_minimize(self, &NonNegative, t_v, cfg)
    }
}

impl SmoothObjective for TColumnProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let nll: f64 = self
            .w_rows
            .chunks_exact(self.k)
            .zip(&self.counts)
            .map(|(wi, &b)| poisson_nll(b, dot(wi, x), self.epsilon))
            .sum();
        nll + 0.5 * self.eta * dot(x, x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = self.eta * xi;
        }
        for (wi, &b) in self.w_rows.chunks_exact(self.k).zip(&self.counts) {
            let r = 1.0 - b as f64 / dot(wi, x).max(self.epsilon);
            axpy(r, wi, grad);
        }
    }
}

/// Gradient of the word-`v` subproblem at `t_v`: `W^T r + eta * t_v` with
/// `r_i = 1 - B[i,v] / max(w_i . t_v, epsilon)`.
pub fn grad_t_column(
    v: usize,
    b: &WordCountMatrix,
    w: &Array2<f64>,
    t_v: &[f64],
    eta: f64,
    epsilon: f64,
) -> Vec<f64> {
    let w_rows: Vec<f64> = w.iter().copied().collect();
    let counts = b.counts().column(v).to_vec();
    let problem = TColumnProblem::new(&w_rows, w.ncols(), counts, eta, epsilon);
    let mut grad = vec![0.0; t_v.len()];
    problem.gradient(t_v, &mut grad);
    grad
}

/// Gradient of the smooth part of the question-`i` subproblem at
/// `w_aug = (w_i, mu_i)`: `tau * sum_j (p_j - y_ij) (c_j, 1)` over observed
/// learners, plus `(T s, 0)` with `s_v = 1 - B[i,v] / max(w_i . t_v, epsilon)`.
pub fn grad_w_row(
    y_row: &[(usize, bool)],
    b_row: ArrayView1<'_, u32>,
    c: &Array2<f64>,
    t: &Array2<f64>,
    w_aug: &[f64],
    tau: f64,
    epsilon: f64,
) -> Vec<f64> {
    let t_by_word = words_major(t);
    let problem = WRowProblem::new(y_row, c, Some((b_row, &t_by_word)), tau, epsilon);
    let mut grad = vec![0.0; w_aug.len()];
    problem.gradient(w_aug, &mut grad);
    grad
}

/// Gradient of the learner-`j` subproblem at `c_j`:
/// `tau * sum_i (p_i - y_ij) w_i + gamma * c_j` over observed questions.
pub fn grad_c_column(
    y_col: &[(usize, bool)],
    w: &Array2<f64>,
    mu: &Array1<f64>,
    c_j: &[f64],
    gamma: f64,
    tau: f64,
) -> Vec<f64> {
    let problem = CColumnProblem::new(y_col, w, mu, gamma, tau);
    let mut grad = vec![0.0; c_j.len()];
    problem.gradient(c_j, &mut grad);
    grad
}

/// Euclidean projection onto the nonnegative orthant.
pub fn prox_nonneg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Prox of `threshold * |w|_1 + indicator(w >= 0)` on all entries but the
/// last, which is `mu` and passes through.
pub fn prox_w(x: &[f64], threshold: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    let n = out.len().saturating_sub(1);
    out[..n]
        .iter_mut()
        .for_each(|v| *v = (*v - threshold).max(0.0));
    out
}
