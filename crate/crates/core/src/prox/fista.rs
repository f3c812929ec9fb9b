//! Accelerated proximal gradient (FISTA) with backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Differentiable part of a composite objective.
pub trait SmoothObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
}

/// Nonsmooth part of a composite objective, given through its proximal map.
pub trait ProximalTerm {
    /// Penalty value at a feasible `x`.
    fn value(&self, x: &[f64]) -> f64;

    /// In-place `argmin_u step * g(u) + 1/2 |u - x|^2`.
    fn prox(&self, x: &mut [f64], step: f64);

    /// Pulls an extrapolated point back into the constraint set, if any.
    fn clip_to_domain(&self, _y: &mut [f64]) {}
}

/// Smooth objective built from a pair of closures.
pub struct ClosureObjective<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> SmoothObjective for ClosureObjective<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.gradient)(x, grad)
    }
}

/// No penalty; FISTA reduces to accelerated gradient descent.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl ProximalTerm for Identity {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn prox(&self, _x: &mut [f64], _step: f64) {}
}

/// Indicator of the nonnegative orthant.
#[derive(Clone, Copy, Debug, Default)]
pub struct NonNegative;

impl ProximalTerm for NonNegative {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn prox(&self, x: &mut [f64], _step: f64) {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }

    fn clip_to_domain(&self, y: &mut [f64]) {
        self.prox(y, 0.0);
    }
}

/// `lambda * |x|_1` restricted to `x >= 0`, applied to every entry except the
/// last `free_tail`, which are left unconstrained and unpenalized.
#[derive(Clone, Copy, Debug)]
pub struct NonNegativeL1 {
    pub lambda: f64,
    pub free_tail: usize,
}

impl NonNegativeL1 {
    fn split(&self, len: usize) -> usize {
        len.saturating_sub(self.free_tail)
    }
}

impl ProximalTerm for NonNegativeL1 {
    fn value(&self, x: &[f64]) -> f64 {
        let n = self.split(x.len());
        self.lambda * x[..n].iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, x: &mut [f64], step: f64) {
        let n = self.split(x.len());
        let threshold = self.lambda * step;
        x[..n]
            .iter_mut()
            .for_each(|v| *v = (*v - threshold).max(0.0));
    }

    fn clip_to_domain(&self, y: &mut [f64]) {
        let n = self.split(y.len());
        y[..n].iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FistaConfig {
    pub max_iterations: usize,
    pub initial_step: f64,
    /// Multiplier applied to the step on every failed sufficient-decrease test.
    pub backtrack_factor: f64,
    /// Stop once the composite objective changes by less than this, relative.
    pub relative_tolerance: f64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            relative_tolerance: 1e-7,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidArgument(
                "initial_step must be positive".into(),
            ));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidArgument(
                "backtrack_factor must lie in (0, 1)".into(),
            ));
        }
        if self.relative_tolerance.is_nan() || self.relative_tolerance <= 0.0 {
            return Err(Error::InvalidArgument(
                "relative_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemResult {
    pub solution: Vec<f64>,
    /// Composite objective (smooth + penalty) at `solution`.
    pub final_objective: f64,
    pub iterations_used: usize,
}

const MAX_BACKTRACKS: usize = 200;

/// Minimizes `f(x) + g(x)` from a feasible `x0`.
///
/// Each iteration retries the previous step enlarged by `1 / backtrack_factor`
/// and shrinks it by `backtrack_factor` until the quadratic upper bound
/// `f(x) <= f(y) + <grad f(y), x - y> + |x - y|^2 / (2 step)` holds. No
/// momentum restart. The best iterate seen is returned, so the result never
/// has a larger composite objective than `x0`.
pub fn fista_minimize<F, P>(f: &F, g: &P, x0: &[f64], cfg: &FistaConfig) -> Result<SubproblemResult>
where
    F: SmoothObjective + ?Sized,
    P: ProximalTerm + ?Sized,
{
    let n = x0.len();
    let mut x_prev = x0.to_vec();
    let mut y = x0.to_vec();
    let mut cand = vec![0.0; n];
    let mut grad = vec![0.0; n];

    let start = f.value(x0) + g.value(x0);
    let mut best = x0.to_vec();
    let mut best_obj = start;
    let mut prev_obj = start;
    let mut momentum = 1.0_f64;
    let mut step = cfg.initial_step;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iterations {
        iterations = iter;
        let fy = f.value(&y);
        f.gradient(&y, &mut grad);
        if !fy.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration: iter });
        }
        if iter > 1 {
            step /= cfg.backtrack_factor;
        }

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((c, yi), gi) in cand.iter_mut().zip(&y).zip(&grad) {
                *c = yi - step * gi;
            }
            g.prox(&mut cand, step);
            let fc = f.value(&cand);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((c, yi), gi) in cand.iter().zip(&y).zip(&grad) {
                let d = c - yi;
                lin += gi * d;
                sq += d * d;
            }
            let bound = fy + lin + sq / (2.0 * step);
            // Slack for rounding when the step barely moves the iterate.
            if fc.is_finite() && fc <= bound + 1e-15 * fy.abs().max(1.0) {
                accepted = Some(fc);
                break;
            }
            step *= cfg.backtrack_factor;
        }
        let Some(fc) = accepted else {
            break;
        };

        let obj = fc + g.value(&cand);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&cand);
        }

        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next;
        momentum = next;
        for ((yi, c), xp) in y.iter_mut().zip(&cand).zip(&x_prev) {
            *yi = c + beta * (c - xp);
        }
        g.clip_to_domain(&mut y);
        x_prev.copy_from_slice(&cand);

        if (obj - prev_obj).abs() <= cfg.relative_tolerance * prev_obj.abs().max(1.0) {
            break;
        }
        prev_obj = obj;
    }

    Ok(SubproblemResult {
        solution: best,
        final_objective: best_obj,
        iterations_used: iterations,
    })
}
