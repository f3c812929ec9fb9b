//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};

use topicfactor::{
    objective, FactorState, GradedResponseSet, HyperParams, Response, WordCountMatrix,
};

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..k {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

pub struct Instance {
    pub y: GradedResponseSet,
    pub b: WordCountMatrix,
    pub s: FactorState,
    pub h: HyperParams,
}

pub const REGIMES: [(&str, f64, f64, f64, f64); 3] = [
    ("text-led", 0.1, 0.5, 0.5, 0.5),
    ("balanced", 0.5, 1.0, 1.0, 2.0),
    ("response-led", 2.0, 2.0, 2.0, 8.0),
];

pub fn random_instance(rng: &mut ChaCha8Rng, regime: usize, max_dim: usize) -> Instance {
    let q = rng.random_range(2..=max_dim);
    let n = rng.random_range(2..=max_dim);
    let v = rng.random_range(2..=max_dim);
    let k = rng.random_range(1..=4);
    let (_, lambda, gamma, eta, tau) = REGIMES[regime];
    let h = HyperParams {
        lambda,
        gamma,
        eta,
        tau,
        num_concepts: k,
        ..Default::default()
    };
    let s = FactorState {
        w: Array2::from_shape_simple_fn((q, k), || rng.random_range(0.2..1.5)),
        mu: Array1::from_shape_simple_fn(q, || rng.sample(StandardNormal)),
        c: Array2::from_shape_simple_fn((k, n), || rng.sample(StandardNormal)),
        t: Array2::from_shape_simple_fn((k, v), || rng.random_range(0.2..1.5)),
    };
    let mut entries = Vec::new();
    for i in 0..q {
        for j in 0..n {
            if rng.random_bool(0.7) {
                entries.push(Response::new(i, j, rng.random_bool(0.5)));
            }
        }
    }
    if entries.is_empty() {
        entries.push(Response::new(0, 0, true));
    }
    let y = GradedResponseSet::new(q, n, entries).unwrap();
    let rates = s.w.dot(&s.t);
    let counts = rates.mapv(|a| rng.sample::<f64, _>(Poisson::new(a).unwrap()) as u32);
    let vocab = (0..v).map(|x| format!("w{x}")).collect();
    let b = WordCountMatrix::new(vocab, counts).unwrap();
    Instance { y, b, s, h }
}

/// Central difference of the full objective along the coordinates picked by
/// `slot`.
pub fn finite_difference(
    inst: &Instance,
    len: usize,
    slot: impl Fn(&mut FactorState, usize) -> &mut f64,
) -> Vec<f64> {
    const STEP: f64 = 1e-5;
    (0..len)
        .map(|d| {
            let mut plus = inst.s.clone();
            *slot(&mut plus, d) += STEP;
            let mut minus = inst.s.clone();
            *slot(&mut minus, d) -= STEP;
            let fp = objective(&inst.y, &inst.b, &plus, &inst.h).unwrap();
            let fm = objective(&inst.y, &inst.b, &minus, &inst.h).unwrap();
            (fp - fm) / (2.0 * STEP)
        })
        .collect()
}

pub fn projected_gradient(
    value: impl Fn(&[f64]) -> f64,
    gradient: impl Fn(&[f64]) -> Vec<f64>,
    project: impl Fn(f64) -> f64,
    x0: &[f64],
    iterations: usize,
) -> f64 {
    let mut x: Vec<f64> = x0.iter().map(|&v| project(v)).collect();
    let mut step = 1.0;
    for _ in 0..iterations {
        let fx = value(&x);
        let g = gradient(&x);
        loop {
            let cand: Vec<f64> = x
                .iter()
                .zip(&g)
                .map(|(a, b)| project(a - step * b))
                .collect();
            let d: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            if value(&cand) <= fx + dot(&g, &d) + dot(&d, &d) / (2.0 * step) {
                x = cand;
                break;
            }
            step *= 0.5;
        }
    }
    value(&x)
}

pub fn nll_logistic(correct: bool, u: f64) -> f64 {
    // -log p(y | u) with p(1) = 1 / (1 + e^-u)
    let s = if correct { -u } else { u };
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}
