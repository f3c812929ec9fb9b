//! Synthetic grades and word counts drawn from the model itself.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Exp, Exp1, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    inverse_logit, FactorState, GradedResponseSet, Response, WordCountMatrix, DEFAULT_EPSILON,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationSpec {
    pub num_questions: usize,
    pub num_learners: usize,
    pub num_words: usize,
    pub num_concepts: usize,
    /// Nonzero entries per row of `W`.
    pub sparsity: usize,
    pub tau: f64,
    /// Fraction of the grade matrix hidden after sampling.
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            num_questions: 50,
            num_learners: 100,
            num_words: 60,
            num_concepts: 3,
            sparsity: 2,
            tau: 2.0,
            missing_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub responses: GradedResponseSet,
    pub counts: WordCountMatrix,
    pub truth: FactorState,
}

/// Placeholder vocabulary `w000, w001, ...`.
pub fn synthetic_vocabulary(num_words: usize) -> Vec<String> {
    let width = num_words.saturating_sub(1).to_string().len().max(3);
    (0..num_words).map(|v| format!("w{v:0width$}")).collect()
}

/// Draws factors, then grades and counts from them.
///
/// Rows of `W` have `sparsity` nonzeros at uniformly chosen concepts with
/// Exp(1) magnitudes; `C` and `mu` are standard normal; `T` entries are
/// Exp(rate 0.5). Each grade is Bernoulli at `inverse_logit(tau * Z)`, and a
/// uniformly chosen `round(missing_fraction * Q * N)` grades are then hidden.
/// Counts are Poisson at `max(W T, 1e-6)`.
pub fn simulate(spec: &SimulationSpec) -> Result<SimulatedData> {
    let SimulationSpec {
        num_questions: q,
        num_learners: n,
        num_words: v,
        num_concepts: k,
        sparsity,
        tau,
        missing_fraction,
        seed,
    } = *spec;
    if q == 0 || n == 0 || v == 0 || k == 0 {
        return Err(Error::InvalidArgument(
            "simulation dimensions must be at least 1".into(),
        ));
    }
    if sparsity > k {
        return Err(Error::InvalidArgument(format!(
            "sparsity {sparsity} exceeds the number of concepts {k}"
        )));
    }
    check_sampling_args(tau, missing_fraction)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::<f64>::zeros((q, k));
    for i in 0..q {
        for concept in sample(&mut rng, k, sparsity).iter() {
            w[[i, concept]] = rng.sample(Exp1);
        }
    }
    let mu = Array1::from_shape_simple_fn(q, || rng.sample::<f64, _>(StandardNormal));
    let c = Array2::from_shape_simple_fn((k, n), || rng.sample::<f64, _>(StandardNormal));
    let word_weight = Exp::new(0.5).expect("valid rate");
    let t = Array2::from_shape_simple_fn((k, v), || rng.sample(word_weight));
    let truth = FactorState { w, mu, c, t };
    sample_observations(truth, tau, missing_fraction, &mut rng)
}

/// Grades and counts drawn from given factors, as in [`simulate`].
pub fn simulate_from_factors(
    truth: &FactorState,
    tau: f64,
    missing_fraction: f64,
    seed: u64,
) -> Result<SimulatedData> {
    truth.validate()?;
    if truth.num_questions() == 0 || truth.num_learners() == 0 || truth.num_words() == 0 {
        return Err(Error::InvalidArgument(
            "simulation dimensions must be at least 1".into(),
        ));
    }
    check_sampling_args(tau, missing_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_observations(truth.clone(), tau, missing_fraction, &mut rng)
}

fn check_sampling_args(tau: f64, missing_fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&missing_fraction) {
        return Err(Error::InvalidArgument(format!(
            "missing fraction {missing_fraction} must lie in [0, 1)"
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau {tau} must be positive"
        )));
    }
    Ok(())
}

fn sample_observations(
    truth: FactorState,
    tau: f64,
    missing_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedData> {
    let (q, n, v) = (
        truth.num_questions(),
        truth.num_learners(),
        truth.num_words(),
    );
    let mut grades = Vec::with_capacity(q * n);
    for i in 0..q {
        for j in 0..n {
            let p = inverse_logit(tau * truth.logit(i, j));
            let correct = rng.sample(Bernoulli::new(p).expect("probability in [0, 1]"));
            grades.push(Response::new(i, j, correct));
        }
    }
    let keep = (((1.0 - missing_fraction) * (q * n) as f64).round() as usize).max(1);
    let mut kept: Vec<usize> = sample(rng, q * n, keep).into_vec();
    kept.sort_unstable();
    let responses = GradedResponseSet::new(q, n, kept.into_iter().map(|x| grades[x]).collect())?;

    let rates = truth.w.dot(&truth.t);
    let counts = rates.mapv(|a| {
        let poisson = Poisson::new(a.max(DEFAULT_EPSILON)).expect("positive rate");
        rng.sample::<f64, _>(poisson) as u32
    });
    let counts = WordCountMatrix::new(synthetic_vocabulary(v), counts)?;

    Ok(SimulatedData {
        responses,
        counts,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_observed_when_nothing_missing() {
        let data = simulate(&SimulationSpec {
            num_questions: 6,
            num_learners: 7,
            num_words: 5,
            missing_fraction: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(data.responses.len(), 42);
        data.truth.validate().unwrap();
    }

    #[test]
    fn rows_of_w_have_requested_support() {
        let data = simulate(&SimulationSpec {
            num_questions: 20,
            num_concepts: 4,
            sparsity: 2,
            ..Default::default()
        })
        .unwrap();
        for row in data.truth.w.rows() {
            assert_eq!(row.iter().filter(|&&x| x > 0.0).count(), 2);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SimulationSpec {
            num_questions: 5,
            num_learners: 6,
            num_words: 4,
            seed: 9,
            ..Default::default()
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.responses.entries(), b.responses.entries());
    }

    #[test]
    fn rejects_bad_arguments() {
        let too_sparse = SimulationSpec {
            sparsity: 4,
            ..Default::default()
        };
        assert!(simulate(&too_sparse).is_err());
        let all_missing = SimulationSpec {
            missing_fraction: 1.0,
            ..Default::default()
        };
        assert!(simulate(&all_missing).is_err());
    }

    #[test]
    fn vocabulary_names() {
        assert_eq!(synthetic_vocabulary(2), ["w000", "w001"]);
        assert_eq!(synthetic_vocabulary(1500)[1499], "w1499");
    }
}
