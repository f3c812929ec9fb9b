//! Checks against independently coded reference computations.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use topicfactor::eval::{association_graph, default_weight_floor};
use topicfactor::model::response_objective;
use topicfactor::prox::{grad_c_column, grad_t_column, grad_w_row, CColumnProblem, FistaConfig};
use topicfactor::*;

mod common;
use common::*;

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// The objective summed term by term in the most literal way.
fn literal_objective(
    y: &GradedResponseSet,
    b: &WordCountMatrix,
    s: &FactorState,
    h: &HyperParams,
) -> f64 {
    let (q, v, k) = (s.num_questions(), s.num_words(), s.num_concepts());
    let mut total = 0.0;
    for r in y.entries() {
        let mut z = s.mu[r.question];
        for c in 0..k {
            z += s.w[[r.question, c]] * s.c[[c, r.learner]];
        }
        let p = sigmoid(h.tau * z);
        total -= if r.correct { p.ln() } else { (1.0 - p).ln() };
    }
    for i in 0..q {
        for word in 0..v {
            let mut a = 0.0;
            for c in 0..k {
                a += s.w[[i, c]] * s.t[[c, word]];
            }
            let a = a.max(h.epsilon);
            total += a - b.get(i, word) as f64 * a.ln();
        }
    }
    total += h.lambda * s.w.iter().map(|x| x.abs()).sum::<f64>();
    total += 0.5 * h.gamma * s.c.iter().map(|x| x * x).sum::<f64>();
    total += 0.5 * h.eta * s.t.iter().map(|x| x * x).sum::<f64>();
    total
}

#[test]
fn objective_matches_literal_sum() {
    for (regime, &(_, lambda, gamma, eta, tau)) in REGIMES.iter().enumerate() {
        let h = HyperParams {
            lambda,
            gamma,
            eta,
            tau,
            num_concepts: 2,
            ..Default::default()
        };
        let data = simulate(&SimulationSpec {
            num_questions: 3,
            num_learners: 4,
            num_words: 5,
            num_concepts: 2,
            missing_fraction: 0.25,
            seed: 31 + regime as u64,
            ..Default::default()
        })
        .unwrap();
        let (y, b, s) = (&data.responses, &data.counts, &data.truth);
        let fast = objective(y, b, s, &h).unwrap();
        let slow = literal_objective(y, b, s, &h);
        assert!(
            (fast - slow).abs() <= 1e-12 * slow.abs(),
            "{fast} vs {slow}"
        );
    }
}

#[test]
fn objective_with_floored_rates_matches_literal_sum() {
    let data = simulate(&SimulationSpec {
        num_questions: 3,
        num_learners: 4,
        num_words: 5,
        num_concepts: 2,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let mut s = data.truth.clone();
    s.w.row_mut(1).fill(0.0);
    let h = HyperParams {
        num_concepts: 2,
        ..Default::default()
    };
    let fast = objective(&data.responses, &data.counts, &s, &h).unwrap();
    let slow = literal_objective(&data.responses, &data.counts, &s, &h);
    assert!((fast - slow).abs() <= 1e-12 * slow.abs());
}

#[test]
fn block_gradients_match_finite_differences_tightly() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for regime in 0..3 {
        let inst = random_instance(&mut rng, regime, 8);
        let k = inst.s.num_concepts();
        let h = inst.h;

        let mut w_aug = inst.s.w.row(0).to_vec();
        w_aug.push(inst.s.mu[0]);
        let mut g = grad_w_row(
            inst.y.question_entries(0),
            inst.b.counts().row(0),
            &inst.s.c,
            &inst.s.t,
            &w_aug,
            h.tau,
            h.epsilon,
        );
        g[..k].iter_mut().for_each(|x| *x += h.lambda);
        let fd = finite_difference(&inst, k + 1, |s, d| {
            if d < k {
                &mut s.w[[0, d]]
            } else {
                &mut s.mu[0]
            }
        });
        assert!(rel_err(&g, &fd) < 1e-5, "W row: {g:?} vs {fd:?}");

        let c_j = inst.s.c.column(1).to_vec();
        let g = grad_c_column(
            inst.y.learner_entries(1),
            &inst.s.w,
            &inst.s.mu,
            &c_j,
            h.gamma,
            h.tau,
        );
        let fd = finite_difference(&inst, k, |s, d| &mut s.c[[d, 1]]);
        assert!(rel_err(&g, &fd) < 1e-5, "C column: {g:?} vs {fd:?}");

        let t_v = inst.s.t.column(0).to_vec();
        let g = grad_t_column(0, &inst.b, &inst.s.w, &t_v, h.eta, h.epsilon);
        let fd = finite_difference(&inst, k, |s, d| &mut s.t[[d, 0]]);
        assert!(rel_err(&g, &fd) < 1e-5, "T column: {g:?} vs {fd:?}");
    }
}

#[test]
fn ridge_logistic_subproblem_matches_long_projected_gradient_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (k, m) = (5, 40);
    let w = Array2::from_shape_simple_fn((m, k), || rng.random_range(0.0..1.5));
    let mu = Array1::from_shape_simple_fn(m, || rng.sample::<f64, _>(StandardNormal));
    let obs: Vec<(usize, bool)> = (0..m).map(|i| (i, rng.random_bool(0.6))).collect();
    let (gamma, tau) = (1.0, 2.0);
    let x0 = vec![0.0; k];

    let fista = CColumnProblem::new(&obs, &w, &mu, gamma, tau)
        .solve(&x0, &FistaConfig::default())
        .unwrap();
    let value = |c: &[f64]| {
        0.5 * gamma * dot(c, c)
            + obs
                .iter()
                .map(|&(i, y)| {
                    nll_logistic(y, tau * (dot(w.row(i).as_slice().unwrap(), c) + mu[i]))
                })
                .sum::<f64>()
    };
    let gradient = |c: &[f64]| {
        let mut g: Vec<f64> = c.iter().map(|x| gamma * x).collect();
        for &(i, y) in &obs {
            let wi = w.row(i);
            let p = sigmoid(tau * (dot(wi.as_slice().unwrap(), c) + mu[i]));
            let r = tau * (p - f64::from(u8::from(y)));
            g.iter_mut()
                .zip(wi.iter())
                .for_each(|(gk, wk)| *gk += r * wk);
        }
        g
    };
    let oracle = projected_gradient(value, gradient, |v| v, &x0, 100_000);
    let gap = (fista.final_objective - oracle).abs() / oracle.abs();
    assert!(
        gap <= 1e-6,
        "fista {} oracle {oracle} gap {gap:e}",
        fista.final_objective
    );
}

#[test]
fn objective_invariant_under_concept_permutation() {
    let data = simulate(&SimulationSpec {
        num_questions: 10,
        num_learners: 12,
        num_words: 8,
        num_concepts: 4,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let h = HyperParams {
        num_concepts: 4,
        ..Default::default()
    };
    let base = objective(&data.responses, &data.counts, &data.truth, &h).unwrap();
    for perm in permutations(4) {
        let permuted = data.truth.permute_concepts(&perm);
        let value = objective(&data.responses, &data.counts, &permuted, &h).unwrap();
        assert!((value - base).abs() <= 1e-12 * base.abs());
    }
}

#[test]
fn different_seeds_give_different_initializations() {
    assert_ne!(initialize(5, 6, 7, 3, 1), initialize(5, 6, 7, 3, 2));
}

#[test]
fn empty_text_only_shifts_objective_by_rate_floor() {
    let data = simulate(&SimulationSpec {
        num_questions: 20,
        num_learners: 40,
        num_words: 6,
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let (q, v) = (20, 6);
    let b = WordCountMatrix::new(data.counts.vocabulary().to_vec(), Array2::zeros((q, v))).unwrap();
    let h = HyperParams {
        tau: 2.0,
        ..Default::default()
    };
    let cfg = FitConfig::default();
    let (joint, jr) = fit(&data.responses, &b, &h, &cfg).unwrap();
    let (only, or) = fit_responses_only(&data.responses, &h, &cfg).unwrap();
    assert!(jr.converged && or.converged);
    assert!(joint.t.iter().all(|&x| x == 0.0));
    let offset = (q * v) as f64 * h.epsilon;
    let diff = jr.final_objective() - or.final_objective();
    assert!(
        (diff - offset).abs() <= 1e-6,
        "difference {diff}, expected {offset}"
    );
    // The response part is evaluated on the same footing for both.
    let rj = response_objective(&data.responses, &joint, &h).unwrap();
    let ro = response_objective(&data.responses, &only, &h).unwrap();
    assert!((rj - ro).abs() <= 1e-6);
}

#[test]
fn count_matrix_total_equals_recount() {
    let corpus = Corpus::new(vec![
        Document::text(
            "a",
            "Heat flows from hot water to cold soil; heat is energy.",
        ),
        Document::text("b", "The soil, the water and the air all store energy"),
        Document::terms("c", vec!["Energy".into(), "heat transfer".into()]),
    ])
    .unwrap();
    let stops = StopWordList::english();
    let vocab = build_vocabulary(&corpus, &stops, 1).unwrap();
    let b = count_matrix(&corpus, &vocab).unwrap();
    let recount: u64 = corpus
        .documents()
        .iter()
        .flat_map(|d| d.tokens())
        .filter(|t| vocab.contains(t))
        .count() as u64;
    assert_eq!(b.total(), recount);
    assert_eq!(b.counts().sum() as u64, recount);
}

#[test]
fn true_factor_score_matches_recomputation() {
    let data = simulate(&SimulationSpec::default()).unwrap();
    let split = holdout_split(&data.responses, 0.2, 1).unwrap();
    let test = split.test_responses(&data.responses);
    let score = mean_predicted_likelihood(&data.truth, &test, 2.0).unwrap();
    let direct: f64 = test
        .iter()
        .map(|r| {
            let z = data.truth.mu[r.question]
                + (0..3)
                    .map(|k| data.truth.w[[r.question, k]] * data.truth.c[[k, r.learner]])
                    .sum::<f64>();
            let p = sigmoid(2.0 * z);
            if r.correct {
                p
            } else {
                1.0 - p
            }
        })
        .sum::<f64>()
        / test.len() as f64;
    assert!((score - direct).abs() <= 1e-12 * direct);
    assert!(score > 0.5);
}

#[test]
fn poisson_counts_average_to_their_rates() {
    let truth = FactorState {
        w: ndarray::array![[0.5, 1.0], [2.0, 0.0]],
        mu: Array1::zeros(2),
        c: Array2::zeros((2, 1)),
        t: ndarray::array![[1.0, 0.2, 3.0], [0.5, 0.0, 1.0]],
    };
    let rates = truth.w.dot(&truth.t);
    let draws = 4000;
    let mut sums = Array2::<f64>::zeros(rates.dim());
    for seed in 0..draws {
        let data = simulate_from_factors(&truth, 1.0, 0.0, seed).unwrap();
        sums += &data.counts.counts().mapv(f64::from);
    }
    for ((i, v), &a) in rates.indexed_iter() {
        let mean = sums[[i, v]] / draws as f64;
        let se = (a.max(1e-6) / draws as f64).sqrt();
        assert!(
            (mean - a).abs() <= 3.0 * se,
            "({i},{v}): mean {mean}, rate {a}"
        );
    }
}

#[test]
fn sparsity_shows_in_fitted_graphs() {
    let h = HyperParams {
        tau: 2.0,
        ..Default::default()
    };
    for seed in 0..10 {
        let data = simulate(&SimulationSpec {
            seed,
            ..Default::default()
        })
        .unwrap();
        let (s, report) = fit(
            &data.responses,
            &data.counts,
            &h,
            &FitConfig {
                rng_seed: seed,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.converged);
        let g = association_graph(&s, default_weight_floor(&s));
        let per_question = g.edges.len() as f64 / s.num_questions() as f64;
        assert!(
            per_question < 3.0,
            "seed {seed}: {per_question} edges per question"
        );
    }
}
