mod common;

use common::*;
use mlirl_core::irl::{
    decompose, exact_surrogate_gradient, likelihood_from_measure, likelihood_gradient, maxent_irl_inner,
    maxent_irl_objective, objective_gap_coefficient, soft_q_lipschitz_ratio, stochastic_gradient,
    surrogate_objective,
};
use mlirl_core::mdp::{rollout, seeded_rng, soft_value_iteration, visitation_measure, SolverOptions};
use mlirl_core::reward::RewardModel;
use mlirl_core::world_model::ConservativeMdp;
use ndarray::{Array1, Array3};
use rand::Rng;

fn tight() -> SolverOptions {
    SolverOptions::with_tol(1e-13)
}

fn models(n_s: usize, n_a: usize, seed: u64) -> Vec<RewardModel> {
    let mut r = rng(seed);
    let phi = Array3::from_shape_simple_fn((n_s, n_a, 3), || r.random::<f64>() * 2.0 - 1.0);
    vec![
        RewardModel::tabular(n_s, n_a, 1.0).unwrap(),
        RewardModel::linear(phi.clone(), 1.5).unwrap(),
        RewardModel::mlp2(phi, 4, 1.0).unwrap(),
    ]
}

#[test]
fn likelihood_decomposes_into_surrogate_plus_mismatch() {
    for seed in 0..25 {
        let n_s = 2 + seed as usize % 7;
        let n_a = 1 + seed as usize % 4;
        let (mdp, _) = random_mdp(n_s, n_a, 0.9, seed);
        let cmdp = random_conservative(&mdp, 0.5, seed + 1);
        let expert = random_policy(n_s, n_a, seed + 2);
        let d = visitation_measure(&mdp, &expert, 1e-13).unwrap();
        let reward = RewardModel::tabular(n_s, n_a, 1.0).unwrap();
        let theta = random_vector(reward.param_dim(), 2.0, seed + 3);
        let dec = decompose(&mdp, &d, &cmdp, &reward, &theta, &tight()).unwrap();

        // independent path: likelihood from the policy's log-probabilities,
        // surrogate from the value function and an explicit mismatch sum
        let r = reward.evaluate(&theta).unwrap();
        let sol = soft_value_iteration(&cmdp.mdp, &r, &cmdp.penalty, &tight()).unwrap();
        let g = mdp.discount();
        let logp = sol.policy.log_probs();
        let (mut lik, mut sur, mut mis) = (0.0, 0.0, 0.0);
        for s in 0..n_s {
            for a in 0..n_a {
                let w = d.get(s, a);
                lik += w * logp[[s, a]];
                sur += w * (r[[s, a]] + cmdp.penalty[[s, a]]);
                for sp in 0..n_s {
                    mis += w * sol.v[sp] * (cmdp.mdp.transition()[[s, a, sp]] - mdp.transition()[[s, a, sp]]);
                }
            }
        }
        lik /= 1.0 - g;
        sur = sur / (1.0 - g) - mdp.initial_dist().dot(&sol.v);
        mis *= g / (1.0 - g);
        assert!((lik - sur - mis).abs() <= 1e-8, "seed {seed}: {}", lik - sur - mis);
        assert!((dec.likelihood - lik).abs() <= 1e-9);
        assert!((dec.surrogate - sur).abs() <= 1e-9);
        assert!(dec.residual.abs() <= 1e-8);
    }
}

#[test]
fn objective_gap_is_bounded_by_mismatch() {
    for seed in 0..40 {
        let (mdp, _) = random_mdp(5, 3, 0.9, seed);
        let cmdp = random_conservative(&mdp, 1.0, seed + 10);
        let expert = random_policy(5, 3, seed + 11);
        let d = visitation_measure(&mdp, &expert, 1e-13).unwrap();
        let reward = RewardModel::tabular(5, 3, 1.0).unwrap();
        let theta = random_vector(15, 4.0, seed);
        let dec = decompose(&mdp, &d, &cmdp, &reward, &theta, &tight()).unwrap();
        let mismatch: f64 = d
            .table()
            .indexed_iter()
            .map(|((s, a), w)| {
                let l1: f64 = (0..5)
                    .map(|sp| (cmdp.mdp.transition()[[s, a, sp]] - mdp.transition()[[s, a, sp]]).abs())
                    .sum();
                w * l1
            })
            .sum();
        let bound = objective_gap_coefficient(1.0, 1.0, 3, 0.9) * mismatch;
        assert!((dec.likelihood - dec.surrogate).abs() <= bound);
    }
}

#[test]
fn exact_model_makes_likelihood_and_surrogate_equal() {
    let (mdp, _) = random_mdp(4, 2, 0.9, 5);
    let cmdp = ConservativeMdp::exact(&mdp);
    let d = visitation_measure(&mdp, &random_policy(4, 2, 6), 1e-13).unwrap();
    let reward = RewardModel::tabular(4, 2, 1.0).unwrap();
    let dec = decompose(&mdp, &d, &cmdp, &reward, &random_vector(8, 1.0, 7), &tight()).unwrap();
    assert!(dec.mismatch_term.abs() < 1e-15);
    assert!((dec.likelihood - dec.surrogate).abs() < 1e-9);
    assert!(dec.likelihood <= 0.0);
}

fn central_difference(f: impl Fn(&Array1<f64>) -> f64, theta: &Array1<f64>, h: f64) -> Array1<f64> {
    Array1::from_shape_fn(theta.len(), |i| {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = a - b;
    diff.dot(&diff).sqrt() / b.dot(b).sqrt().max(1e-8)
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    for seed in 0..8 {
        let (mdp, _) = random_mdp(4, 3, 0.9, seed);
        let cmdp = random_conservative(&mdp, 0.5, seed + 20);
        let d = visitation_measure(&mdp, &random_policy(4, 3, seed + 21), 1e-13).unwrap();
        for reward in models(4, 3, seed) {
            let theta = random_vector(reward.param_dim(), 1.0, seed + 22);
            let g = exact_surrogate_gradient(&cmdp, &reward, &theta, &d, &tight()).unwrap();
            let fd = central_difference(
                |t| surrogate_objective(&cmdp, &reward, t, &d, &tight()).unwrap(),
                &theta,
                1e-5,
            );
            assert!(rel_err(&g, &fd) <= 1e-5, "{} seed {seed}: {}", reward.kind().name(), rel_err(&g, &fd));
        }
    }
}

#[test]
fn likelihood_gradient_matches_finite_differences() {
    for seed in 0..8 {
        let (mdp, _) = random_mdp(4, 3, 0.9, seed);
        let cmdp = random_conservative(&mdp, 0.5, seed + 30);
        let d = visitation_measure(&mdp, &random_policy(4, 3, seed + 31), 1e-13).unwrap();
        for reward in models(4, 3, seed + 1) {
            let theta = random_vector(reward.param_dim(), 1.0, seed + 32);
            let g = likelihood_gradient(&cmdp, &reward, &theta, &d, &tight()).unwrap();
            let fd = central_difference(
                |t| likelihood_from_measure(&cmdp, &reward, t, &d, &tight()).unwrap(),
                &theta,
                1e-5,
            );
            assert!(rel_err(&g, &fd) <= 1e-5, "{} seed {seed}: {}", reward.kind().name(), rel_err(&g, &fd));
        }
    }
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let (mdp, true_r) = random_mdp(4, 2, 0.8, 2);
    let cmdp = random_conservative(&mdp, 0.3, 3);
    let expert = mlirl_core::data_gen::make_expert(&mdp, &true_r).unwrap();
    let d = visitation_measure(&mdp, &expert, 1e-13).unwrap();
    let reward = RewardModel::tabular(4, 2, 1.0).unwrap();
    let theta = random_vector(8, 1.0, 4);
    let exact = exact_surrogate_gradient(&cmdp, &reward, &theta, &d, &tight()).unwrap();
    let agent = soft_value_iteration(&cmdp.mdp, &reward.evaluate(&theta).unwrap(), &cmdp.penalty, &tight())
        .unwrap()
        .policy;
    let n = 10_000;
    let horizon = 160;
    let mut rng = seeded_rng(8, 0);
    let samples: Vec<Array1<f64>> = (0..n)
        .map(|_| {
            let te = rollout(&mdp, &expert, horizon, &mut rng);
            let ta = rollout(&cmdp.mdp, &agent, horizon, &mut rng);
            stochastic_gradient(&reward, &theta, &te, &ta, 0.8).unwrap()
        })
        .collect();
    let mean: Array1<f64> = samples.iter().fold(Array1::zeros(8), |acc, x| acc + x) / n as f64;
    for i in 0..8 {
        let var = samples.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean[i] - exact[i]).abs() <= 3.0 * se, "coordinate {i}");
    }
}

#[test]
fn maxent_evaluator_is_the_inner_minimum() {
    let (mdp, r) = random_mdp(4, 3, 0.9, 9);
    let d = visitation_measure(&mdp, &random_policy(4, 3, 10), 1e-13).unwrap();
    let best = maxent_irl_objective(&mdp, &r, &d, &tight()).unwrap();
    let soft = soft_value_iteration(&mdp, &r, &ndarray::Array2::zeros((4, 3)), &tight()).unwrap();
    let at_soft = maxent_irl_inner(&mdp, &r, &d, &soft.policy, &tight()).unwrap();
    assert!((best - at_soft).abs() < 1e-9);
    for seed in 0..10 {
        let other = maxent_irl_inner(&mdp, &r, &d, &random_policy(4, 3, seed), &tight()).unwrap();
        assert!(other >= best - 1e-9);
    }
    // with P̂ = P and no penalty the evaluator equals the surrogate
    let reward = RewardModel::tabular(4, 3, 10.0).unwrap();
    let theta = Array1::from_iter(r.iter().map(|x| (x / 10.0).atanh()));
    let sur = surrogate_objective(&ConservativeMdp::exact(&mdp), &reward, &theta, &d, &tight()).unwrap();
    assert!((sur - best).abs() < 1e-9);
}

#[test]
fn soft_q_is_lipschitz_in_theta() {
    for seed in 0..10 {
        let (mdp, _) = random_mdp(5, 2, 0.9, seed);
        let cmdp = random_conservative(&mdp, 0.5, seed);
        for reward in models(5, 2, seed + 40) {
            let t1 = random_vector(reward.param_dim(), 1.0, seed + 41);
            let t2 = random_vector(reward.param_dim(), 1.0, seed + 42);
            let ratio = soft_q_lipschitz_ratio(&cmdp, &reward, &t1, &t2, &tight()).unwrap();
            let l_r = reward.empirical_gradient_bound(&[t1.clone(), t2.clone(), (&t1 + &t2) / 2.0]).unwrap();
            // the segment's gradient bound is estimated from three points, so allow slack for the MLP
            let slack = if reward.gradient_bound().is_some() { 1.0 } else { 2.0 };
            assert!(ratio <= slack * l_r / (1.0 - 0.9) + 1e-9, "{}", reward.kind().name());
        }
    }
}
