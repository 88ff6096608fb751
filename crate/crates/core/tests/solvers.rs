mod common;

use common::*;
use mlirl_core::mdp::{
    soft_policy_evaluation, soft_value_iteration, visitation_measure, Policy, SolverOptions,
};
use mlirl_core::mdp::{sample_index, seeded_rng};
use ndarray::Array2;

fn sup(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn value_iteration_matches_policy_iteration_oracle() {
    for seed in 0..20 {
        let n_s = 2 + (seed as usize % 7);
        let n_a = 1 + (seed as usize % 4);
        let gamma = [0.5, 0.9, 0.95][seed as usize % 3];
        let (mdp, reward) = random_mdp(n_s, n_a, gamma, seed);
        let penalty = -Array2::from_shape_fn((n_s, n_a), |(s, a)| ((s + a) % 3) as f64 * 0.2);
        let sol = soft_value_iteration(&mdp, &reward, &penalty, &SolverOptions::with_tol(1e-12)).unwrap();
        let (q, v) = policy_iteration_oracle(&mdp, &(&reward + &penalty));
        assert!(sup(&sol.q, &q) <= 1e-9, "seed {seed}: {}", sup(&sol.q, &q));
        let dv = sol.v.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dv <= 1e-9, "seed {seed}: {dv}");
        assert!(sol.residual <= 1e-12);
    }
}

#[test]
fn policy_evaluation_matches_linear_solve() {
    for seed in 0..20 {
        let (mdp, reward) = random_mdp(5, 3, 0.9, seed);
        let policy = random_policy(5, 3, seed + 100);
        let zero = Array2::zeros((5, 3));
        let value = soft_policy_evaluation(&mdp, &policy, &reward, &zero, &SolverOptions::with_tol(1e-13)).unwrap();
        let (q, _) = linear_soft_evaluation(&mdp, policy.probs(), &reward);
        assert!(sup(&value.q, &q) <= 1e-10);
    }
}

#[test]
fn visitation_matches_series_oracle() {
    for seed in 0..20 {
        let (mdp, _) = random_mdp(6, 3, 0.95, seed);
        let policy = random_policy(6, 3, seed + 7);
        let d = visitation_measure(&mdp, &policy, 1e-12).unwrap();
        let oracle = series_visitation(&mdp, policy.probs());
        assert!(sup(d.table(), &oracle) <= 1e-10);
        assert!((d.table().sum() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn visitation_matches_monte_carlo_with_geometric_stopping() {
    let (mdp, _) = random_mdp(4, 2, 0.8, 3);
    let policy = random_policy(4, 2, 4);
    let d = visitation_measure(&mdp, &policy, 1e-12).unwrap();
    let n = 200_000;
    let mut rng = seeded_rng(99, 0);
    let mut hits = Array2::<f64>::zeros((4, 2));
    for _ in 0..n {
        let mut s = sample_index(mdp.initial_dist().view(), &mut rng);
        loop {
            let a = sample_index(policy.probs().row(s), &mut rng);
            if rand::Rng::random::<f64>(&mut rng) < 1.0 - mdp.discount() {
                hits[[s, a]] += 1.0;
                break;
            }
            s = sample_index(mdp.row(s, a), &mut rng);
        }
    }
    for ((s, a), &h) in hits.indexed_iter() {
        let p = d.get(s, a);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((h / n as f64 - p).abs() <= 4.0 * se, "cell ({s},{a})");
    }
}

#[test]
fn unreachable_pairs_have_zero_mass() {
    let (mdp, _) = random_mdp(3, 2, 0.9, 1);
    let mut p = mdp.transition().clone();
    // state 2 is never entered
    for s in 0..3 {
        for a in 0..2 {
            let moved = p[[s, a, 2]];
            p[[s, a, 2]] = 0.0;
            p[[s, a, 0]] += moved;
        }
    }
    let eta = ndarray::array![0.5, 0.5, 0.0];
    let mdp = mdp.with_transition(p).unwrap().with_initial_dist(eta).unwrap();
    let d = visitation_measure(&mdp, &Policy::uniform(3, 2), 1e-12).unwrap();
    assert_eq!(d.get(2, 0), 0.0);
    assert_eq!(d.get(2, 1), 0.0);
}
