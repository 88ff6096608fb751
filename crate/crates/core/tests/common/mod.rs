//! Shared fixtures and independent reference computations for integration tests.
#![allow(dead_code)]

use mlirl_core::data_gen::{make_instance, InstanceSpec};
use mlirl_core::mdp::{Policy, TabularMdp};
use mlirl_core::world_model::ConservativeMdp;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random dense MDP with the given shape.
pub fn random_mdp(n_s: usize, n_a: usize, discount: f64, seed: u64) -> (TabularMdp, Array2<f64>) {
    let inst = make_instance(&InstanceSpec::random_dense(n_s, n_a, discount, 1.0, seed)).unwrap();
    (inst.mdp, inst.reward)
}

/// `P̂` drawn independently of `P`, sharing `η` and `γ`, with a penalty in `[−c_u, 0]`.
pub fn random_conservative(true_mdp: &TabularMdp, c_u: f64, seed: u64) -> ConservativeMdp {
    let (other, _) = random_mdp(true_mdp.n_states(), true_mdp.n_actions(), true_mdp.discount(), seed ^ 0xabcdef);
    let mut r = rng(seed);
    let penalty = Array2::from_shape_simple_fn((true_mdp.n_states(), true_mdp.n_actions()), || -c_u * r.random::<f64>());
    ConservativeMdp {
        mdp: true_mdp.with_transition(other.transition().clone()).unwrap(),
        penalty,
        penalty_bound: c_u,
    }
}

pub fn random_policy(n_s: usize, n_a: usize, seed: u64) -> Policy {
    let mut r = rng(seed);
    let mut p = Array2::from_shape_simple_fn((n_s, n_a), || 0.05 + r.random::<f64>());
    for mut row in p.rows_mut() {
        let z = row.sum();
        row /= z;
    }
    Policy::new(p).unwrap()
}

pub fn random_vector(n: usize, scale: f64, seed: u64) -> Array1<f64> {
    let mut r = rng(seed);
    Array1::from_shape_simple_fn(n, || scale * (2.0 * r.random::<f64>() - 1.0))
}

fn chain(p: &Array3<f64>, pi: &Array2<f64>) -> DMatrix<f64> {
    let (n_s, n_a, _) = p.dim();
    DMatrix::from_fn(n_s, n_s, |s, sp| (0..n_a).map(|a| pi[[s, a]] * p[[s, a, sp]]).sum())
}

/// Soft policy evaluation by a direct linear solve of `(I − γP_π) V = Σ_a π (payoff − ln π)`.
pub fn linear_soft_evaluation(mdp: &TabularMdp, pi: &Array2<f64>, payoff: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (n_s, n_a) = payoff.dim();
    let g = mdp.discount();
    let m = DMatrix::identity(n_s, n_s) - chain(mdp.transition(), pi) * g;
    let b = DVector::from_fn(n_s, |s, _| {
        (0..n_a)
            .map(|a| {
                let p = pi[[s, a]];
                if p > 0.0 {
                    p * (payoff[[s, a]] - p.ln())
                } else {
                    0.0
                }
            })
            .sum()
    });
    let v = m.lu().solve(&b).unwrap();
    let v = Array1::from_iter(v.iter().copied());
    let q = Array2::from_shape_fn((n_s, n_a), |(s, a)| {
        payoff[[s, a]] + g * (0..n_s).map(|sp| mdp.transition()[[s, a, sp]] * v[sp]).sum::<f64>()
    });
    (q, v)
}

/// Soft-optimal values by soft policy iteration with exact linear evaluation.
pub fn policy_iteration_oracle(mdp: &TabularMdp, payoff: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (n_s, n_a) = payoff.dim();
    let mut pi = Array2::from_elem((n_s, n_a), 1.0 / n_a as f64);
    let mut last = Array1::<f64>::from_elem(n_s, f64::INFINITY);
    for _ in 0..500 {
        let (q, v) = linear_soft_evaluation(mdp, &pi, payoff);
        let change = v.iter().zip(&last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < 1e-14 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
            return (q, v);
        }
        last = v;
        for s in 0..n_s {
            let m = q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = q.row(s).iter().map(|x| (x - m).exp()).sum();
            for a in 0..n_a {
                pi[[s, a]] = (q[[s, a]] - m).exp() / z;
            }
        }
    }
    panic!("policy iteration oracle did not settle");
}

/// `(1−γ) Σ_t γ^t Pr(s_t, a_t)` by summing the series until the tail is below 1e-15.
pub fn series_visitation(mdp: &TabularMdp, pi: &Array2<f64>) -> Array2<f64> {
    let (n_s, n_a) = pi.dim();
    let g = mdp.discount();
    let p = chain(mdp.transition(), pi);
    let mut state = DVector::from_iterator(n_s, mdp.initial_dist().iter().copied());
    let mut acc = DVector::zeros(n_s);
    let mut w = 1.0 - g;
    while w > 1e-17 {
        acc += &state * w;
        state = p.transpose() * state;
        w *= g;
    }
    Array2::from_shape_fn((n_s, n_a), |(s, a)| acc[s] * pi[[s, a]])
}
