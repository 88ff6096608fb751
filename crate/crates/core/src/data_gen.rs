//! Synthetic instances, soft-optimal experts, expert demonstrations and
//! transition datasets.
//!
//! Every output is a pure function of its spec and seed. Trajectory `i` of a
//! dataset draws from its own substream `(seed, i)`.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{
    rollout, sample_index, seeded_rng, soft_value_iteration, Policy, SolverOptions, TabularMdp, Trajectory,
};
use crate::world_model::{CoverageSets, Transition, TransitionDataset};

/// Slip probability of the gridworld: with this probability a uniformly random move is executed.
pub const GRID_SLIP: f64 = 0.1;

/// Default expert trajectory length.
pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    RandomDense,
    Gridworld,
    Cycle,
}

impl std::str::FromStr for Generator {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_dense" | "random-dense" => Ok(Self::RandomDense),
            "gridworld" => Ok(Self::Gridworld),
            "cycle" => Ok(Self::Cycle),
            other => Err(invalid(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub generator: Generator,
    /// For the gridworld this is `n²` for an `n×n` grid.
    pub n_states: usize,
    /// Must be 4 for the gridworld.
    pub n_actions: usize,
    pub discount: f64,
    pub reward_scale: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn random_dense(n_states: usize, n_actions: usize, discount: f64, reward_scale: f64, seed: u64) -> Self {
        Self {
            generator: Generator::RandomDense,
            n_states,
            n_actions,
            discount,
            reward_scale,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(invalid("instance needs at least one state and one action"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(invalid(format!("discount {} is not in (0, 1)", self.discount)));
        }
        if !(self.reward_scale >= 0.0) || !self.reward_scale.is_finite() {
            return Err(invalid("reward scale must be finite and non-negative"));
        }
        match self.generator {
            Generator::Gridworld => {
                let side = grid_side(self.n_states);
                if side * side != self.n_states {
                    return Err(invalid(format!("gridworld needs a square state count, got {}", self.n_states)));
                }
                if self.n_actions != 4 {
                    return Err(invalid("gridworld has exactly 4 actions"));
                }
            }
            Generator::Cycle if self.n_states < 2 => return Err(invalid("cycle needs at least 2 states")),
            _ => {}
        }
        Ok(())
    }
}

fn grid_side(n_states: usize) -> usize {
    (n_states as f64).sqrt().round() as usize
}

/// Ground-truth MDP and reward.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub reward: Array2<f64>,
}

fn uniform_rewards<R: Rng>(n_s: usize, n_a: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n_s, n_a), || scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn dirichlet_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Builds the ground-truth `(P, r)` for `spec`.
///
/// * `random_dense`: Dirichlet(1) rows, uniform `η`, rewards uniform in `[−scale, scale]`.
/// * `gridworld`: moves up/right/down/left with slip [`GRID_SLIP`], walls keep the
///   agent in place, start at cell 0, reward `scale` in the last cell.
/// * `cycle`: action `a` moves `s → (s + a + 1) mod n`, start at state 0,
///   rewards uniform in `[−scale, scale]`.
pub fn make_instance(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let (n_s, n_a) = (spec.n_states, spec.n_actions);
    let mut rng = seeded_rng(spec.seed, 0);
    let mut p = Array3::zeros((n_s, n_a, n_s));
    let mut eta = Array1::zeros(n_s);
    let reward = match spec.generator {
        Generator::RandomDense => {
            for s in 0..n_s {
                for a in 0..n_a {
                    for (sp, x) in dirichlet_row(n_s, &mut rng).into_iter().enumerate() {
                        p[[s, a, sp]] = x;
                    }
                }
            }
            eta.fill(1.0 / n_s as f64);
            uniform_rewards(n_s, n_a, spec.reward_scale, &mut rng)
        }
        Generator::Gridworld => {
            let side = grid_side(n_s);
            let step = |s: usize, a: usize| -> usize {
                let (row, col) = (s / side, s % side);
                match a {
                    0 if row > 0 => s - side,
                    1 if col + 1 < side => s + 1,
                    2 if row + 1 < side => s + side,
                    3 if col > 0 => s - 1,
                    _ => s,
                }
            };
            for s in 0..n_s {
                for a in 0..4 {
                    p[[s, a, step(s, a)]] += 1.0 - GRID_SLIP;
                    for b in 0..4 {
                        p[[s, a, step(s, b)]] += GRID_SLIP / 4.0;
                    }
                }
            }
            eta[0] = 1.0;
            let mut r = Array2::zeros((n_s, n_a));
            r.row_mut(n_s - 1).fill(spec.reward_scale);
            r
        }
        Generator::Cycle => {
            for s in 0..n_s {
                for a in 0..n_a {
                    p[[s, a, (s + a + 1) % n_s]] = 1.0;
                }
            }
            eta[0] = 1.0;
            uniform_rewards(n_s, n_a, spec.reward_scale, &mut rng)
        }
    };
    Ok(Instance {
        mdp: TabularMdp::new(p, eta, spec.discount)?,
        reward,
    })
}

/// Soft-optimal policy under the true reward and dynamics, with no penalty.
pub fn make_expert(mdp: &TabularMdp, true_reward: &Array2<f64>) -> Result<Policy> {
    let zero = Array2::zeros(true_reward.dim());
    Ok(soft_value_iteration(mdp, true_reward, &zero, &SolverOptions::with_tol(1e-12))?.policy)
}

/// `(1 − ε) π^E + ε · uniform`.
pub fn behavior_policy(expert: &Policy, epsilon: f64) -> Result<Policy> {
    expert.mixture(&Policy::uniform(expert.n_states(), expert.n_actions()), epsilon)
}

/// Expert demonstrations, each exactly `horizon` steps long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDataset {
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
    #[serde(default)]
    pub source_seed: u64,
}

impl ExpertDataset {
    pub fn new(horizon: usize, trajectories: Vec<Trajectory>, source_seed: u64) -> Result<Self> {
        if trajectories.iter().any(|t| t.len() != horizon) {
            return Err(invalid(format!("every trajectory must have exactly {horizon} steps")));
        }
        Ok(Self {
            horizon,
            trajectories,
            source_seed,
        })
    }

    /// Checks indices against an MDP's dimensions.
    pub fn check_bounds(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for (i, traj) in self.trajectories.iter().enumerate() {
            if let Some(&(s, a)) = traj.iter().find(|&&(s, a)| s >= n_states || a >= n_actions) {
                return Err(invalid(format!("trajectory {i}: pair ({s}, {a}) out of range")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// `n_traj` independent rollouts of `expert` from `η` in the true MDP.
pub fn collect_expert_dataset(
    mdp: &TabularMdp,
    expert: &Policy,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<ExpertDataset> {
    if n_traj == 0 {
        return Err(invalid("n_traj must be at least 1"));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if expert.probs().dim() != (mdp.n_states(), mdp.n_actions()) {
        return Err(crate::error::dim("expert policy does not match the MDP"));
    }
    let trajectories = (0..n_traj)
        .map(|i| rollout(mdp, expert, horizon, &mut seeded_rng(seed, i as u64)))
        .collect();
    ExpertDataset::new(horizon, trajectories, seed)
}

/// How transitions are collected.
#[derive(Debug, Clone)]
pub enum TransitionSampling<'a> {
    /// Exactly `per_pair` next states from `P(·|s,a)` for every pair in `Ω`.
    UniformOverPairs { coverage: &'a CoverageSets, per_pair: usize },
    /// Episodes of length `horizon` from `η` under `policy` until `total` triples are recorded.
    Behavior {
        policy: &'a Policy,
        total: usize,
        horizon: usize,
    },
}

pub fn collect_transition_dataset(
    mdp: &TabularMdp,
    sampling: &TransitionSampling<'_>,
    seed: u64,
) -> Result<TransitionDataset> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut data = TransitionDataset::empty(n_s, n_a);
    match sampling {
        TransitionSampling::UniformOverPairs { coverage, per_pair } => {
            if coverage.expert_support.is_empty() {
                return Err(invalid("coverage set Ω is empty"));
            }
            for (i, &(s, a)) in coverage.expert_support.iter().enumerate() {
                if s >= n_s || a >= n_a {
                    return Err(invalid(format!("pair ({s}, {a}) out of range")));
                }
                let mut rng = seeded_rng(seed, i as u64);
                for _ in 0..*per_pair {
                    let sp = sample_index(mdp.row(s, a), &mut rng);
                    data.push(Transition { s, a, sp })?;
                }
            }
        }
        TransitionSampling::Behavior {
            policy,
            total,
            horizon,
        } => {
            if policy.probs().dim() != (n_s, n_a) {
                return Err(crate::error::dim("behavior policy does not match the MDP"));
            }
            if *horizon == 0 {
                return Err(invalid("horizon must be at least 1"));
            }
            let mut episode = 0u64;
            while data.len() < *total {
                let mut rng = seeded_rng(seed, episode);
                let mut s = sample_index(mdp.initial_dist().view(), &mut rng);
                for _ in 0..*horizon {
                    if data.len() == *total {
                        break;
                    }
                    let a = sample_index(policy.probs().row(s), &mut rng);
                    let sp = sample_index(mdp.row(s, a), &mut rng);
                    data.push(Transition { s, a, sp })?;
                    s = sp;
                }
                episode += 1;
            }
        }
    }
    Ok(data)
}

/// All pairs `(s, a)` as a coverage set.
pub fn full_coverage(n_states: usize, n_actions: usize) -> CoverageSets {
    let expert_support = (0..n_states)
        .flat_map(|s| (0..n_actions).map(move |a| (s, a)))
        .collect();
    CoverageSets {
        expert_support,
        expert_states: (0..n_states).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{soft_policy_evaluation, visitation_measure};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    fn spec(generator: Generator, n_s: usize, n_a: usize) -> InstanceSpec {
        InstanceSpec {
            generator,
            n_states: n_s,
            n_actions: n_a,
            discount: 0.9,
            reward_scale: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn cycle_is_a_permutation_family() {
        let inst = make_instance(&spec(Generator::Cycle, 3, 2)).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let row = inst.mdp.row(s, a);
                assert_eq!(row[(s + a + 1) % 3], 1.0);
                assert_eq!(row.sum(), 1.0);
            }
        }
    }

    #[test]
    fn instances_are_reproducible() {
        for g in [Generator::RandomDense, Generator::Cycle, Generator::Gridworld] {
            let s = if g == Generator::Gridworld { spec(g, 9, 4) } else { spec(g, 5, 3) };
            let a = make_instance(&s).unwrap();
            let b = make_instance(&s).unwrap();
            assert_eq!(a.mdp, b.mdp);
            assert_eq!(a.reward, b.reward);
        }
    }

    #[test]
    fn random_dense_rows_normalise() {
        let inst = make_instance(&spec(Generator::RandomDense, 8, 4)).unwrap();
        for s in 0..8 {
            for a in 0..4 {
                assert_abs_diff_eq!(inst.mdp.row(s, a).sum(), 1.0, epsilon = 1e-12);
            }
        }
        assert!(inst.reward.iter().all(|r| r.abs() <= 1.0));
    }

    #[test]
    fn gridworld_shape_and_goal() {
        let inst = make_instance(&spec(Generator::Gridworld, 9, 4)).unwrap();
        // moving up from the top-left corner stays put except for slips right/down
        assert_abs_diff_eq!(inst.mdp.row(0, 0)[0], 0.9 + 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(inst.mdp.row(0, 1)[1], 0.9 + 0.025, epsilon = 1e-15);
        assert_eq!(inst.reward[[8, 2]], 1.0);
        assert_eq!(inst.reward[[0, 0]], 0.0);
        assert!(make_instance(&spec(Generator::Gridworld, 8, 4)).is_err());
        assert!(make_instance(&spec(Generator::Gridworld, 9, 3)).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(make_instance(&spec(Generator::RandomDense, 0, 2)).is_err());
        let mut s = spec(Generator::RandomDense, 3, 2);
        s.discount = 1.0;
        assert!(make_instance(&s).is_err());
    }

    #[test]
    fn zero_reward_expert_is_uniform() {
        let inst = make_instance(&spec(Generator::RandomDense, 4, 3)).unwrap();
        let expert = make_expert(&inst.mdp, &Array2::zeros((4, 3))).unwrap();
        for p in expert.probs() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dominant_reward_gives_near_deterministic_expert() {
        let inst = make_instance(&spec(Generator::Cycle, 3, 2)).unwrap();
        let mut r = Array2::zeros((3, 2));
        r.column_mut(1).fill(20.0);
        let expert = make_expert(&inst.mdp, &r).unwrap();
        for s in 0..3 {
            assert!(expert.prob(s, 1) > 1.0 - 1e-8);
        }
    }

    #[test]
    fn expert_matches_its_own_evaluation() {
        let inst = make_instance(&spec(Generator::RandomDense, 5, 3)).unwrap();
        let expert = make_expert(&inst.mdp, &inst.reward).unwrap();
        let zero = Array2::zeros((5, 3));
        let eval =
            soft_policy_evaluation(&inst.mdp, &expert, &inst.reward, &zero, &SolverOptions::with_tol(1e-13)).unwrap();
        for s in 0..5 {
            let v = crate::mdp::logsumexp(eval.q.row(s));
            for a in 0..3 {
                assert_abs_diff_eq!(expert.prob(s, a), (eval.q[[s, a]] - v).exp(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_expert_dataset_is_unique() {
        let inst = make_instance(&spec(Generator::Cycle, 3, 2)).unwrap();
        let expert = Policy::deterministic(&[0, 0, 0], 2).unwrap();
        let data = collect_expert_dataset(&inst.mdp, &expert, 1, 5, 3).unwrap();
        assert_eq!(data.trajectories[0], vec![(0, 0), (1, 0), (2, 0), (0, 0), (1, 0)]);
        assert_eq!(data, collect_expert_dataset(&inst.mdp, &expert, 1, 5, 3).unwrap());
        assert!(collect_expert_dataset(&inst.mdp, &expert, 0, 5, 3).is_err());
    }

    #[test]
    fn expert_frequencies_follow_the_visitation_measure() {
        let inst = make_instance(&spec(Generator::RandomDense, 4, 2)).unwrap();
        let expert = make_expert(&inst.mdp, &inst.reward).unwrap();
        let gamma = inst.mdp.discount();
        let horizon = 120;
        let n = 4000;
        let data = collect_expert_dataset(&inst.mdp, &expert, n, horizon, 11).unwrap();
        let d = visitation_measure(&inst.mdp, &expert, 1e-12).unwrap();
        let norm = (1.0 - gamma) / (1.0 - gamma.powi(horizon as i32));
        let mut samples = Vec::<Array2<f64>>::new();
        for traj in &data.trajectories {
            let mut x = Array2::<f64>::zeros((4, 2));
            let mut w = norm;
            for &(s, a) in traj {
                x[[s, a]] += w;
                w *= gamma;
            }
            samples.push(x);
        }
        let mean: Array2<f64> = samples.iter().fold(Array2::zeros((4, 2)), |acc, x| acc + x) / n as f64;
        for s in 0..4 {
            for a in 0..2 {
                let var = samples.iter().map(|x| (x[[s, a]] - mean[[s, a]]).powi(2)).sum::<f64>() / (n - 1) as f64;
                let se = (var / n as f64).sqrt();
                assert!((mean[[s, a]] - d.get(s, a)).abs() <= 3.0 * se + 1e-6, "cell ({s},{a})");
            }
        }
    }

    #[test]
    fn uniform_over_pairs_counts_are_exact() {
        let inst = make_instance(&spec(Generator::RandomDense, 4, 2)).unwrap();
        let omega = CoverageSets {
            expert_support: BTreeSet::from([(0, 1), (2, 0), (3, 1)]),
            expert_states: BTreeSet::from([0, 2, 3]),
        };
        let sampling = TransitionSampling::UniformOverPairs {
            coverage: &omega,
            per_pair: 17,
        };
        let data = collect_transition_dataset(&inst.mdp, &sampling, 5).unwrap();
        let counts = data.pair_counts();
        for s in 0..4 {
            for a in 0..2 {
                assert_eq!(counts[[s, a]], if omega.contains(s, a) { 17 } else { 0 });
            }
        }
        assert_eq!(data, collect_transition_dataset(&inst.mdp, &sampling, 5).unwrap());
    }

    #[test]
    fn single_deterministic_pair() {
        let inst = make_instance(&spec(Generator::Cycle, 3, 2)).unwrap();
        let omega = CoverageSets {
            expert_support: BTreeSet::from([(1, 1)]),
            expert_states: BTreeSet::from([1]),
        };
        let sampling = TransitionSampling::UniformOverPairs {
            coverage: &omega,
            per_pair: 4,
        };
        let data = collect_transition_dataset(&inst.mdp, &sampling, 0).unwrap();
        assert_eq!(data.triples(), &[Transition { s: 1, a: 1, sp: 0 }; 4]);
    }

    #[test]
    fn empty_coverage_is_an_error() {
        let inst = make_instance(&spec(Generator::Cycle, 3, 2)).unwrap();
        let omega = CoverageSets::default();
        let sampling = TransitionSampling::UniformOverPairs {
            coverage: &omega,
            per_pair: 4,
        };
        assert!(collect_transition_dataset(&inst.mdp, &sampling, 0).is_err());
    }

    #[test]
    fn uniform_behavior_visits_every_pair() {
        let inst = make_instance(&spec(Generator::RandomDense, 6, 3)).unwrap();
        let uniform = Policy::uniform(6, 3);
        let sampling = TransitionSampling::Behavior {
            policy: &uniform,
            total: 100_000,
            horizon: 200,
        };
        let data = collect_transition_dataset(&inst.mdp, &sampling, 1).unwrap();
        assert_eq!(data.len(), 100_000);
        assert!(data.pair_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn behavior_mixture_weights() {
        let expert = Policy::deterministic(&[0, 1], 2).unwrap();
        let b = behavior_policy(&expert, 0.5).unwrap();
        assert_abs_diff_eq!(b.prob(0, 0), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(b.prob(1, 0), 0.25, epsilon = 1e-15);
    }
}
