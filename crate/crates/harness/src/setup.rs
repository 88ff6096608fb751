//! Instance and dataset construction shared by the commands.

use mlirl_core::data_gen::{
    behavior_policy, collect_expert_dataset, collect_transition_dataset, make_expert, make_instance, ExpertDataset,
    InstanceSpec, TransitionSampling,
};
use mlirl_core::mdp::{visitation_measure, Policy, TabularMdp, VisitationMeasure};
use mlirl_core::world_model::{coverage_sets, CoverageSets, TransitionDataset};
use ndarray::Array2;

use crate::error::{input, Result};

/// A ground-truth problem: dynamics, reward, soft-optimal expert and its occupancy.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mdp: TabularMdp,
    pub reward: Array2<f64>,
    pub expert: Policy,
    pub expert_d: VisitationMeasure,
    pub coverage: CoverageSets,
}

impl Problem {
    pub fn new(mdp: TabularMdp, reward: Array2<f64>) -> Result<Self> {
        let expert = make_expert(&mdp, &reward)?;
        let expert_d = visitation_measure(&mdp, &expert, 1e-13)?;
        let coverage = coverage_sets(&expert_d, 0.0)?;
        Ok(Self {
            mdp,
            reward,
            expert,
            expert_d,
            coverage,
        })
    }

    pub fn from_spec(spec: &InstanceSpec) -> Result<Self> {
        let inst = make_instance(spec)?;
        Self::new(inst.mdp, inst.reward)
    }

    pub fn from_parts(mdp: TabularMdp, reward: Option<Array2<f64>>) -> Result<Self> {
        let reward = reward.ok_or_else(|| input("instance has no ground-truth \"reward\" field"))?;
        Self::new(mdp, reward)
    }

    /// `per_pair` next states for every expert-visited pair.
    pub fn uniform_dataset(&self, per_pair: usize, seed: u64) -> Result<TransitionDataset> {
        let sampling = TransitionSampling::UniformOverPairs {
            coverage: &self.coverage,
            per_pair,
        };
        Ok(collect_transition_dataset(&self.mdp, &sampling, seed)?)
    }

    /// `total` triples from episodes of the `ε`-mixture of expert and uniform.
    pub fn behavior_dataset(&self, epsilon: f64, total: usize, horizon: usize, seed: u64) -> Result<TransitionDataset> {
        let policy = behavior_policy(&self.expert, epsilon)?;
        let sampling = TransitionSampling::Behavior {
            policy: &policy,
            total,
            horizon,
        };
        Ok(collect_transition_dataset(&self.mdp, &sampling, seed)?)
    }

    pub fn expert_dataset(&self, n_traj: usize, horizon: usize, seed: u64) -> Result<ExpertDataset> {
        Ok(collect_expert_dataset(&self.mdp, &self.expert, n_traj, horizon, seed)?)
    }
}

/// `[seed, seed + count)`.
pub fn seed_range(seed: u64, count: usize) -> Vec<u64> {
    (seed..seed + count as u64).collect()
}
