//! World-model estimation from `(s, a, s')` data and the conservative MDP.
//!
//! The world model is the empirical transition frequency at every observed
//! pair. Pairs without data get a placeholder row (uniform by default) so
//! the estimate stays a stochastic tensor; pessimism about those pairs is
//! expressed through the penalty table `U(s, a) ≤ 0`, never through the
//! transition estimate itself.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::mdp::{seeded_rng, TabularMdp, VisitationMeasure};

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub sp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    n_states: usize,
    n_actions: usize,
    triples: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(n_states: usize, n_actions: usize, triples: Vec<Transition>) -> Result<Self> {
        let mut data = Self::empty(n_states, n_actions);
        for t in triples {
            data.push(t)?;
        }
        Ok(data)
    }

    pub fn empty(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            triples: Vec::new(),
        }
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s >= self.n_states || t.sp >= self.n_states || t.a >= self.n_actions {
            return Err(invalid(format!(
                "transition ({}, {}, {}) out of bounds for {} states / {} actions",
                t.s, t.a, t.sp, self.n_states, self.n_actions
            )));
        }
        self.triples.push(t);
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn triples(&self) -> &[Transition] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// `N(s, a)`.
    pub fn pair_counts(&self) -> Array2<u64> {
        let mut counts = Array2::zeros((self.n_states, self.n_actions));
        for t in &self.triples {
            counts[[t.s, t.a]] += 1;
        }
        counts
    }

    /// `N(s, a, s')`.
    pub fn transition_counts(&self) -> Array3<u64> {
        let mut counts = Array3::zeros((self.n_states, self.n_actions, self.n_states));
        for t in &self.triples {
            counts[[t.s, t.a, t.sp]] += 1;
        }
        counts
    }
}

/// Placeholder row for pairs that never occur in the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenRule {
    #[default]
    Uniform,
    SelfLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    CountBased,
    BootstrapDisagreement,
    Zero,
}

/// Estimated dynamics `P̂`, the counts behind them, and the penalty table `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservativeModel {
    p_hat: Array3<f64>,
    counts: Array2<u64>,
    penalty: Array2<f64>,
    penalty_bound: f64,
    penalty_kind: PenaltyKind,
}

impl ConservativeModel {
    /// Wraps an explicit transition tensor with zero penalty and no counts.
    pub fn from_transition(p_hat: Array3<f64>) -> Result<Self> {
        let (s, a, sp) = p_hat.dim();
        if sp != s {
            return Err(dim("transition tensor must be [S, A, S]"));
        }
        for row in p_hat.lanes(Axis(2)) {
            let sum = row.sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > crate::mdp::PROB_TOL {
                return Err(invalid("transition rows must be probability vectors"));
            }
        }
        Ok(Self {
            p_hat,
            counts: Array2::zeros((s, a)),
            penalty: Array2::zeros((s, a)),
            penalty_bound: 0.0,
            penalty_kind: PenaltyKind::Zero,
        })
    }

    /// Replaces the penalty table; requires `−bound ≤ U ≤ 0`.
    pub fn with_penalty(mut self, penalty: Array2<f64>, kind: PenaltyKind, bound: f64) -> Result<Self> {
        if penalty.dim() != self.counts.dim() {
            return Err(dim(format!(
                "penalty shape {:?} does not match model {:?}",
                penalty.dim(),
                self.counts.dim()
            )));
        }
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(invalid(format!("penalty bound {bound} must be finite and non-negative")));
        }
        if let Some(u) = penalty.iter().find(|&&u| !u.is_finite() || u > 0.0 || -u > bound) {
            return Err(invalid(format!("penalty entry {u} is outside [-{bound}, 0]")));
        }
        self.penalty = penalty;
        self.penalty_kind = kind;
        self.penalty_bound = bound;
        Ok(self)
    }

    pub fn p_hat(&self) -> &Array3<f64> {
        &self.p_hat
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn penalty(&self) -> &Array2<f64> {
        &self.penalty
    }

    /// `C_u`, an upper bound on `|U(s, a)|`.
    pub fn penalty_bound(&self) -> f64 {
        self.penalty_bound
    }

    pub fn penalty_kind(&self) -> PenaltyKind {
        self.penalty_kind
    }

    pub fn row(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.p_hat.slice(ndarray::s![s, a, ..])
    }

    /// The conservative MDP: `P̂` with the initial distribution and discount of `reference`.
    pub fn conservative_mdp(&self, reference: &TabularMdp) -> Result<ConservativeMdp> {
        Ok(ConservativeMdp {
            mdp: reference.with_transition(self.p_hat.clone())?,
            penalty: self.penalty.clone(),
            penalty_bound: self.penalty_bound,
        })
    }
}

/// The lower-level problem: dynamics `P̂` (plus `η`, `γ`) and payoff offset `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservativeMdp {
    pub mdp: TabularMdp,
    pub penalty: Array2<f64>,
    pub penalty_bound: f64,
}

impl ConservativeMdp {
    /// The true MDP with no penalty (`P̂ = P`, `U ≡ 0`).
    pub fn exact(mdp: &TabularMdp) -> Self {
        Self {
            penalty: Array2::zeros((mdp.n_states(), mdp.n_actions())),
            mdp: mdp.clone(),
            penalty_bound: 0.0,
        }
    }
}

fn empirical_rows(
    counts: &Array3<u64>,
    pair_counts: &Array2<u64>,
    rule: UnseenRule,
) -> Array3<f64> {
    let (n_states, n_actions, _) = counts.dim();
    let mut p_hat = Array3::zeros(counts.dim());
    for s in 0..n_states {
        for a in 0..n_actions {
            let n = pair_counts[[s, a]];
            if n > 0 {
                for sp in 0..n_states {
                    p_hat[[s, a, sp]] = counts[[s, a, sp]] as f64 / n as f64;
                }
            } else {
                match rule {
                    UnseenRule::Uniform => p_hat
                        .slice_mut(ndarray::s![s, a, ..])
                        .fill(1.0 / n_states as f64),
                    UnseenRule::SelfLoop => p_hat[[s, a, s]] = 1.0,
                }
            }
        }
    }
    p_hat
}

/// Maximum-likelihood world model `P̂(s'|s,a) = N(s,a,s') / N(s,a)` with zero penalty.
pub fn estimate_model(data: &TransitionDataset, unseen_rule: UnseenRule) -> ConservativeModel {
    let counts = data.pair_counts();
    let p_hat = empirical_rows(&data.transition_counts(), &counts, unseen_rule);
    let (s, a) = counts.dim();
    ConservativeModel {
        p_hat,
        counts,
        penalty: Array2::zeros((s, a)),
        penalty_bound: 0.0,
        penalty_kind: PenaltyKind::Zero,
    }
}

/// Count-based penalty `U(s,a) = −β / √(N(s,a) + 1)`, bounded by `β`.
pub fn count_penalty(counts: &Array2<u64>, beta: f64) -> Result<Array2<f64>> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(invalid(format!("penalty scale {beta} must be finite and non-negative")));
    }
    Ok(counts.mapv(|n| {
        if beta == 0.0 {
            0.0
        } else {
            -beta / ((n as f64) + 1.0).sqrt()
        }
    }))
}

/// Indices of the bootstrap resample used by ensemble member `model`.
pub fn bootstrap_indices(len: usize, seed: u64, model: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let mut rng = seeded_rng(seed, model as u64);
    (0..len).map(|_| rng.random_range(0..len)).collect()
}

/// Ensemble-disagreement penalty: `U(s,a) = −β · max_{i<j} ‖P̂ᵢ(·|s,a) − P̂ⱼ(·|s,a)‖₁`
/// over `n_models` bootstrap fits, clipped to `[−2β, 0]`.
///
/// Pairs absent from the data get the same placeholder row in every member and
/// hence zero penalty; use [`count_penalty`] for pessimism at unseen pairs.
pub fn bootstrap_penalty(data: &TransitionDataset, n_models: usize, beta: f64, seed: u64) -> Result<Array2<f64>> {
    if n_models < 2 {
        return Err(invalid("bootstrap penalty needs at least two models"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(invalid(format!("penalty scale {beta} must be finite and non-negative")));
    }
    let members: Vec<Array3<f64>> = (0..n_models)
        .map(|m| {
            let resample: Vec<Transition> = bootstrap_indices(data.len(), seed, m)
                .into_iter()
                .map(|i| data.triples()[i])
                .collect();
            let boot = TransitionDataset {
                n_states: data.n_states,
                n_actions: data.n_actions,
                triples: resample,
            };
            estimate_model(&boot, UnseenRule::Uniform).p_hat
        })
        .collect();

    let mut penalty = Array2::zeros((data.n_states, data.n_actions));
    for s in 0..data.n_states {
        for a in 0..data.n_actions {
            let mut worst: f64 = 0.0;
            for i in 0..n_models {
                for j in i + 1..n_models {
                    let d = l1_distance(
                        members[i].slice(ndarray::s![s, a, ..]),
                        members[j].slice(ndarray::s![s, a, ..]),
                    );
                    worst = worst.max(d);
                }
            }
            penalty[[s, a]] = (-beta * worst).clamp(-2.0 * beta, 0.0);
        }
    }
    Ok(penalty)
}

/// Knobs for [`build_model`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub beta: f64,
    pub n_models: usize,
    pub seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::CountBased,
            beta: 1.0,
            n_models: 5,
            seed: 0,
        }
    }
}

/// Estimates `P̂` and attaches the configured penalty.
pub fn build_model(data: &TransitionDataset, rule: UnseenRule, cfg: &PenaltyConfig) -> Result<ConservativeModel> {
    let model = estimate_model(data, rule);
    match cfg.kind {
        PenaltyKind::Zero => Ok(model),
        PenaltyKind::CountBased => {
            let u = count_penalty(model.counts(), cfg.beta)?;
            model.with_penalty(u, PenaltyKind::CountBased, cfg.beta)
        }
        PenaltyKind::BootstrapDisagreement => {
            let u = bootstrap_penalty(data, cfg.n_models, cfg.beta, cfg.seed)?;
            model.with_penalty(u, PenaltyKind::BootstrapDisagreement, 2.0 * cfg.beta)
        }
    }
}

pub fn l1_distance(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum()
}

/// `E_{(s,a)~d}[‖P(·|s,a) − P̂(·|s,a)‖₁]`, a number in `[0, 2]`.
pub fn model_mismatch_error(true_mdp: &TabularMdp, model: &ConservativeModel, d_expert: &VisitationMeasure) -> Result<f64> {
    if model.p_hat.dim() != true_mdp.transition().dim() || d_expert.table().dim() != model.counts.dim() {
        return Err(dim("true MDP, model and visitation measure must share (S, A)"));
    }
    let mut total = 0.0;
    for ((s, a), &w) in d_expert.table().indexed_iter() {
        if w > 0.0 {
            total += w * l1_distance(true_mdp.row(s, a), model.row(s, a));
        }
    }
    Ok(total)
}

/// Expert-visited pairs `Ω` and states `S^E`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverageSets {
    pub expert_support: BTreeSet<(usize, usize)>,
    pub expert_states: BTreeSet<usize>,
}

impl CoverageSets {
    pub fn contains(&self, s: usize, a: usize) -> bool {
        self.expert_support.contains(&(s, a))
    }
}

/// `Ω = {(s,a) : d(s,a) > threshold}` and its state projection.
pub fn coverage_sets(d_expert: &VisitationMeasure, threshold: f64) -> Result<CoverageSets> {
    if !(threshold >= 0.0) {
        return Err(invalid(format!("coverage threshold {threshold} must be non-negative")));
    }
    let expert_support: BTreeSet<_> = d_expert
        .table()
        .indexed_iter()
        .filter(|(_, &w)| w > threshold)
        .map(|(idx, _)| idx)
        .collect();
    let expert_states = expert_support.iter().map(|&(s, _)| s).collect();
    Ok(CoverageSets {
        expert_support,
        expert_states,
    })
}
