//! Finite MDPs and entropy-regularised (soft) planning.
//!
//! Everything here works at temperature one with natural logarithms: the soft
//! value of a state is `V(s) = log Σ_a exp Q(s, a)` and the soft-optimal
//! policy is `softmax(Q(s, ·))`. The per-step payoff handed to the solvers is
//! always `reward + penalty`; callers without a penalty pass a zero table.
//!
//! Tables are dense `ndarray` arrays indexed `[state, action]`, transition
//! tensors are indexed `[state, action, next_state]`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim, invalid, Error, Result};

/// Tolerance on probability-vector normalisation.
pub const PROB_TOL: f64 = 1e-12;

/// Tolerance on the total mass of a visitation measure.
pub const MEASURE_TOL: f64 = 1e-9;

/// A sequence of visited `(state, action)` pairs.
pub type Trajectory = Vec<(usize, usize)>;

fn check_distribution(what: &str, row: ArrayView1<f64>) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("{what}: entry {p} is not a probability")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("{what}: entries sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Checks that `table` is a finite `[n_states, n_actions]` table.
pub fn check_table(what: &str, table: &Array2<f64>, n_states: usize, n_actions: usize) -> Result<()> {
    if table.dim() != (n_states, n_actions) {
        return Err(dim(format!(
            "{what} has shape {:?}, expected ({n_states}, {n_actions})",
            table.dim()
        )));
    }
    if let Some(x) = table.iter().find(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} contains non-finite value {x}")));
    }
    Ok(())
}

/// A finite discounted MDP `(S, A, P, η, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transition: Array3<f64>,
    initial_dist: Array1<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(transition: Array3<f64>, initial_dist: Array1<f64>, discount: f64) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("an MDP needs at least one state and one action"));
        }
        if n_next != n_states {
            return Err(dim(format!(
                "transition tensor has {n_next} next states for {n_states} states"
            )));
        }
        if initial_dist.len() != n_states {
            return Err(dim(format!(
                "initial distribution has length {}, expected {n_states}",
                initial_dist.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(invalid(format!("discount {discount} is not in (0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(
                    &format!("transition row ({s}, {a})"),
                    transition.slice(ndarray::s![s, a, ..]),
                )?;
            }
        }
        check_distribution("initial distribution", initial_dist.view())?;
        Ok(Self {
            transition: transition.as_standard_layout().into_owned(),
            initial_dist,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    /// `P(· | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.transition.slice(ndarray::s![s, a, ..])
    }

    /// The transition tensor flattened to a `[S·A, S]` matrix.
    pub fn transition_matrix(&self) -> ArrayView2<'_, f64> {
        let (s, a, _) = self.transition.dim();
        self.transition
            .view()
            .into_shape_with_order((s * a, s))
            .expect("transition tensor is stored in standard layout")
    }

    /// Same states, actions, initial distribution and discount, different dynamics.
    pub fn with_transition(&self, transition: Array3<f64>) -> Result<Self> {
        if transition.dim() != self.transition.dim() {
            return Err(dim(format!(
                "transition shape {:?} differs from {:?}",
                transition.dim(),
                self.transition.dim()
            )));
        }
        Self::new(transition, self.initial_dist.clone(), self.discount)
    }

    pub fn with_initial_dist(&self, initial_dist: Array1<f64>) -> Result<Self> {
        Self::new(self.transition.clone(), initial_dist, self.discount)
    }

    /// `E_{s' ~ P(·|s,a)}[v(s')]` for every pair.
    pub fn expected_next(&self, v: &Array1<f64>) -> Array2<f64> {
        self.transition_matrix()
            .dot(v)
            .into_shape_with_order((self.n_states(), self.n_actions()))
            .expect("shape is preserved")
    }

    /// State-to-state kernel `P_π(s, s') = Σ_a π(a|s) P(s'|s,a)`.
    pub fn induced_chain(&self, policy: &Policy) -> Array2<f64> {
        let n = self.n_states();
        let mut chain = Array2::zeros((n, n));
        for s in 0..n {
            for a in 0..self.n_actions() {
                let p = policy.prob(s, a);
                if p > 0.0 {
                    chain.row_mut(s).scaled_add(p, &self.row(s, a));
                }
            }
        }
        chain
    }
}

/// A stationary stochastic policy `π(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(invalid("a policy needs at least one state and one action"));
        }
        for (s, row) in probs.axis_iter(Axis(0)).enumerate() {
            check_distribution(&format!("policy row {s}"), row)?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// A deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(invalid(format!("action {a} out of range in state {s}")));
            }
            probs[[s, a]] = 1.0;
        }
        Self::new(probs)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[[s, a]]
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Natural log of every probability; zero entries map to `-inf`.
    pub fn log_probs(&self) -> Array2<f64> {
        self.probs.mapv(f64::ln)
    }

    /// `(1 - weight) · self + weight · other`.
    pub fn mixture(&self, other: &Policy, weight: f64) -> Result<Policy> {
        if self.probs.dim() != other.probs.dim() {
            return Err(dim("mixed policies must have the same shape"));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(invalid(format!("mixture weight {weight} is not in [0, 1]")));
        }
        let mut probs = &self.probs * (1.0 - weight) + &other.probs * weight;
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let z = row.sum();
            row /= z;
        }
        Policy::new(probs)
    }

    /// Per-state entropy `-Σ_a π ln π` (with `0 ln 0 = 0`).
    pub fn entropy(&self) -> Array1<f64> {
        self.probs
            .map_axis(Axis(1), |row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
    }

    pub(crate) fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.dim() != (mdp.n_states(), mdp.n_actions()) {
            return Err(dim(format!(
                "policy shape {:?} does not match MDP ({}, {})",
                self.probs.dim(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Largest absolute difference between two log-policies, `‖log π₁ − log π₂‖∞`.
pub fn log_policy_gap(a: &Policy, b: &Policy) -> f64 {
    a.log_probs()
        .iter()
        .zip(b.log_probs().iter())
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

/// Soft-optimal solution of an entropy-regularised MDP.
#[derive(Debug, Clone)]
pub struct SoftSolution {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub policy: Policy,
    pub iterations: usize,
    /// Sup-norm change of the value in the final sweep.
    pub residual: f64,
}

/// Soft Q and V of a fixed policy.
#[derive(Debug, Clone)]
pub struct PolicyValue {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Stopping rule and warm start for the fixed-point solvers.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<Array1<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn warm(mut self, v: Array1<f64>) -> Self {
        self.warm_start = Some(v);
        self
    }

    fn validate(&self, n_states: usize) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tolerance {} must be positive", self.tol)));
        }
        if let Some(v) = &self.warm_start {
            if v.len() != n_states || v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("warm start must be a finite vector over states"));
            }
        }
        Ok(())
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn logsumexp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One application of the soft Bellman optimality operator:
/// returns `Q = payoff + γ P v` and `V = logsumexp(Q)`.
pub fn soft_bellman(mdp: &TabularMdp, payoff: &Array2<f64>, v: &Array1<f64>) -> (Array2<f64>, Array1<f64>) {
    let q = payoff + &(mdp.expected_next(v) * mdp.discount());
    let v = q.map_axis(Axis(1), logsumexp);
    (q, v)
}

fn payoff_table(mdp: &TabularMdp, reward: &Array2<f64>, penalty: &Array2<f64>) -> Result<Array2<f64>> {
    let (s, a) = (mdp.n_states(), mdp.n_actions());
    check_table("reward table", reward, s, a)?;
    check_table("penalty table", penalty, s, a)?;
    Ok(reward + penalty)
}

/// Soft value iteration on the MDP with per-step payoff `reward + penalty`.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward: &Array2<f64>,
    penalty: &Array2<f64>,
    opts: &SolverOptions,
) -> Result<SoftSolution> {
    let payoff = payoff_table(mdp, reward, penalty)?;
    opts.validate(mdp.n_states())?;
    let mut v = opts
        .warm_start
        .clone()
        .unwrap_or_else(|| Array1::zeros(mdp.n_states()));
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (q, next) = soft_bellman(mdp, &payoff, &v);
        residual = sup_distance(&next, &v);
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            let policy = soft_policy_improvement(&q)?;
            return Ok(SoftSolution {
                q,
                v: next,
                policy,
                iterations: it,
                residual,
            });
        }
        v = next;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Soft evaluation of a fixed policy: solves
/// `V(s) = Σ_a π(a|s) [payoff(s,a) + γ E V(s') − ln π(a|s)]` by fixed-point iteration
/// and returns `Q(s,a) = payoff(s,a) + γ E V(s')` alongside.
pub fn soft_policy_evaluation(
    mdp: &TabularMdp,
    policy: &Policy,
    reward: &Array2<f64>,
    penalty: &Array2<f64>,
    opts: &SolverOptions,
) -> Result<PolicyValue> {
    let payoff = payoff_table(mdp, reward, penalty)?;
    evaluate_payoff(mdp, policy, &payoff, true, opts)
}

pub(crate) fn evaluate_payoff(
    mdp: &TabularMdp,
    policy: &Policy,
    payoff: &Array2<f64>,
    with_entropy: bool,
    opts: &SolverOptions,
) -> Result<PolicyValue> {
    policy.check_shape(mdp)?;
    opts.validate(mdp.n_states())?;
    let gamma = mdp.discount();
    let mut per_state = (policy.probs() * payoff).sum_axis(Axis(1));
    if with_entropy {
        per_state += &policy.entropy();
    }
    let chain = mdp.induced_chain(policy);
    let mut v = opts
        .warm_start
        .clone()
        .unwrap_or_else(|| Array1::zeros(mdp.n_states()));
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = &per_state + &(chain.dot(&v) * gamma);
        residual = sup_distance(&next, &v);
        if !residual.is_finite() {
            break;
        }
        v = next;
        if residual <= opts.tol {
            let q = payoff + &(mdp.expected_next(&v) * gamma);
            return Ok(PolicyValue {
                q,
                v,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Expected discounted return `E_{s0~η}[V^π(s0)]` of a policy under `reward`,
/// with or without the entropy bonus.
pub fn policy_return(
    mdp: &TabularMdp,
    policy: &Policy,
    reward: &Array2<f64>,
    with_entropy: bool,
    tol: f64,
) -> Result<f64> {
    check_table("reward table", reward, mdp.n_states(), mdp.n_actions())?;
    let value = evaluate_payoff(mdp, policy, reward, with_entropy, &SolverOptions::with_tol(tol))?;
    Ok(mdp.initial_dist().dot(&value.v))
}

/// Softmax policy of a Q table, `π(a|s) ∝ exp Q(s, a)`.
pub fn soft_policy_improvement(q_hat: &Array2<f64>) -> Result<Policy> {
    if q_hat.iter().any(|x| !x.is_finite()) {
        return Err(invalid("Q table contains non-finite values"));
    }
    let mut probs = q_hat.clone();
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let z = row.sum();
        row /= z;
    }
    Policy::new(probs)
}

fn sup_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Normalised discounted state-action occupancy,
/// `d(s,a) = (1−γ) π(a|s) Σ_t γ^t Pr(s_t = s | s_0 ~ η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationMeasure {
    d: Array2<f64>,
}

impl VisitationMeasure {
    pub fn from_table(d: Array2<f64>) -> Result<Self> {
        if d.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid("visitation measure has negative or non-finite entries"));
        }
        let total = d.sum();
        if (total - 1.0).abs() > MEASURE_TOL {
            return Err(invalid(format!("visitation measure sums to {total}")));
        }
        Ok(Self { d })
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[[s, a]]
    }

    /// `Σ_a d(s, a)`.
    pub fn state_marginal(&self) -> Array1<f64> {
        self.d.sum_axis(Axis(1))
    }

    /// `Σ_{s,a} d(s,a) f(s,a)`.
    pub fn expectation(&self, f: &Array2<f64>) -> f64 {
        (&self.d * f).sum()
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// `(I − γ P_π)^{-1}`: entry `[s0, s]` is the expected discounted number of
/// visits to `s` starting from `s0`.
pub fn discounted_resolvent(mdp: &TabularMdp, policy: &Policy) -> Result<Array2<f64>> {
    policy.check_shape(mdp)?;
    let n = mdp.n_states();
    let chain = to_dmatrix(&mdp.induced_chain(policy));
    let system = DMatrix::identity(n, n) - chain * mdp.discount();
    let inverse = system
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - γ P_π".into()))?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| inverse[(i, j)]))
}

/// Discounted visitation measure of `policy`, from the linear flow equation
/// `ρ = (1−γ) η + γ P_πᵀ ρ`, refined by fixed-point sweeps until the ℓ1 flow
/// residual is at most `tol`.
pub fn visitation_measure(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<VisitationMeasure> {
    policy.check_shape(mdp)?;
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance {tol} must be positive")));
    }
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let chain = mdp.induced_chain(policy);
    let chain_t = to_dmatrix(&chain).transpose();
    let system = DMatrix::identity(n, n) - &chain_t * gamma;
    let source = DVector::from_iterator(n, mdp.initial_dist().iter().map(|&x| (1.0 - gamma) * x));
    let solved = system
        .lu()
        .solve(&source)
        .ok_or_else(|| Error::Singular("I - γ P_πᵀ".into()))?;
    let mut rho = Array1::from_iter(solved.iter().map(|&x| x.max(0.0)));

    let flow = |rho: &Array1<f64>| -> Array1<f64> {
        mdp.initial_dist() * (1.0 - gamma) + &(chain.t().dot(rho) * gamma)
    };
    let mut residual = f64::INFINITY;
    for _ in 0..10_000 {
        let next = flow(&rho);
        residual = (&next - &rho).mapv(f64::abs).sum();
        // Keep the swept iterate: it has exact zeros on structurally unreachable states.
        rho = next;
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(Error::NonConvergence {
            iterations: 10_000,
            residual,
        });
    }
    let mut d = policy.probs().clone();
    for (mut row, &mass) in d.axis_iter_mut(Axis(0)).zip(rho.iter()) {
        row *= mass;
    }
    VisitationMeasure::from_table(d)
}

/// Deterministic generator for `(seed, stream)`; distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Rolls out `horizon` steps from `s0 ~ η` under `policy`.
pub fn rollout<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, horizon: usize, rng: &mut R) -> Trajectory {
    let mut trajectory = Vec::with_capacity(horizon);
    let mut s = sample_index(mdp.initial_dist().view(), rng);
    for t in 0..horizon {
        let a = sample_index(policy.probs().row(s), rng);
        trajectory.push((s, a));
        if t + 1 < horizon {
            s = sample_index(mdp.row(s, a), rng);
        }
    }
    trajectory
}

/// A seeded trajectory of exactly `horizon` `(state, action)` pairs.
pub fn sample_trajectory(mdp: &TabularMdp, policy: &Policy, horizon: usize, seed: u64) -> Result<Trajectory> {
    policy.check_shape(mdp)?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    Ok(rollout(mdp, policy, horizon, &mut seeded_rng(seed, 0)))
}

/// Smallest horizon `T` with `γ^T · scale ≤ eps`.
pub fn truncation_horizon(discount: f64, scale: f64, eps: f64) -> usize {
    if scale <= eps {
        return 1;
    }
    ((eps / scale).ln() / discount.ln()).ceil().max(1.0) as usize
}

/// Structural ergodicity of the chain a policy induces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainStructure {
    pub irreducible: bool,
    pub aperiodic: bool,
}

/// Checks strong connectivity and aperiodicity of `P_π` from its support graph.
pub fn chain_structure(mdp: &TabularMdp, policy: &Policy) -> Result<ChainStructure> {
    policy.check_shape(mdp)?;
    let chain = mdp.induced_chain(policy);
    let n = chain.nrows();
    let edge = |u: usize, v: usize| chain[[u, v]] > 0.0;

    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let e = if forward { edge(u, v) } else { edge(v, u) };
                if e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    let irreducible = reach(true) && reach(false);

    // Period = gcd over edges (u, v) of level(u) + 1 − level(v) for BFS levels from state 0.
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if edge(u, v) && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut period = 0usize;
    for u in (0..n).filter(|&u| level[u] != usize::MAX) {
        for v in (0..n).filter(|&v| edge(u, v)) {
            let diff = (level[u] + 1).abs_diff(level[v]);
            period = gcd(period, diff);
        }
    }
    Ok(ChainStructure {
        irreducible,
        aperiodic: period == 1,
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
