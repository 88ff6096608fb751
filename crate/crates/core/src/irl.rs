//! Maximum-likelihood offline IRL: objectives, gradients and the alternating
//! policy-improvement / reward-ascent loop.
//!
//! Notation used throughout:
//!
//! * `d^E`: discounted visitation measure of the expert in the true MDP.
//! * `π_θ`, `Q_θ`, `V_θ`: soft-optimal policy and values of the conservative
//!   MDP (dynamics `P̂`, payoff `r(·,·;θ) + U`).
//! * `L(θ) = 1/(1−γ) Σ d^E(s,a) log π_θ(a|s)`: expert log-likelihood.
//! * `L̂(θ) = 1/(1−γ) Σ d^E(s,a) (r + U)(s,a) − E_{s0~η} V_θ(s0)`: surrogate.
//!
//! The two objectives differ by exactly
//! `γ/(1−γ) · Σ d^E(s,a) Σ_{s'} V_θ(s') (P̂ − P)(s'|s,a)`, see [`decompose`].

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{
    discounted_resolvent, log_policy_gap, rollout, seeded_rng, soft_policy_evaluation, soft_policy_improvement,
    soft_value_iteration, visitation_measure, Policy, SoftSolution, SolverOptions, TabularMdp, Trajectory,
    VisitationMeasure,
};
use crate::reward::RewardModel;
use crate::world_model::ConservativeMdp;

/// `C_v = (C_r + C_u + ln|A|) / (1 − γ)`, a bound on `|V_θ|`.
pub fn value_bound(c_r: f64, c_u: f64, n_actions: usize, discount: f64) -> f64 {
    (c_r + c_u + (n_actions as f64).ln()) / (1.0 - discount)
}

/// `γ C_v / (1 − γ)`: multiplies the model-mismatch error in the bound on `|L − L̂|`.
pub fn objective_gap_coefficient(c_r: f64, c_u: f64, n_actions: usize, discount: f64) -> f64 {
    discount * value_bound(c_r, c_u, n_actions, discount) / (1.0 - discount)
}

fn check_measure(cmdp: &ConservativeMdp, d: &VisitationMeasure) -> Result<()> {
    if d.table().dim() != (cmdp.mdp.n_states(), cmdp.mdp.n_actions()) {
        return Err(crate::error::dim("visitation measure shape does not match the MDP"));
    }
    Ok(())
}

/// Soft-optimal solution of the conservative MDP under `r(·,·;θ)`.
pub fn solve_lower_level(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    opts: &SolverOptions,
) -> Result<SoftSolution> {
    let r = reward.evaluate(theta)?;
    soft_value_iteration(&cmdp.mdp, &r, &cmdp.penalty, opts)
}

fn surrogate_from(
    cmdp: &ConservativeMdp,
    reward_table: &Array2<f64>,
    v: &Array1<f64>,
    expert_d: &VisitationMeasure,
) -> f64 {
    let gamma = cmdp.mdp.discount();
    let payoff = reward_table + &cmdp.penalty;
    expert_d.expectation(&payoff) / (1.0 - gamma) - cmdp.mdp.initial_dist().dot(v)
}

fn likelihood_from(q: &Array2<f64>, v: &Array1<f64>, expert_d: &VisitationMeasure, discount: f64) -> f64 {
    // log π_θ(a|s) = Q_θ(s,a) − V_θ(s)
    let mut total = 0.0;
    for ((s, a), &w) in expert_d.table().indexed_iter() {
        if w > 0.0 {
            total += w * (q[[s, a]] - v[s]);
        }
    }
    total / (1.0 - discount)
}

/// `L̂(θ)`.
pub fn surrogate_objective(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_d: &VisitationMeasure,
    opts: &SolverOptions,
) -> Result<f64> {
    check_measure(cmdp, expert_d)?;
    let r = reward.evaluate(theta)?;
    let sol = soft_value_iteration(&cmdp.mdp, &r, &cmdp.penalty, opts)?;
    Ok(surrogate_from(cmdp, &r, &sol.v, expert_d))
}

/// `L(θ)` with `d^E` supplied directly.
pub fn likelihood_from_measure(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_d: &VisitationMeasure,
    opts: &SolverOptions,
) -> Result<f64> {
    check_measure(cmdp, expert_d)?;
    let sol = solve_lower_level(cmdp, reward, theta, opts)?;
    Ok(likelihood_from(&sol.q, &sol.v, expert_d, cmdp.mdp.discount()))
}

/// `L(θ)`: discounted expert log-likelihood, with `d^E` computed from the
/// true MDP and the expert policy. Never positive.
pub fn likelihood_objective(
    true_mdp: &TabularMdp,
    expert_policy: &Policy,
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    opts: &SolverOptions,
) -> Result<f64> {
    let expert_d = visitation_measure(true_mdp, expert_policy, 1e-12)?;
    likelihood_from_measure(cmdp, reward, theta, &expert_d, opts)
}

/// Both sides of the likelihood decomposition at one `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub likelihood: f64,
    pub surrogate: f64,
    /// `γ/(1−γ) Σ d^E Σ_{s'} V_θ(s') (P̂ − P)(s'|s,a)`.
    pub mismatch_term: f64,
    /// `L − L̂ − mismatch_term`; zero up to solver error.
    pub residual: f64,
}

/// Evaluates `L`, `L̂` and the model-mismatch term from one lower-level solve.
pub fn decompose(
    true_mdp: &TabularMdp,
    expert_d: &VisitationMeasure,
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    opts: &SolverOptions,
) -> Result<Decomposition> {
    check_measure(cmdp, expert_d)?;
    let gamma = cmdp.mdp.discount();
    let r = reward.evaluate(theta)?;
    let sol = soft_value_iteration(&cmdp.mdp, &r, &cmdp.penalty, opts)?;
    let likelihood = likelihood_from(&sol.q, &sol.v, expert_d, gamma);
    let surrogate = surrogate_from(cmdp, &r, &sol.v, expert_d);
    let next_model = cmdp.mdp.expected_next(&sol.v);
    let next_true = true_mdp.expected_next(&sol.v);
    let mismatch_term = gamma / (1.0 - gamma) * expert_d.expectation(&(next_model - next_true));
    Ok(Decomposition {
        likelihood,
        surrogate,
        mismatch_term,
        residual: likelihood - surrogate - mismatch_term,
    })
}

/// `1/(1−γ) Σ (d^E − d^π_{P̂})(s,a) ∇_θ r(s,a;θ)` for an arbitrary agent policy.
pub fn occupancy_gradient(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_d: &VisitationMeasure,
    agent_policy: &Policy,
) -> Result<Array1<f64>> {
    check_measure(cmdp, expert_d)?;
    let agent_d = visitation_measure(&cmdp.mdp, agent_policy, 1e-12)?;
    let weights = (expert_d.table() - agent_d.table()) / (1.0 - cmdp.mdp.discount());
    reward.weighted_gradient(theta, &weights)
}

/// `∇L̂(θ)`: expert minus soft-optimal-agent expected reward gradients.
pub fn exact_surrogate_gradient(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_d: &VisitationMeasure,
    opts: &SolverOptions,
) -> Result<Array1<f64>> {
    let sol = solve_lower_level(cmdp, reward, theta, opts)?;
    occupancy_gradient(cmdp, reward, theta, expert_d, &sol.policy)
}

/// `∇L(θ)`, differentiating `log π_θ = Q_θ − V_θ` through the lower level.
///
/// Uses `∂V_θ(s₀)/∂θ = Σ_{s,a} [(I − γP̂_π)^{-1}]_{s₀ s} π_θ(a|s) ∇r(s,a)` and
/// `∇Q_θ(s,a) = ∇r(s,a) + γ Σ_{s'} P̂(s'|s,a) ∇V_θ(s')`.
pub fn likelihood_gradient(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_d: &VisitationMeasure,
    opts: &SolverOptions,
) -> Result<Array1<f64>> {
    check_measure(cmdp, expert_d)?;
    let sol = solve_lower_level(cmdp, reward, theta, opts)?;
    Ok(likelihood_gradient_at(cmdp, reward, theta, expert_d, &sol)?.1)
}

fn likelihood_gradient_at(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_d: &VisitationMeasure,
    sol: &SoftSolution,
) -> Result<(f64, Array1<f64>)> {
    let mdp = &cmdp.mdp;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let jac = reward.jacobian(theta)?;
    let resolvent = discounted_resolvent(mdp, &sol.policy)?;
    let mut per_state = Array2::zeros((n_s, jac.ncols()));
    for s in 0..n_s {
        for a in 0..n_a {
            per_state
                .row_mut(s)
                .scaled_add(sol.policy.prob(s, a), &jac.row(s * n_a + a));
        }
    }
    let grad_v = resolvent.dot(&per_state);
    let grad_q = &jac + &(mdp.transition_matrix().dot(&grad_v) * gamma);
    let mut grad = Array1::zeros(jac.ncols());
    for ((s, a), &w) in expert_d.table().indexed_iter() {
        if w > 0.0 {
            grad.scaled_add(w, &(&grad_q.row(s * n_a + a) - &grad_v.row(s)));
        }
    }
    grad /= 1.0 - gamma;
    Ok((likelihood_from(&sol.q, &sol.v, expert_d, gamma), grad))
}

/// `g = h(θ; τ^E) − h(θ; τ^A)`.
pub fn stochastic_gradient(
    reward: &RewardModel,
    theta: &Array1<f64>,
    expert_traj: &Trajectory,
    agent_traj: &Trajectory,
    discount: f64,
) -> Result<Array1<f64>> {
    let expert = reward.cumulative_gradient(theta, expert_traj, discount)?;
    let agent = reward.cumulative_gradient(theta, agent_traj, discount)?;
    Ok(expert - agent)
}

/// MaxEnt-IRL objective at a fixed reward table (evaluation only):
/// `1/(1−γ) Σ d^E r − max_π E_η[Σ γ^t (r + H(π))]`, the inner minimum over policies in closed form.
pub fn maxent_irl_objective(
    mdp: &TabularMdp,
    reward_table: &Array2<f64>,
    expert_d: &VisitationMeasure,
    opts: &SolverOptions,
) -> Result<f64> {
    let zero = Array2::zeros(reward_table.dim());
    let sol = soft_value_iteration(mdp, reward_table, &zero, opts)?;
    Ok(expert_d.expectation(reward_table) / (1.0 - mdp.discount()) - mdp.initial_dist().dot(&sol.v))
}

/// The MaxEnt-IRL inner objective at a given agent policy; minimised by the soft-optimal policy.
pub fn maxent_irl_inner(
    mdp: &TabularMdp,
    reward_table: &Array2<f64>,
    expert_d: &VisitationMeasure,
    policy: &Policy,
    opts: &SolverOptions,
) -> Result<f64> {
    let zero = Array2::zeros(reward_table.dim());
    let value = soft_policy_evaluation(mdp, policy, reward_table, &zero, opts)?;
    Ok(expert_d.expectation(reward_table) / (1.0 - mdp.discount()) - mdp.initial_dist().dot(&value.v))
}

/// Objective maximised by [`maximize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Surrogate,
    Likelihood,
}

#[derive(Debug, Clone)]
pub struct AscentOptions {
    pub max_iter: u64,
    pub grad_tol: f64,
    pub solver_tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iter: 2_000,
            grad_tol: 1e-7,
            solver_tol: 1e-12,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub theta: Array1<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: u64,
}

type Evaluated = (Vec<f64>, f64, Vec<f64>);

/// `−f` and `−∇f` for argmin, caching the last point so cost and gradient share one solve.
struct NegatedObjective<'a> {
    cmdp: &'a ConservativeMdp,
    reward: &'a RewardModel,
    expert_d: &'a VisitationMeasure,
    objective: Objective,
    solver_tol: f64,
    warm: RefCell<Option<Array1<f64>>>,
    last: RefCell<Option<Evaluated>>,
    best: RefCell<Option<(Vec<f64>, f64)>>,
}

impl NegatedObjective<'_> {
    fn eval(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        if let Some((x, v, g)) = self.last.borrow().as_ref() {
            if x.as_slice() == p {
                return Ok((*v, g.clone()));
            }
        }
        let theta = Array1::from(p.to_vec());
        let mut solver = SolverOptions::with_tol(self.solver_tol);
        solver.warm_start = self.warm.borrow().clone();
        let sol = solve_lower_level(self.cmdp, self.reward, &theta, &solver)?;
        *self.warm.borrow_mut() = Some(sol.v.clone());
        let (value, grad) = match self.objective {
            Objective::Surrogate => {
                let r = self.reward.evaluate(&theta)?;
                let value = surrogate_from(self.cmdp, &r, &sol.v, self.expert_d);
                let grad = occupancy_gradient(self.cmdp, self.reward, &theta, self.expert_d, &sol.policy)?;
                (value, grad)
            }
            Objective::Likelihood => likelihood_gradient_at(self.cmdp, self.reward, &theta, self.expert_d, &sol)?,
        };
        let out = (-value, grad.iter().map(|g| -g).collect::<Vec<_>>());
        *self.last.borrow_mut() = Some((p.to_vec(), out.0, out.1.clone()));
        let improved = self.best.borrow().as_ref().is_none_or(|(_, b)| out.0 < *b);
        if improved {
            *self.best.borrow_mut() = Some((p.to_vec(), out.0));
        }
        Ok(out)
    }
}

impl CostFunction for &NegatedObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(p)?.0)
    }
}

impl Gradient for &NegatedObjective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(p)?.1)
    }
}

/// Maximises `L̂` or `L` by L-BFGS with a More-Thuente line search, using full
/// lower-level solves at every evaluation.
///
/// Succeeds once `‖∇‖ ≤ grad_tol`, or if the line search can no longer make
/// progress while `‖∇‖ ≤ √grad_tol`.
pub fn maximize(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    expert_d: &VisitationMeasure,
    theta0: &Array1<f64>,
    objective: Objective,
    opts: &AscentOptions,
) -> Result<AscentResult> {
    check_measure(cmdp, expert_d)?;
    if theta0.len() != reward.param_dim() {
        return Err(crate::error::dim("θ0 does not match the reward model"));
    }
    let problem = NegatedObjective {
        cmdp,
        reward,
        expert_d,
        objective,
        solver_tol: opts.solver_tol,
        warm: RefCell::new(None),
        last: RefCell::new(None),
        best: RefCell::new(None),
    };
    let mut theta = theta0.to_vec();
    let mut iterations = 0;
    // restart after line-search stalls; the curvature history is often what went stale
    for _ in 0..5 {
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), opts.memory)
            .with_tolerance_grad(opts.grad_tol)
            .map_err(|e| invalid(e.to_string()))?
            .with_tolerance_cost(0.0)
            .map_err(|e| invalid(e.to_string()))?;
        let run = Executor::new(&problem, solver)
            .configure(|state| state.param(theta.clone()).max_iters(opts.max_iter.saturating_sub(iterations)))
            .run();
        if let Ok(res) = run {
            iterations += res.state().get_iter();
        } else {
            iterations += 1;
        }
        // a failed line search still leaves the best evaluated point usable
        if let Some((x, _)) = problem.best.borrow().as_ref() {
            theta = x.clone();
        }
        let (neg_value, grad) = problem.eval(&theta)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= opts.grad_tol || iterations >= opts.max_iter {
            return finish(theta, -neg_value, grad_norm, iterations, opts);
        }
    }
    let (neg_value, grad) = problem.eval(&theta)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    finish(theta, -neg_value, grad_norm, iterations, opts)
}

fn finish(theta: Vec<f64>, value: f64, grad_norm: f64, iterations: u64, opts: &AscentOptions) -> Result<AscentResult> {
    if grad_norm <= opts.grad_tol.sqrt() {
        Ok(AscentResult {
            theta: Array1::from(theta),
            value,
            grad_norm,
            iterations,
        })
    } else {
        Err(Error::NonConvergence {
            iterations: iterations as usize,
            residual: grad_norm,
        })
    }
}

/// `L(θ*) − L(θ̂)` together with the reference maximiser.
#[derive(Debug, Clone)]
pub struct OptimalityGap {
    pub gap: f64,
    pub likelihood_star: f64,
    pub likelihood_hat: f64,
    pub theta_star: Array1<f64>,
}

/// Optimality gap of `θ̂` for the likelihood, with `θ*` found by ascending `L`
/// directly from `θ̂` (so `L(θ*) ≥ L(θ̂)` up to solver noise).
pub fn optimality_gap(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    expert_d: &VisitationMeasure,
    theta_hat: &Array1<f64>,
    search: &AscentOptions,
) -> Result<OptimalityGap> {
    let solver = SolverOptions::with_tol(search.solver_tol);
    let likelihood_hat = likelihood_from_measure(cmdp, reward, theta_hat, expert_d, &solver)?;
    let star = maximize(cmdp, reward, expert_d, theta_hat, Objective::Likelihood, search)?;
    let gap = star.value - likelihood_hat;
    if gap < -1e-9 {
        return Err(invalid(format!("reference ascent decreased the likelihood by {}", -gap)));
    }
    Ok(OptimalityGap {
        gap: gap.max(0.0),
        likelihood_star: star.value,
        likelihood_hat,
        theta_star: star.theta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Exact,
    Stochastic,
}

/// Configuration of the alternating loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrlConfig {
    /// `K`.
    pub iterations: usize,
    /// `α₀`; the step is `α₀ / √K`.
    pub step_scale: f64,
    /// Sup-norm of the perturbation injected into each soft-Q evaluation.
    pub eps_app: f64,
    pub gradient_mode: GradientMode,
    /// Agent trajectory length in stochastic mode.
    pub horizon: usize,
    pub seed: u64,
    /// Record the approximate policy-improvement inequalities every iteration.
    pub diagnostics: bool,
    pub solver_tol: f64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            step_scale: 1.0,
            eps_app: 0.0,
            gradient_mode: GradientMode::Exact,
            horizon: 200,
            seed: 0,
            diagnostics: false,
            solver_tol: 1e-10,
        }
    }
}

impl IrlConfig {
    /// `α = α₀ · K^{-1/2}`.
    pub fn step_size(&self) -> f64 {
        self.step_scale / (self.iterations as f64).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(self.step_scale > 0.0) || !self.step_scale.is_finite() {
            return Err(invalid("step scale must be positive"));
        }
        if !(self.eps_app >= 0.0) || !self.eps_app.is_finite() {
            return Err(invalid("eps_app must be finite and non-negative"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if !(self.solver_tol > 0.0) {
            return Err(invalid("solver tolerance must be positive"));
        }
        Ok(())
    }
}

/// One row of the loop trace.
#[derive(Debug, Clone, Serialize)]
pub struct IrlRecord {
    pub iter: usize,
    /// `‖g_k‖`, the norm of the step direction actually used.
    pub grad_norm_stoch: f64,
    /// `‖∇L̂(θ_k)‖` from the fully solved lower level.
    pub grad_norm_exact: f64,
    pub surrogate_obj: f64,
    pub likelihood: f64,
    /// `‖log π_{k+1} − log π_{θ_k}‖∞`.
    pub policy_gap_inf: f64,
}

/// The approximate policy-improvement inequalities at one iteration.
#[derive(Debug, Clone, Serialize)]
pub struct ImprovementCheck {
    pub iter: usize,
    /// `max (Q_k − Q_{k+½})`; must not exceed `slack`.
    pub improvement_excess: f64,
    /// `‖Q_{θ_k} − Q_{k+½}‖∞`.
    pub contraction_lhs: f64,
    /// `γ ‖Q_{θ_k} − Q_k‖∞`.
    pub contraction_rhs: f64,
    /// `2γ ε_app / (1 − γ)`.
    pub slack: f64,
    pub violated: bool,
}

/// Numerical allowance added to both improvement inequalities.
pub const IMPROVEMENT_TOL: f64 = 1e-8;

/// Checks `Q_k ≤ Q_{k+½} + 2γε/(1−γ)` and
/// `‖Q_θ − Q_{k+½}‖∞ ≤ γ‖Q_θ − Q_k‖∞ + 2γε/(1−γ)`.
pub fn check_policy_improvement(
    iter: usize,
    q_theta: &Array2<f64>,
    q_k: &Array2<f64>,
    q_half: &Array2<f64>,
    discount: f64,
    eps_app: f64,
) -> ImprovementCheck {
    let sup = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let improvement_excess = q_k
        .iter()
        .zip(q_half)
        .map(|(k, h)| k - h)
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = 2.0 * discount * eps_app / (1.0 - discount);
    let contraction_lhs = sup(q_theta, q_half);
    let contraction_rhs = discount * sup(q_theta, q_k);
    let violated =
        improvement_excess > slack + IMPROVEMENT_TOL || contraction_lhs > contraction_rhs + slack + IMPROVEMENT_TOL;
    ImprovementCheck {
        iter,
        improvement_excess,
        contraction_lhs,
        contraction_rhs,
        slack,
        violated,
    }
}

/// Per-iteration history of a run.
#[derive(Debug, Clone, Default)]
pub struct IrlTrace {
    pub records: Vec<IrlRecord>,
    /// `θ_k` for `k = 0..K`.
    pub thetas: Vec<Array1<f64>>,
    /// Filled only with `diagnostics` enabled.
    pub improvement: Vec<ImprovementCheck>,
}

impl IrlTrace {
    /// `1/K Σ ‖∇L̂(θ_k)‖²`.
    pub fn mean_squared_exact_gradient(&self) -> f64 {
        mean(self.records.iter().map(|r| r.grad_norm_exact * r.grad_norm_exact))
    }

    /// `1/K Σ ‖log π_{k+1} − log π_{θ_k}‖∞`.
    pub fn mean_policy_gap(&self) -> f64 {
        mean(self.records.iter().map(|r| r.policy_gap_inf))
    }

    pub fn improvement_violations(&self) -> usize {
        self.improvement.iter().filter(|c| c.violated).count()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct IrlOutcome {
    pub theta: Array1<f64>,
    pub policy: Policy,
    pub trace: IrlTrace,
}

/// Adds `±eps` with independent uniform signs to every entry.
pub fn perturb<R: Rng + ?Sized>(q: &Array2<f64>, eps: f64, rng: &mut R) -> Array2<f64> {
    q.mapv(|x| if rng.random::<bool>() { x + eps } else { x - eps })
}

/// Runs `K` iterations of the alternating algorithm:
///
/// 1. evaluate `Q_k`, the soft Q of `π_k` under `θ_k` in the conservative MDP,
///    and perturb it by `±ε_app` to get `Q̂_k`;
/// 2. `π_{k+1} = softmax(Q̂_k)`;
/// 3. form `g_k`: from occupancies of `π_{k+1}` (exact mode), or from one expert
///    trajectory and one `π_{k+1}` rollout in `P̂` (stochastic mode);
/// 4. `θ_{k+1} = θ_k + α g_k`.
///
/// `π_0` is uniform. All randomness comes from one generator seeded with `cfg.seed`.
pub fn run_offline_ml_irl(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    expert_d: &VisitationMeasure,
    expert_trajectories: &[Trajectory],
    theta0: &Array1<f64>,
    cfg: &IrlConfig,
) -> Result<IrlOutcome> {
    cfg.validate()?;
    check_measure(cmdp, expert_d)?;
    if theta0.len() != reward.param_dim() {
        return Err(crate::error::dim("θ0 does not match the reward model"));
    }
    if cfg.gradient_mode == GradientMode::Stochastic {
        if expert_trajectories.is_empty() {
            return Err(invalid("stochastic mode needs at least one expert trajectory"));
        }
        if expert_trajectories.iter().any(|t| t.is_empty()) {
            return Err(invalid("expert trajectories must be non-empty"));
        }
    }
    let mdp = &cmdp.mdp;
    let gamma = mdp.discount();
    let alpha = cfg.step_size();
    let mut rng = seeded_rng(cfg.seed, 0);

    let mut theta = theta0.clone();
    let mut policy = Policy::uniform(mdp.n_states(), mdp.n_actions());
    let mut warm_opt: Option<Array1<f64>> = None;
    let mut warm_eval: Option<Array1<f64>> = None;
    let mut trace = IrlTrace::default();

    for k in 0..cfg.iterations {
        let at = |e: Error| Error::AtIteration {
            iteration: k,
            source: Box::new(e),
        };
        trace.thetas.push(theta.clone());
        let r = reward.evaluate(&theta).map_err(at)?;

        let mut opts = SolverOptions::with_tol(cfg.solver_tol);
        opts.warm_start = warm_opt.take();
        let optimal = soft_value_iteration(mdp, &r, &cmdp.penalty, &opts).map_err(at)?;
        warm_opt = Some(optimal.v.clone());

        let mut opts = SolverOptions::with_tol(cfg.solver_tol);
        opts.warm_start = warm_eval.take();
        let current = soft_policy_evaluation(mdp, &policy, &r, &cmdp.penalty, &opts).map_err(at)?;
        warm_eval = Some(current.v.clone());

        let q_hat = perturb(&current.q, cfg.eps_app, &mut rng);
        let next_policy = soft_policy_improvement(&q_hat).map_err(at)?;

        let g = match cfg.gradient_mode {
            GradientMode::Exact => occupancy_gradient(cmdp, reward, &theta, expert_d, &next_policy).map_err(at)?,
            GradientMode::Stochastic => {
                let pick = rng.random_range(0..expert_trajectories.len());
                let agent = rollout(mdp, &next_policy, cfg.horizon, &mut rng);
                stochastic_gradient(reward, &theta, &expert_trajectories[pick], &agent, gamma).map_err(at)?
            }
        };

        let exact = occupancy_gradient(cmdp, reward, &theta, expert_d, &optimal.policy).map_err(at)?;
        trace.records.push(IrlRecord {
            iter: k,
            grad_norm_stoch: g.dot(&g).sqrt(),
            grad_norm_exact: exact.dot(&exact).sqrt(),
            surrogate_obj: surrogate_from(cmdp, &r, &optimal.v, expert_d),
            likelihood: likelihood_from(&optimal.q, &optimal.v, expert_d, gamma),
            policy_gap_inf: log_policy_gap(&next_policy, &optimal.policy),
        });

        if cfg.diagnostics {
            let half = soft_policy_evaluation(
                mdp,
                &next_policy,
                &r,
                &cmdp.penalty,
                &SolverOptions::with_tol(cfg.solver_tol),
            )
            .map_err(at)?;
            trace.improvement.push(check_policy_improvement(
                k,
                &optimal.q,
                &current.q,
                &half.q,
                gamma,
                cfg.eps_app,
            ));
        }

        theta.scaled_add(alpha, &g);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(at(invalid("reward parameters became non-finite")));
        }
        policy = next_policy;
    }
    Ok(IrlOutcome {
        theta,
        policy,
        trace,
    })
}

/// `max_{s,a} |Q₁ − Q₂|`.
pub fn q_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Empirical Lipschitz ratio `‖Q_{θ₁} − Q_{θ₂}‖∞ / ‖θ₁ − θ₂‖`.
pub fn soft_q_lipschitz_ratio(
    cmdp: &ConservativeMdp,
    reward: &RewardModel,
    theta1: &Array1<f64>,
    theta2: &Array1<f64>,
    opts: &SolverOptions,
) -> Result<f64> {
    let q1 = solve_lower_level(cmdp, reward, theta1, opts)?.q;
    let q2 = solve_lower_level(cmdp, reward, theta2, opts)?.q;
    let diff = theta1 - theta2;
    Ok(q_distance(&q1, &q2) / diff.dot(&diff).sqrt())
}

/// Discount-weighted empirical state-action frequencies of truncated trajectories,
/// normalised to a probability measure; estimates `d^E` from demonstrations.
pub fn empirical_visitation(
    trajectories: &[Trajectory],
    n_states: usize,
    n_actions: usize,
    discount: f64,
) -> Result<VisitationMeasure> {
    if trajectories.is_empty() {
        return Err(invalid("need at least one trajectory"));
    }
    let mut d = Array2::zeros((n_states, n_actions));
    for traj in trajectories {
        let mut w = 1.0;
        for &(s, a) in traj {
            if s >= n_states || a >= n_actions {
                return Err(invalid(format!("pair ({s}, {a}) out of range")));
            }
            d[[s, a]] += w;
            w *= discount;
        }
    }
    let total = d.sum();
    if total <= 0.0 {
        return Err(invalid("trajectories are empty"));
    }
    d /= total;
    VisitationMeasure::from_table(d)
}

/// Row sums of a `[S, A]` table.
pub fn per_state(table: &Array2<f64>) -> Array1<f64> {
    table.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};

    fn two_state() -> TabularMdp {
        let mut p = Array3::zeros((2, 2, 2));
        p[[0, 0, 0]] = 1.0;
        p[[0, 1, 1]] = 1.0;
        p[[1, 0, 0]] = 1.0;
        p[[1, 1, 1]] = 1.0;
        TabularMdp::new(p, array![1.0, 0.0], 0.9).unwrap()
    }

    #[test]
    fn value_bound_formula() {
        assert_abs_diff_eq!(value_bound(1.0, 0.5, 4, 0.9), (1.5 + 4f64.ln()) / 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(objective_gap_coefficient(1.0, 0.0, 1, 0.5), 0.5 * 2.0 / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn improvement_check_flags_excess() {
        let q = array![[1.0, 2.0]];
        let ok = check_policy_improvement(0, &q, &q, &q, 0.9, 0.0);
        assert!(!ok.violated);
        let lower = array![[0.5, 2.0]];
        let bad = check_policy_improvement(0, &q, &q, &lower, 0.9, 0.0);
        assert!(bad.violated);
        assert_abs_diff_eq!(bad.improvement_excess, 0.5);
        // the same gap is absorbed by the slack 2γε/(1−γ) = 18ε
        let slack = check_policy_improvement(0, &q, &q, &lower, 0.9, 0.03);
        assert!(!slack.violated);
    }

    #[test]
    fn perturbation_has_exact_magnitude() {
        let q = Array2::zeros((3, 4));
        let mut rng = seeded_rng(1, 0);
        let p = perturb(&q, 0.2, &mut rng);
        assert!(p.iter().all(|x| (x.abs() - 0.2).abs() < 1e-15));
        assert!(p.iter().any(|&x| x > 0.0) && p.iter().any(|&x| x < 0.0));
    }

    #[test]
    fn empirical_visitation_weights_by_discount() {
        let d = empirical_visitation(&[vec![(0, 1), (1, 0)]], 2, 2, 0.5).unwrap();
        assert_abs_diff_eq!(d.get(0, 1), 1.0 / 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(1, 0), 0.5 / 1.5, epsilon = 1e-15);
        assert!(empirical_visitation(&[], 2, 2, 0.5).is_err());
        assert!(empirical_visitation(&[vec![(2, 0)]], 2, 2, 0.5).is_err());
    }

    #[test]
    fn zero_reward_surrogate_is_minus_entropy_value() {
        let mdp = two_state();
        let cmdp = ConservativeMdp::exact(&mdp);
        let reward = RewardModel::tabular(2, 2, 1.0).unwrap();
        let d = visitation_measure(&mdp, &Policy::uniform(2, 2), 1e-12).unwrap();
        let l_hat = surrogate_objective(&cmdp, &reward, &reward.zero_params(), &d, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(l_hat, -(2f64.ln()) / 0.1, epsilon = 1e-8);
        // uniform expert: L = Σ d ln(1/2) / (1 − γ)
        let l = likelihood_from_measure(&cmdp, &reward, &reward.zero_params(), &d, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(l, -(2f64.ln()) / 0.1, epsilon = 1e-8);
        // uniform expert under zero reward is already optimal
        let g = exact_surrogate_gradient(&cmdp, &reward, &reward.zero_params(), &d, &SolverOptions::default()).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn stochastic_gradient_of_identical_trajectories_is_zero() {
        let reward = RewardModel::tabular(2, 2, 1.0).unwrap();
        let traj = vec![(0, 1), (1, 1)];
        let g = stochastic_gradient(&reward, &reward.zero_params(), &traj, &traj, 0.9).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let other = vec![(0, 0), (0, 0)];
        let g = stochastic_gradient(&reward, &reward.zero_params(), &traj, &other, 0.5).unwrap();
        // ∇r = C_r e_{sa} at θ = 0
        assert_abs_diff_eq!(g[1], 1.0);
        assert_abs_diff_eq!(g[3], 0.5);
        assert_abs_diff_eq!(g[0], -1.5);
    }

    #[test]
    fn mismatched_measure_is_rejected() {
        let mdp = two_state();
        let cmdp = ConservativeMdp::exact(&mdp);
        let reward = RewardModel::tabular(2, 2, 1.0).unwrap();
        let d = VisitationMeasure::from_table(array![[1.0]]).unwrap();
        assert!(surrogate_objective(&cmdp, &reward, &reward.zero_params(), &d, &SolverOptions::default()).is_err());
    }
}
