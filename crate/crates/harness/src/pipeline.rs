//! End-to-end runs: world model → penalty → IRL → evaluation in the true MDP,
//! reward transfer, and the single-shot `solve` / `estimate-model` commands.

use std::time::Instant;

use mlirl_core::data_gen::ExpertDataset;
use mlirl_core::irl::{empirical_visitation, run_offline_ml_irl, solve_lower_level, IrlConfig, IrlTrace};
use mlirl_core::mdp::{policy_return, soft_value_iteration, Policy, SolverOptions, TabularMdp};
use mlirl_core::reward::{RewardCheckpoint, RewardModel};
use mlirl_core::world_model::{
    build_model, l1_distance, ConservativeModel, PenaltyConfig, TransitionDataset, UnseenRule,
};
use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{input, Result};
use crate::report::ExperimentReport;
use crate::setup::Problem;

/// Value of a policy in the true MDP, absolute and relative to the expert.
///
/// `score` uses entropy-regularised values, the criterion the expert is optimal
/// for; `return_score` uses the plain discounted reward. `normalized_score`
/// rescales soft values so the uniform policy scores 0 and the expert 1.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PolicyScore {
    pub soft_value: f64,
    pub expert_soft_value: f64,
    pub uniform_soft_value: f64,
    pub score: f64,
    pub normalized_score: f64,
    pub return_value: f64,
    pub expert_return: f64,
    pub return_score: f64,
}

pub fn score_policy(problem: &Problem, policy: &Policy) -> Result<PolicyScore> {
    let tol = 1e-12;
    let soft_value = policy_return(&problem.mdp, policy, &problem.reward, true, tol)?;
    let expert_soft_value = policy_return(&problem.mdp, &problem.expert, &problem.reward, true, tol)?;
    let return_value = policy_return(&problem.mdp, policy, &problem.reward, false, tol)?;
    let expert_return = policy_return(&problem.mdp, &problem.expert, &problem.reward, false, tol)?;
    let uniform = Policy::uniform(problem.mdp.n_states(), problem.mdp.n_actions());
    let uniform_soft_value = policy_return(&problem.mdp, &uniform, &problem.reward, true, tol)?;
    if expert_soft_value <= 0.0 {
        return Err(input("expert soft value is not positive; the normalised score is undefined"));
    }
    Ok(PolicyScore {
        soft_value,
        expert_soft_value,
        uniform_soft_value,
        score: soft_value / expert_soft_value,
        normalized_score: (soft_value - uniform_soft_value) / (expert_soft_value - uniform_soft_value),
        return_value,
        expert_return,
        return_score: return_value / expert_return,
    })
}

/// Data available to an offline run.
#[derive(Debug, Clone)]
pub struct IrlData {
    pub problem: Problem,
    pub transitions: TransitionDataset,
    pub expert: ExpertDataset,
}

#[derive(Debug, Clone, Serialize)]
pub struct IrlPipelineConfig {
    pub penalty: PenaltyConfig,
    pub unseen_rule: UnseenRule,
    pub irl: IrlConfig,
    pub c_r: f64,
}

#[derive(Debug, Clone)]
pub struct IrlRun {
    pub beta: f64,
    pub theta: Array1<f64>,
    pub checkpoint: RewardCheckpoint,
    pub trace: IrlTrace,
    /// Soft-optimal policy of the conservative MDP under the learned reward.
    pub recovered: PolicyScore,
    /// The loop's last policy iterate.
    pub final_iterate: PolicyScore,
    pub mismatch: f64,
}

pub fn fit_model(data: &TransitionDataset, problem: &Problem, cfg: &PenaltyConfig, rule: UnseenRule) -> Result<ConservativeModel> {
    if data.n_states() != problem.mdp.n_states() || data.n_actions() != problem.mdp.n_actions() {
        return Err(input("transition dataset does not match the instance dimensions"));
    }
    Ok(build_model(data, rule, cfg)?)
}

/// One offline run with the penalty scale `beta`.
///
/// The algorithm sees only the datasets: the expert occupancy it uses is the
/// discounted empirical frequency of the demonstrations.
pub fn run_irl(data: &IrlData, cfg: &IrlPipelineConfig, beta: f64) -> Result<IrlRun> {
    let problem = &data.problem;
    let (n_s, n_a) = (problem.mdp.n_states(), problem.mdp.n_actions());
    data.expert
        .check_bounds(n_s, n_a)
        .map_err(|e| input(e.to_string()))?;
    if data.expert.is_empty() {
        return Err(input("expert dataset has no trajectories"));
    }
    let penalty = PenaltyConfig { beta, ..cfg.penalty.clone() };
    let model = fit_model(&data.transitions, problem, &penalty, cfg.unseen_rule)?;
    let cmdp = model.conservative_mdp(&problem.mdp)?;
    let d_hat = empirical_visitation(&data.expert.trajectories, n_s, n_a, problem.mdp.discount())?;
    let reward = RewardModel::tabular(n_s, n_a, cfg.c_r)?;
    let out = run_offline_ml_irl(&cmdp, &reward, &d_hat, &data.expert.trajectories, &reward.zero_params(), &cfg.irl)?;
    let recovered = solve_lower_level(&cmdp, &reward, &out.theta, &SolverOptions::with_tol(1e-12))?.policy;
    Ok(IrlRun {
        beta,
        checkpoint: reward.to_checkpoint(&out.theta)?,
        recovered: score_policy(problem, &recovered)?,
        final_iterate: score_policy(problem, &out.policy)?,
        mismatch: mlirl_core::world_model::model_mismatch_error(&problem.mdp, &model, &problem.expert_d)?,
        theta: out.theta,
        trace: out.trace,
    })
}

pub const IRL_COLUMNS: &[&str] = &[
    "beta",
    "seed",
    "score",
    "normalized_score",
    "return_score",
    "final_iterate_score",
    "soft_value",
    "expert_soft_value",
    "return_value",
    "expert_return",
    "mismatch",
    "final_grad_norm_exact",
];

/// Runs [`run_irl`] once per `beta` and tabulates the scores.
pub fn cmd_irl(data: &IrlData, cfg: &IrlPipelineConfig, betas: &[f64]) -> Result<(ExperimentReport, Vec<IrlRun>)> {
    let start = Instant::now();
    if betas.is_empty() {
        return Err(input("beta grid must be non-empty"));
    }
    let runs = betas.iter().map(|&b| run_irl(data, cfg, b)).collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new("irl", serde_json::to_value(cfg)?, IRL_COLUMNS);
    for run in &runs {
        let last = run.trace.records.last().map_or(f64::NAN, |r| r.grad_norm_exact);
        report.push(vec![
            run.beta.into(),
            cfg.irl.seed.into(),
            run.recovered.score.into(),
            run.recovered.normalized_score.into(),
            run.recovered.return_score.into(),
            run.final_iterate.score.into(),
            run.recovered.soft_value.into(),
            run.recovered.expert_soft_value.into(),
            run.recovered.return_value.into(),
            run.recovered.expert_return.into(),
            run.mismatch.into(),
            last.into(),
        ]);
    }
    if let Some(first) = runs.first() {
        report.summary.insert("score".into(), first.recovered.score);
        report.summary.insert("normalized_score".into(), first.recovered.normalized_score);
        report.summary.insert("return_score".into(), first.recovered.return_score);
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((report, runs))
}

/// Trace CSV: `iter,grad_norm_stoch,grad_norm_exact,surrogate_obj,likelihood,policy_gap_inf`.
pub fn trace_report(trace: &IrlTrace, config: serde_json::Value) -> ExperimentReport {
    let mut r = ExperimentReport::new(
        "trace",
        config,
        &["iter", "grad_norm_stoch", "grad_norm_exact", "surrogate_obj", "likelihood", "policy_gap_inf"],
    );
    for rec in &trace.records {
        r.push(vec![
            rec.iter.into(),
            rec.grad_norm_stoch.into(),
            rec.grad_norm_exact.into(),
            rec.surrogate_obj.into(),
            rec.likelihood.into(),
            rec.policy_gap_inf.into(),
        ]);
    }
    r
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferConfig {
    pub penalty: PenaltyConfig,
    pub unseen_rule: UnseenRule,
}

/// Labels the target dataset's conservative MDP with a learned reward, solves
/// it and scores the policy in the target's true MDP.
pub fn transfer_policy(
    ckpt: &RewardCheckpoint,
    target: &Problem,
    transitions: &TransitionDataset,
    cfg: &TransferConfig,
) -> Result<(Policy, PolicyScore)> {
    let (reward, theta) = RewardModel::from_checkpoint(ckpt).map_err(|e| input(format!("checkpoint: {e}")))?;
    if reward.n_states() != target.mdp.n_states() || reward.n_actions() != target.mdp.n_actions() {
        return Err(input(format!(
            "checkpoint feature spec is {}x{} but the target instance is {}x{}",
            reward.n_states(),
            reward.n_actions(),
            target.mdp.n_states(),
            target.mdp.n_actions()
        )));
    }
    let model = fit_model(transitions, target, &cfg.penalty, cfg.unseen_rule)?;
    let cmdp = model.conservative_mdp(&target.mdp)?;
    let policy = solve_lower_level(&cmdp, &reward, &theta, &SolverOptions::with_tol(1e-12))?.policy;
    let score = score_policy(target, &policy)?;
    Ok((policy, score))
}

pub fn cmd_transfer(
    ckpt: &RewardCheckpoint,
    target: &Problem,
    transitions: &TransitionDataset,
    cfg: &TransferConfig,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let (_, score) = transfer_policy(ckpt, target, transitions, cfg)?;
    let mut report = ExperimentReport::new(
        "transfer",
        serde_json::to_value(cfg)?,
        &["seed", "n_transitions", "score", "normalized_score", "return_score", "soft_value", "expert_soft_value"],
    );
    report.push(vec![
        cfg.penalty.seed.into(),
        transitions.len().into(),
        score.score.into(),
        score.normalized_score.into(),
        score.return_score.into(),
        score.soft_value.into(),
        score.expert_soft_value.into(),
    ]);
    report.summary.insert("score".into(), score.score);
    report.summary.insert("normalized_score".into(), score.normalized_score);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Soft-optimal `Q`, `V` and policy of an MDP under a reward table.
pub fn cmd_solve(mdp: &TabularMdp, reward: &Array2<f64>, tol: f64) -> Result<ExperimentReport> {
    let start = Instant::now();
    let zero = Array2::zeros(reward.dim());
    let sol = soft_value_iteration(mdp, reward, &zero, &SolverOptions::with_tol(tol))?;
    let mut report = ExperimentReport::new(
        "solve",
        serde_json::json!({ "tol": tol }),
        &["state", "action", "q", "v", "policy"],
    );
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            report.push(vec![
                s.into(),
                a.into(),
                sol.q[[s, a]].into(),
                sol.v[s].into(),
                sol.policy.prob(s, a).into(),
            ]);
        }
    }
    report.summary.insert("iterations".into(), sol.iterations as f64);
    report.summary.insert("residual".into(), sol.residual);
    report.summary.insert("initial_value".into(), mdp.initial_dist().dot(&sol.v));
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Per-pair counts, penalty and row error of the fitted world model.
pub fn cmd_estimate_model(
    mdp: &TabularMdp,
    data: &TransitionDataset,
    cfg: &PenaltyConfig,
    rule: UnseenRule,
) -> Result<(ExperimentReport, ConservativeModel)> {
    let start = Instant::now();
    if data.n_states() != mdp.n_states() || data.n_actions() != mdp.n_actions() {
        return Err(input("transition dataset does not match the instance dimensions"));
    }
    let model = build_model(data, rule, cfg)?;
    let mut report = ExperimentReport::new(
        "estimate_model",
        serde_json::to_value(cfg)?,
        &["state", "action", "count", "penalty", "l1_to_true"],
    );
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            report.push(vec![
                s.into(),
                a.into(),
                model.counts()[[s, a]].into(),
                model.penalty()[[s, a]].into(),
                l1_distance(mdp.row(s, a), model.row(s, a)).into(),
            ]);
        }
    }
    let counts = model.counts();
    report.summary.insert("n_transitions".into(), data.len() as f64);
    report.summary.insert("pairs_seen".into(), counts.iter().filter(|&&c| c > 0).count() as f64);
    report.summary.insert("min_count".into(), counts.iter().copied().min().unwrap_or(0) as f64);
    report.summary.insert("max_count".into(), counts.iter().copied().max().unwrap_or(0) as f64);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((report, model))
}
