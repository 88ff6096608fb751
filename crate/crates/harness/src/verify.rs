//! Randomised battery of identities and inequalities.

use std::time::Instant;

use mlirl_core::data_gen::{make_expert, make_instance, InstanceSpec};
use mlirl_core::irl::{
    decompose, exact_surrogate_gradient, objective_gap_coefficient, run_offline_ml_irl, soft_q_lipschitz_ratio,
    surrogate_objective, IrlConfig,
};
use mlirl_core::mdp::{seeded_rng, visitation_measure, SolverOptions, TabularMdp};
use mlirl_core::reward::RewardModel;
use mlirl_core::world_model::{model_mismatch_error, ConservativeMdp, ConservativeModel};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::report::{Cell, ExperimentReport};

#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    pub seeds: Vec<u64>,
    pub discount: f64,
    /// Perturbation size for the second improvement-inequality run.
    pub eps_app: f64,
    /// Iterations of each diagnostic loop run.
    pub iterations: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            discount: 0.9,
            eps_app: 0.3,
            iterations: 100,
        }
    }
}

/// A random verification instance: true MDP, an unrelated `P̂` with penalty, expert occupancy.
pub struct VerifyInstance {
    pub mdp: TabularMdp,
    pub cmdp: ConservativeMdp,
    pub expert_d: mlirl_core::mdp::VisitationMeasure,
    pub mismatch: f64,
    pub c_u: f64,
}

pub fn verify_instance(seed: u64, discount: f64) -> Result<VerifyInstance> {
    let mut rng = seeded_rng(seed, 1_000);
    let n_s = rng.random_range(2..=8);
    let n_a = rng.random_range(1..=4);
    let truth = make_instance(&InstanceSpec::random_dense(n_s, n_a, discount, 0.5, seed))?;
    let other = make_instance(&InstanceSpec::random_dense(n_s, n_a, discount, 0.5, seed.wrapping_add(1 << 32)))?;
    let c_u = 0.5;
    let penalty = Array2::from_shape_simple_fn((n_s, n_a), || -c_u * rng.random::<f64>());
    let model = ConservativeModel::from_transition(other.mdp.transition().clone())?.with_penalty(
        penalty,
        mlirl_core::world_model::PenaltyKind::CountBased,
        c_u,
    )?;
    let expert = make_expert(&truth.mdp, &truth.reward)?;
    let expert_d = visitation_measure(&truth.mdp, &expert, 1e-13)?;
    let mismatch = model_mismatch_error(&truth.mdp, &model, &expert_d)?;
    Ok(VerifyInstance {
        cmdp: model.conservative_mdp(&truth.mdp)?,
        mdp: truth.mdp,
        expert_d,
        mismatch,
        c_u,
    })
}

/// Tabular, linear and two-layer rewards over random features.
pub fn reward_models(n_s: usize, n_a: usize, seed: u64) -> Result<Vec<RewardModel>> {
    let mut rng = seeded_rng(seed, 2_000);
    let phi = Array3::from_shape_simple_fn((n_s, n_a, 3), || rng.random::<f64>() * 2.0 - 1.0);
    Ok(vec![
        RewardModel::tabular(n_s, n_a, 1.0)?,
        RewardModel::linear(phi.clone(), 1.0)?,
        RewardModel::mlp2(phi, 4, 1.0)?,
    ])
}

pub fn random_theta(dim: usize, scale: f64, seed: u64, stream: u64) -> Array1<f64> {
    let mut rng = seeded_rng(seed, stream);
    Array1::from_shape_simple_fn(dim, || scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Relative error of the analytic surrogate gradient against central differences.
pub fn gradient_check(cmdp: &ConservativeMdp, reward: &RewardModel, theta: &Array1<f64>, d: &mlirl_core::mdp::VisitationMeasure) -> Result<f64> {
    let opts = SolverOptions::with_tol(1e-13);
    let g = exact_surrogate_gradient(cmdp, reward, theta, d, &opts)?;
    let h = 1e-5;
    let mut fd = Array1::zeros(theta.len());
    for i in 0..theta.len() {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[i] += h;
        down[i] -= h;
        fd[i] = (surrogate_objective(cmdp, reward, &up, d, &opts)? - surrogate_objective(cmdp, reward, &down, d, &opts)?)
            / (2.0 * h);
    }
    let diff = &g - &fd;
    Ok(diff.dot(&diff).sqrt() / fd.dot(&fd).sqrt().max(1e-8))
}

struct Check {
    name: String,
    value: f64,
    threshold: f64,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
        }
    }

    fn pass(&self) -> bool {
        self.value <= self.threshold
    }
}

fn battery(seed: u64, cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let inst = verify_instance(seed, cfg.discount)?;
    let (n_s, n_a) = (inst.mdp.n_states(), inst.mdp.n_actions());
    let opts = SolverOptions::with_tol(1e-13);
    let mut checks = Vec::new();

    let tabular = RewardModel::tabular(n_s, n_a, 1.0)?;
    let theta = random_theta(tabular.param_dim(), 3.0, seed, 3_000);
    let dec = decompose(&inst.mdp, &inst.expert_d, &inst.cmdp, &tabular, &theta, &opts)?;
    checks.push(Check::new("decomposition_residual", dec.residual.abs(), 1e-8));
    let bound = objective_gap_coefficient(1.0, inst.c_u, n_a, cfg.discount) * inst.mismatch;
    checks.push(Check::new(
        "objective_gap_minus_bound",
        (dec.likelihood - dec.surrogate).abs() - bound,
        0.0,
    ));

    for (i, reward) in reward_models(n_s, n_a, seed)?.iter().enumerate() {
        let theta = random_theta(reward.param_dim(), 1.0, seed, 4_000 + i as u64);
        let err = gradient_check(&inst.cmdp, reward, &theta, &inst.expert_d)?;
        checks.push(Check::new(format!("gradient_rel_err_{}", reward.kind().name()), err, 1e-4));
        if let Some(l_r) = reward.gradient_bound() {
            let other = random_theta(reward.param_dim(), 1.0, seed, 5_000 + i as u64);
            let ratio = soft_q_lipschitz_ratio(&inst.cmdp, reward, &theta, &other, &opts)?;
            checks.push(Check::new(
                format!("lipschitz_excess_{}", reward.kind().name()),
                ratio - l_r / (1.0 - cfg.discount),
                1e-9,
            ));
        }
    }

    for eps in [0.0, cfg.eps_app] {
        let irl = IrlConfig {
            iterations: cfg.iterations,
            step_scale: 5.0,
            eps_app: eps,
            seed,
            diagnostics: true,
            solver_tol: 1e-12,
            ..IrlConfig::default()
        };
        let out = run_offline_ml_irl(&inst.cmdp, &tabular, &inst.expert_d, &[], &tabular.zero_params(), &irl)?;
        checks.push(Check::new(
            format!("improvement_violations_eps{eps}"),
            out.trace.improvement_violations() as f64,
            0.0,
        ));
    }
    Ok(checks)
}

pub fn cmd_verify(cfg: &VerifyConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let results: Vec<Vec<Check>> = cfg.seeds.par_iter().map(|&s| battery(s, cfg)).collect::<Result<_>>()?;
    let mut report = ExperimentReport::new(
        "verify",
        serde_json::to_value(cfg)?,
        &["seed", "check", "value", "threshold", "pass"],
    );
    for (&seed, checks) in cfg.seeds.iter().zip(&results) {
        for c in checks {
            let row: Vec<Cell> = vec![
                seed.into(),
                c.name.as_str().into(),
                c.value.into(),
                c.threshold.into(),
                c.pass().into(),
            ];
            report.push(row);
            if !c.pass() {
                report.violations += 1;
            }
            let key = format!("max_{}", c.name);
            let entry = report.summary.entry(key).or_insert(f64::NEG_INFINITY);
            *entry = entry.max(c.value);
        }
    }
    report.summary.insert("violations".into(), report.violations as f64);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
