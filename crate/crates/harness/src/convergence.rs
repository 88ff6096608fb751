//! Convergence of the alternating loop as a function of `K` and `ε_app`.

use std::time::Instant;

use mlirl_core::data_gen::InstanceSpec;
use mlirl_core::irl::{run_offline_ml_irl, GradientMode, IrlConfig};
use mlirl_core::reward::RewardModel;
use mlirl_core::world_model::{build_model, PenaltyConfig, UnseenRule};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{input, Result};
use crate::report::{loglog_slope, mean, ExperimentReport};
use crate::setup::Problem;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceConfig {
    pub instance: InstanceSpec,
    pub eps_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub alpha0: f64,
    /// Transition samples per expert-visited pair for the world model.
    pub per_pair: usize,
    pub penalty: PenaltyConfig,
    pub c_r: f64,
}

struct Outcome {
    avg_grad_sq: f64,
    avg_policy_gap: f64,
    final_surrogate: f64,
}

pub fn cmd_convergence(cfg: &ConvergenceConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.eps_grid.is_empty() || cfg.k_grid.is_empty() || cfg.seeds.is_empty() {
        return Err(input("eps grid, K grid and seed list must be non-empty"));
    }
    if cfg.k_grid.contains(&0) {
        return Err(input("K must be at least 1"));
    }
    let problem = Problem::from_spec(&cfg.instance)?;
    let reward = RewardModel::tabular(problem.mdp.n_states(), problem.mdp.n_actions(), cfg.c_r)?;

    let conditions: Vec<(f64, usize, u64)> = cfg
        .eps_grid
        .iter()
        .flat_map(|&e| cfg.k_grid.iter().flat_map(move |&k| cfg.seeds.iter().map(move |&s| (e, k, s))))
        .collect();
    let outcomes: Vec<Outcome> = conditions
        .par_iter()
        .map(|&(eps, k, seed)| -> Result<Outcome> {
            let data = problem.uniform_dataset(cfg.per_pair, seed)?;
            let penalty = PenaltyConfig { seed, ..cfg.penalty.clone() };
            let cmdp = build_model(&data, UnseenRule::Uniform, &penalty)?.conservative_mdp(&problem.mdp)?;
            let irl = IrlConfig {
                iterations: k,
                step_scale: cfg.alpha0,
                eps_app: eps,
                gradient_mode: GradientMode::Exact,
                seed,
                ..IrlConfig::default()
            };
            let out = run_offline_ml_irl(&cmdp, &reward, &problem.expert_d, &[], &reward.zero_params(), &irl)?;
            Ok(Outcome {
                avg_grad_sq: out.trace.mean_squared_exact_gradient(),
                avg_policy_gap: out.trace.mean_policy_gap(),
                final_surrogate: out.trace.records.last().map_or(f64::NAN, |r| r.surrogate_obj),
            })
        })
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport::new(
        "convergence",
        serde_json::to_value(cfg)?,
        &["eps_app", "k", "seed", "avg_grad_sq", "avg_policy_gap", "final_surrogate"],
    );
    for (&(eps, k, seed), o) in conditions.iter().zip(&outcomes) {
        report.push(vec![
            eps.into(),
            k.into(),
            seed.into(),
            o.avg_grad_sq.into(),
            o.avg_policy_gap.into(),
            o.final_surrogate.into(),
        ]);
    }

    let cell_mean = |eps: f64, k: usize, f: &dyn Fn(&Outcome) -> f64| -> f64 {
        let xs: Vec<f64> = conditions
            .iter()
            .zip(&outcomes)
            .filter(|((e, kk, _), _)| *e == eps && *kk == k)
            .map(|(_, o)| f(o))
            .collect();
        mean(&xs)
    };
    let s = &mut report.summary;
    if let Some(&eps0) = cfg.eps_grid.iter().find(|&&e| e == 0.0) {
        let grads: Vec<f64> = cfg.k_grid.iter().map(|&k| cell_mean(eps0, k, &|o| o.avg_grad_sq)).collect();
        for (k, g) in cfg.k_grid.iter().zip(&grads) {
            s.insert(format!("avg_grad_sq_k{k}"), *g);
        }
        for (w, g) in cfg.k_grid.windows(2).zip(grads.windows(2)) {
            s.insert(format!("grad_ratio_k{}_k{}", w[0], w[1]), g[0] / g[1]);
        }
        if grads.len() >= 2 {
            let ks: Vec<f64> = cfg.k_grid.iter().map(|&k| k as f64).collect();
            s.insert("grad_sq_slope".into(), loglog_slope(&ks, &grads));
        }
    }
    let k_max = *cfg.k_grid.iter().max().unwrap();
    let positive: Vec<f64> = cfg.eps_grid.iter().copied().filter(|&e| e > 0.0).collect();
    let floors: Vec<f64> = positive.iter().map(|&e| cell_mean(e, k_max, &|o| o.avg_policy_gap)).collect();
    for (e, f) in positive.iter().zip(&floors) {
        s.insert(format!("policy_floor_eps{e}"), *f);
    }
    for (e, f) in positive.windows(2).zip(floors.windows(2)) {
        // 1 means the floor scales exactly linearly between consecutive ε values
        s.insert(format!("floor_linearity_eps{}_eps{}", e[0], e[1]), (f[1] / f[0]) / (e[1] / e[0]));
    }
    if floors.len() >= 2 {
        s.insert("policy_floor_slope".into(), loglog_slope(&positive, &floors));
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
