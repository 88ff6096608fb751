//! Model-mismatch scaling with per-pair sample count, and the resulting
//! likelihood optimality gap.

use std::time::Instant;

use mlirl_core::data_gen::InstanceSpec;
use mlirl_core::irl::{maximize, optimality_gap, AscentOptions, Objective};
use mlirl_core::reward::RewardModel;
use mlirl_core::world_model::{build_model, l1_distance, model_mismatch_error, ConservativeMdp, PenaltyConfig, UnseenRule};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{input, Result};
use crate::report::{loglog_slope, mean, median, Cell, ExperimentReport};
use crate::setup::Problem;
use crate::theory::mismatch_bound;

#[derive(Debug, Clone, Serialize)]
pub struct SampleComplexityConfig {
    pub instance: InstanceSpec,
    /// Samples per expert-visited pair, ascending.
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub delta: f64,
    /// Also measure `L(θ*) − L(θ̂)` for every dataset.
    pub with_gap: bool,
    pub penalty: PenaltyConfig,
    /// Reward bound of the tabular reward class used for the gap.
    pub c_r: f64,
}

struct Outcome {
    mismatch: f64,
    max_l1: f64,
    gap: Option<(f64, f64, f64)>,
}

fn gap_for(problem: &Problem, cmdp: &ConservativeMdp, c_r: f64) -> Result<(f64, f64, f64)> {
    let reward = RewardModel::tabular(problem.mdp.n_states(), problem.mdp.n_actions(), c_r)?;
    let opts = AscentOptions::default();
    let hat = maximize(cmdp, &reward, &problem.expert_d, &reward.zero_params(), Objective::Surrogate, &opts)?;
    let gap = optimality_gap(cmdp, &reward, &problem.expert_d, &hat.theta, &opts)?;
    Ok((gap.gap, gap.likelihood_star, gap.likelihood_hat))
}

pub fn cmd_sample_complexity(cfg: &SampleComplexityConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.n_grid.is_empty() || cfg.seeds.is_empty() {
        return Err(input("n grid and seed list must be non-empty"));
    }
    if cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) || cfg.n_grid[0] == 0 {
        return Err(input("n grid must be positive and strictly ascending"));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(input("delta must be in (0, 1)"));
    }
    let problem = Problem::from_spec(&cfg.instance)?;
    let omega = problem.coverage.expert_support.len();
    let s_e = problem.coverage.expert_states.len();

    let conditions: Vec<(usize, u64)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let outcomes: Vec<Outcome> = conditions
        .par_iter()
        .map(|&(n, seed)| -> Result<Outcome> {
            let data = problem.uniform_dataset(n, seed)?;
            let penalty = PenaltyConfig { seed, ..cfg.penalty.clone() };
            let model = build_model(&data, UnseenRule::Uniform, &penalty)?;
            let mismatch = model_mismatch_error(&problem.mdp, &model, &problem.expert_d)?;
            let max_l1 = problem
                .coverage
                .expert_support
                .iter()
                .map(|&(s, a)| l1_distance(problem.mdp.row(s, a), model.row(s, a)))
                .fold(0.0, f64::max);
            let gap = if cfg.with_gap {
                Some(gap_for(&problem, &model.conservative_mdp(&problem.mdp)?, cfg.c_r)?)
            } else {
                None
            };
            Ok(Outcome { mismatch, max_l1, gap })
        })
        .collect::<Result<_>>()?;

    let mut columns = vec!["n", "seed", "mismatch", "max_l1", "bound", "within_bound"];
    if cfg.with_gap {
        columns.extend(["gap", "likelihood_star", "likelihood_hat"]);
    }
    let mut report = ExperimentReport::new("sample_complexity", serde_json::to_value(cfg)?, &columns);
    for (&(n, seed), out) in conditions.iter().zip(&outcomes) {
        let bound = mismatch_bound(n, s_e, omega, cfg.delta);
        let mut row: Vec<Cell> = vec![
            n.into(),
            seed.into(),
            out.mismatch.into(),
            out.max_l1.into(),
            bound.into(),
            (out.max_l1 <= bound).into(),
        ];
        if let Some((gap, star, hat)) = out.gap {
            row.extend([gap.into(), star.into(), hat.into()]);
        }
        report.push(row);
    }

    let per_n = cfg.seeds.len();
    let grid: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    let mean_mismatch: Vec<f64> = outcomes
        .chunks(per_n)
        .map(|c| mean(&c.iter().map(|o| o.mismatch).collect::<Vec<_>>()))
        .collect();
    let within = conditions
        .iter()
        .zip(&outcomes)
        .filter(|(&(n, _), o)| o.max_l1 <= mismatch_bound(n, s_e, omega, cfg.delta))
        .count();
    let s = &mut report.summary;
    s.insert("omega".into(), omega as f64);
    s.insert("expert_states".into(), s_e as f64);
    s.insert("within_bound_rate".into(), within as f64 / conditions.len() as f64);
    if grid.len() >= 2 && mean_mismatch.iter().all(|&m| m > 0.0) {
        s.insert("mismatch_slope".into(), loglog_slope(&grid, &mean_mismatch));
    }
    for (n, m) in cfg.n_grid.iter().zip(&mean_mismatch) {
        s.insert(format!("mean_mismatch_n{n}"), *m);
    }
    if cfg.with_gap {
        let medians: Vec<f64> = outcomes
            .chunks(per_n)
            .map(|c| median(&c.iter().map(|o| o.gap.unwrap().0).collect::<Vec<_>>()))
            .collect();
        for (n, m) in cfg.n_grid.iter().zip(&medians) {
            s.insert(format!("median_gap_n{n}"), *m);
        }
        let monotone = medians.windows(2).all(|w| w[1] < w[0]);
        s.insert("median_gap_monotone".into(), if monotone { 1.0 } else { 0.0 });
        let exact = gap_for(&problem, &ConservativeMdp::exact(&problem.mdp), cfg.c_r)?;
        s.insert("gap_exact_model".into(), exact.0);
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
