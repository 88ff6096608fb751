//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlirl_core::data_gen::{Generator, InstanceSpec};
use mlirl_core::io;
use mlirl_core::irl::{GradientMode, IrlConfig};
use mlirl_core::world_model::{PenaltyConfig, PenaltyKind, TransitionDataset, UnseenRule};

use crate::convergence::{cmd_convergence, ConvergenceConfig};
use crate::error::{input, HarnessError, Result};
use crate::pipeline::{
    cmd_estimate_model, cmd_irl, cmd_solve, cmd_transfer, trace_report, IrlData, IrlPipelineConfig, TransferConfig,
};
use crate::report::{ExperimentReport, Format};
use crate::sample_complexity::{cmd_sample_complexity, SampleComplexityConfig};
use crate::setup::{seed_range, Problem};
use crate::verify::{cmd_verify, VerifyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    Count,
    Bootstrap,
    Zero,
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::Count => PenaltyKind::CountBased,
            PenaltyArg::Bootstrap => PenaltyKind::BootstrapDisagreement,
            PenaltyArg::Zero => PenaltyKind::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradArg {
    Exact,
    Stochastic,
}

impl From<GradArg> for GradientMode {
    fn from(g: GradArg) -> Self {
        match g {
            GradArg::Exact => GradientMode::Exact,
            GradArg::Stochastic => GradientMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    RandomDense,
    Gridworld,
    Cycle,
}

impl From<GeneratorArg> for Generator {
    fn from(g: GeneratorArg) -> Self {
        match g {
            GeneratorArg::RandomDense => Generator::RandomDense,
            GeneratorArg::Gridworld => Generator::Gridworld,
            GeneratorArg::Cycle => Generator::Cycle,
        }
    }
}

/// Offline maximum-likelihood IRL with conservative world models.
#[derive(Debug, Parser)]
#[command(name = "mlirl", version)]
pub struct Cli {
    /// Base seed for data, bootstrap resampling and the IRL loop.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; without it reports go to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Discount factor for generated instances.
    #[arg(long, global = true, default_value_t = 0.9)]
    pub gamma: f64,
    /// Penalty scale.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, global = true, value_enum, default_value_t = PenaltyArg::Count)]
    pub penalty: PenaltyArg,
    #[arg(long, global = true, value_enum, default_value_t = GradArg::Exact)]
    pub grad: GradArg,
    /// Perturbation added to each soft-Q evaluation.
    #[arg(long = "eps-app", global = true, default_value_t = 0.0)]
    pub eps_app: f64,
    /// Iterations `K` of the IRL loop.
    #[arg(long, global = true, default_value_t = 1000)]
    pub iters: usize,
    /// Step-size scale; the step is `alpha0 / sqrt(K)`.
    #[arg(long, global = true, default_value_t = 10.0)]
    pub alpha0: f64,
    /// Trajectory length for demonstrations and agent rollouts.
    #[arg(long, global = true, default_value_t = 200)]
    pub horizon: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Instance JSON (MDP plus "reward"); overrides the generator flags.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GeneratorArg::RandomDense)]
    pub generator: GeneratorArg,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub actions: usize,
    #[arg(long = "reward-scale", default_value_t = 0.5)]
    pub reward_scale: f64,
    /// Seed of the generated instance.
    #[arg(long = "instance-seed", default_value_t = 0)]
    pub instance_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Transition dataset (JSON lines); generated when absent.
    #[arg(long)]
    pub transitions: Option<PathBuf>,
    /// Samples per expert-visited pair when generating transitions.
    #[arg(long = "per-pair", default_value_t = 1000)]
    pub per_pair: usize,
    /// Generate transitions from an ε-mixture behavior policy instead of uniformly over pairs.
    #[arg(long = "behavior-eps")]
    pub behavior_eps: Option<f64>,
    /// Total transitions in behavior mode.
    #[arg(long, default_value_t = 2000)]
    pub total: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExpertArgs {
    /// Expert demonstrations (JSON); generated when absent.
    #[arg(long)]
    pub expert: Option<PathBuf>,
    #[arg(long = "n-expert", default_value_t = 50)]
    pub n_expert: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Soft-optimal Q, V and policy of an instance.
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Use a learned reward instead of the instance reward.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit the world model and penalty from a transition dataset.
    EstimateModel {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// End-to-end offline IRL run.
    Irl {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        expert: ExpertArgs,
        /// Penalty scales to sweep; defaults to --beta.
        #[arg(long = "beta-grid", value_delimiter = ',')]
        beta_grid: Vec<f64>,
        #[arg(long = "c-r", default_value_t = 1.0)]
        c_r: f64,
    },
    /// Model-mismatch error against samples per pair.
    SampleComplexity {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long = "n-grid", value_delimiter = ',', default_values_t = [100usize, 1000, 10000])]
        n_grid: Vec<usize>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Also measure the likelihood optimality gap.
        #[arg(long = "with-gap")]
        with_gap: bool,
        #[arg(long = "c-r", default_value_t = 1.0)]
        c_r: f64,
    },
    /// Gradient and policy-tracking averages against K and ε_app.
    Convergence {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long = "eps-grid", value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2])]
        eps_grid: Vec<f64>,
        #[arg(long = "k-grid", value_delimiter = ',', default_values_t = [250usize, 1000, 4000])]
        k_grid: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long = "per-pair", default_value_t = 1000)]
        per_pair: usize,
        #[arg(long = "c-r", default_value_t = 1.0)]
        c_r: f64,
    },
    /// Score a learned reward on another dataset.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Randomised battery of identities and inequalities.
    Verify {
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Write an instance, expert demonstrations and a transition dataset.
    Gen {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        expert: ExpertArgs,
    },
}

impl Cli {
    fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            kind: self.penalty.into(),
            beta: self.beta,
            seed: self.seed,
            ..PenaltyConfig::default()
        }
    }

    fn irl_config(&self) -> IrlConfig {
        IrlConfig {
            iterations: self.iters,
            step_scale: self.alpha0,
            eps_app: self.eps_app,
            gradient_mode: self.grad.into(),
            horizon: self.horizon,
            seed: self.seed,
            ..IrlConfig::default()
        }
    }
}

impl InstanceArgs {
    fn spec(&self, gamma: f64) -> InstanceSpec {
        InstanceSpec {
            generator: self.generator.into(),
            n_states: self.states,
            n_actions: self.actions,
            discount: gamma,
            reward_scale: self.reward_scale,
            seed: self.instance_seed,
        }
    }

    fn problem(&self, gamma: f64) -> Result<Problem> {
        match &self.instance {
            Some(path) => {
                let (mdp, reward) = io::read_mdp(path)?;
                Problem::from_parts(mdp, reward)
            }
            None => Problem::from_spec(&self.spec(gamma)),
        }
    }

    /// Generator spec for sweeps, which regenerate instances and so cannot read a file.
    fn generated(&self, gamma: f64) -> Result<InstanceSpec> {
        if self.instance.is_some() {
            return Err(input("this command generates its instance; use the generator flags instead of --instance"));
        }
        Ok(self.spec(gamma))
    }
}

impl DataArgs {
    fn dataset(&self, problem: &Problem, seed: u64, horizon: usize) -> Result<TransitionDataset> {
        match &self.transitions {
            Some(path) => Ok(io::read_transitions(path, problem.mdp.n_states(), problem.mdp.n_actions())?),
            None => match self.behavior_eps {
                Some(eps) => problem.behavior_dataset(eps, self.total, horizon, seed),
                None => problem.uniform_dataset(self.per_pair, seed),
            },
        }
    }
}

impl ExpertArgs {
    fn dataset(&self, problem: &Problem, seed: u64, horizon: usize) -> Result<mlirl_core::data_gen::ExpertDataset> {
        match &self.expert {
            Some(path) => Ok(io::read_expert_dataset(path)?),
            // a separate substream family from the transition data
            None => problem.expert_dataset(self.n_expert, horizon, seed.wrapping_add(1 << 40)),
        }
    }
}

fn emit(cli: &Cli, report: &ExperimentReport, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            for path in report.write(dir, cli.format)? {
                writeln!(err, "wrote {}", path.display())?;
            }
            writeln!(err, "{}: {}", report.experiment_id, serde_json::to_string(&report.summary)?)?;
            Ok(())
        }
        None => report.print(cli.format, out, err),
    }
}

fn out_dir(cli: &Cli) -> &Path {
    cli.out.as_deref().unwrap_or(Path::new("."))
}

/// Runs a parsed command. Reports with failed hard checks turn into
/// [`HarnessError::Invariant`] after being written.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let report = match &cli.command {
        Command::Solve { instance, checkpoint } => {
            let problem = instance.problem(cli.gamma)?;
            let reward = match checkpoint {
                Some(path) => {
                    let ckpt = io::read_checkpoint(path)?;
                    let (model, theta) = mlirl_core::reward::RewardModel::from_checkpoint(&ckpt)?;
                    if model.n_states() != problem.mdp.n_states() || model.n_actions() != problem.mdp.n_actions() {
                        return Err(input("checkpoint does not match the instance dimensions"));
                    }
                    model.evaluate(&theta)?
                }
                None => problem.reward.clone(),
            };
            cmd_solve(&problem.mdp, &reward, 1e-12)?
        }
        Command::EstimateModel { instance, data } => {
            let problem = instance.problem(cli.gamma)?;
            let transitions = data.dataset(&problem, cli.seed, cli.horizon)?;
            let (report, model) = cmd_estimate_model(&problem.mdp, &transitions, &cli.penalty(), UnseenRule::Uniform)?;
            if cli.out.is_some() {
                let path = out_dir(cli).join("model.json");
                io::write_mdp(&path, &model.conservative_mdp(&problem.mdp)?.mdp, None)?;
                writeln!(err, "wrote {}", path.display())?;
            }
            report
        }
        Command::Irl {
            instance,
            data,
            expert,
            beta_grid,
            c_r,
        } => {
            let problem = instance.problem(cli.gamma)?;
            let transitions = data.dataset(&problem, cli.seed, cli.horizon)?;
            let demos = expert.dataset(&problem, cli.seed, cli.horizon)?;
            let irl_data = IrlData {
                problem,
                transitions,
                expert: demos,
            };
            let cfg = IrlPipelineConfig {
                penalty: cli.penalty(),
                unseen_rule: UnseenRule::Uniform,
                irl: cli.irl_config(),
                c_r: *c_r,
            };
            let betas = if beta_grid.is_empty() { vec![cli.beta] } else { beta_grid.clone() };
            let (report, runs) = cmd_irl(&irl_data, &cfg, &betas)?;
            if cli.out.is_some() {
                let dir = out_dir(cli);
                for run in &runs {
                    let suffix = if runs.len() > 1 { format!("_beta{}", run.beta) } else { String::new() };
                    let ckpt = dir.join(format!("reward{suffix}.json"));
                    io::write_checkpoint(&ckpt, &run.checkpoint)?;
                    let mut trace = trace_report(&run.trace, serde_json::Value::Null);
                    trace.experiment_id = format!("trace{suffix}");
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join(format!("{}.csv", trace.experiment_id)), trace.csv_body()?)?;
                    writeln!(err, "wrote {} and {}.csv", ckpt.display(), trace.experiment_id)?;
                }
            }
            report
        }
        Command::SampleComplexity {
            instance,
            n_grid,
            seeds,
            delta,
            with_gap,
            c_r,
        } => cmd_sample_complexity(&SampleComplexityConfig {
            instance: instance.generated(cli.gamma)?,
            n_grid: n_grid.clone(),
            seeds: seed_range(cli.seed, *seeds),
            delta: *delta,
            with_gap: *with_gap,
            penalty: cli.penalty(),
            c_r: *c_r,
        })?,
        Command::Convergence {
            instance,
            eps_grid,
            k_grid,
            seeds,
            per_pair,
            c_r,
        } => cmd_convergence(&ConvergenceConfig {
            instance: instance.generated(cli.gamma)?,
            eps_grid: eps_grid.clone(),
            k_grid: k_grid.clone(),
            seeds: seed_range(cli.seed, *seeds),
            alpha0: cli.alpha0,
            per_pair: *per_pair,
            penalty: cli.penalty(),
            c_r: *c_r,
        })?,
        Command::Transfer {
            checkpoint,
            instance,
            data,
        } => {
            let ckpt = io::read_checkpoint(checkpoint)?;
            let problem = instance.problem(cli.gamma)?;
            let transitions = data.dataset(&problem, cli.seed, cli.horizon)?;
            let cfg = TransferConfig {
                penalty: cli.penalty(),
                unseen_rule: UnseenRule::Uniform,
            };
            cmd_transfer(&ckpt, &problem, &transitions, &cfg)?
        }
        Command::Verify { seeds } => cmd_verify(&VerifyConfig {
            seeds: seed_range(cli.seed, *seeds),
            discount: cli.gamma,
            eps_app: if cli.eps_app > 0.0 { cli.eps_app } else { 0.3 },
            ..VerifyConfig::default()
        })?,
        Command::Gen { instance, data, expert } => {
            let problem = instance.problem(cli.gamma)?;
            let transitions = data.dataset(&problem, cli.seed, cli.horizon)?;
            let demos = expert.dataset(&problem, cli.seed, cli.horizon)?;
            let dir = out_dir(cli);
            io::write_mdp(&dir.join("instance.json"), &problem.mdp, Some(&problem.reward))?;
            io::write_expert_dataset(&dir.join("expert.json"), &demos)?;
            io::write_transitions(&dir.join("transitions.jsonl"), &transitions)?;
            writeln!(err, "wrote instance.json, expert.json and transitions.jsonl to {}", dir.display())?;
            return Ok(());
        }
    };
    emit(cli, &report, out, err)?;
    if report.violations > 0 {
        return Err(HarnessError::Invariant(report.violations));
    }
    Ok(())
}
