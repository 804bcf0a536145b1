use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use deskrec_cli::config::ExperimentConfig;
use deskrec_cli::experiment::{
    condition_seeds, run_condition, run_suite, Condition, BUILD_VERSION,
};
use deskrec_cli::plots::export_plots;
use deskrec_cli::stack::{load_stack, OutputPaths};
use deskrec_core::density::{train_mdn, MdnArtifact};
use deskrec_core::encoder::{train_encoder, EncoderModel, EncoderSidecar};
use deskrec_core::env::{collect_demos, collect_explore, shift_actions, Dataset, TaskKind};
use deskrec_core::policy::train_bc;
use deskrec_core::rng::derive_seed;
use deskrec_core::CoreError;

#[derive(Parser)]
#[command(
    name = "deskrec",
    version = BUILD_VERSION,
    about = "Desk-scale manipulation experiments with density-gated recovery policies"
)]
struct Cli {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, models, traces and results.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Pick,
    Push,
}

impl From<TaskArg> for TaskKind {
    fn from(task: TaskArg) -> Self {
        match task {
            TaskArg::Pick => TaskKind::PickAndDrop,
            TaskArg::Push => TaskKind::Push,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Clean,
    Shifted,
    Perturbed,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the task-agnostic exploration dataset.
    CollectExplore,
    /// Collect expert demonstrations for a task.
    CollectDemos {
        #[arg(long, value_enum, default_value = "pick")]
        task: TaskArg,
    },
    /// Train the equivariant encoder on the exploration dataset.
    TrainEncoder,
    /// Train the conditional density estimator and calibrate its gate.
    TrainMdn {
        #[arg(long, value_enum, default_value = "pick")]
        task: TaskArg,
    },
    /// Train a behavioral-cloning policy.
    TrainBc {
        #[arg(long, value_enum, default_value = "pick")]
        task: TaskArg,
        /// Train on the shifted-actions corruption of the pick demos.
        #[arg(long)]
        shifted: bool,
    },
    /// Evaluate one condition for both policy variants.
    Eval {
        #[arg(long, value_enum, default_value = "pick")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "clean")]
        condition: ConditionArg,
    },
    /// Run everything: collection, training, all four conditions.
    Suite {
        /// Retrain even if cached models match the configuration.
        #[arg(long)]
        fresh: bool,
    },
    /// Export per-trace CSV plot data (latent path, density, gate).
    ExportPlots {
        /// A trace file or a directory of .jsonl traces.
        #[arg(long)]
        traces: PathBuf,
        /// Output directory for the CSV files.
        #[arg(long, default_value = "plots")]
        plots_out: PathBuf,
    },
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Config(_) => 2,
        CoreError::Training(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CoreError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            // A malformed config file is a configuration error, not an I/O one.
            CoreError::Json(inner) => CoreError::Config(format!(
                "{}: {inner}",
                path.display()
            )),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CoreError> {
    let config = load_config(&cli)?;
    let paths = OutputPaths::new(&cli.out)?;

    match cli.command {
        Command::CollectExplore => {
            let ds = collect_explore(
                config.n_explore_traj,
                config.explore_steps_per_traj,
                derive_seed(config.master_seed, "collect-explore", 0),
            )?;
            ds.save_jsonl(&paths.explore_dataset())?;
            println!(
                "wrote {} trajectories / {} steps to {}",
                ds.trajectories.len(),
                ds.total_steps(),
                paths.explore_dataset().display()
            );
        }
        Command::CollectDemos { task } => {
            let task: TaskKind = task.into();
            let (n, tag) = match task {
                TaskKind::PickAndDrop => (config.n_demo_traj, "collect-demos-pick"),
                TaskKind::Push => (config.n_push_demo_traj, "collect-demos-push"),
            };
            let ds = collect_demos(
                n,
                task,
                config.expert_noise_std,
                derive_seed(config.master_seed, tag, 0),
            )?;
            ds.save_jsonl(&paths.demos(task))?;
            println!(
                "wrote {} trajectories / {} steps to {}",
                ds.trajectories.len(),
                ds.total_steps(),
                paths.demos(task).display()
            );
        }
        Command::TrainEncoder => {
            let explore = Dataset::load_jsonl(&paths.explore_dataset())?;
            let seed = derive_seed(config.master_seed, "train-encoder", 0);
            let (encoder, report) = train_encoder(&explore, &config.encoder, seed)?;
            encoder.save(&paths.encoder_model())?;
            EncoderSidecar {
                anchor_weight: config.encoder.anchor_weight,
                training_seed: seed,
                report: report.clone(),
            }
            .save(&paths.encoder_sidecar())?;
            println!(
                "encoder trained: residual ratio {:.4}, anchor norm {:.4} -> {}",
                report.residual_ratio,
                report.anchor_mean_norm,
                paths.encoder_model().display()
            );
        }
        Command::TrainMdn { task } => {
            let task: TaskKind = task.into();
            let demos = Dataset::load_jsonl(&paths.demos(task))?;
            let (encoder, _) =
                EncoderModel::load(&paths.encoder_model(), &paths.encoder_sidecar())?;
            let tag = match task {
                TaskKind::PickAndDrop => "train-mdn-pick",
                TaskKind::Push => "train-mdn-push",
            };
            let (mdn, report) = train_mdn(
                &demos,
                &encoder,
                &config.mdn,
                derive_seed(config.master_seed, tag, 0),
            )?;
            // The gate is calibrated against the cloning policy during
            // `suite`; standalone training stores the uncalibrated defaults.
            let gate = deskrec_core::density::GateConfig {
                recovery_scale: config.recovery_scale,
                ..Default::default()
            };
            MdnArtifact::new(&mdn, gate).save(&paths.mdn(task))?;
            println!(
                "mdn trained: holdout NLL {:.4} -> {:.4}, saved to {}",
                report.holdout_nll_initial,
                report.holdout_nll_final,
                paths.mdn(task).display()
            );
        }
        Command::TrainBc { task, shifted } => {
            let task: TaskKind = task.into();
            let demos = Dataset::load_jsonl(&paths.demos(task))?;
            let (demos, tag) = if shifted {
                if task != TaskKind::PickAndDrop {
                    return Err(CoreError::Config(
                        "--shifted applies to the pick task only".into(),
                    ));
                }
                (shift_actions(&demos)?, "train-bc-shifted")
            } else {
                match task {
                    TaskKind::PickAndDrop => (demos, "train-bc-pick"),
                    TaskKind::Push => (demos, "train-bc-push"),
                }
            };
            let (policy, report) = train_bc(
                &demos,
                &config.bc,
                derive_seed(config.master_seed, tag, 0),
            )?;
            policy.save(&paths.bc(task, shifted))?;
            println!(
                "bc trained: holdout mse {:.5} (baseline {:.5}), saved to {}",
                report.holdout_mse,
                report.baseline_mse,
                paths.bc(task, shifted).display()
            );
        }
        Command::Eval { task, condition } => {
            let condition = match (TaskKind::from(task), condition) {
                (TaskKind::Push, ConditionArg::Clean) => Condition::Push,
                (TaskKind::Push, _) => {
                    return Err(CoreError::Config(
                        "push evaluation supports only the clean condition".into(),
                    ))
                }
                (TaskKind::PickAndDrop, ConditionArg::Clean) => Condition::PickClean,
                (TaskKind::PickAndDrop, ConditionArg::Shifted) => Condition::PickShifted,
                (TaskKind::PickAndDrop, ConditionArg::Perturbed) => Condition::PickPerturbed,
            };
            let stack = load_stack(&config, &paths)?.ok_or_else(|| {
                CoreError::Input(
                    "no trained models matching this configuration found; run `suite` first"
                        .into(),
                )
            })?;
            let seeds = condition_seeds(&stack, condition, &config)?;
            let rows = run_condition(&stack, condition, &seeds, &config, &paths)?;
            for row in &rows {
                println!(
                    "{} {}: grasp {:.2} completion {:.2} ({} trials)",
                    row.condition.as_str(),
                    row.model_variant.as_str(),
                    row.grasp_rate,
                    row.completion_rate,
                    row.n_trials
                );
            }
        }
        Command::Suite { fresh } => {
            let table = run_suite(&config, &cli.out, !fresh)?;
            println!("suite finished (version {})", table.version);
            for row in &table.conditions {
                println!(
                    "{:>15} {:>17}: grasp {:>5.2} completion {:>5.2} mean_steps {:>6.1}",
                    row.condition.as_str(),
                    row.model_variant.as_str(),
                    row.grasp_rate,
                    row.completion_rate,
                    row.mean_steps
                );
            }
            println!("results: {}", paths.results_json().display());
        }
        Command::ExportPlots { traces, plots_out } => {
            let files = export_plots(&traces, &plots_out)?;
            println!("wrote {} plot files to {}", files.len(), plots_out.display());
        }
    }
    Ok(())
}
