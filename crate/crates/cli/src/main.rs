use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ewc_cli::commands::{self, CliError};
use ewc_cli::config::{ConfigError, ExperimentConfig, Scale};

#[derive(Parser)]
#[command(name = "ewc", version, about = "Elastic weight consolidation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    tasks: Option<usize>,
    /// sgd, l2, dropout or ewc.
    #[arg(long, global = true)]
    regime: Option<String>,
    /// Subsample the training set to `data.desk_examples` (default).
    #[arg(long, global = true, conflicts_with = "full")]
    desk_scale: bool,
    /// Use the whole training set.
    #[arg(long, global = true)]
    full: bool,
    /// Directory holding the IDX files.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Any config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train a sequence of permuted tasks.
    PermutedMnist,
    /// Per-layer Fisher overlap between two tasks.
    Overlap,
    /// Accuracy under shaped weight noise.
    Perturb,
    /// Online task recognition on a task-switching stream.
    Recognize,
    /// Random hyperparameter search.
    Search,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::new("--set", format!("expected KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(tasks) = cli.tasks {
        cfg.tasks = tasks;
    }
    if let Some(regime) = &cli.regime {
        cfg.set("train.regime", regime)?;
    }
    if let Some(dir) = &cli.data {
        cfg.data.dir = dir.clone();
    }
    if cli.desk_scale {
        cfg.data.scale = Scale::Desk;
    }
    if cli.full {
        cfg.data.scale = Scale::Full;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = build_config(cli)?;
    Ok(match cli.command {
        Command::PermutedMnist => {
            let r = commands::permuted_mnist(&cfg)?;
            format!("final mean accuracy {:.4}", r.report.final_mean_accuracy())
        }
        Command::Overlap => {
            let r = commands::overlap(&cfg)?;
            r.rows
                .iter()
                .map(|row| {
                    let layers: Vec<String> = row.layers.iter().map(|v| format!("{v:.4}")).collect();
                    format!("{}: {}", row.condition, layers.join(" "))
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Perturb => {
            let r = commands::perturb(&cfg)?;
            format!("clean accuracy {:.4}, {} curves", r.clean_accuracy, r.curves.len())
        }
        Command::Recognize => {
            let r = commands::recognize(&cfg)?;
            format!(
                "spawned contexts {}, relabeled accuracy {:.4}",
                r.trace.spawned_contexts, r.accuracy
            )
        }
        Command::Search => {
            let r = commands::search(&cfg)?;
            let best = &r.result.trials[r.result.best_index];
            format!("best trial {} score {:.4}", best.index, best.score)
        }
    } + &format!("\nwrote {}", cfg.out.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
