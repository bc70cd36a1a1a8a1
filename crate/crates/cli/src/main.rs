use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cliptrain::{ExperimentConfig, Recipe, RunOptions};

#[derive(Parser)]
#[command(name = "cliptrain", version, about = "Lipschitz-regularized training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a recipe.
    Run {
        /// `regression` or `classification`.
        recipe: Recipe,
        /// TOML config file layered over the recipe defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set train.lr=0.05`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Dataset directory (same as `--set data.dir=...`).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Output directory (same as `--set output_dir=...`).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Record wall-clock per training phase.
        #[arg(long)]
        timing: bool,
        /// Print a line per trained model.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Print the resolved configuration without running anything.
    Config {
        recipe: Recipe,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            recipe,
            config,
            mut overrides,
            data_dir,
            output_dir,
            timing,
            verbose,
        } => {
            if let Some(d) = data_dir {
                overrides.push(format!("data.dir={}", toml_string(&d.to_string_lossy())));
            }
            if let Some(d) = output_dir {
                overrides.push(format!("output_dir={}", toml_string(&d.to_string_lossy())));
            }
            ExperimentConfig::load(recipe, config.as_deref(), &overrides)
                .map_err(anyhow::Error::from)
                .and_then(|cfg| {
                    cliptrain::run(&cfg, &RunOptions { timing, verbose })?;
                    println!("wrote {}", cfg.output_dir.display());
                    Ok(())
                })
        }
        Command::Config { recipe, config, overrides } => ExperimentConfig::load(recipe, config.as_deref(), &overrides)
            .map(|cfg| print!("{}", cfg.to_toml()))
            .map_err(anyhow::Error::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
