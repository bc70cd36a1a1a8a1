//! Experiment runner: configuration, the regression and classification
//! recipes, and artifact emission.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classification;
pub mod config;
pub mod output;
pub mod regression;

use anyhow::Result;

pub use classification::{run_classification, ClassificationRow, ClassificationSummary};
pub use config::{ConfigError, ExperimentConfig, Recipe, DATA_DIR_ENV};
pub use output::{derive_seed, Manifest, OutputDir};
pub use regression::{run_regression, RegressionRow, RegressionSummary};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock per training phase in `timing.json`.
    pub timing: bool,
    /// Print one progress line per trained model to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub enum RunSummary {
    Regression(RegressionSummary),
    Classification(ClassificationSummary),
}

/// Runs the configured recipe into `cfg.output_dir` and writes
/// `manifest.json`, marking the run partial if any stage failed.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let result = match cfg.recipe {
        Recipe::Regression => run_regression(cfg, opts, &mut out).map(RunSummary::Regression),
        Recipe::Classification => run_classification(cfg, opts, &mut out).map(RunSummary::Classification),
    };
    let mut files = out.files().to_vec();
    files.push("manifest.json".into());
    let manifest = Manifest {
        recipe: cfg.recipe.to_string(),
        seed: cfg.seed,
        status: if result.is_ok() { "complete" } else { "partial" },
        error: result.as_ref().err().map(|e| format!("{e:#}")),
        files,
        config: serde_json::to_value(cfg)?,
    };
    out.write_json("manifest.json", &manifest)?;
    result
}
