//! Image classification recipe: standard, weight-decay and CLIP training at
//! several target accuracies, each evaluated at its most robust checkpoint.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use clip_core::data::{load_idx_dir, split, Dataset, SplitSpec};
use clip_core::lipreg::{self, PairSampler, PairSet};
use clip_core::network::{Activation, Network};
use clip_core::robustness::{self, EvalConfig, EvalReport};
use clip_core::training::{train, LipschitzPairs, Mode, RobustProbe};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{derive_seed, OutputDir};
use crate::regression::write_timing;
use crate::RunOptions;

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationRow {
    /// `standard`, `weight-reg` or `clip`.
    pub method: String,
    pub label: String,
    pub target_accuracy: Option<f64>,
    /// Epoch of the reported checkpoint.
    pub best_epoch: usize,
    /// λ or μ at the end of training.
    pub final_regularization: f64,
    /// Metrics of the reported checkpoint; its `regularization` is the
    /// weight at that checkpoint.
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationSummary {
    pub rows: Vec<ClassificationRow>,
}

impl ClassificationSummary {
    pub fn row(&self, label: &str) -> Option<&ClassificationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn percent_label(target: f64) -> String {
    format!("{}", (target * 100.0).round() as i64)
}

/// Loads the configured IDX files and splits them.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let dir = cfg.data_dir();
    let data =
        load_idx_dir(&dir, &cfg.data.images, &cfg.data.labels).with_context(|| format!("loading IDX files from {}", dir.display()))?;
    let spec = SplitSpec {
        train: cfg.split.train,
        eval: cfg.split.eval,
        reserve: cfg.split.reserve,
        seed: derive_seed(cfg.seed, "split"),
    };
    Ok(split(&data, &spec)?)
}

/// Empirical Lipschitz estimate on a fixed pair set after a few ascent steps
/// against `net`.
fn evaluation_lipschitz(net: &Network, pairs: &PairSet, sampler: &PairSampler, steps: usize, tau: f64, seed: u64) -> Result<f64> {
    let mut pairs = pairs.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        lipreg::adversarial_update(net, &mut pairs, tau, sampler, &mut rng)?;
    }
    Ok(lipreg::empirical_lipschitz(net, &pairs)?.max)
}

pub fn run_classification(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut OutputDir) -> Result<ClassificationSummary> {
    let (train_set, eval_set, reserve) = load_splits(cfg)?;
    let c = &cfg.classification;
    let probe_rows: Vec<usize> = (0..cfg.eval.probe_samples).collect();
    let report_rows: Vec<usize> = (cfg.eval.probe_samples..eval_set.len()).collect();
    let probe = RobustProbe {
        data: eval_set.subset(&probe_rows, "probe"),
        attack: cfg.attack_config(0, None),
    };
    let report_set = eval_set.subset(&report_rows, "report");
    let eval_cfg = EvalConfig {
        attack: cfg.attack_config(
            derive_seed(cfg.seed, "report-subset"),
            (report_set.len() > cfg.eval.report_samples).then_some(cfg.eval.report_samples),
        ),
        noise_sigma: cfg.eval.noise_sigma,
        noise_seed: derive_seed(cfg.seed, "noise"),
    };

    let sampler = PairSampler::pool(reserve.inputs().clone(), c.pair_noise);
    let (pairs, _) = sampler.sample(reserve.len(), &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pairs")))?;
    let (eval_pairs, _) = sampler.sample(reserve.len(), &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "eval-pairs")))?;

    let mut dims = vec![train_set.input_dim()];
    dims.extend(&c.hidden);
    dims.push(train_set.output_dim());
    let init = Network::mlp(&dims, Activation::Sigmoid, Activation::Identity, derive_seed(cfg.seed, "init"))?;
    let train_seed = derive_seed(cfg.seed, "train");

    let mut runs = vec![(Mode::Standard, None)];
    if c.weight_reg {
        runs.extend(c.targets.iter().map(|&t| (Mode::WeightReg, Some(t))));
    }
    runs.extend(c.targets.iter().map(|&t| (Mode::Clip, Some(t))));

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut metrics = String::from(
        "method,target_accuracy,regularization,final_regularization,best_epoch,clean_accuracy,noise_accuracy,pgd_accuracy,empirical_lipschitz,layerwise_bound\n",
    );
    for (mode, target) in runs {
        let (method, label) = match (mode, target) {
            (Mode::Standard, _) => ("standard", "standard".to_string()),
            (Mode::WeightReg, Some(t)) => ("weight-reg", format!("weight-reg-{}", percent_label(t))),
            (_, t) => ("clip", format!("clip-{}", percent_label(t.unwrap_or(0.0)))),
        };
        let train_cfg = cfg.train_config(mode, target.unwrap_or(0.0), train_seed);
        let lip = (mode == Mode::Clip).then(|| LipschitzPairs {
            pairs: pairs.clone(),
            sampler: sampler.clone(),
        });
        let outcome = train(init.clone(), &train_set, lip, &train_cfg, Some(&probe)).with_context(|| format!("training run {label}"))?;
        let chosen = outcome.selected();
        let net = &chosen.network;
        let mut report = robustness::evaluate(net, &report_set, &eval_pairs, &eval_cfg, chosen.meta.regularization)?;
        report.empirical_lipschitz = evaluation_lipschitz(
            net,
            &eval_pairs,
            &sampler,
            cfg.eval.lipschitz_ascent_steps,
            cfg.train.tau,
            derive_seed(cfg.seed, "eval-ascent"),
        )?;

        let ckpt = format!("checkpoints/{label}.ckpt");
        chosen.save(&out.file(&ckpt)?)?;
        let mut history = Vec::new();
        outcome.history.write_csv(&mut history)?;
        out.write(&format!("history_{label}.csv"), history)?;
        out.write(&format!("epochs_{label}.json"), outcome.history.epochs_json() + "\n")?;

        writeln!(
            metrics,
            "{},{},{},{},{},{},{},{},{},{}",
            method,
            target.map(|t| t.to_string()).unwrap_or_default(),
            report.regularization,
            outcome.regularization,
            chosen.meta.epoch,
            report.clean_accuracy,
            report.noise_accuracy,
            report.pgd_accuracy,
            report.empirical_lipschitz,
            report.layerwise_bound
        )?;
        if opts.verbose {
            eprintln!(
                "{label}: clean {:.4} noise {:.4} pgd {:.4} lip {:.4} reg {:.5} (final {:.5}, epoch {})",
                report.clean_accuracy,
                report.noise_accuracy,
                report.pgd_accuracy,
                report.empirical_lipschitz,
                report.regularization,
                outcome.regularization,
                chosen.meta.epoch
            );
        }
        timing.push((label.clone(), outcome.times));
        rows.push(ClassificationRow {
            method: method.into(),
            label,
            target_accuracy: target,
            best_epoch: chosen.meta.epoch,
            final_regularization: outcome.regularization,
            report,
        });
    }
    out.write("metrics.csv", metrics)?;
    let summary = ClassificationSummary { rows };
    out.write_json(
        "report.json",
        &serde_json::json!({
            "recipe": "classification",
            "seed": cfg.seed,
            "dataset": {
                "train": train_set.len(),
                "eval_probe": probe.data.len(),
                "eval_report": report_set.len(),
                "reserve": reserve.len(),
            },
            "rows": summary.rows,
        }),
    )?;
    if opts.timing {
        write_timing(out, &timing)?;
    }
    Ok(summary)
}
