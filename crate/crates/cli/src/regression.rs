//! 1-d regression recipe: an unregularized fit, then λ-continuation from it.

use std::fmt::Write as _;

use anyhow::{ensure, Result};
use clip_core::data::{regression_dataset, regression_target, REGRESSION_DOMAIN};
use clip_core::lipreg::{self, PairSampler};
use clip_core::network::{Activation, Checkpoint, CheckpointMeta, LossKind, Network};
use clip_core::robustness::barycenter_oracle;
use clip_core::training::{lambda_continuation, standard_train, LipschitzPairs, Mode, PhaseTimes, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{derive_seed, OutputDir};
use crate::RunOptions;

#[derive(Debug, Clone, Serialize)]
pub struct RegressionRow {
    pub lambda: f64,
    pub label: String,
    /// Largest slope between neighbouring grid points.
    pub grid_lipschitz: f64,
    /// Mean squared error against the noiseless target on the grid.
    pub grid_mse: f64,
    pub train_mse: f64,
    /// Largest quotient over the final pair set (0 for the unregularized fit).
    pub empirical_lipschitz: f64,
    pub layerwise_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionSummary {
    /// Rows in schedule order, then the unregularized fit.
    pub rows: Vec<RegressionRow>,
    pub ground_truth_grid_lipschitz: f64,
    pub barycenter: f64,
}

impl RegressionSummary {
    pub fn row(&self, lambda: f64) -> Option<&RegressionRow> {
        self.rows.iter().find(|r| r.lambda == lambda)
    }
}

/// File label of a λ value: `10`, `1`, `1e-10`, `0`.
pub fn lambda_label(lambda: f64) -> String {
    if lambda == lambda.trunc() && lambda.abs() < 1e6 {
        format!("{}", lambda as i64)
    } else {
        format!("{lambda:e}")
    }
}

/// Evenly spaced grid over the regression domain.
pub fn grid(points: usize) -> Vec<f64> {
    let (lo, hi) = REGRESSION_DOMAIN;
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Largest absolute slope between neighbouring samples of a curve.
pub fn grid_lipschitz(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]).abs() / (x[1] - x[0]))
        .fold(0.0, f64::max)
}

fn predictions(net: &Network, xs: &[f64]) -> Result<Vec<f64>> {
    let input = clip_core::Tensor::matrix(xs.len(), 1, xs.to_vec())?;
    Ok(net.forward_batch(&input)?.into_data())
}

pub fn run_regression(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut OutputDir) -> Result<RegressionSummary> {
    let r = &cfg.regression;
    let data = regression_dataset(r.samples, r.noise, derive_seed(cfg.seed, "data"))?;
    let mut dims = vec![1];
    dims.extend(&r.hidden);
    dims.push(1);
    let init = Network::mlp(&dims, Activation::Sigmoid, Activation::Identity, derive_seed(cfg.seed, "init"))?;

    let train_seed = derive_seed(cfg.seed, "train");
    let mut pretrain_cfg = cfg.train_config(Mode::Standard, 0.0, train_seed);
    pretrain_cfg.epochs = r.pretrain_epochs;
    pretrain_cfg.lr = r.pretrain_lr;
    let pretrained = standard_train(init, &data, &pretrain_cfg, None)?;

    let (lo, hi) = REGRESSION_DOMAIN;
    let sampler = PairSampler::interval(lo, hi, 1, r.pair_noise);
    let (pairs, _) = sampler.sample(r.pairs, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pairs")))?;
    let stage_cfg = cfg.train_config(Mode::Clip, 0.0, train_seed);
    let stages = lambda_continuation(
        pretrained.network.clone(),
        &data,
        LipschitzPairs { pairs, sampler },
        &r.schedule,
        &stage_cfg,
        None,
    )?;

    let xs = grid(r.grid_points);
    let truth: Vec<f64> = xs.iter().map(|&x| regression_target(x)).collect();
    let mut runs: Vec<(f64, &TrainOutcome)> = stages.iter().map(|s| (s.lambda, &s.outcome)).collect();
    runs.push((0.0, &pretrained));

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for (lambda, outcome) in runs {
        let label = lambda_label(lambda);
        let net = &outcome.network;
        let pred = predictions(net, &xs)?;
        let mut curve = String::from("x,prediction,ground_truth\n");
        for ((x, p), t) in xs.iter().zip(&pred).zip(&truth) {
            writeln!(curve, "{x},{p},{t}")?;
        }
        out.write(&format!("curves_lambda_{label}.csv"), curve)?;

        let (train_mse, _) = net.param_gradient(data.inputs(), data.targets(), LossKind::Mse)?;
        let grid_mse = pred.iter().zip(&truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / xs.len() as f64;
        let empirical = match &outcome.pairs {
            Some(lp) => lipreg::empirical_lipschitz(net, &lp.pairs)?.max,
            None => 0.0,
        };
        let row = RegressionRow {
            lambda,
            label: label.clone(),
            grid_lipschitz: grid_lipschitz(&xs, &pred),
            grid_mse,
            train_mse,
            empirical_lipschitz: empirical,
            layerwise_bound: net.layerwise_lipschitz_bound(),
        };

        let mut meta = CheckpointMeta {
            epoch: outcome.history.epochs.len(),
            regularization: lambda,
            metrics: Default::default(),
        };
        meta.metrics.insert("grid_lipschitz".into(), row.grid_lipschitz);
        meta.metrics.insert("grid_mse".into(), row.grid_mse);
        let name = format!("checkpoints/lambda_{label}.ckpt");
        Checkpoint {
            network: net.clone(),
            meta,
        }
        .save(&out.file(&name)?)?;

        let mut history = Vec::new();
        outcome.history.write_csv(&mut history)?;
        out.write(&format!("history_lambda_{label}.csv"), history)?;
        timing.push((label, outcome.times));
        rows.push(row);
    }

    let ground_truth_grid_lipschitz = grid_lipschitz(&xs, &truth);
    let barycenter = barycenter_oracle(data.targets(), LossKind::Mse)?[0];
    let truth_train_mse = {
        let x = data.inputs().data();
        let y = data.targets().data();
        x.iter().zip(y).map(|(&x, &y)| (regression_target(x) - y).powi(2)).sum::<f64>() / x.len() as f64
    };

    let mut metrics = String::from("lambda,grid_lipschitz,grid_mse,train_mse,empirical_lipschitz,layerwise_bound\n");
    for r in &rows {
        writeln!(
            metrics,
            "{},{},{},{},{},{}",
            r.label, r.grid_lipschitz, r.grid_mse, r.train_mse, r.empirical_lipschitz, r.layerwise_bound
        )?;
    }
    writeln!(metrics, "ground-truth,{ground_truth_grid_lipschitz},0,{truth_train_mse},,")?;
    out.write("metrics.csv", metrics)?;

    let summary = RegressionSummary {
        rows,
        ground_truth_grid_lipschitz,
        barycenter,
    };
    out.write_json(
        "report.json",
        &serde_json::json!({
            "recipe": "regression",
            "seed": cfg.seed,
            "samples": data.len(),
            "barycenter": summary.barycenter,
            "ground_truth_grid_lipschitz": summary.ground_truth_grid_lipschitz,
            "rows": summary.rows,
        }),
    )?;
    if opts.timing {
        write_timing(out, &timing)?;
    }
    ensure!(!summary.rows.is_empty(), "no runs");
    Ok(summary)
}

pub(crate) fn write_timing(out: &mut OutputDir, timing: &[(String, PhaseTimes)]) -> Result<()> {
    let runs: Vec<_> = timing
        .iter()
        .map(|(label, t)| {
            serde_json::json!({
                "run": label,
                "adversarial_seconds": t.adversarial.as_secs_f64(),
                "descent_seconds": t.descent.as_secs_f64(),
                "probe_seconds": t.probe.as_secs_f64(),
                "total_seconds": t.total.as_secs_f64(),
            })
        })
        .collect();
    for r in &runs {
        eprintln!(
            "timing {}: total {:.2}s (adversarial {:.2}s, descent {:.2}s, probe {:.2}s)",
            r["run"].as_str().unwrap_or(""),
            r["total_seconds"].as_f64().unwrap_or(0.0),
            r["adversarial_seconds"].as_f64().unwrap_or(0.0),
            r["descent_seconds"].as_f64().unwrap_or(0.0),
            r["probe_seconds"].as_f64().unwrap_or(0.0),
        );
    }
    out.write_json("timing.json", &runs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(lambda_label(10.0), "10");
        assert_eq!(lambda_label(1.0), "1");
        assert_eq!(lambda_label(0.0), "0");
        assert_eq!(lambda_label(1e-10), "1e-10");
        assert_eq!(lambda_label(0.5), "5e-1");
    }

    #[test]
    fn ground_truth_slope_is_one_half() {
        let xs = grid(401);
        assert_eq!(xs.len(), 401);
        assert_eq!((xs[0], xs[400]), (-4.0, 4.0));
        let ys: Vec<f64> = xs.iter().map(|&x| regression_target(x)).collect();
        assert!((grid_lipschitz(&xs, &ys) - 0.5).abs() < 1e-12);
    }
}
