//! Training loops.
//!
//! All three modes share one minibatch loop:
//!
//! - `standard`: momentum SGD on the mean loss.
//! - `weight-reg`: adds `μ‖W‖²` (weights only) with `μ` steered by the
//!   discrepancy rule.
//! - `clip`: before each step the pair set takes one adversarial ascent
//!   step, then the parameters descend on `loss + λ·Lip(f, pairs)` and `λ`
//!   is steered by the discrepancy rule unless fixed.
//!
//! After every epoch an optional robustness probe is attacked with PGD and
//! the checkpoint with the highest robust accuracy is kept.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::{Dataset, Task};
use crate::lipreg::{self, LipError, PairSampler, PairSet};
use crate::network::{argmax, Checkpoint, CheckpointMeta, Gradient, LossKind, Network, NetworkError};
use crate::robustness::{self, AttackConfig, RobustnessError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {key}: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("gradient is not congruent with the network parameters")]
    ShapeMismatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lip(#[from] LipError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Standard,
    WeightReg,
    Clip,
}

/// Where the accuracy fed to the discrepancy rule is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyScope {
    /// The minibatch just stepped on, after the step.
    Minibatch,
    /// The whole training set, after the step.
    FullSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Initial λ (clip mode).
    pub lambda0: f64,
    /// λ increment of the discrepancy rule.
    pub dlambda: f64,
    /// Adversarial ascent step size.
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    /// Target training accuracy α of the discrepancy rule.
    pub target_accuracy: f64,
    /// Initial μ (weight-reg mode).
    pub weight_decay: f64,
    /// μ increment of the discrepancy rule.
    pub dmu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_fixed: bool,
    pub seed: u64,
    pub loss: LossKind,
    pub accuracy_scope: AccuracyScope,
    /// Redraw the whole pair set at the start of every epoch.
    pub resample_pairs_each_epoch: bool,
    /// Squared-error threshold under which a regression sample counts as
    /// correct.
    pub regression_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Standard,
            lambda0: 0.0,
            dlambda: 1e-3,
            tau: 0.1,
            lr: 0.1,
            momentum: 0.9,
            target_accuracy: 0.9,
            weight_decay: 0.0,
            dmu: 1e-5,
            epochs: 30,
            batch_size: 128,
            lambda_fixed: false,
            seed: 0,
            loss: LossKind::CrossEntropy,
            accuracy_scope: AccuracyScope::Minibatch,
            resample_pairs_each_epoch: false,
            regression_threshold: 0.01,
        }
    }
}

impl TrainConfig {
    /// Default λ increment: a thousandth of λ₀, or 1e-3 when λ₀ is zero.
    pub fn default_dlambda(lambda0: f64) -> f64 {
        if lambda0 > 0.0 {
            1e-3 * lambda0
        } else {
            1e-3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &'static str, reason: String| {
            if ok {
                Ok(())
            } else {
                Err(TrainError::InvalidConfig { key, reason })
            }
        };
        check(
            self.lambda0 >= 0.0 && self.lambda0.is_finite(),
            "lambda0",
            format!("{} must be >= 0", self.lambda0),
        )?;
        check(
            self.dlambda >= 0.0 && self.dlambda.is_finite(),
            "dlambda",
            format!("{} must be >= 0", self.dlambda),
        )?;
        check(self.tau > 0.0 && self.tau.is_finite(), "tau", format!("{} must be > 0", self.tau))?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", format!("{} must be > 0", self.lr))?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            format!("{} must lie in [0, 1)", self.momentum),
        )?;
        check(
            (0.0..=1.0).contains(&self.target_accuracy),
            "target_accuracy",
            format!("{} must lie in [0, 1]", self.target_accuracy),
        )?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay",
            format!("{} must be >= 0", self.weight_decay),
        )?;
        check(self.dmu >= 0.0 && self.dmu.is_finite(), "dmu", format!("{} must be >= 0", self.dmu))?;
        check(self.epochs >= 1, "epochs", "must be >= 1".into())?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1".into())?;
        check(
            self.regression_threshold > 0.0,
            "regression_threshold",
            format!("{} must be > 0", self.regression_threshold),
        )?;
        Ok(())
    }

    fn initial_regularization(&self) -> f64 {
        match self.mode {
            Mode::Standard => 0.0,
            Mode::WeightReg => self.weight_decay,
            Mode::Clip => self.lambda0,
        }
    }

    fn regularization_step(&self) -> f64 {
        match self.mode {
            Mode::Standard => 0.0,
            Mode::WeightReg => self.dmu,
            Mode::Clip => self.dlambda,
        }
    }
}

/// Velocity buffers congruent with the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: Gradient,
}

impl MomentumState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: Gradient::zeros_like(net),
        }
    }

    pub fn velocity(&self) -> &Gradient {
        &self.velocity
    }
}

/// `v ← γ·v + g`, then `θ ← θ − η·v`.
pub fn sgdm_step(net: &mut Network, gradient: &Gradient, state: &mut MomentumState, lr: f64, momentum: f64) -> Result<()> {
    if !gradient.is_congruent(net) || !state.velocity.is_congruent(net) {
        return Err(TrainError::ShapeMismatch);
    }
    for (v, g) in state.velocity.tensors_mut().iter_mut().zip(gradient.tensors()) {
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = momentum * *vi + gi;
        }
    }
    net.zip_params_mut(&state.velocity, |p, v| {
        for (pi, vi) in p.iter_mut().zip(v) {
            *pi -= lr * vi;
        }
    });
    Ok(())
}

/// One discrepancy-principle update: raise the weight while the accuracy
/// beats the target, lower it otherwise, never below zero.
pub fn discrepancy_update(weight: f64, step: f64, accuracy: f64, target: f64) -> f64 {
    if accuracy > target {
        weight + step
    } else {
        (weight - step).max(0.0)
    }
}

fn batch_accuracy(net: &Network, inputs: &Tensor, targets: &Tensor, task: Task, threshold: f64) -> Result<f64> {
    let out = net.forward_batch(inputs)?;
    let rows = out.rows();
    let correct = match task {
        Task::Classification { .. } => (0..rows).filter(|&r| argmax(out.row(r)) == argmax(targets.row(r))).count(),
        Task::Regression => (0..rows)
            .filter(|&r| {
                let err: f64 = out.row(r).iter().zip(targets.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
                err <= threshold
            })
            .count(),
    };
    Ok(correct as f64 / rows as f64)
}

/// Fraction of correctly predicted samples: argmax agreement for
/// classification, squared error at most `threshold` for regression.
pub fn train_accuracy(net: &Network, data: &Dataset, threshold: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    batch_accuracy(net, data.inputs(), data.targets(), data.task(), threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinibatchRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Mean data loss before the step.
    pub loss: f64,
    /// Largest pair quotient before the step (clip mode only).
    pub empirical_lipschitz: Option<f64>,
    /// λ or μ after the discrepancy update.
    pub regularization: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub regularization: f64,
    pub probe_clean_accuracy: Option<f64>,
    pub probe_robust_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub minibatches: Vec<MinibatchRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,batch,loss,empirical_lipschitz,regularization,train_accuracy";

    /// One row per minibatch. `prefix` columns, if any, are prepended to
    /// every row (the header is the caller's business in that case).
    pub fn write_csv_rows(&self, mut w: impl Write, prefix: &str) -> std::io::Result<()> {
        for r in &self.minibatches {
            writeln!(
                w,
                "{prefix}{},{},{},{},{},{}",
                r.epoch,
                r.batch,
                r.loss,
                opt(r.empirical_lipschitz),
                r.regularization,
                r.train_accuracy
            )?;
        }
        Ok(())
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        self.write_csv_rows(w, "")
    }

    pub fn epochs_json(&self) -> String {
        serde_json::to_string_pretty(&self.epochs).expect("records serialize")
    }
}

/// Held-out samples attacked after every epoch to pick the most robust
/// checkpoint.
#[derive(Debug, Clone)]
pub struct RobustProbe {
    pub data: Dataset,
    pub attack: AttackConfig,
}

/// Pair set plus the sampler used to redraw collapsed or stale pairs.
#[derive(Debug, Clone)]
pub struct LipschitzPairs {
    pub pairs: PairSet,
    pub sampler: PairSampler,
}

/// Wall-clock spent per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub adversarial: Duration,
    pub descent: Duration,
    pub probe: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: TrainHistory,
    /// Most robust probe checkpoint; `None` without a probe.
    pub best: Option<Checkpoint>,
    pub pairs: Option<LipschitzPairs>,
    /// λ or μ at the end of training.
    pub regularization: f64,
    pub times: PhaseTimes,
}

impl TrainOutcome {
    /// The best checkpoint when a probe was used, else the final network.
    pub fn selected(&self) -> Checkpoint {
        self.best.clone().unwrap_or_else(|| Checkpoint {
            network: self.network.clone(),
            meta: CheckpointMeta {
                epoch: self.history.epochs.last().map_or(0, |e| e.epoch),
                regularization: self.regularization,
                metrics: Default::default(),
            },
        })
    }
}

/// Shared minibatch loop for every mode.
pub fn train(
    mut net: Network,
    data: &Dataset,
    mut lip: Option<LipschitzPairs>,
    config: &TrainConfig,
    probe: Option<&RobustProbe>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.mode == Mode::Clip && lip.is_none() {
        return Err(TrainError::Contract("clip mode needs a Lipschitz pair set".into()));
    }
    let started = Instant::now();
    let mut times = PhaseTimes::default();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(config.seed);
    pair_rng.set_stream(1);

    let mut state = MomentumState::new(&net);
    let mut reg = config.initial_regularization();
    let reg_step = config.regularization_step();
    let adaptive = config.mode != Mode::Standard && !config.lambda_fixed;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        if config.mode == Mode::Clip && config.resample_pairs_each_epoch {
            let lp = lip.as_mut().expect("checked above");
            lp.pairs = lp.sampler.sample(lp.pairs.len(), &mut pair_rng)?.0;
        }
        order.shuffle(&mut shuffle_rng);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = data.batch(chunk);
            let mut empirical = None;

            let t0 = Instant::now();
            if let (Mode::Clip, Some(lp)) = (config.mode, lip.as_mut()) {
                lipreg::adversarial_update(&net, &mut lp.pairs, config.tau, &lp.sampler, &mut pair_rng)?;
            }
            let t1 = Instant::now();
            times.adversarial += t1 - t0;

            let (loss, mut grad) = net.param_gradient(&x, &y, config.loss)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    epoch,
                    batch,
                });
            }
            match config.mode {
                Mode::Standard => {}
                Mode::Clip => {
                    let lp = lip.as_ref().expect("checked above");
                    if reg > 0.0 {
                        let (report, lip_grad) = lipreg::lip_param_gradient(&net, &lp.pairs)?;
                        grad.axpy(reg, &lip_grad);
                        empirical = Some(report.max);
                    } else {
                        empirical = Some(lipreg::empirical_lipschitz(&net, &lp.pairs)?.max);
                    }
                }
                Mode::WeightReg => {
                    if reg > 0.0 {
                        for (g, p) in grad.tensors_mut().iter_mut().zip(net.params()).step_by(2) {
                            for (gi, pi) in g.data_mut().iter_mut().zip(p.data()) {
                                *gi += 2.0 * reg * pi;
                            }
                        }
                    }
                }
            }
            if !grad.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "gradient",
                    epoch,
                    batch,
                });
            }
            sgdm_step(&mut net, &grad, &mut state, config.lr, config.momentum)?;

            let acc = match config.accuracy_scope {
                AccuracyScope::Minibatch => batch_accuracy(&net, &x, &y, data.task(), config.regression_threshold)?,
                AccuracyScope::FullSet => train_accuracy(&net, data, config.regression_threshold)?,
            };
            if adaptive {
                reg = discrepancy_update(reg, reg_step, acc, config.target_accuracy);
            }
            times.descent += t1.elapsed();
            history.minibatches.push(MinibatchRecord {
                epoch,
                batch,
                loss,
                empirical_lipschitz: empirical,
                regularization: reg,
                train_accuracy: acc,
            });
        }

        let mut record = EpochRecord {
            epoch,
            regularization: reg,
            probe_clean_accuracy: None,
            probe_robust_accuracy: None,
        };
        if let Some(probe) = probe {
            let t = Instant::now();
            let clean = robustness::accuracy(&net, &probe.data)?;
            let robust = robustness::pgd_accuracy(&net, &probe.data, &probe.attack)?;
            record.probe_clean_accuracy = Some(clean);
            record.probe_robust_accuracy = Some(robust);
            if best.as_ref().is_none_or(|(r, _)| robust > *r) {
                let mut meta = CheckpointMeta {
                    epoch,
                    regularization: reg,
                    metrics: Default::default(),
                };
                meta.metrics.insert("probe_clean_accuracy".into(), clean);
                meta.metrics.insert("probe_robust_accuracy".into(), robust);
                best = Some((
                    robust,
                    Checkpoint {
                        network: net.clone(),
                        meta,
                    },
                ));
            }
            times.probe += t.elapsed();
        }
        history.epochs.push(record);
    }
    times.total = started.elapsed();
    Ok(TrainOutcome {
        network: net,
        history,
        best: best.map(|(_, c)| c),
        pairs: lip,
        regularization: reg,
        times,
    })
}

fn require_mode(config: &TrainConfig, mode: Mode) -> Result<()> {
    if config.mode != mode {
        return Err(TrainError::Contract(format!(
            "config mode is {:?}, expected {:?}",
            config.mode, mode
        )));
    }
    Ok(())
}

/// Lipschitz-regularized training with adversarial pair updates.
pub fn clip_train(
    net: Network,
    data: &Dataset,
    lip: LipschitzPairs,
    config: &TrainConfig,
    probe: Option<&RobustProbe>,
) -> Result<TrainOutcome> {
    require_mode(config, Mode::Clip)?;
    train(net, data, Some(lip), config, probe)
}

/// Weight-decay baseline: `loss + μ‖W‖²` with `μ` steered by the
/// discrepancy rule.
pub fn weight_reg_train(net: Network, data: &Dataset, config: &TrainConfig, probe: Option<&RobustProbe>) -> Result<TrainOutcome> {
    require_mode(config, Mode::WeightReg)?;
    train(net, data, None, config, probe)
}

pub fn standard_train(net: Network, data: &Dataset, config: &TrainConfig, probe: Option<&RobustProbe>) -> Result<TrainOutcome> {
    require_mode(config, Mode::Standard)?;
    train(net, data, None, config, probe)
}

#[derive(Debug, Clone)]
pub struct ContinuationStage {
    pub lambda: f64,
    /// Parameters the stage started from.
    pub initial: Network,
    pub outcome: TrainOutcome,
}

/// Trains with a fixed λ for each entry of a strictly decreasing schedule,
/// each stage warm-started from the previous stage's final parameters and
/// pair set.
pub fn lambda_continuation(
    net: Network,
    data: &Dataset,
    lip: LipschitzPairs,
    schedule: &[f64],
    config: &TrainConfig,
    probe: Option<&RobustProbe>,
) -> Result<Vec<ContinuationStage>> {
    if schedule.is_empty() {
        return Err(TrainError::Contract("empty λ schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(TrainError::Contract("λ schedule must be strictly decreasing".into()));
    }
    let mut stages = Vec::with_capacity(schedule.len());
    let mut current = net;
    let mut pairs = lip;
    for &lambda in schedule {
        let cfg = TrainConfig {
            mode: Mode::Clip,
            lambda0: lambda,
            lambda_fixed: true,
            ..config.clone()
        };
        let outcome = train(current.clone(), data, Some(pairs.clone()), &cfg, probe)?;
        let next = outcome.network.clone();
        pairs = outcome.pairs.clone().expect("clip mode keeps its pairs");
        stages.push(ContinuationStage {
            lambda,
            initial: current,
            outcome,
        });
        current = next;
    }
    Ok(stages)
}
