//! Experiment configuration.
//!
//! Resolution is layered: recipe defaults, then the config file, then
//! `--set key=value` overrides. Files are TOML; dotted keys and tables are
//! interchangeable (`train.lr = 0.1` or `[train] lr = 0.1`). Every key must
//! already exist in the defaults, so typos fail loudly with their full path.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clip_core::lipreg::default_min_separation;
use clip_core::network::LossKind;
use clip_core::robustness::{AttackConfig, StepKind};
use clip_core::training::{AccuracyScope, Mode, TrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

/// Environment variable naming the dataset directory.
pub const DATA_DIR_ENV: &str = "CLIPTRAIN_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist-10k";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: expected {expected}, found {found}")]
    Type { key: String, expected: String, found: String },
    #[error("`{key}`: {reason}")]
    Range { key: String, reason: String },
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("malformed override `{0}`, expected key=value")]
    Override(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn range(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Range {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Regression,
    Classification,
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recipe::Regression => "regression",
            Recipe::Classification => "classification",
        })
    }
}

impl FromStr for Recipe {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regression" => Ok(Recipe::Regression),
            "classification" => Ok(Recipe::Classification),
            other => Err(format!("unknown recipe `{other}` (expected regression or classification)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the IDX files. Empty means the environment
    /// variable, then the built-in default.
    pub dir: String,
    pub images: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: usize,
    pub eval: usize,
    pub reserve: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lambda0: f64,
    pub dlambda: f64,
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dmu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub accuracy_scope: AccuracyScope,
    pub resample_pairs_each_epoch: bool,
    pub regression_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    pub step: f64,
    pub iterations: usize,
    pub step_kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Held-out samples attacked after every epoch for checkpoint selection.
    pub probe_samples: usize,
    /// Samples attacked for the reported PGD accuracy.
    pub report_samples: usize,
    pub noise_sigma: f64,
    /// Ascent steps applied to the evaluation pairs before reading off the
    /// empirical Lipschitz constant.
    pub lipschitz_ascent_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSection {
    pub hidden: Vec<usize>,
    pub targets: Vec<f64>,
    pub pair_noise: f64,
    pub weight_reg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSection {
    pub samples: usize,
    pub noise: f64,
    pub hidden: Vec<usize>,
    pub schedule: Vec<f64>,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pairs: usize,
    pub pair_noise: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub classification: ClassificationSection,
    pub regression: RegressionSection,
}

impl ExperimentConfig {
    pub fn defaults(recipe: Recipe) -> Self {
        let train = match recipe {
            Recipe::Classification => TrainSection {
                lambda0: 0.0,
                dlambda: TrainConfig::default_dlambda(0.0),
                tau: 0.1,
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
                dmu: 1e-5,
                epochs: 30,
                batch_size: 128,
                accuracy_scope: AccuracyScope::Minibatch,
                resample_pairs_each_epoch: false,
                regression_threshold: 0.01,
            },
            Recipe::Regression => TrainSection {
                lambda0: 0.0,
                dlambda: TrainConfig::default_dlambda(0.0),
                tau: 0.1,
                lr: 0.02,
                momentum: 0.9,
                weight_decay: 0.0,
                dmu: 1e-5,
                epochs: 600,
                batch_size: 10,
                accuracy_scope: AccuracyScope::Minibatch,
                resample_pairs_each_epoch: true,
                regression_threshold: 0.01,
            },
        };
        Self {
            recipe,
            seed: 0,
            output_dir: PathBuf::from(format!("runs/{recipe}")),
            data: DataSection {
                dir: String::new(),
                images: "train-images-idx3-ubyte".into(),
                labels: "train-labels-idx1-ubyte".into(),
            },
            split: SplitSection {
                train: 7000,
                eval: 2000,
                reserve: 1000,
            },
            train,
            attack: AttackSection {
                epsilon: 2.0,
                step: 0.25,
                iterations: 100,
                step_kind: StepKind::Sign,
            },
            eval: EvalSection {
                probe_samples: 256,
                report_samples: 512,
                noise_sigma: 1.0,
                lipschitz_ascent_steps: 10,
            },
            classification: ClassificationSection {
                hidden: vec![64, 64],
                targets: vec![0.85, 0.90, 0.95],
                pair_noise: 0.1,
                weight_reg: true,
            },
            regression: RegressionSection {
                samples: 100,
                noise: 0.02,
                hidden: vec![500, 200, 100],
                schedule: vec![10.0, 1.0, 1e-10],
                pretrain_epochs: 3000,
                pretrain_lr: 0.03,
                pairs: 100,
                pair_noise: 0.1,
                grid_points: 401,
            },
        }
    }

    /// Defaults, then `file` (TOML text, if any), then `overrides`.
    pub fn resolve(recipe: Recipe, file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let defaults = Self::defaults(recipe);
        let mut table = Table::try_from(&defaults).expect("defaults serialize to a table");
        let mut explicit = Vec::new();
        if let Some(text) = file {
            let parsed: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
                path: "config".into(),
                message: e.to_string(),
            })?;
            merge(&mut table, parsed, "", &mut explicit)?;
        }
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.clone()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Override(item.clone()));
            }
            let value = parse_value(raw.trim());
            let mut nested = value;
            for part in key.rsplit('.') {
                let mut t = Table::new();
                t.insert(part.to_string(), nested);
                nested = Value::Table(t);
            }
            let Value::Table(t) = nested else { unreachable!() };
            merge(&mut table, t, "", &mut explicit)?;
        }
        if table.get("recipe").and_then(Value::as_str) != Some(&recipe.to_string()) {
            return Err(ConfigError::Invalid {
                key: "recipe".into(),
                reason: format!("config names a different recipe than `{recipe}`"),
            });
        }
        let mut cfg: Self = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Invalid {
                key,
                reason: e.into_inner().to_string(),
            }
        })?;
        if !explicit.iter().any(|k| k == "train.dlambda") {
            cfg.train.dlambda = TrainConfig::default_dlambda(cfg.train.lambda0);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(recipe: Recipe, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?),
            None => None,
        };
        Self::resolve(recipe, text.as_deref(), overrides).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.map(|p| p.display().to_string()).unwrap_or_default(),
                message,
            },
            other => other,
        })
    }

    /// Range checks, each error naming its key.
    pub fn validate(&self) -> Result<()> {
        for (mode, target) in [(Mode::Standard, 0.9), (Mode::WeightReg, 0.9), (Mode::Clip, 0.9)] {
            self.train_config(mode, target, 0).validate().map_err(|e| match e {
                clip_core::training::TrainError::InvalidConfig { key, reason } => ConfigError::range(format!("train.{key}"), reason),
                other => ConfigError::range("train", other.to_string()),
            })?;
        }
        self.attack_config(0, None)
            .validate()
            .map_err(|e| ConfigError::range("attack", e.to_string()))?;
        if self.attack.step <= 0.0 {
            return Err(ConfigError::range("attack.step", "must be > 0"));
        }
        if !(self.eval.noise_sigma >= 0.0) {
            return Err(ConfigError::range("eval.noise_sigma", "must be >= 0"));
        }
        match self.recipe {
            Recipe::Classification => {
                let s = &self.split;
                for (k, v) in [("split.train", s.train), ("split.eval", s.eval), ("split.reserve", s.reserve)] {
                    if v == 0 {
                        return Err(ConfigError::range(k, "must be >= 1"));
                    }
                }
                if self.eval.probe_samples == 0 || self.eval.probe_samples >= s.eval {
                    return Err(ConfigError::range(
                        "eval.probe_samples",
                        format!("must lie in [1, split.eval) = [1, {})", s.eval),
                    ));
                }
                if self.eval.report_samples == 0 {
                    return Err(ConfigError::range("eval.report_samples", "must be >= 1"));
                }
                let c = &self.classification;
                if c.hidden.is_empty() || c.hidden.contains(&0) {
                    return Err(ConfigError::range("classification.hidden", "widths must be >= 1"));
                }
                if c.targets.is_empty() || c.targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(ConfigError::range("classification.targets", "values must lie in [0, 1]"));
                }
                if !(c.pair_noise > 0.0) {
                    return Err(ConfigError::range("classification.pair_noise", "must be > 0"));
                }
            }
            Recipe::Regression => {
                let r = &self.regression;
                if r.samples == 0 {
                    return Err(ConfigError::range("regression.samples", "must be >= 1"));
                }
                if !(r.noise >= 0.0) {
                    return Err(ConfigError::range("regression.noise", "must be >= 0"));
                }
                if r.hidden.is_empty() || r.hidden.contains(&0) {
                    return Err(ConfigError::range("regression.hidden", "widths must be >= 1"));
                }
                if r.schedule.is_empty() || r.schedule.iter().any(|l| !(*l >= 0.0)) || r.schedule.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(ConfigError::range(
                        "regression.schedule",
                        "must be a nonempty, strictly decreasing list of values >= 0",
                    ));
                }
                if r.pretrain_epochs == 0 {
                    return Err(ConfigError::range("regression.pretrain_epochs", "must be >= 1"));
                }
                if !(r.pretrain_lr > 0.0) {
                    return Err(ConfigError::range("regression.pretrain_lr", "must be > 0"));
                }
                if r.pairs == 0 {
                    return Err(ConfigError::range("regression.pairs", "must be >= 1"));
                }
                if !(r.pair_noise > default_min_separation(1)) {
                    return Err(ConfigError::range("regression.pair_noise", "must be > 0"));
                }
                if r.grid_points < 2 {
                    return Err(ConfigError::range("regression.grid_points", "must be >= 2"));
                }
            }
        }
        Ok(())
    }

    /// Training configuration for one run.
    pub fn train_config(&self, mode: Mode, target_accuracy: f64, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            mode,
            lambda0: t.lambda0,
            dlambda: t.dlambda,
            tau: t.tau,
            lr: t.lr,
            momentum: t.momentum,
            target_accuracy,
            weight_decay: t.weight_decay,
            dmu: t.dmu,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lambda_fixed: false,
            seed,
            loss: match self.recipe {
                Recipe::Classification => LossKind::CrossEntropy,
                Recipe::Regression => LossKind::Mse,
            },
            accuracy_scope: t.accuracy_scope,
            resample_pairs_each_epoch: t.resample_pairs_each_epoch,
            regression_threshold: t.regression_threshold,
        }
    }

    pub fn attack_config(&self, seed: u64, max_samples: Option<usize>) -> AttackConfig {
        AttackConfig {
            epsilon: self.attack.epsilon,
            step: self.attack.step,
            iterations: self.attack.iterations,
            seed,
            step_kind: self.attack.step_kind,
            max_samples,
            ..Default::default()
        }
    }

    /// Dataset directory: the config value, else the environment variable,
    /// else the built-in default.
    pub fn data_dir(&self) -> PathBuf {
        if !self.data.dir.is_empty() {
            return PathBuf::from(&self.data.dir);
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(DEFAULT_DATA_DIR),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Override values are TOML literals; anything that does not parse as one
/// is taken as a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a float",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

/// Coerces `value` to the type of `base`, widening integers to floats.
fn coerce(base: &Value, value: Value, key: &str) -> Result<Value> {
    let mismatch = |v: &Value| ConfigError::Type {
        key: key.to_string(),
        expected: type_name(base).into(),
        found: type_name(v).into(),
    };
    match (base, value) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Array(b), Value::Array(items)) => match b.first() {
            None => Ok(Value::Array(items)),
            Some(elem) => items
                .into_iter()
                .enumerate()
                .map(|(i, v)| coerce(elem, v, &format!("{key}[{i}]")))
                .collect::<Result<Vec<_>>>()
                .map(Value::Array),
        },
        (b, v) if std::mem::discriminant(b) == std::mem::discriminant(&v) => Ok(v),
        (_, v) => Err(mismatch(&v)),
    }
}

fn merge(base: &mut Table, overlay: Table, prefix: &str, explicit: &mut Vec<String>) -> Result<()> {
    for (k, v) in overlay {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(slot) = base.get_mut(&k) else {
            return Err(ConfigError::UnknownKey(key));
        };
        match (slot, v) {
            (Value::Table(b), Value::Table(o)) => merge(b, o, &key, explicit)?,
            (slot @ Value::Table(_), v) => {
                return Err(ConfigError::Type {
                    key,
                    expected: type_name(slot).into(),
                    found: type_name(&v).into(),
                })
            }
            (slot, v) => {
                *slot = coerce(slot, v, &key)?;
                explicit.push(key);
            }
        }
    }
    Ok(())
}
