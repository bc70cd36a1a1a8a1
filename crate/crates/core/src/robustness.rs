//! Robustness evaluation: L2-ball PGD, Gaussian input noise, and report
//! assembly.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::{Dataset, Task};
use crate::lipreg::{self, LipError, PairSet};
use crate::network::{argmax, LossKind, Network, NetworkError};

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lip(#[from] LipError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RobustnessError>;

/// How each PGD iterate moves before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    /// `α·sign(∇)`, componentwise.
    Sign,
    /// `α·∇/‖∇‖`.
    L2Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Radius of the L2 ball around the clean input.
    pub epsilon: f64,
    pub step: f64,
    pub iterations: usize,
    /// Seeds the choice of attacked samples when `max_samples` is set.
    pub seed: u64,
    pub step_kind: StepKind,
    pub loss: LossKind,
    /// Valid input box, applied after every projection.
    pub clamp: Option<(f64, f64)>,
    /// Attack at most this many (seeded, randomly chosen) samples.
    pub max_samples: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            step: 0.25,
            iterations: 100,
            seed: 0,
            step_kind: StepKind::Sign,
            loss: LossKind::CrossEntropy,
            clamp: Some((0.0, 1.0)),
            max_samples: None,
        }
    }
}

impl AttackConfig {
    /// `ε = 0` is accepted and leaves every input untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(RobustnessError::InvalidConfig(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if !(self.step > 0.0) {
            return Err(RobustnessError::InvalidConfig(format!("step {} must be > 0", self.step)));
        }
        if self.iterations == 0 {
            return Err(RobustnessError::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Radial projection of `delta` onto the closed L2 ball of radius `epsilon`.
pub fn project_l2(delta: &mut [f64], epsilon: f64) {
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm > epsilon {
        let k = epsilon / norm;
        delta.iter_mut().for_each(|d| *d *= k);
    }
}

/// One PGD move of `adv` (rows) away from `clean` given the loss gradient
/// `grad`: step, project the offset onto the ball, clamp to the box.
pub fn pgd_step(adv: &mut Tensor, clean: &Tensor, grad: &Tensor, cfg: &AttackConfig) {
    let cols = adv.cols();
    let mut delta = vec![0.0; cols];
    for r in 0..adv.rows() {
        let g = grad.row(r);
        let step: Vec<f64> = match cfg.step_kind {
            StepKind::Sign => g.iter().map(|&v| cfg.step * sign(v)).collect(),
            StepKind::L2Normalized => {
                let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    g.iter().map(|&v| cfg.step * v / n).collect()
                } else {
                    vec![0.0; cols]
                }
            }
        };
        let (x, a) = (clean.row(r), adv.row(r));
        for c in 0..cols {
            delta[c] = a[c] + step[c] - x[c];
        }
        project_l2(&mut delta, cfg.epsilon);
        let a = adv.row_mut(r);
        for c in 0..cols {
            let mut v = x[c] + delta[c];
            if let Some((lo, hi)) = cfg.clamp {
                v = v.clamp(lo, hi);
            }
            a[c] = v;
        }
    }
}

/// Batched PGD: every row of `inputs` is attacked against its target row.
pub fn pgd_attack_batch(net: &Network, inputs: &Tensor, targets: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut adv = inputs.clone();
    for _ in 0..cfg.iterations {
        let grad = net.input_gradient_batch(&adv, targets, cfg.loss)?;
        pgd_step(&mut adv, inputs, &grad, cfg);
    }
    Ok(adv)
}

/// PGD on a single sample.
pub fn pgd_attack(net: &Network, x: &[f64], y: &[f64], cfg: &AttackConfig) -> Result<Vec<f64>> {
    let xs = Tensor::matrix(1, x.len(), x.to_vec()).map_err(NetworkError::from)?;
    let ys = Tensor::matrix(1, y.len(), y.to_vec()).map_err(NetworkError::from)?;
    Ok(pgd_attack_batch(net, &xs, &ys, cfg)?.into_data())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub perturbation_norm: f64,
}

/// PGD on a single sample, recording loss and perturbation size after every
/// iteration.
pub fn pgd_attack_traced(net: &Network, x: &[f64], y: &[f64], cfg: &AttackConfig) -> Result<(Vec<f64>, Vec<TraceRow>)> {
    cfg.validate()?;
    let clean = Tensor::matrix(1, x.len(), x.to_vec()).map_err(NetworkError::from)?;
    let target = Tensor::matrix(1, y.len(), y.to_vec()).map_err(NetworkError::from)?;
    let mut adv = clean.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let grad = net.input_gradient_batch(&adv, &target, cfg.loss)?;
        pgd_step(&mut adv, &clean, &grad, cfg);
        let (loss, _) = net.param_gradient(&adv, &target, cfg.loss)?;
        let norm = adv.data().iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        trace.push(TraceRow {
            iteration: t + 1,
            loss,
            perturbation_norm: norm,
        });
    }
    Ok((adv.into_data(), trace))
}

pub fn write_trace_csv(trace: &[TraceRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "iteration,loss,perturbation_norm")?;
    for row in trace {
        writeln!(w, "{},{},{}", row.iteration, row.loss, row.perturbation_norm)?;
    }
    Ok(())
}

const CHUNK: usize = 256;

fn require_classification(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(RobustnessError::EmptyDataset);
    }
    match data.task() {
        Task::Classification { .. } => Ok(()),
        Task::Regression => Err(RobustnessError::Unsupported("accuracy needs a classification dataset".into())),
    }
}

fn count_correct(net: &Network, inputs: &Tensor, labels: &[usize]) -> Result<usize> {
    let out = net.forward_batch(inputs)?;
    Ok((0..out.rows()).filter(|&r| argmax(out.row(r)) == labels[r]).count())
}

/// Fraction of samples whose largest logit is the true class.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    require_classification(data)?;
    let labels = data.labels();
    let mut correct = 0;
    for start in (0..data.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
        let (x, _) = data.batch(&idx);
        correct += count_correct(net, &x, &labels[start..start + idx.len()])?;
    }
    Ok(correct as f64 / data.len() as f64)
}

fn attacked_indices(data: &Dataset, cfg: &AttackConfig) -> Vec<usize> {
    match cfg.max_samples {
        Some(m) if m < data.len() => {
            let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(cfg.seed), data.len(), m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..data.len()).collect(),
    }
}

/// Accuracy on PGD-perturbed inputs.
pub fn pgd_accuracy(net: &Network, data: &Dataset, cfg: &AttackConfig) -> Result<f64> {
    require_classification(data)?;
    cfg.validate()?;
    let idx = attacked_indices(data, cfg);
    let labels = data.labels();
    let mut correct = 0;
    for chunk in idx.chunks(CHUNK) {
        let (x, y) = data.batch(chunk);
        let adv = pgd_attack_batch(net, &x, &y, cfg)?;
        let lab: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        correct += count_correct(net, &adv, &lab)?;
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Accuracy on `x + N(0, σ²I)`, clamped to `clamp` when given.
pub fn gaussian_noise_eval(net: &Network, data: &Dataset, sigma: f64, seed: u64, clamp: Option<(f64, f64)>) -> Result<f64> {
    require_classification(data)?;
    let normal = Normal::new(0.0, sigma).map_err(|e| RobustnessError::InvalidConfig(format!("noise level {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = data.labels();
    let mut correct = 0;
    for start in (0..data.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
        let (mut x, _) = data.batch(&idx);
        for v in x.data_mut() {
            *v += normal.sample(&mut rng);
            if let Some((lo, hi)) = clamp {
                *v = v.clamp(lo, hi);
            }
        }
        correct += count_correct(net, &x, &labels[start..start + idx.len()])?;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Constant output a network converges to as the Lipschitz penalty grows:
/// for the squared Euclidean loss, the mean of the training targets.
pub fn barycenter_oracle(targets: &Tensor, loss: LossKind) -> Result<Vec<f64>> {
    if loss != LossKind::Mse {
        return Err(RobustnessError::Unsupported(
            "barycenter limit is only derived for the squared loss".into(),
        ));
    }
    let rows = targets.rows() as f64;
    let mut mean = vec![0.0; targets.cols()];
    for r in 0..targets.rows() {
        for (m, v) in mean.iter_mut().zip(targets.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_accuracy: f64,
    pub noise_accuracy: f64,
    pub pgd_accuracy: f64,
    pub empirical_lipschitz: f64,
    pub layerwise_bound: f64,
    /// Final λ (CLIP) or μ (weight decay); 0 for standard training.
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub attack: AttackConfig,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            attack: AttackConfig::default(),
            noise_sigma: 1.0,
            noise_seed: 0,
        }
    }
}

pub fn evaluate(net: &Network, test: &Dataset, eval_pairs: &PairSet, cfg: &EvalConfig, regularization: f64) -> Result<EvalReport> {
    Ok(EvalReport {
        clean_accuracy: accuracy(net, test)?,
        noise_accuracy: gaussian_noise_eval(net, test, cfg.noise_sigma, cfg.noise_seed, cfg.attack.clamp)?,
        pgd_accuracy: pgd_accuracy(net, test, &cfg.attack)?,
        empirical_lipschitz: lipreg::empirical_lipschitz(net, eval_pairs)?.max,
        layerwise_bound: net.layerwise_lipschitz_bound(),
        regularization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};

    fn onehot(k: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    fn constant_classifier(dim: usize) -> Network {
        Network::new(vec![Layer::new(
            Tensor::zeros(&[3, dim]),
            Tensor::vector(vec![0.1, 0.5, -0.2]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn toy_data() -> Dataset {
        let x = Tensor::matrix(4, 2, vec![0.1, 0.9, 0.8, 0.2, 0.5, 0.5, 0.0, 0.0]).unwrap();
        let y = Tensor::from_rows(&[onehot(0, 3), onehot(1, 3), onehot(1, 3), onehot(2, 3)]).unwrap();
        Dataset::new("toy", x, y, Task::Classification { classes: 3 }).unwrap()
    }

    #[test]
    fn projection_rescales_to_radius() {
        let mut d = vec![3.0, 0.0];
        project_l2(&mut d, 2.0);
        assert_eq!(d, vec![2.0, 0.0]);
        let mut inside = vec![0.3, -0.4];
        project_l2(&mut inside, 2.0);
        assert_eq!(inside, vec![0.3, -0.4]);
    }

    #[test]
    fn constant_network_is_not_moved() {
        let net = constant_classifier(2);
        let adv = pgd_attack(&net, &[0.3, 0.6], &onehot(0, 3), &AttackConfig::default()).unwrap();
        assert_eq!(adv, vec![0.3, 0.6]);
    }

    #[test]
    fn noise_eval_properties() {
        let net = constant_classifier(2);
        let data = toy_data();
        // Class 1 has the largest bias: prior of class 1 is 2/4.
        for sigma in [0.0, 1.0, 5.0] {
            assert_eq!(gaussian_noise_eval(&net, &data, sigma, 3, Some((0.0, 1.0))).unwrap(), 0.5);
        }
        let net = Network::mlp(&[2, 3], Activation::Identity, Activation::Identity, 4).unwrap();
        let clean = accuracy(&net, &data).unwrap();
        assert_eq!(gaussian_noise_eval(&net, &data, 0.0, 1, Some((0.0, 1.0))).unwrap(), clean);
        let a = gaussian_noise_eval(&net, &data, 1.0, 9, None).unwrap();
        assert_eq!(a, gaussian_noise_eval(&net, &data, 1.0, 9, None).unwrap());
    }

    #[test]
    fn barycenter_examples() {
        let t = Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(barycenter_oracle(&t, LossKind::Mse).unwrap(), vec![1.0]);
        let c = Tensor::matrix(3, 2, vec![0.7, -1.0, 0.7, -1.0, 0.7, -1.0]).unwrap();
        let b = barycenter_oracle(&c, LossKind::Mse).unwrap();
        assert!((b[0] - 0.7).abs() < 1e-15 && (b[1] + 1.0).abs() < 1e-15);
        assert!(matches!(
            barycenter_oracle(&t, LossKind::CrossEntropy),
            Err(RobustnessError::Unsupported(_))
        ));
    }

    #[test]
    fn report_of_constant_net() {
        let net = constant_classifier(2);
        let data = toy_data();
        let pairs = PairSet::from_pairs(&[(vec![0.1, 0.1], vec![0.9, 0.4])], 1e-9).unwrap();
        let r = evaluate(&net, &data, &pairs, &EvalConfig::default(), 0.0).unwrap();
        assert_eq!(r.empirical_lipschitz, 0.0);
        assert_eq!(r.pgd_accuracy, r.clean_accuracy);
        assert_eq!(r.layerwise_bound, 0.0);
    }

    #[test]
    fn zero_radius_keeps_clean_accuracy() {
        let net = Network::mlp(&[2, 5, 3], Activation::Sigmoid, Activation::Identity, 2).unwrap();
        let data = toy_data();
        let cfg = AttackConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert_eq!(pgd_accuracy(&net, &data, &cfg).unwrap(), accuracy(&net, &data).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let bad = AttackConfig {
            step: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            epsilon: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_stays_in_ball() {
        let net = Network::mlp(&[4, 6, 3], Activation::Sigmoid, Activation::Identity, 8).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.5,
            iterations: 20,
            ..Default::default()
        };
        let (adv, trace) = pgd_attack_traced(&net, &[0.2, 0.4, 0.6, 0.8], &onehot(1, 3), &cfg).unwrap();
        assert_eq!(trace.len(), 20);
        assert!(trace.iter().all(|t| t.perturbation_norm <= 0.5 + 1e-9));
        assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 21);
    }
}
