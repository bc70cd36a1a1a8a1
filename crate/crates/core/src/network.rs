//! Dense feed-forward networks.
//!
//! A [`Network`] is a chain of affine layers, each followed by a fixed
//! activation. Parameters are ordered `[w0, b0, w1, b1, ...]` everywhere a
//! flat parameter list appears ([`Gradient`], momentum buffers, checkpoints).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{self, AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("unsupported checkpoint version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt checkpoint payload: {0}")]
    CorruptPayload(String),
    #[error("inconsistent checkpoint dimensions: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    /// Sharp Lipschitz constant of the scalar activation.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Relu | Activation::Identity => 1.0,
        }
    }

    fn apply(self, tape: &mut Tape, z: Var) -> Var {
        match self {
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::Relu => tape.relu(z),
            Activation::Identity => z,
        }
    }

    fn apply_in_place(self, values: &mut [f64]) {
        match self {
            Activation::Sigmoid => autodiff::sigmoid_in_place(values),
            Activation::Relu => autodiff::relu_in_place(values),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn record(self, tape: &mut Tape, prediction: Var, target: Var) -> Result<Var> {
        Ok(match self {
            LossKind::Mse => tape.mse(prediction, target)?,
            LossKind::CrossEntropy => tape.cross_entropy(prediction, target)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.rank() != 2 || bias.rank() != 1 || weights.shape()[0] != bias.len() {
            return Err(NetworkError::Dimension(format!(
                "weights {:?} do not match bias {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Gradient (or any other quantity) congruent with a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    tensors: Vec<Tensor>,
}

impl Gradient {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net.params().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_congruent(&self, net: &Network) -> bool {
        self.tensors.len() == 2 * net.layers.len() && self.tensors.iter().zip(net.params()).all(|(g, p)| g.shape() == p.shape())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Gradient) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

const POWER_ITERATIONS: usize = 500;
const POWER_TOLERANCE: f64 = 1e-12;

/// Largest singular value of a matrix by power iteration on `WᵀW`.
///
/// Stops once the relative change of the estimate drops below `1e-12` or
/// after 500 iterations.
pub fn spectral_norm(w: &Tensor) -> f64 {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let data = w.data();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= nv);
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = data[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let next = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let done = (next - sigma).abs() <= POWER_TOLERANCE * next;
        sigma = next;
        if done {
            break;
        }
        v.iter_mut().for_each(|a| *a = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wrc) in v.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                *vc += wrc * ur;
            }
        }
    }
    sigma
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetworkError::Dimension("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NetworkError::Dimension(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with layer widths `dims` (input first). Weights and
    /// biases are drawn uniformly from `±1/√fan_in`.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(NetworkError::Dimension(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (io, &act) in dims.windows(2).zip(activations) {
            let (fan_in, fan_out) = (io[0], io[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Layer::new(Tensor::matrix(fan_out, fan_in, w)?, Tensor::vector(b), act)?);
        }
        Self::new(layers)
    }

    /// Multilayer perceptron with one hidden activation and a separate output
    /// activation, seeded.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        let mut acts = vec![hidden; dims.len().saturating_sub(2)];
        acts.push(output);
        Self::init(dims, &acts, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths of every layer boundary, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Squared Euclidean norm of all weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weights.data()).map(|v| v * v).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Tensor::vector(x.to_vec()))?.into_data())
    }

    /// Evaluates every row of `x` without recording a tape.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() == 0 || x.cols() != self.input_dim() {
            return Err(NetworkError::Dimension(format!(
                "input of shape {:?} for a network with input width {}",
                x.shape(),
                self.input_dim()
            )));
        }
        let rows = x.rows();
        let mut current = x.data().to_vec();
        for layer in &self.layers {
            let (inner, out) = (layer.in_dim(), layer.out_dim());
            let mut next = vec![0.0; rows * out];
            autodiff::gemm_nt(&current, rows, inner, layer.weights.data(), out, &mut next);
            let b = layer.bias.data();
            for row in next.chunks_mut(out) {
                row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
            layer.activation.apply_in_place(&mut next);
            current = next;
        }
        let shape = if x.rank() == 1 {
            vec![self.output_dim()]
        } else {
            vec![rows, self.output_dim()]
        };
        Ok(Tensor::new(shape, current)?)
    }

    /// Records the forward pass of `x` on `tape`. With `track_params` the
    /// parameters become tracked leaves (returned in parameter order);
    /// otherwise they enter as constants and the returned list is empty.
    pub fn record(&self, tape: &mut Tape, x: Var, track_params: bool) -> Result<(Var, Vec<Var>)> {
        let mut params = Vec::new();
        let mut h = x;
        for layer in &self.layers {
            let (w, b) = if track_params {
                let w = tape.leaf(layer.weights.clone());
                let b = tape.leaf(layer.bias.clone());
                params.extend([w, b]);
                (w, b)
            } else {
                (tape.constant(layer.weights.clone()), tape.constant(layer.bias.clone()))
            };
            let z = tape.linear(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = layer.activation.apply(tape, z);
        }
        Ok((h, params))
    }

    /// Like [`Network::record`] but reuses parameter leaves from an earlier
    /// recording, so gradients from both passes accumulate on them.
    pub fn record_shared(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<(Var, Vec<Var>)> {
        if params.len() != 2 * self.layers.len() {
            return Err(NetworkError::Dimension(format!(
                "{} parameter handles for {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        let mut h = x;
        for (layer, wb) in self.layers.iter().zip(params.chunks(2)) {
            let z = tape.linear(h, wb[0])?;
            let z = tape.add_bias(z, wb[1])?;
            h = layer.activation.apply(tape, z);
        }
        Ok((h, params.to_vec()))
    }

    fn check_batch(&self, inputs: &Tensor, targets: &Tensor) -> Result<()> {
        if inputs.rank() != 2 || targets.rank() != 2 {
            return Err(NetworkError::Dimension("batches must be rank-2".into()));
        }
        if inputs.rows() != targets.rows() {
            return Err(NetworkError::Dimension(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        if targets.cols() != self.output_dim() {
            return Err(NetworkError::Dimension(format!(
                "targets of width {} for output width {}",
                targets.cols(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Mean loss over the batch and its gradient with respect to every
    /// parameter.
    pub fn param_gradient(&self, inputs: &Tensor, targets: &Tensor, loss: LossKind) -> Result<(f64, Gradient)> {
        self.check_batch(inputs, targets)?;
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let y = tape.constant(targets.clone());
        let (out, params) = self.record(&mut tape, x, true)?;
        let l = loss.record(&mut tape, out, y)?;
        let value = tape.value(l).item();
        let mut grads = tape.backward(l)?;
        let tensors = params
            .into_iter()
            .map(|p| grads.take(p).expect("tracked parameter has an adjoint"))
            .collect();
        Ok((value, Gradient { tensors }))
    }

    /// Gradient of the loss at a single sample with respect to the input.
    pub fn input_gradient(&self, x: &[f64], y: &[f64], loss: LossKind) -> Result<Vec<f64>> {
        let inputs = Tensor::matrix(1, x.len(), x.to_vec())?;
        let targets = Tensor::matrix(1, y.len(), y.to_vec())?;
        Ok(self.input_gradient_batch(&inputs, &targets, loss)?.into_data())
    }

    /// Row `i` of the result is the gradient of the loss of sample `i` with
    /// respect to input row `i`.
    pub fn input_gradient_batch(&self, inputs: &Tensor, targets: &Tensor, loss: LossKind) -> Result<Tensor> {
        self.check_batch(inputs, targets)?;
        if inputs.cols() != self.input_dim() {
            return Err(NetworkError::Dimension(format!(
                "inputs of width {} for input width {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(inputs.clone());
        let y = tape.constant(targets.clone());
        let (out, _) = self.record(&mut tape, x, false)?;
        let mean = loss.record(&mut tape, out, y)?;
        // Undo the batch mean so each row carries its own sample's gradient.
        let total = tape.scale(mean, inputs.rows() as f64);
        let mut grads = tape.backward(total)?;
        Ok(grads.take(x).expect("input is tracked"))
    }

    /// Product over layers of the spectral norm of the weights times the
    /// activation's Lipschitz constant: an upper bound on the network's
    /// Euclidean Lipschitz constant.
    pub fn layerwise_lipschitz_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| spectral_norm(&l.weights) * l.activation.lipschitz())
            .product()
    }

    /// Index of the largest output per row; ties go to the lowest index.
    pub fn predict_classes(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let out = self.forward_batch(inputs)?;
        Ok((0..out.rows()).map(|r| argmax(out.row(r))).collect())
    }

    /// Applies `f(param, grad_or_state)` across parameter tensors in order.
    pub(crate) fn zip_params_mut(&mut self, other: &Gradient, mut f: impl FnMut(&mut [f64], &[f64])) {
        for (p, g) in self.params_mut().zip(other.tensors()) {
            f(p.data_mut(), g.data());
        }
    }

    pub fn to_bytes(&self, meta: &CheckpointMeta) -> Vec<u8> {
        let header = CheckpointHeader {
            dims: self.dims(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            metadata: meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, CheckpointMeta)> {
        let mut rest = bytes;
        let magic = take(&mut rest, 8).ok_or_else(|| NetworkError::CorruptHeader("file too short for magic".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(NetworkError::CorruptHeader("bad magic".into()));
        }
        let version = take(&mut rest, 4).ok_or_else(|| NetworkError::CorruptHeader("missing version".into()))?;
        let version = u32::from_le_bytes(version.try_into().unwrap());
        if version > CHECKPOINT_VERSION || version == 0 {
            return Err(NetworkError::VersionMismatch {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let len = take(&mut rest, 8).ok_or_else(|| NetworkError::CorruptHeader("missing header length".into()))?;
        let len = u64::from_le_bytes(len.try_into().unwrap()) as usize;
        let json = take(&mut rest, len).ok_or_else(|| NetworkError::CorruptHeader("header truncated".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| NetworkError::CorruptHeader(e.to_string()))?;
        if header.dims.len() < 2 || header.activations.len() != header.dims.len() - 1 || header.dims.contains(&0) {
            return Err(NetworkError::Inconsistent(format!(
                "{} widths with {} activations",
                header.dims.len(),
                header.activations.len()
            )));
        }
        let expected: usize = header.dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
        if rest.len() != 8 * expected {
            return Err(NetworkError::CorruptPayload(format!(
                "expected {} parameter bytes, found {}",
                8 * expected,
                rest.len()
            )));
        }
        let mut values = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut layers = Vec::with_capacity(header.activations.len());
        for (io, &act) in header.dims.windows(2).zip(&header.activations) {
            let w: Vec<f64> = values.by_ref().take(io[0] * io[1]).collect();
            let b: Vec<f64> = values.by_ref().take(io[1]).collect();
            layers.push(Layer::new(Tensor::matrix(io[1], io[0], w)?, Tensor::vector(b), act)?);
        }
        Ok((Network::new(layers)?, header.metadata))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn take<'a>(rest: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if rest.len() < n {
        return None;
    }
    let (head, tail) = rest.split_at(n);
    *rest = tail;
    Some(head)
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLIPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    /// Regularization weight (λ or μ) at save time.
    pub regularization: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    metadata: CheckpointMeta,
}

/// A network snapshot with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.network, &self.meta, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, meta) = load_checkpoint(path)?;
        Ok(Self { network, meta })
    }
}

pub fn save_checkpoint(net: &Network, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&net.to_bytes(meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Network::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn abs_net() -> Network {
        Network::new(vec![
            Layer::new(
                Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap(),
                Tensor::vector(vec![0.0, 0.0]),
                Activation::Relu,
            )
            .unwrap(),
            Layer::new(
                Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
                Tensor::vector(vec![0.0]),
                Activation::Identity,
            )
            .unwrap(),
        ])
        .unwrap()
    }

    fn linear_net(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>) -> Network {
        Network::new(vec![Layer::new(
            Tensor::matrix(rows, cols, w).unwrap(),
            Tensor::vector(b),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    /// Independent forward pass with plain loops.
    fn naive_forward(net: &Network, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in net.layers() {
            let (out, inn) = (l.out_dim(), l.in_dim());
            let mut z = vec![0.0; out];
            for r in 0..out {
                let mut s = l.bias().data()[r];
                for c in 0..inn {
                    s += l.weights().data()[r * inn + c] * h[c];
                }
                z[r] = match l.activation() {
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                    Activation::Relu => s.max(0.0),
                    Activation::Identity => s,
                };
            }
            h = z;
        }
        h
    }

    #[test]
    fn abs_net_forward_and_bound() {
        let net = abs_net();
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
        assert!((net.layerwise_lipschitz_bound() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_net_is_zero() {
        let net = linear_net(vec![0.0; 6], 2, 3, vec![0.0, 0.0]);
        assert_eq!(net.forward(&[1.0, -4.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let net = Network::mlp(&[3, 5, 2], Activation::Sigmoid, Activation::Identity, 9).unwrap();
        for x in [[0.1, -0.4, 2.0], [1.5, 0.0, -1.0]] {
            let a = net.forward(&x).unwrap();
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let net = abs_net();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(NetworkError::Dimension(_))));
        let l1 = Layer::new(Tensor::zeros(&[2, 1]), Tensor::vector(vec![0.0, 0.0]), Activation::Relu).unwrap();
        let l2 = Layer::new(Tensor::zeros(&[1, 3]), Tensor::vector(vec![0.0]), Activation::Relu).unwrap();
        assert!(Network::new(vec![l1, l2]).is_err());
        assert!(Layer::new(Tensor::zeros(&[2, 1]), Tensor::vector(vec![0.0]), Activation::Relu).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let net = linear_net(vec![2.0, -1.0], 1, 2, vec![0.5]);
        let x = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 3.0]).unwrap();
        let y = Tensor::matrix(2, 1, vec![1.5, -2.5]).unwrap();
        let (loss, g) = net.param_gradient(&x, &y, LossKind::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_closed_forms() {
        let (w, b) = (vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0], vec![0.1, -0.2]);
        let net = linear_net(w.clone(), 2, 3, b.clone());
        let x = [0.5, -1.0, 2.0];
        let y = [1.0, 0.0];
        let r: Vec<f64> = (0..2)
            .map(|i| (0..3).map(|j| w[i * 3 + j] * x[j]).sum::<f64>() + b[i] - y[i])
            .collect();

        let (_, g) = net
            .param_gradient(
                &Tensor::matrix(1, 3, x.to_vec()).unwrap(),
                &Tensor::matrix(1, 2, y.to_vec()).unwrap(),
                LossKind::Mse,
            )
            .unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((g.tensors()[0].data()[i * 3 + j] - 2.0 * r[i] * x[j]).abs() < 1e-14);
            }
            assert!((g.tensors()[1].data()[i] - 2.0 * r[i]).abs() < 1e-14);
        }

        let gx = net.input_gradient(&x, &y, LossKind::Mse).unwrap();
        for j in 0..3 {
            let expect: f64 = (0..2).map(|i| 2.0 * w[i * 3 + j] * r[i]).sum();
            assert!((gx[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_network_has_zero_input_gradient() {
        let net = linear_net(vec![0.0; 4], 2, 2, vec![0.3, 0.7]);
        let g = net.input_gradient(&[0.2, 0.9], &[1.0, 0.0], LossKind::CrossEntropy).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_batch_and_mismatch() {
        let net = abs_net();
        let x = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let y = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert!(net.param_gradient(&x, &y, LossKind::Mse).is_err());
    }

    #[test]
    fn bound_of_scaled_identity() {
        let net = Network::new(vec![Layer::new(
            Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
            Activation::Relu,
        )
        .unwrap()])
        .unwrap();
        assert!((net.layerwise_lipschitz_bound() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_zero_matrix() {
        assert_eq!(spectral_norm(&Tensor::zeros(&[3, 2])), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abs.ckpt");
        let net = Network::mlp(&[3, 4, 2], Activation::Sigmoid, Activation::Identity, 1).unwrap();
        let mut meta = CheckpointMeta {
            epoch: 3,
            regularization: 0.25,
            ..Default::default()
        };
        meta.metrics.insert("pgd".into(), 0.5);
        save_checkpoint(&net, &meta, &path).unwrap();
        let (back, back_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(back_meta, meta);

        let bytes = net.to_bytes(&meta);
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(Network::from_bytes(truncated), Err(NetworkError::CorruptPayload(_))));

        let mut newer = bytes.clone();
        newer[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(Network::from_bytes(&newer), Err(NetworkError::VersionMismatch { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Network::from_bytes(&bad), Err(NetworkError::CorruptHeader(_))));
    }
}
