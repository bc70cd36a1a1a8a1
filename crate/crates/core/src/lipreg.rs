//! Empirical Lipschitz estimation on a finite pair set and the adversarial
//! ascent that keeps the pairs near the network's steepest regions.
//!
//! For a pair `(x, x')` the difference quotient is
//! `L(x, x') = ‖f(x) − f(x')‖ / ‖x − x'‖`; the empirical Lipschitz constant of
//! a pair set is the largest quotient in it, a lower bound on the true
//! constant.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::network::{Gradient, Network, NetworkError};

#[derive(Debug, Error)]
pub enum LipError {
    #[error("pair {0} has coincident or too-close points")]
    DegeneratePair(usize),
    #[error("pair set is empty")]
    EmptyPairSet,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("requested {requested} pairs from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pair csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, LipError>;

/// Default minimum pair distance for inputs of width `dim`.
pub fn default_min_separation(dim: usize) -> f64 {
    1e-6 * (dim as f64).sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Pairs `(x, x')` stored as two row-aligned matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    left: Tensor,
    right: Tensor,
    min_separation: f64,
}

impl PairSet {
    pub fn new(left: Tensor, right: Tensor, min_separation: f64) -> Result<Self> {
        if left.rank() != 2 || left.shape() != right.shape() {
            return Err(LipError::Dimension(format!(
                "pair sides {:?} and {:?}",
                left.shape(),
                right.shape()
            )));
        }
        let set = Self {
            left,
            right,
            min_separation,
        };
        for i in 0..set.len() {
            if set.separation(i) < min_separation || set.separation(i) == 0.0 {
                return Err(LipError::DegeneratePair(i));
            }
        }
        Ok(set)
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)], min_separation: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(LipError::EmptyPairSet);
        }
        let (l, r): (Vec<Vec<f64>>, Vec<Vec<f64>>) = pairs.iter().cloned().unzip();
        Self::new(Tensor::from_rows(&l)?, Tensor::from_rows(&r)?, min_separation)
    }

    pub fn len(&self) -> usize {
        self.left.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.left.cols()
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    pub fn left(&self) -> &Tensor {
        &self.left
    }

    pub fn right(&self) -> &Tensor {
        &self.right
    }

    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        (self.left.row(i), self.right.row(i))
    }

    pub fn separation(&self, i: usize) -> f64 {
        let (a, b) = self.pair(i);
        distance(a, b)
    }

    fn set_pair(&mut self, i: usize, x: &[f64], y: &[f64]) {
        self.left.row_mut(i).copy_from_slice(x);
        self.right.row_mut(i).copy_from_slice(y);
    }

    /// One row per pair: the components of `x` followed by those of `x'`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for i in 0..self.len() {
            let (a, b) = self.pair(i);
            let row: Vec<String> = a.iter().chain(b).map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead, min_separation: f64) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| LipError::Csv {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
            if values.is_empty() || values.len() % 2 != 0 {
                return Err(LipError::Csv {
                    line: n + 1,
                    reason: format!("odd number of values ({})", values.len()),
                });
            }
            let (a, b) = values.split_at(values.len() / 2);
            pairs.push((a.to_vec(), b.to_vec()));
        }
        Self::from_pairs(&pairs, min_separation)
    }
}

/// Where the base point `x` of a fresh pair comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PairDomain {
    /// Uniform on the box `[lo, hi]^dim`.
    Interval { lo: f64, hi: f64, dim: usize },
    /// Rows of a held-out input pool.
    Pool(Tensor),
}

/// Counters from sampling and repair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub attempts: usize,
    pub rejected: usize,
    /// Pairs that exhausted their attempts and got a deterministic offset.
    pub forced: usize,
}

/// Draws pairs `(x, x + noise)` that respect a minimum separation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSampler {
    pub domain: PairDomain,
    pub noise: f64,
    /// Box every pair point is clamped to (images live in `[0, 1]`).
    pub clamp: Option<(f64, f64)>,
    pub min_separation: f64,
    pub max_attempts: usize,
}

impl PairSampler {
    /// Regression mode: `x` uniform on `[lo, hi]`, 1-d, no clamping.
    pub fn interval(lo: f64, hi: f64, dim: usize, noise: f64) -> Self {
        Self {
            domain: PairDomain::Interval { lo, hi, dim },
            noise,
            clamp: None,
            min_separation: default_min_separation(dim),
            max_attempts: 32,
        }
    }

    /// Classification mode: `x` taken from `pool`, pair points clamped to
    /// `[0, 1]`.
    pub fn pool(pool: Tensor, noise: f64) -> Self {
        let dim = pool.cols();
        Self {
            domain: PairDomain::Pool(pool),
            noise,
            clamp: Some((0.0, 1.0)),
            min_separation: default_min_separation(dim),
            max_attempts: 32,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.domain {
            PairDomain::Interval { dim, .. } => *dim,
            PairDomain::Pool(t) => t.cols(),
        }
    }

    fn clamp_in_place(&self, v: &mut [f64]) {
        if let Some((lo, hi)) = self.clamp {
            v.iter_mut().for_each(|c| *c = c.clamp(lo, hi));
        }
    }

    fn perturb(&self, x: &[f64], rng: &mut impl Rng, stats: &mut SampleStats) -> Vec<f64> {
        for _ in 0..self.max_attempts {
            stats.attempts += 1;
            let mut y: Vec<f64> = x
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(rng);
                    c + self.noise * z
                })
                .collect();
            self.clamp_in_place(&mut y);
            if distance(x, &y) >= self.min_separation && distance(x, &y) > 0.0 {
                return y;
            }
            stats.rejected += 1;
        }
        // Give up on noise: step a fixed multiple of the minimum separation
        // along a random direction, flipping components that would leave the box.
        stats.forced += 1;
        let mut u: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let step = 2.0 * self.min_separation.max(f64::EPSILON);
        u.iter_mut().for_each(|a| *a *= step / nu);
        x.iter()
            .zip(&u)
            .map(|(&c, &d)| match self.clamp {
                Some((lo, hi)) if c + d > hi || c + d < lo => c - d,
                _ => c + d,
            })
            .collect()
    }

    fn base_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        match &self.domain {
            PairDomain::Interval { lo, hi, dim } => (0..*dim).map(|_| rng.random_range(*lo..=*hi)).collect(),
            PairDomain::Pool(pool) => pool.row(rng.random_range(0..pool.rows())).to_vec(),
        }
    }

    /// A single fresh pair.
    pub fn draw_pair(&self, rng: &mut impl Rng, stats: &mut SampleStats) -> (Vec<f64>, Vec<f64>) {
        let x = self.base_point(rng);
        let y = self.perturb(&x, rng, stats);
        (x, y)
    }

    /// `count` fresh pairs. In pool mode every pool row is used at most once
    /// (all of them, in order, when `count` equals the pool size).
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Result<(PairSet, SampleStats)> {
        if count == 0 {
            return Err(LipError::EmptyPairSet);
        }
        let mut stats = SampleStats::default();
        let mut pairs = Vec::with_capacity(count);
        match &self.domain {
            PairDomain::Interval { .. } => {
                for _ in 0..count {
                    pairs.push(self.draw_pair(rng, &mut stats));
                }
            }
            PairDomain::Pool(pool) => {
                if count > pool.rows() {
                    return Err(LipError::PoolTooSmall {
                        requested: count,
                        available: pool.rows(),
                    });
                }
                let rows: Vec<usize> = if count == pool.rows() {
                    (0..count).collect()
                } else {
                    rand::seq::index::sample(rng, pool.rows(), count).into_vec()
                };
                for r in rows {
                    let x = pool.row(r).to_vec();
                    let y = self.perturb(&x, rng, &mut stats);
                    pairs.push((x, y));
                }
            }
        }
        Ok((PairSet::from_pairs(&pairs, self.min_separation)?, stats))
    }
}

/// Convenience wrapper over [`PairSampler::sample`].
pub fn resample_pairs(sampler: &PairSampler, count: usize, rng: &mut impl Rng) -> Result<(PairSet, SampleStats)> {
    sampler.sample(count, rng)
}

/// Difference quotient `‖f(x) − f(x')‖ / ‖x − x'‖` of a single pair.
pub fn lipschitz_quotient(net: &Network, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(LipError::Dimension(format!("pair widths {} and {}", x.len(), x_prime.len())));
    }
    let d = distance(x, x_prime);
    if d == 0.0 {
        return Err(LipError::DegeneratePair(0));
    }
    let (fx, fy) = (net.forward(x)?, net.forward(x_prime)?);
    Ok(distance(&fx, &fy) / d)
}

/// Quotients of every pair, evaluated batch-wise.
pub fn quotients(net: &Network, pairs: &PairSet) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(LipError::EmptyPairSet);
    }
    let fl = net.forward_batch(pairs.left())?;
    let fr = net.forward_batch(pairs.right())?;
    (0..pairs.len())
        .map(|i| {
            let d = pairs.separation(i);
            if d == 0.0 {
                return Err(LipError::DegeneratePair(i));
            }
            Ok(distance(fl.row(i), fr.row(i)) / d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientReport {
    pub quotients: Vec<f64>,
    pub argmax: usize,
    pub max: f64,
}

impl QuotientReport {
    /// Largest value wins; ties go to the lowest index.
    pub fn from_quotients(quotients: Vec<f64>) -> Result<Self> {
        if quotients.is_empty() {
            return Err(LipError::EmptyPairSet);
        }
        let mut argmax = 0;
        for (i, &q) in quotients.iter().enumerate() {
            if q > quotients[argmax] {
                argmax = i;
            }
        }
        Ok(Self {
            max: quotients[argmax],
            argmax,
            quotients,
        })
    }
}

/// Largest difference quotient over the pair set.
pub fn empirical_lipschitz(net: &Network, pairs: &PairSet) -> Result<QuotientReport> {
    QuotientReport::from_quotients(quotients(net, pairs)?)
}

/// Per-pair quotients and their gradients with respect to both points.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientGradients {
    pub quotients: Vec<f64>,
    /// Row `i` is `∇ₓ L(xᵢ, x'ᵢ)`.
    pub left: Tensor,
    /// Row `i` is `∇ₓ' L(xᵢ, x'ᵢ)`.
    pub right: Tensor,
    /// Pairs whose outputs coincided (zero subgradient of the norm).
    pub zero_subgradients: usize,
}

pub fn quotient_input_gradients(net: &Network, pairs: &PairSet) -> Result<QuotientGradients> {
    if pairs.is_empty() {
        return Err(LipError::EmptyPairSet);
    }
    if pairs.dim() != net.input_dim() {
        return Err(LipError::Dimension(format!(
            "pairs of width {} for input width {}",
            pairs.dim(),
            net.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let l = tape.leaf(pairs.left.clone());
    let r = tape.leaf(pairs.right.clone());
    let (fl, _) = net.record(&mut tape, l, false)?;
    let (fr, _) = net.record(&mut tape, r, false)?;
    let df = tape.sub(fl, fr)?;
    let num = tape.row_norms(df);
    let dx = tape.sub(l, r)?;
    let den = tape.row_norms(dx);
    let q = tape.div(num, den)?;
    let total = tape.sum(q);
    let quotients = tape.value(q).data().to_vec();
    let mut grads = tape.backward(total)?;
    Ok(QuotientGradients {
        quotients,
        left: grads.take(l).expect("left side tracked"),
        right: grads.take(r).expect("right side tracked"),
        zero_subgradients: tape.zero_norm_subgradients(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    /// Pairs redrawn because the step collapsed them.
    pub repaired: usize,
    /// Pairs whose outputs coincided (zero subgradient of the norm).
    pub zero_subgradients: usize,
    pub sampling: SampleStats,
}

/// One ascent step on every pair: `x ← x + τ·L·∇ₓL` and
/// `x' ← x' + τ·L·∇ₓ'L`, with both gradients taken at the current pair.
/// Pairs closer than the minimum separation afterwards are redrawn from
/// `sampler`; its clamp box, if any, is applied to the moved points.
pub fn adversarial_update(net: &Network, pairs: &mut PairSet, tau: f64, sampler: &PairSampler, rng: &mut impl Rng) -> Result<UpdateStats> {
    let QuotientGradients {
        quotients: qv,
        left: gl,
        right: gr,
        zero_subgradients,
    } = quotient_input_gradients(net, pairs)?;
    let mut stats = UpdateStats {
        zero_subgradients,
        ..Default::default()
    };
    let cols = pairs.dim();
    for (i, &qi) in qv.iter().enumerate() {
        let k = tau * qi;
        let base = i * cols;
        for c in 0..cols {
            pairs.left.data_mut()[base + c] += k * gl.data()[base + c];
            pairs.right.data_mut()[base + c] += k * gr.data()[base + c];
        }
        if sampler.clamp.is_some() {
            sampler.clamp_in_place(pairs.left.row_mut(i));
            sampler.clamp_in_place(pairs.right.row_mut(i));
        }
        let sep = pairs.separation(i);
        if !(sep >= pairs.min_separation && sep > 0.0) {
            let (x, y) = sampler.draw_pair(rng, &mut stats.sampling);
            pairs.set_pair(i, &x, &y);
            stats.repaired += 1;
        }
    }
    Ok(stats)
}

/// Gradient of the empirical Lipschitz constant with respect to the
/// parameters: the gradient of the argmax pair's quotient.
pub fn lip_param_gradient(net: &Network, pairs: &PairSet) -> Result<(QuotientReport, Gradient)> {
    let report = empirical_lipschitz(net, pairs)?;
    let (x, y) = pairs.pair(report.argmax);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let yv = tape.constant(Tensor::vector(y.to_vec()));
    let (fx, params) = net.record(&mut tape, xv, true)?;
    let (fy, _) = net.record_shared(&mut tape, yv, &params)?;
    let df = tape.sub(fx, fy)?;
    let num = tape.row_norms(df);
    let den = tape.constant(Tensor::scalar(distance(x, y)));
    let q = tape.div(num, den)?;
    let mut grads = tape.backward(q)?;
    let tensors = params.into_iter().map(|p| grads.take(p).expect("parameter tracked")).collect();
    Ok((report, Gradient::from_tensors(tensors)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(a: Vec<f64>, rows: usize, cols: usize) -> Network {
        Network::new(vec![Layer::new(
            Tensor::matrix(rows, cols, a).unwrap(),
            Tensor::vector(vec![0.0; rows]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn abs_net() -> Network {
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

    fn constant_net(dim: usize) -> Network {
        Network::new(vec![Layer::new(
            Tensor::zeros(&[2, dim]),
            Tensor::vector(vec![0.4, -1.0]),
            Activation::Sigmoid,
        )
        .unwrap()])
        .unwrap()
    }

    fn pairs(p: &[(&[f64], &[f64])]) -> PairSet {
        let v: Vec<_> = p.iter().map(|(a, b)| (a.to_vec(), b.to_vec())).collect();
        PairSet::from_pairs(&v, 1e-9).unwrap()
    }

    #[test]
    fn quotient_examples() {
        assert_eq!(lipschitz_quotient(&constant_net(2), &[0.0, 1.0], &[3.0, 1.0]).unwrap(), 0.0);
        let abs = abs_net();
        assert_eq!(lipschitz_quotient(&abs, &[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(lipschitz_quotient(&abs, &[-1.0], &[1.0]).unwrap(), 0.0);
        let diag = linear(vec![2.0, 0.0, 0.0, 1.0], 2, 2);
        assert_eq!(lipschitz_quotient(&diag, &[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(lipschitz_quotient(&diag, &[0.0, 1.0], &[0.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(lipschitz_quotient(&abs, &[1.0], &[1.0]), Err(LipError::DegeneratePair(_))));
    }

    #[test]
    fn report_takes_lowest_index_among_ties() {
        let r = QuotientReport::from_quotients(vec![0.5, 2.0, 1.0]).unwrap();
        assert_eq!((r.argmax, r.max), (1, 2.0));
        let r = QuotientReport::from_quotients(vec![1.0, 3.0, 3.0]).unwrap();
        assert_eq!(r.argmax, 1);
        assert!(QuotientReport::from_quotients(vec![]).is_err());
    }

    #[test]
    fn empirical_lipschitz_of_abs_net() {
        let p = pairs(&[(&[0.0], &[1.0]), (&[-1.0], &[1.0]), (&[2.0], &[3.0])]);
        let r = empirical_lipschitz(&abs_net(), &p).unwrap();
        assert_eq!(r.max, 1.0);
        assert_eq!(r.argmax, 0);
        let single = pairs(&[(&[-1.0], &[1.0])]);
        assert_eq!(empirical_lipschitz(&abs_net(), &single).unwrap().max, 0.0);
    }

    #[test]
    fn pair_set_rejects_degenerate_pairs() {
        let v = vec![(vec![1.0, 2.0], vec![1.0, 2.0])];
        assert!(matches!(PairSet::from_pairs(&v, 1e-9), Err(LipError::DegeneratePair(0))));
        assert!(matches!(PairSet::from_pairs(&[], 1e-9), Err(LipError::EmptyPairSet)));
    }

    #[test]
    fn constant_net_leaves_pairs_unchanged() {
        let net = constant_net(2);
        let mut p = pairs(&[(&[0.1, 0.2], &[0.3, 0.1]), (&[0.9, 0.9], &[0.0, 0.5])]);
        let before = p.clone();
        let sampler = PairSampler::interval(0.0, 1.0, 2, 0.1);
        let stats = adversarial_update(&net, &mut p, 0.5, &sampler, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(stats.zero_subgradients, 2);
    }

    #[test]
    fn ascent_step_matches_numeric_gradient() {
        let net = Network::mlp(&[2, 4, 2], Activation::Sigmoid, Activation::Identity, 3).unwrap();
        let (x, y) = (vec![0.3, -0.2], vec![-0.5, 0.4]);
        let mut p = PairSet::from_pairs(&[(x.clone(), y.clone())], 1e-9).unwrap();
        let tau = 0.3;
        let sampler = PairSampler::interval(-1.0, 1.0, 2, 0.1);
        adversarial_update(&net, &mut p, tau, &sampler, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

        let q = lipschitz_quotient(&net, &x, &y).unwrap();
        let h = 1e-6;
        let mut expect_x = x.clone();
        let mut expect_y = y.clone();
        for c in 0..2 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let gx = (lipschitz_quotient(&net, &xp, &y).unwrap() - lipschitz_quotient(&net, &xm, &y).unwrap()) / (2.0 * h);
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[c] += h;
            ym[c] -= h;
            let gy = (lipschitz_quotient(&net, &x, &yp).unwrap() - lipschitz_quotient(&net, &x, &ym).unwrap()) / (2.0 * h);
            expect_x[c] += tau * q * gx;
            expect_y[c] += tau * q * gy;
        }
        let (nx, ny) = p.pair(0);
        for c in 0..2 {
            assert!((nx[c] - expect_x[c]).abs() < 1e-5);
            assert!((ny[c] - expect_y[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn collapsed_pairs_are_redrawn() {
        // f(x) = x has quotient 1 everywhere and a zero ascent direction.
        let net = linear(vec![1.0], 1, 1);
        let sampler = PairSampler::interval(-4.0, 4.0, 1, 0.1);
        let mut p = pairs(&[(&[0.0], &[1.0])]);
        let s = adversarial_update(&net, &mut p, 1.0, &sampler, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.repaired, 0);
        assert_eq!(p.pair(0), (&[0.0][..], &[1.0][..]));

        let mut tight = p.clone();
        tight.min_separation = 10.0;
        let s = adversarial_update(&net, &mut tight, 1.0, &sampler, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.repaired, 1);
        assert_ne!(tight.pair(0).0, p.pair(0).0);
    }

    #[test]
    fn lip_gradient_only_depends_on_argmax_pair() {
        let net = Network::mlp(&[2, 3, 2], Activation::Sigmoid, Activation::Identity, 5).unwrap();
        let a = pairs(&[(&[0.0, 0.0], &[0.1, 0.0]), (&[1.0, -1.0], &[-1.0, 1.0])]);
        let (ra, ga) = lip_param_gradient(&net, &a).unwrap();
        let other = if ra.argmax == 0 { 1 } else { 0 };
        let mut b = a.clone();
        let (x, y) = b.pair(other);
        let (x, y): (Vec<f64>, Vec<f64>) = (x.iter().map(|v| v * 0.5).collect(), y.iter().map(|v| v * 0.5).collect());
        b.set_pair(other, &x, &y);
        let (rb, gb) = lip_param_gradient(&net, &b).unwrap();
        assert_eq!(ra.argmax, rb.argmax);
        assert_eq!(ga, gb);
    }

    #[test]
    fn sampling_respects_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = PairSampler::interval(-4.0, 4.0, 1, 0.1);
        let (p, stats) = resample_pairs(&s, 100, &mut rng).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(stats.forced, 0);
        for i in 0..p.len() {
            assert!((-4.0..=4.0).contains(&p.pair(i).0[0]));
            assert!(p.separation(i) >= s.min_separation);
        }

        let zero = PairSampler::interval(-4.0, 4.0, 3, 0.0);
        let (p, stats) = resample_pairs(&zero, 5, &mut rng).unwrap();
        assert_eq!(stats.forced, 5);
        assert_eq!(stats.rejected, 5 * zero.max_attempts);
        for i in 0..p.len() {
            assert!(p.separation(i) >= zero.min_separation);
        }
    }

    #[test]
    fn pool_sampling_uses_every_image_once() {
        let pool = Tensor::matrix(6, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.2, 0.3, 0.9, 0.1, 0.0, 0.0]).unwrap();
        let s = PairSampler::pool(pool.clone(), 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, _) = s.sample(6, &mut rng).unwrap();
        assert_eq!(p.left(), &pool);
        assert!(p.right().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(s.sample(7, &mut rng), Err(LipError::PoolTooSmall { .. })));
        let zero = PairSampler::pool(pool, 0.0);
        let (p, _) = zero.sample(6, &mut rng).unwrap();
        assert!(p.right().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn csv_round_trip() {
        let p = pairs(&[(&[0.1, 1.0 / 3.0], &[2.0, -7.5]), (&[1e-300, 0.0], &[4.0, 5.0])]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = PairSet::read_csv(buf.as_slice(), 1e-9).unwrap();
        assert_eq!(back, p);
        assert!(PairSet::read_csv("1,2,3\n".as_bytes(), 1e-9).is_err());
    }
}
