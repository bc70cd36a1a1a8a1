//! Lipschitz-regularized training of feed-forward networks.
//!
//! The crate trains small dense networks under a penalty on their
//! empirical Lipschitz constant. The constant is estimated on a set of input
//! pairs that is pushed toward high difference quotients by gradient ascent
//! while the parameters descend, giving a stochastic min-max scheme. The
//! penalty weight is steered by comparing training accuracy with a target.
//!
//! Modules, bottom up:
//! - [`autodiff`]: tensors and a reverse-mode tape.
//! - [`network`]: dense networks, gradients, layerwise bound, checkpoints.
//! - [`lipreg`]: difference quotients, pair sets and the adversarial ascent.
//! - [`training`]: momentum SGD, the regularized training loops.
//! - [`robustness`]: L2 PGD, Gaussian noise and evaluation reports.
//! - [`data`]: IDX parsing, the synthetic regression set, splits.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod lipreg;
pub mod network;
pub mod robustness;
pub mod training;

pub use autodiff::{Tape, Tensor, Var};
pub use data::{Dataset, SplitSpec, Task};
pub use lipreg::{PairSampler, PairSet, QuotientReport};
pub use network::{Activation, Checkpoint, CheckpointMeta, Gradient, Layer, LossKind, Network};
pub use robustness::{AttackConfig, EvalReport, StepKind};
pub use training::{Mode, TrainConfig, TrainHistory, TrainOutcome};
