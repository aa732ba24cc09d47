//! Dense CPU kernel: arrays, reverse-mode tape, convolution, optimizers and
//! seeded random streams.

mod array;
mod conv;
mod lstm;
mod optim;
mod param;
mod rng;
mod tape;

pub use array::{fnv1a64, NdArray};
pub use conv::{conv2d, KERNEL_SIZES};
pub use lstm::{lstm_cell, LstmNodes, LstmWeights};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::{splitmix64, Rng};
pub use tape::{softmax_rows, BatchStats, Gradients, NodeId, Tape, NORM_EPS};

/// Fan-in scaled uniform initializer: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> NdArray {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.uniform_range(-bound, bound)).collect())
}
