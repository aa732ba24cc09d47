//! Weight-sharing supernet, standalone networks and checkpoints.

mod checkpoint;
mod exec;
mod layout;
mod network;
#[allow(clippy::module_inception)]
mod supernet;

pub use checkpoint::{arch_hash, Checkpoint};
pub use exec::{argmax, ConvUnit, Entry, Forward, LabeledSet, Mode, NormRef, ResolvedBlock, ResolvedNet, EVAL_CHUNK, RUNNING_MOMENTUM};
pub use layout::{outside_scope, stage_of, unit_path, weight_path};
pub use network::Network;
pub use supernet::{Init, SubnetView, Supernet};
