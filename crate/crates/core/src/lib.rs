//! Two-stage architectural fine-tuning.
//!
//! Stage one searches a weight-sharing supernet, compiled from a base
//! architecture, a mutation rule and a search scope, with an LSTM controller
//! trained by REINFORCE; the search stops once the sampled action set is
//! stable. Stage two fine-tunes the discovered network with the layers
//! outside the scope loaded from a source checkpoint and frozen.

pub mod archspace;
pub mod cli;
pub mod controller;
pub mod earlystop;
pub mod error;
pub mod numkernel;
pub mod pipeline;
pub mod supernet;

pub use error::{Error, Result};
