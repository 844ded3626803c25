//! Involution-based residual networks for automatic modulation
//! classification, with a synthetic I/Q data pipeline.
//!
//! The crate is self-contained: a small dense tensor type, layers with
//! hand-written backward passes, the Invo-ResNet model and its
//! convolutional counterpart, a labelled-signal generator, and an SGD
//! training and evaluation loop.

pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Checkpoint, Model, ModelConfig, Operator};
pub use rng::Rng;
pub use signal::{DatasetSpec, ModulationFormat, SignalFrame};
pub use tensor::{Real, Shape, Tensor};
pub use train::{evaluate, train, EvalReport, SgdConfig, TrainConfig};
