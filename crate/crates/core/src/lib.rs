//! LEDNet: a lightweight encoder-decoder network for real-time semantic
//! segmentation, together with the pieces needed to train and inspect it on
//! a CPU.
//!
//! * [`tensor`] and [`autograd`]: dense NCHW tensors and a reverse-mode tape.
//! * [`ops`]: the differentiable operations the network is built from.
//! * [`gradcheck`]: central finite-difference checks for every op.
//! * [`model`]: declarative network description, builders, and cost accounting.
//! * [`train`]: SGD with a poly schedule, the training loop, and metrics.
//! * [`data`]: synthetic scenes, PPM/PGM I/O, and label colorization.
//! * [`checkpoint`]: the binary parameter archive.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use labels::{LabelMap, IGNORE_INDEX};
pub use tensor::{DType, Fill, Float, Tensor};
