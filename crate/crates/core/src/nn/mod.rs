//! Minimal differentiable function approximators: dense-skip MLPs, a
//! diagonal Gaussian head, an adaptive-moment optimizer and a batched
//! reverse-mode tape.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod kernels;
pub mod matrix;
pub mod net;
pub mod tape;

pub use adam::{clip_global_norm, global_norm, Adam};
pub use checkpoint::{Checkpoint, NamedTensor, OptimizerState};
pub use gaussian::GaussianHead;
pub use matrix::Matrix;
pub use net::{Activation, DenseSkipNet};
pub use tape::{Gradients, Tape, Var};
