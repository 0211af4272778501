//! Minimal reverse-mode automatic differentiation over dense real
//! tensors, plus the optimizer machinery used by the training harness.
//!
//! Double precision throughout. A graph instance ([`Tape`]) is confined
//! to one thread during forward/backward.

mod checkpoint;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{read_tensors, write_tensors};
pub use optim::{clip_global_norm, Adam, PlateauScheduler};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
