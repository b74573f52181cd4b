//! Tensor and reverse-mode autodiff substrate.
//!
//! Everything runs in `f64` on the CPU. A [`Tape`] records one computation
//! graph; parameters live in a [`ParameterStore`] and are borrowed by the
//! tape for the duration of a forward/backward pass.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NumericsError, Result};
pub use gradcheck::grad_check;
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParameterStore};
pub use rng::SeedStream;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
