//! Minimal trainable network core with hand-written backward passes.
//!
//! Everything is generic over the element type: training runs at `f32` (which
//! is also the checkpoint payload precision, so round-trips are bitwise),
//! while the finite-difference gradient suite instantiates the same code at
//! `f64`.

pub mod checkpoint;
pub mod encoder;
pub mod layers;
pub mod model;
pub mod optim;
pub mod projector;
pub mod tensor;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use encoder::{Encoder, EncoderConfig};
pub use model::{ModelConfig, ModelState, ViewModel};
pub use optim::{lr_at, sgd_update, OptimizerConfig};
pub use projector::{Projector, ProjectorConfig};
pub use tensor::Tensor;

/// Element type of tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Copy
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Forward-pass mode: training uses batch statistics, evaluation uses the
/// frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
