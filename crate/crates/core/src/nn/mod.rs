//! Minimal differentiable-computation layer.
//!
//! Values live on a [`Tape`] that records every operation of a forward pass;
//! [`Tape::backward`] replays it in reverse. Learnable weights are held in a
//! [`ParamStore`] and bound onto the tape per forward pass, so the same store
//! can take part in several graphs (online and frozen critics, for example).

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod transformer;

pub use checkpoint::{apply_entries, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointEntry};
pub use gradcheck::{finite_difference_check, GradCheckOptions};
pub use layers::{Init, LayerNorm, Linear, Mlp, MlpSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{Gradients, Tape, Var};
pub use transformer::{Transformer, TransformerSpec};
pub(crate) use transformer::dropout_mask;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use thiserror::Error;

/// Floating-point element type of every tensor: `f64` for verification,
/// `f32` for training.
pub trait Real:
    Float
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable constant")
    }

    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sequence of {got} tokens exceeds capacity {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::Dimension { what, expected, got })
    }
}
