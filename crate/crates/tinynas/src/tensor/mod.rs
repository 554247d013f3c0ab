//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every forward operation into a topologically ordered
//! node list; [`Tape::backward`] replays it in reverse to accumulate exact
//! gradients. Activations are batch-major, channels-last (`[B, H, W, C]`),
//! matching the layout of the deployment runtimes this crate models.
//!
//! One tape is one graph instance: single-threaded, deterministic given the
//! same leaf values. Separate tapes share no state and may live on different
//! threads.

mod backward;
mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use tape::{Tape, TensorId};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element bit-width carried by a shape, used by quantized size accounting.
/// Training tensors are 32-bit reals; deployment accounting uses 8 or 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitWidth {
    B32,
    B8,
    B4,
}

impl BitWidth {
    pub fn bits(self) -> u32 {
        match self {
            BitWidth::B32 => 32,
            BitWidth::B8 => 8,
            BitWidth::B4 => 4,
        }
    }

    /// Byte count for `elems` elements at this width, rounded up to whole bytes.
    pub fn bytes_for(self, elems: u64) -> u64 {
        (elems * self.bits() as u64).div_ceil(8)
    }
}

/// Spatial padding convention for convolution and pooling windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output spatial extent `ceil(in / stride)`; zero padding split
    /// floor-begin / rest-end.
    Same,
    /// No padding; output extent `floor((in - k) / stride) + 1`.
    Valid,
}

/// Dimensioned shape of a tensor plus its element bit-width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub dims: Vec<usize>,
    pub element_bits: BitWidth,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(!dims.is_empty(), "shape dims must be non-empty");
        TensorShape {
            dims,
            element_bits: BitWidth::B32,
        }
    }

    pub fn scalar() -> Self {
        TensorShape::new(vec![1])
    }

    pub fn elem_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.elem_count() == 1
    }

    /// Channel count under the channels-last convention.
    pub fn channels(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }
}

/// A value recorded on the tape: shape, forward values, and (after a
/// backward pass) the accumulated gradient for `requires_grad` tensors.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: TensorShape,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value count {values} does not match shape {dims:?}")]
    ValueCount { values: usize, dims: Vec<usize> },
    #[error("groups {groups} must divide input channels {cin} and output channels {cout}")]
    BadGroups { groups: usize, cin: usize, cout: usize },
    #[error("pooling window {kh}x{kw} larger than input {h}x{w} under valid padding")]
    WindowTooLarge { kh: usize, kw: usize, h: usize, w: usize },
    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange { label: usize, classes: usize, row: usize },
    #[error("active_channels {active} out of range 1..={channels}")]
    ActiveChannelsOutOfRange { active: usize, channels: usize },
    #[error("unsupported fake-quant bit width {0} (expected 4 or 8)")]
    UnsupportedBits(u8),
    #[error("degenerate quantization range: min {min} >= max {max}")]
    DegenerateRange { min: f64, max: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("operation expects {expected}, got shape {got:?}")]
    BadRank { expected: &'static str, got: Vec<usize> },
    #[error("empty input list for {0}")]
    EmptyInputs(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;
