//! Differentiable architecture search under microcontroller resource limits.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: a small reverse-mode autodiff engine over dense tensors,
//!   covering the operators the search and its penalties need.
//! - [`supernet`]: declarative backbone configs, supernets with channel-width
//!   and depth decisions, exhaustive enumeration, and materialization of a
//!   chosen architecture into a standalone network.
//! - [`resources`]: exact and decision-weighted accounting of op count,
//!   parameter bytes (flash) and peak working memory (SRAM).
//! - [`hw`]: calibration of the linear ops-to-latency model and the
//!   constant-power energy model from measurement CSVs.
//! - [`search`]: the differentiable search itself — relax, penalize,
//!   anneal, discretize, finetune.
//! - [`tasks`]: deterministic synthetic classification and anomaly-detection
//!   tasks plus accuracy / anomaly-score / AUC metrics.
//! - [`fixtures`]: bundled reference architectures, device profiles and
//!   calibration data so everything runs offline.

pub mod fixtures;
pub mod hw;
pub mod resources;
pub mod search;
pub mod supernet;
pub mod tasks;
pub mod tensor;

// modules under construction


pub use tensor::{BitWidth, Padding, Tape, TensorId, TensorShape};
