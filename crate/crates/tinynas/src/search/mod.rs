//! Differentiable architecture search: relax the decisions with a
//! temperature-annealed softmax (optionally Gumbel-perturbed), descend on
//! task loss plus normalized hinge penalties over expected resources,
//! discretize by argmax, then finetune the materialized network.
//!
//! One search runs single-threaded and is deterministic given its seed;
//! independent seeds share no state and may run concurrently.

mod engine;

pub use engine::{
    discretize, finetune, materialize_and_finetune, relax_decisions, search_once,
    total_objective, train_search, FinetuneOutcome, SearchRun,
};

use crate::resources::{Budget, BudgetCheck, ResourceReport};
use crate::supernet::ArchSelection;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("lambda_{resource} is set but the budget lacks a usable {resource} limit")]
    MissingBudget { resource: &'static str },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Supernet(#[from] crate::supernet::SupernetError),
    #[error(transparent)]
    Resource(#[from] crate::resources::ResourceError),
    #[error(transparent)]
    Task(#[from] crate::tasks::TaskError),
}

pub type Result<T> = std::result::Result<T, SearchError>;

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    16
}
fn default_lr_start() -> f64 {
    0.1
}
fn default_lr_end() -> f64 {
    0.0004
}
fn default_weight_decay() -> f64 {
    0.001
}
fn default_tau_start() -> f64 {
    5.0
}
fn default_tau_end() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_bits() -> u8 {
    8
}

/// Search hyperparameters. The learning rate decays with a cosine schedule
/// over all steps; the temperature anneals geometrically per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_lr_end")]
    pub lr_end: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_tau_start")]
    pub tau_start: f64,
    #[serde(default = "default_tau_end")]
    pub tau_end: f64,
    #[serde(default)]
    pub lambda_size: f64,
    #[serde(default)]
    pub lambda_mem: f64,
    #[serde(default)]
    pub lambda_ops: f64,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default = "default_true")]
    pub gumbel_noise: bool,
    #[serde(default)]
    pub seed: u64,
    /// Deployment accounting widths behind the resource penalties.
    #[serde(default = "default_bits")]
    pub weight_bits: u8,
    #[serde(default = "default_bits")]
    pub activation_bits: u8,
}

impl Default for SearchConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(SearchError::BadConfig(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.tau_start >= self.tau_end && self.tau_end > 0.0) {
            return Err(SearchError::BadConfig(format!(
                "need tau_start >= tau_end > 0, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        if self.lambda_size < 0.0 || self.lambda_mem < 0.0 || self.lambda_ops < 0.0 {
            return Err(SearchError::BadConfig("penalty weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(SearchError::BadConfig("batch_size must be positive".into()));
        }
        self.budget.validate()?;
        Ok(())
    }
}

fn default_ft_epochs() -> usize {
    40
}
fn default_ft_lr_start() -> f64 {
    0.2
}
fn default_ft_lr_end() -> f64 {
    0.0008
}
fn default_ft_weight_decay() -> f64 {
    0.002
}
fn default_quant_bits() -> Option<u8> {
    Some(8)
}

/// Finetuning hyperparameters for a materialized network; fake
/// quantization is on at 8 bits unless disabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    #[serde(default = "default_ft_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_ft_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_ft_lr_end")]
    pub lr_end: f64,
    #[serde(default = "default_ft_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_quant_bits")]
    pub quant_bits: Option<u8>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

/// One epoch of search telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub tau: f64,
    pub mean_objective: f64,
    pub mean_task_loss: f64,
    pub expected_ops: f64,
    pub expected_param_bytes: f64,
    pub expected_working_bytes: f64,
    /// Whether the current argmax architecture fits the budget (absent
    /// when the budget constrains nothing).
    pub argmax_feasible: Option<bool>,
}

/// The search's output: a selection, its exact resource report and budget
/// check, and the per-epoch history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub selection: ArchSelection,
    pub report: ResourceReport,
    pub budget_check: BudgetCheck,
    pub history: Vec<EpochLog>,
    pub seed: u64,
}

#[cfg(test)]
mod tests;
