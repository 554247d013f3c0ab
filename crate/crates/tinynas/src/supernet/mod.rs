//! Supernet intermediate representation: a backbone with K-way decisions.
//!
//! A parsed backbone expands eagerly into *primitive* nodes (convolutions,
//! pools, FC, adds) so shape and cost accounting have a single source of
//! truth. Composite blocks expand as: depthwise-separable block = depthwise
//! conv then pointwise conv; inverted bottleneck = 1x1 expansion, depthwise,
//! 1x1 projection.
//!
//! Two decision kinds exist: channel width (masking a shared max-width
//! weight tensor) and depth (a skip branch in parallel with a block, the
//! skip being average pooling when the block downsamples).
//!
//! Supernets and selections are immutable once constructed.

mod arch_doc;
mod build;
mod config;
mod enumerate;
mod materialize;

pub use arch_doc::{ArchDoc, ArchLayer, ResolvedKind, ResolvedOp};
pub use build::{ParamTensor, SupernetForward, SupernetModel};
pub use config::{build_supernet, parse_backbone_config, BackboneConfig};
pub use enumerate::{enumerate_architectures, ArchEnumeration, DEFAULT_ENUMERATION_CAP};
pub use materialize::{materialize, DiscreteNet, DiscreteOp, QuantConfig, QuantState};

use crate::tensor::Padding;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// A K-way architecture decision with learnable selection logits.
///
/// `logits` and `temperature` are the initial values the search starts
/// from; the search engine owns the evolving copies.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionNode {
    pub id: String,
    pub kind: DecisionKind,
    pub logits: Vec<f64>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionKind {
    /// Channel-width options, strictly increasing.
    Width { options: Vec<u32> },
    /// Two options: index 0 skips the block, index 1 keeps it.
    Depth,
}

impl DecisionNode {
    pub fn num_options(&self) -> usize {
        match &self.kind {
            DecisionKind::Width { options } => options.len(),
            DecisionKind::Depth => 2,
        }
    }

    pub fn max_width(&self) -> Option<u32> {
        match &self.kind {
            DecisionKind::Width { options } => options.iter().max().copied(),
            DecisionKind::Depth => None,
        }
    }
}

/// Where a tensor's channel count comes from, before a selection is made.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSrc {
    Fixed(u32),
    /// Width decision by index into [`Supernet::decisions`].
    Decision(usize),
    /// Output of a depth decision: input channels if skipped, block
    /// channels if kept. Maximum widths of both branches always agree.
    DepthMix {
        decision: usize,
        skip: Box<ChannelSrc>,
        block: Box<ChannelSrc>,
    },
}

impl ChannelSrc {
    /// Largest channel count this source can resolve to (the buffer width
    /// the supernet allocates).
    pub fn max_channels(&self, decisions: &[DecisionNode]) -> u32 {
        match self {
            ChannelSrc::Fixed(c) => *c,
            ChannelSrc::Decision(d) => decisions[*d].max_width().expect("width decision"),
            ChannelSrc::DepthMix { skip, block, .. } => skip
                .max_channels(decisions)
                .max(block.max_channels(decisions)),
        }
    }

    /// Channel count under a total selection.
    pub fn resolve(&self, decisions: &[DecisionNode], selection: &ArchSelection) -> u32 {
        match self {
            ChannelSrc::Fixed(c) => *c,
            ChannelSrc::Decision(d) => match &decisions[*d].kind {
                DecisionKind::Width { options } => {
                    options[selection.option_index(&decisions[*d].id)]
                }
                DecisionKind::Depth => unreachable!("depth decision as width source"),
            },
            ChannelSrc::DepthMix { decision, skip, block } => {
                if selection.option_index(&decisions[*decision].id) == 0 {
                    skip.resolve(decisions, selection)
                } else {
                    block.resolve(decisions, selection)
                }
            }
        }
    }
}

/// Primitive operation of an IR node.
#[derive(Debug, Clone, PartialEq)]
pub enum IrOp {
    Input,
    Conv {
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
        depthwise: bool,
    },
    AvgPool {
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    },
    GlobalAvgPool,
    AddSkip,
    Dense,
    /// Search-time combination of a depth decision's two branches; not a
    /// deployment node and excluded from resource accounting.
    DepthMerge { decision: usize },
}

#[derive(Debug, Clone)]
pub struct IrNode {
    pub op: IrOp,
    /// Producing node indices, in input order.
    pub inputs: Vec<usize>,
    pub out_channels: ChannelSrc,
    pub out_hw: (usize, usize),
    /// `(decision, branch)` when this node exists only on one branch of a
    /// depth decision (branch 0 = skip pooling, 1 = block body).
    pub depth_scope: Option<(usize, usize)>,
    pub label: String,
}

/// Composite-level plan retained for materialization and document export.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub kind: LayerPlanKind,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
    pub channels: Option<ChannelSpecPlan>,
    pub expansion: Option<ChannelSpecPlan>,
    pub depth_decision: Option<usize>,
    /// Primitive IR nodes of the block body, in execution order.
    pub node_ids: Vec<usize>,
    pub skip_pool_node: Option<usize>,
    pub merge_node: Option<usize>,
    /// Source layer index for `AddSkip`.
    pub skip_from: Option<usize>,
    /// IR node producing this layer's output.
    pub out_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPlanKind {
    Conv2D,
    DepthwiseSeparable,
    InvertedBottleneck,
    AvgPool,
    GlobalAvgPool,
    AddSkip,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpecPlan {
    Fixed(u32),
    Decision(usize),
}

impl ChannelSpecPlan {
    pub fn as_src(&self) -> ChannelSrc {
        match self {
            ChannelSpecPlan::Fixed(c) => ChannelSrc::Fixed(*c),
            ChannelSpecPlan::Decision(d) => ChannelSrc::Decision(*d),
        }
    }
}

/// A parsed backbone: decision list plus the expanded primitive graph.
#[derive(Debug, Clone)]
pub struct Supernet {
    pub input_shape: [usize; 3],
    pub channel_grid: u32,
    pub num_classes: usize,
    pub decisions: Vec<DecisionNode>,
    pub nodes: Vec<IrNode>,
    pub layers: Vec<LayerPlan>,
}

impl Supernet {
    /// Total number of discrete architectures, if it fits in a `u64`.
    pub fn architecture_count(&self) -> Option<u64> {
        self.decisions
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(d.num_options() as u64))
    }

    pub fn decision_index(&self, id: &str) -> Option<usize> {
        self.decisions.iter().position(|d| d.id == id)
    }
}

/// One-hot assignment of every decision: the search's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchSelection {
    pub choices: BTreeMap<String, usize>,
}

impl ArchSelection {
    pub fn new(choices: BTreeMap<String, usize>) -> Self {
        ArchSelection { choices }
    }

    pub fn empty() -> Self {
        ArchSelection { choices: BTreeMap::new() }
    }

    pub fn option_index(&self, decision_id: &str) -> usize {
        self.choices[decision_id]
    }

    /// Every decision assigned an in-range option.
    pub fn validate(&self, supernet: &Supernet) -> Result<()> {
        for d in &supernet.decisions {
            match self.choices.get(&d.id) {
                None => return Err(SupernetError::PartialSelection { missing: d.id.clone() }),
                Some(&k) if k >= d.num_options() => {
                    return Err(SupernetError::OptionOutOfRange {
                        decision: d.id.clone(),
                        index: k,
                        options: d.num_options(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SupernetError {
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("layer {layer}: channel value {value} violates the multiple-of-{grid} grid")]
    GridViolation { layer: usize, value: u32, grid: u32 },
    #[error("layer {layer}: channel options must be strictly increasing and positive, got {options:?}")]
    BadOptions { layer: usize, options: Vec<u32> },
    #[error("layer {layer}: {reason}")]
    BadLayer { layer: usize, reason: String },
    #[error("layer {layer}: optional depth requires equal input/output maximum channels (got {inp} vs {out})")]
    DepthChannelMismatch { layer: usize, inp: u32, out: u32 },
    #[error("layer {layer}: skip reference {from} is not an earlier layer (graph must stay acyclic)")]
    BadSkipRef { layer: usize, from: usize },
    #[error("layer {layer}: unresolvable shape: {reason}")]
    UnresolvableShape { layer: usize, reason: String },
    #[error("selection is missing decision {missing}")]
    PartialSelection { missing: String },
    #[error("selection index {index} out of range for decision {decision} with {options} options")]
    OptionOutOfRange { decision: String, index: usize, options: usize },
    #[error("search space has {count} architectures, exceeding the cap of {cap}")]
    EnumerationCapExceeded { count: u64, cap: usize },
    #[error("tensor error in {context}: {source}")]
    Tensor {
        context: String,
        #[source]
        source: crate::tensor::TensorError,
    },
    #[error("architecture document: {0}")]
    Doc(String),
}

pub type Result<T> = std::result::Result<T, SupernetError>;

#[cfg(test)]
pub(crate) mod tests;
