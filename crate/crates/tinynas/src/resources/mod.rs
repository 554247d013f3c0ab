//! Resource accounting: op count, parameter bytes (flash) and peak working
//! memory (SRAM) for discrete architectures and, decision-weighted and
//! differentiable, for supernets.
//!
//! Conventions:
//! - One multiply-accumulate counts as two ops. Pooling, element-wise adds
//!   and activation functions count zero ops (they are MAC-free and
//!   negligible against the convolutions).
//! - Biases are stored at 32-bit accumulator width regardless of the weight
//!   bit-width.
//! - A node's working memory is the bytes of its simultaneously-live input
//!   and output tensors, nothing else; the model-wide peak is the maximum
//!   over nodes. Deployment memory planners may do better, so this is a
//!   per-node upper bound.

mod expected;

pub use expected::{expected_resources, ExpectedResources};

use crate::supernet::{
    enumerate_architectures, ArchDoc, ArchSelection, DecisionKind, ResolvedKind, ResolvedOp,
    Supernet, SupernetError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KIB: u64 = 1024;
/// Interpreter working-state overhead subtracted from device SRAM.
pub const DEFAULT_INTERPRETER_SRAM_OVERHEAD: u64 = 4 * KIB;
/// Interpreter code size subtracted from device flash.
pub const DEFAULT_INTERPRETER_FLASH_OVERHEAD: u64 = 37 * KIB;
/// Runtime persistent buffers (quantization params, tensor/op structs).
/// The runtime scales this with the model; a constant is an approximation.
pub const DEFAULT_PERSISTENT_BUFFER_BYTES: u64 = 34 * KIB;

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("unsupported bit-width {0} for deployment accounting (expected 8 or 4)")]
    UnsupportedBits(u8),
    #[error("decision {decision} weights sum to {sum}, not 1 (tolerance 1e-6)")]
    ZNotNormalized { decision: String, sum: f64 },
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error("tensor error: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("budget field {0} must be positive when present")]
    NonPositiveBudget(&'static str),
}

pub type Result<T> = std::result::Result<T, ResourceError>;

fn check_bits(bits: u8) -> Result<()> {
    if bits == 8 || bits == 4 {
        Ok(())
    } else {
        Err(ResourceError::UnsupportedBits(bits))
    }
}

// ── Per-layer primitives ─────────────────────────────────────────────

/// Parameter counts of a resolved primitive: `(weights, biases)`.
pub fn layer_params(op: &ResolvedOp) -> (u64, u64) {
    match &op.kind {
        ResolvedKind::Conv { kh, kw, depthwise, .. } => {
            let cin = op.in_shapes[0][2] as u64;
            let cout = op.out_shape[2] as u64;
            let k = (*kh * *kw) as u64;
            if *depthwise {
                (k * cout, cout)
            } else {
                (k * cin * cout, cout)
            }
        }
        ResolvedKind::Dense => {
            let features = (op.in_shapes[0][0] * op.in_shapes[0][1] * op.in_shapes[0][2]) as u64;
            let classes = op.out_shape[2] as u64;
            (features * classes, classes)
        }
        _ => (0, 0),
    }
}

/// Op count of one primitive (MAC = 2 ops; pooling/add/activation = 0).
pub fn layer_ops(op: &ResolvedOp) -> u64 {
    match &op.kind {
        ResolvedKind::Conv { kh, kw, depthwise, .. } => {
            let out = &op.out_shape;
            let cin = op.in_shapes[0][2] as u64;
            let macs_per_out = (*kh * *kw) as u64 * if *depthwise { 1 } else { cin };
            2 * (out[0] * out[1] * out[2]) as u64 * macs_per_out
        }
        ResolvedKind::Dense => {
            let features = (op.in_shapes[0][0] * op.in_shapes[0][1] * op.in_shapes[0][2]) as u64;
            2 * features * op.out_shape[2] as u64
        }
        _ => 0,
    }
}

/// Flash bytes of one primitive's parameters at the given weight width.
pub fn layer_param_bytes(op: &ResolvedOp, weight_bits: u8) -> Result<u64> {
    check_bits(weight_bits)?;
    let (weights, biases) = layer_params(op);
    Ok((weights * weight_bits as u64).div_ceil(8) + biases * 4)
}

/// Working-memory bytes of one node: live inputs plus outputs at the given
/// activation width.
pub fn node_working_bytes(op: &ResolvedOp, activation_bits: u8) -> Result<u64> {
    check_bits(activation_bits)?;
    let in_elems: u64 = op
        .in_shapes
        .iter()
        .map(|s| (s[0] * s[1] * s[2]) as u64)
        .sum();
    let out_elems = (op.out_shape[0] * op.out_shape[1] * op.out_shape[2]) as u64;
    Ok(((in_elems + out_elems) * activation_bits as u64).div_ceil(8))
}

// ── Reports ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeBreakdown {
    pub label: String,
    pub ops: u64,
    pub param_count: u64,
    pub param_bytes: u64,
    pub input_elems: Vec<u64>,
    pub output_elems: u64,
    pub working_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceReport {
    pub total_ops: u64,
    pub param_count: u64,
    pub param_bytes: u64,
    pub peak_working_bytes: u64,
    pub peak_node_id: String,
    pub weight_bits: u8,
    pub activation_bits: u8,
    pub nodes: Vec<NodeBreakdown>,
}

/// Exact resource report for an architecture document.
pub fn doc_resources(doc: &ArchDoc, weight_bits: u8, activation_bits: u8) -> Result<ResourceReport> {
    check_bits(weight_bits)?;
    check_bits(activation_bits)?;
    let ops = doc.expand()?;
    let mut nodes = Vec::with_capacity(ops.len());
    let mut total_ops = 0u64;
    let mut param_count = 0u64;
    let mut param_bytes = 0u64;
    let mut peak = (0u64, String::from("none"));
    for op in &ops {
        let (weights, biases) = layer_params(op);
        let bytes = layer_param_bytes(op, weight_bits)?;
        let node_ops = layer_ops(op);
        let working = node_working_bytes(op, activation_bits)?;
        if working > peak.0 {
            peak = (working, op.label.clone());
        }
        total_ops += node_ops;
        param_count += weights + biases;
        param_bytes += bytes;
        nodes.push(NodeBreakdown {
            label: op.label.clone(),
            ops: node_ops,
            param_count: weights + biases,
            param_bytes: bytes,
            input_elems: op
                .in_shapes
                .iter()
                .map(|s| (s[0] * s[1] * s[2]) as u64)
                .collect(),
            output_elems: (op.out_shape[0] * op.out_shape[1] * op.out_shape[2]) as u64,
            working_bytes: working,
        });
    }
    Ok(ResourceReport {
        total_ops,
        param_count,
        param_bytes,
        peak_working_bytes: peak.0,
        peak_node_id: peak.1,
        weight_bits,
        activation_bits,
        nodes,
    })
}

/// Exact report for one selection of a supernet.
pub fn discrete_resources(
    supernet: &Supernet,
    selection: &ArchSelection,
    weight_bits: u8,
    activation_bits: u8,
) -> Result<ResourceReport> {
    let doc = supernet.to_arch_doc(selection)?;
    doc_resources(&doc, weight_bits, activation_bits)
}

// ── Budgets ──────────────────────────────────────────────────────────

fn default_sram_overhead() -> u64 {
    DEFAULT_INTERPRETER_SRAM_OVERHEAD
}
fn default_flash_overhead() -> u64 {
    DEFAULT_INTERPRETER_FLASH_OVERHEAD
}
fn default_persistent() -> u64 {
    DEFAULT_PERSISTENT_BUFFER_BYTES
}

/// Device limits with runtime overheads. The effective SRAM budget for
/// activations is `sram_bytes - interpreter_sram_overhead -
/// persistent_buffer_bytes`; the effective flash budget for weights is
/// `flash_bytes - interpreter_flash_overhead - metadata_flash_overhead`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sram_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ops: Option<u64>,
    #[serde(default = "default_sram_overhead")]
    pub interpreter_sram_overhead: u64,
    #[serde(default = "default_flash_overhead")]
    pub interpreter_flash_overhead: u64,
    #[serde(default = "default_persistent")]
    pub persistent_buffer_bytes: u64,
    /// Serialized-graph flash overhead beyond raw parameters; zero keeps
    /// comparisons model-only.
    #[serde(default)]
    pub metadata_flash_overhead: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            flash_bytes: None,
            sram_bytes: None,
            max_ops: None,
            interpreter_sram_overhead: DEFAULT_INTERPRETER_SRAM_OVERHEAD,
            interpreter_flash_overhead: DEFAULT_INTERPRETER_FLASH_OVERHEAD,
            persistent_buffer_bytes: DEFAULT_PERSISTENT_BUFFER_BYTES,
            metadata_flash_overhead: 0,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.flash_bytes, "flash_bytes"),
            (self.sram_bytes, "sram_bytes"),
            (self.max_ops, "max_ops"),
        ] {
            if v == Some(0) {
                return Err(ResourceError::NonPositiveBudget(name));
            }
        }
        Ok(())
    }

    /// SRAM available to activations after runtime overheads (may be
    /// negative for tiny devices).
    pub fn effective_sram(&self) -> Option<i64> {
        let clamp = |v: u64| v.min(i64::MAX as u64) as i64;
        self.sram_bytes.map(|b| {
            clamp(b) - clamp(self.interpreter_sram_overhead) - clamp(self.persistent_buffer_bytes)
        })
    }

    /// Flash available to parameters after runtime overheads.
    pub fn effective_flash(&self) -> Option<i64> {
        let clamp = |v: u64| v.min(i64::MAX as u64) as i64;
        self.flash_bytes.map(|b| {
            clamp(b) - clamp(self.interpreter_flash_overhead) - clamp(self.metadata_flash_overhead)
        })
    }
}

/// Signed margins per constraint; a report passes when no margin is
/// negative (sitting exactly at a limit passes with zero margin).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetCheck {
    pub passed: bool,
    pub flash_margin: Option<i64>,
    pub sram_margin: Option<i64>,
    pub ops_margin: Option<i64>,
}

impl BudgetCheck {
    /// Name of the worst violated constraint, if any.
    pub fn violated(&self) -> Option<&'static str> {
        [
            ("flash", self.flash_margin),
            ("sram", self.sram_margin),
            ("ops", self.ops_margin),
        ]
        .into_iter()
        .filter_map(|(name, m)| m.filter(|&m| m < 0).map(|m| (name, m)))
        .min_by_key(|&(_, m)| m)
        .map(|(name, _)| name)
    }
}

pub fn check_budget(report: &ResourceReport, budget: &Budget) -> BudgetCheck {
    let clamp = |v: u64| v.min(i64::MAX as u64) as i64;
    let flash_margin = budget
        .effective_flash()
        .map(|b| b - clamp(report.param_bytes));
    let sram_margin = budget
        .effective_sram()
        .map(|b| b - clamp(report.peak_working_bytes));
    let ops_margin = budget.max_ops.map(|b| clamp(b) - clamp(report.total_ops));
    let passed = [flash_margin, sram_margin, ops_margin]
        .into_iter()
        .flatten()
        .all(|m| m >= 0);
    BudgetCheck { passed, flash_margin, sram_margin, ops_margin }
}

// ── Per-option costs ─────────────────────────────────────────────────

/// Cost of one option of a decision, with every other decision at its
/// largest/kept option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionCost {
    pub param_count: u64,
    pub ops: u64,
    pub output_elems: u64,
}

/// Selection taking the widest option of every width decision and keeping
/// every optional block.
pub fn max_selection(supernet: &Supernet) -> ArchSelection {
    ArchSelection::new(
        supernet
            .decisions
            .iter()
            .map(|d| (d.id.clone(), d.num_options() - 1))
            .collect(),
    )
}

/// Selection taking the narrowest width everywhere and skipping every
/// optional block.
pub fn min_selection(supernet: &Supernet) -> ArchSelection {
    ArchSelection::new(
        supernet
            .decisions
            .iter()
            .map(|d| (d.id.clone(), 0))
            .collect(),
    )
}

/// Per-option `(params, ops, output elements)` of the layer owning a
/// decision, computed with all other decisions at their maximum.
pub fn decision_option_costs(supernet: &Supernet, decision: usize) -> Result<Vec<OptionCost>> {
    let d = &supernet.decisions[decision];
    let owner = supernet
        .layers
        .iter()
        .position(|p| {
            p.depth_decision == Some(decision)
                || p.channels == Some(crate::supernet::ChannelSpecPlan::Decision(decision))
                || p.expansion == Some(crate::supernet::ChannelSpecPlan::Decision(decision))
        })
        .ok_or_else(|| SupernetError::Doc(format!("decision {} owns no layer", d.id)))?;

    let mut costs = Vec::with_capacity(d.num_options());
    for k in 0..d.num_options() {
        let mut sel = max_selection(supernet);
        sel.choices.insert(d.id.clone(), k);
        let doc = supernet.to_arch_doc(&sel)?;
        // locate the owner layer in the (possibly shorter) document by
        // counting retained layers before it
        let retained_before = supernet.layers[..owner]
            .iter()
            .filter(|p| {
                !p.depth_decision
                    .map(|dd| sel.option_index(&supernet.decisions[dd].id) == 0 && p.stride == 1)
                    .unwrap_or(false)
            })
            .count();
        let plan = &supernet.layers[owner];
        let dropped_entirely = matches!(&d.kind, DecisionKind::Depth)
            && k == 0
            && plan.stride == 1;
        if dropped_entirely {
            let input_node = &supernet.nodes[supernet.nodes[plan.node_ids[0]].inputs[0]];
            let c = input_node.out_channels.max_channels(&supernet.decisions) as u64;
            costs.push(OptionCost {
                param_count: 0,
                ops: 0,
                output_elems: (input_node.out_hw.0 * input_node.out_hw.1) as u64 * c,
            });
            continue;
        }
        let expanded = doc.expand()?;
        let mut params = 0u64;
        let mut ops = 0u64;
        let mut out_elems = 0u64;
        for op in expanded.iter().filter(|o| o.layer_index == retained_before) {
            let (w, b) = layer_params(op);
            params += w + b;
            ops += layer_ops(op);
            out_elems = (op.out_shape[0] * op.out_shape[1] * op.out_shape[2]) as u64;
        }
        costs.push(OptionCost { param_count: params, ops, output_elems: out_elems });
    }
    Ok(costs)
}

/// True when at least one enumerable architecture fits the budget; also
/// returns the name of the binding constraint when none does.
pub fn any_feasible_selection(
    supernet: &Supernet,
    budget: &Budget,
    weight_bits: u8,
    activation_bits: u8,
    cap: Option<usize>,
) -> Result<std::result::Result<ArchSelection, String>> {
    let mut min_ops = u64::MAX;
    let mut min_flash = u64::MAX;
    let mut min_sram = u64::MAX;
    for sel in enumerate_architectures(supernet, cap)? {
        let report = discrete_resources(supernet, &sel, weight_bits, activation_bits)?;
        let check = check_budget(&report, budget);
        if check.passed {
            return Ok(Ok(sel));
        }
        min_ops = min_ops.min(report.total_ops);
        min_flash = min_flash.min(report.param_bytes);
        min_sram = min_sram.min(report.peak_working_bytes);
    }
    let mut reasons = Vec::new();
    if let Some(b) = budget.max_ops {
        if min_ops > b {
            reasons.push(format!("ops: minimum achievable {min_ops} exceeds budget {b}"));
        }
    }
    if let Some(b) = budget.effective_flash() {
        if min_flash as i64 > b {
            reasons.push(format!(
                "flash: minimum achievable {min_flash} B exceeds effective budget {b} B"
            ));
        }
    }
    if let Some(b) = budget.effective_sram() {
        if min_sram as i64 > b {
            reasons.push(format!(
                "sram: minimum achievable peak {min_sram} B exceeds effective budget {b} B"
            ));
        }
    }
    if reasons.is_empty() {
        reasons.push("no single architecture satisfies all constraints jointly".into());
    }
    Ok(Err(reasons.join("; ")))
}

#[cfg(test)]
mod tests;
