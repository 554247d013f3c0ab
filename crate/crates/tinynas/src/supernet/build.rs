//! Executable supernet: shared max-width parameters plus a tape-forward
//! that realizes every decision as masked combinations.
//!
//! A width decision evaluates its block once at maximum width and combines
//! K channel masks of the result under the decision weights — never K
//! weight copies. Per-channel ops (depthwise convolutions) re-apply the
//! incoming channel gate afterwards so that, under one-hot weights, dead
//! channels stay exactly zero and the forward is bit-equal to the
//! materialized sub-network.

use super::*;
use crate::tensor::{Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn elem_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Ids returned by one forward build.
pub struct SupernetForward {
    pub logits: TensorId,
    /// One leaf per entry of [`SupernetModel::params`], same order.
    pub param_leaves: Vec<TensorId>,
    /// Per convolution node: its output before the affine, for
    /// normalization statistics.
    pub pre_affine: Vec<(usize, TensorId)>,
}

/// Conv parameters sit at `base..base+4` (weight, bias, scale, shift);
/// the classifier at `base..base+2` (weight, bias).
#[derive(Debug, Clone)]
pub struct SupernetModel {
    pub supernet: Supernet,
    pub params: Vec<ParamTensor>,
    node_base: HashMap<usize, usize>,
}

impl SupernetModel {
    /// Allocate and initialize max-width parameters for every primitive op.
    pub fn init(supernet: Supernet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut node_base = HashMap::new();
        for (ni, node) in supernet.nodes.iter().enumerate() {
            match &node.op {
                IrOp::Conv { kh, kw, depthwise, .. } => {
                    let cin_max =
                        supernet.nodes[node.inputs[0]].out_channels.max_channels(&supernet.decisions) as usize;
                    let cout_max = node.out_channels.max_channels(&supernet.decisions) as usize;
                    let cin_g = if *depthwise { 1 } else { cin_max };
                    node_base.insert(ni, params.len());
                    params.push(glorot(
                        &mut rng,
                        format!("{}.weight", node.label),
                        vec![*kh, *kw, cin_g, cout_max],
                        kh * kw * cin_g,
                        cout_max,
                    ));
                    params.push(fill(format!("{}.bias", node.label), vec![cout_max], 0.0));
                    params.push(fill(format!("{}.scale", node.label), vec![cout_max], 1.0));
                    params.push(fill(format!("{}.shift", node.label), vec![cout_max], 0.0));
                }
                IrOp::Dense => {
                    let features = dense_in_features(&supernet, ni);
                    let classes = supernet.num_classes;
                    node_base.insert(ni, params.len());
                    params.push(glorot(
                        &mut rng,
                        format!("{}.weight", node.label),
                        vec![features, classes],
                        features,
                        classes,
                    ));
                    params.push(fill(format!("{}.bias", node.label), vec![classes], 0.0));
                }
                _ => {}
            }
        }
        SupernetModel { supernet, params, node_base }
    }

    pub fn param_base(&self, node_id: usize) -> Option<usize> {
        self.node_base.get(&node_id).copied()
    }

    /// Build the forward graph for one batch. `z[d]` is the weight vector of
    /// decision `d` (rows sum to one; one-hot at discretization).
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &[f64],
        batch: usize,
        z: &[TensorId],
    ) -> Result<SupernetForward> {
        assert_eq!(z.len(), self.supernet.decisions.len(), "one z row per decision");
        let [h, w, c] = self.supernet.input_shape;
        let x = tape
            .leaf(input.to_vec(), vec![batch, h, w, c], false)
            .map_err(|e| tensor_err("input", e))?;
        let param_leaves: Vec<TensorId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.values.clone(), p.dims.clone(), true))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| tensor_err("params", e))?;

        let mut cur = Cursor { t: x, gate: None };
        let mut layer_outs: Vec<Cursor> = Vec::new();
        let mut logits = None;
        let mut pre_affine = Vec::new();

        for plan in &self.supernet.layers {
            cur = match plan.kind {
                LayerPlanKind::Conv2D
                | LayerPlanKind::DepthwiseSeparable
                | LayerPlanKind::InvertedBottleneck => {
                    let block_in = cur.clone();
                    let body = self.block_forward(
                        tape,
                        plan,
                        &block_in,
                        z,
                        &param_leaves,
                        &mut pre_affine,
                    )?;
                    if let Some(d) = plan.depth_decision {
                        self.depth_merge(tape, plan, d, &block_in, &body, z)?
                    } else {
                        body
                    }
                }
                LayerPlanKind::AvgPool => {
                    let t = tape
                        .avg_pool2d(cur.t, plan.kernel, plan.stride, plan.padding)
                        .map_err(|e| tensor_err("avg_pool", e))?;
                    Cursor { t, gate: cur.gate }
                }
                LayerPlanKind::GlobalAvgPool => {
                    let t = tape.global_avg_pool(cur.t).map_err(|e| tensor_err("gap", e))?;
                    Cursor { t, gate: cur.gate }
                }
                LayerPlanKind::AddSkip => {
                    let from = plan.skip_from.expect("AddSkip plans carry skip_from");
                    let t = tape
                        .add(cur.t, layer_outs[from].t)
                        .map_err(|e| tensor_err("add_skip", e))?;
                    Cursor { t, gate: cur.gate }
                }
                LayerPlanKind::Dense => {
                    let node = plan.out_node;
                    let flat = self.flatten(tape, cur.t)?;
                    let base = self.node_base[&node];
                    let out = tape
                        .dense(flat, param_leaves[base], param_leaves[base + 1])
                        .map_err(|e| tensor_err("head", e))?;
                    logits = Some(out);
                    Cursor { t: out, gate: None }
                }
            };
            layer_outs.push(cur.clone());
        }

        Ok(SupernetForward {
            logits: logits.expect("parse always appends a classifier"),
            param_leaves,
            pre_affine,
        })
    }

    /// Data-dependent normalization init: set each convolution's affine so
    /// its post-affine output has zero mean and unit variance per channel
    /// on the probe batch, evaluated at the widest one-hot selection.
    /// Without batch statistics at training time, this is what keeps deep
    /// stacks of affine+ReLU from starting on a dead plateau.
    ///
    /// Deterministic given the probe; call once right after `init`.
    pub fn normalize_init(&mut self, input: &[f64], batch: usize) -> Result<()> {
        let max_sel = ArchSelection::new(
            self.supernet
                .decisions
                .iter()
                .map(|d| (d.id.clone(), d.num_options() - 1))
                .collect(),
        );
        let conv_nodes: Vec<usize> = self
            .supernet
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, IrOp::Conv { .. }))
            .map(|(i, _)| i)
            .collect();
        // normalizing one layer shifts the statistics of the next, so walk
        // the convolutions front to back with a fresh forward each time
        for &node in &conv_nodes {
            let mut tape = Tape::new();
            let z: Vec<TensorId> = self
                .supernet
                .decisions
                .iter()
                .map(|d| {
                    let mut row = vec![0.0; d.num_options()];
                    row[max_sel.option_index(&d.id)] = 1.0;
                    tape.constant(row, vec![d.num_options()])
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| tensor_err("normalize", e))?;
            let fw = self.forward(&mut tape, input, batch, &z)?;
            let (_, pre) = fw
                .pre_affine
                .iter()
                .find(|(n, _)| *n == node)
                .expect("every conv reports a pre-affine tensor");
            let values = tape.values(*pre);
            let channels = tape.shape(*pre).channels();
            let (scale, shift) = channel_norm_stats(values, channels);
            let base = self.node_base[&node];
            self.params[base + 2].values = scale;
            self.params[base + 3].values = shift;
        }
        Ok(())
    }

    fn flatten(&self, tape: &mut Tape, t: TensorId) -> Result<TensorId> {
        let dims = tape.shape(t).dims.clone();
        if dims.len() == 2 {
            return Ok(t);
        }
        let features = dims[1] * dims[2] * dims[3];
        tape.reshape(t, vec![dims[0], features])
            .map_err(|e| tensor_err("flatten", e))
    }

    fn block_forward(
        &self,
        tape: &mut Tape,
        plan: &LayerPlan,
        block_in: &Cursor,
        z: &[TensorId],
        param_leaves: &[TensorId],
        pre_affine: &mut Vec<(usize, TensorId)>,
    ) -> Result<Cursor> {
        let mut cur = block_in.clone();
        let last = plan.node_ids.len() - 1;
        for (pos, &ni) in plan.node_ids.iter().enumerate() {
            let node = &self.supernet.nodes[ni];
            let IrOp::Conv { stride, padding, depthwise, .. } = node.op else {
                unreachable!("block bodies contain only convolutions");
            };
            // inverted bottlenecks project through a linear bottleneck
            let with_relu = !(plan.kind == LayerPlanKind::InvertedBottleneck && pos == last);
            let base = self.node_base[&ni];
            let cin_max = tape.shape(cur.t).channels();
            let groups = if depthwise { cin_max } else { 1 };
            let mut t = tape
                .conv2d(cur.t, param_leaves[base], param_leaves[base + 1], stride, padding, groups)
                .map_err(|e| tensor_err(&node.label, e))?;
            pre_affine.push((ni, t));
            t = tape
                .channel_affine(t, param_leaves[base + 2], param_leaves[base + 3])
                .map_err(|e| tensor_err(&node.label, e))?;
            if with_relu {
                t = tape.relu(t).map_err(|e| tensor_err(&node.label, e))?;
            }
            cur = if depthwise {
                // per-channel op: re-apply the incoming gate so channels
                // masked off upstream stay dead through bias and affine
                let t = match cur.gate {
                    Some(g) => tape
                        .scale_channels(t, g)
                        .map_err(|e| tensor_err(&node.label, e))?,
                    None => t,
                };
                Cursor { t, gate: cur.gate }
            } else {
                match &node.out_channels {
                    ChannelSrc::Decision(d) => {
                        let (t, gate) = self.combine_width(tape, t, *d, z)?;
                        Cursor { t, gate: Some(gate) }
                    }
                    ChannelSrc::Fixed(_) => Cursor { t, gate: None },
                    ChannelSrc::DepthMix { .. } => {
                        unreachable!("block conv outputs are fixed or width decisions")
                    }
                }
            };
        }
        Ok(cur)
    }

    /// Realize a width decision: K channel masks of the single max-width
    /// evaluation, combined under the decision weights; plus the matching
    /// per-channel gate vector for downstream re-masking.
    fn combine_width(
        &self,
        tape: &mut Tape,
        t: TensorId,
        decision: usize,
        z: &[TensorId],
    ) -> Result<(TensorId, TensorId)> {
        let DecisionKind::Width { options } = &self.supernet.decisions[decision].kind else {
            unreachable!("combine_width on a width decision");
        };
        let c_max = *options.last().unwrap() as usize;
        let masked: Vec<TensorId> = options
            .iter()
            .map(|&wk| tape.channel_mask(t, wk as usize))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| tensor_err("width masks", e))?;
        let combined = tape
            .weighted_sum(&masked, z[decision])
            .map_err(|e| tensor_err("width combine", e))?;
        let steps: Vec<TensorId> = options
            .iter()
            .map(|&wk| {
                let mut v = vec![0.0; c_max];
                v[..wk as usize].fill(1.0);
                tape.constant(v, vec![c_max])
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| tensor_err("width gate", e))?;
        let gate = tape
            .weighted_sum(&steps, z[decision])
            .map_err(|e| tensor_err("width gate", e))?;
        Ok((combined, gate))
    }

    fn depth_merge(
        &self,
        tape: &mut Tape,
        plan: &LayerPlan,
        decision: usize,
        block_in: &Cursor,
        body: &Cursor,
        z: &[TensorId],
    ) -> Result<Cursor> {
        let skip_t = if plan.stride > 1 {
            tape.avg_pool2d(block_in.t, (plan.stride, plan.stride), plan.stride, Padding::Same)
                .map_err(|e| tensor_err("skip pool", e))?
        } else {
            block_in.t
        };
        let merged = tape
            .weighted_sum(&[skip_t, body.t], z[decision])
            .map_err(|e| tensor_err("depth merge", e))?;
        let c_max = tape.shape(body.t).channels();
        let g_skip = self.gate_or_ones(tape, block_in.gate, c_max)?;
        let g_body = self.gate_or_ones(tape, body.gate, c_max)?;
        let gate = tape
            .weighted_sum(&[g_skip, g_body], z[decision])
            .map_err(|e| tensor_err("depth gate", e))?;
        Ok(Cursor { t: merged, gate: Some(gate) })
    }

    fn gate_or_ones(&self, tape: &mut Tape, gate: Option<TensorId>, c: usize) -> Result<TensorId> {
        match gate {
            Some(g) => Ok(g),
            None => tape
                .constant(vec![1.0; c], vec![c])
                .map_err(|e| tensor_err("gate", e)),
        }
    }
}

#[derive(Clone)]
struct Cursor {
    t: TensorId,
    /// Per-channel liveness weights of this tensor, `None` when fully alive.
    gate: Option<TensorId>,
}

pub(crate) fn dense_in_features(supernet: &Supernet, dense_node: usize) -> usize {
    let input = &supernet.nodes[supernet.nodes[dense_node].inputs[0]];
    let c = input.out_channels.max_channels(&supernet.decisions) as usize;
    input.out_hw.0 * input.out_hw.1 * c
}

fn glorot(
    rng: &mut ChaCha8Rng,
    name: String,
    dims: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> ParamTensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    ParamTensor {
        name,
        dims,
        values: (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
    }
}

fn fill(name: String, dims: Vec<usize>, value: f64) -> ParamTensor {
    let n: usize = dims.iter().product();
    ParamTensor { name, dims, values: vec![value; n] }
}

fn tensor_err(context: &str, source: crate::tensor::TensorError) -> SupernetError {
    SupernetError::Tensor { context: context.to_string(), source }
}

/// Per-channel `(scale, shift)` mapping the observed activations to zero
/// mean and unit variance, with a floor against constant channels.
pub(crate) fn channel_norm_stats(values: &[f64], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = values.len() / channels;
    let mut mean = vec![0.0; channels];
    for (i, &v) in values.iter().enumerate() {
        mean[i % channels] += v;
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; channels];
    for (i, &v) in values.iter().enumerate() {
        var[i % channels] += (v - mean[i % channels]).powi(2);
    }
    let mut scale = Vec::with_capacity(channels);
    let mut shift = Vec::with_capacity(channels);
    for c in 0..channels {
        let sigma = (var[c] / rows as f64).sqrt().max(1e-3);
        scale.push(1.0 / sigma);
        shift.push(-mean[c] / sigma);
    }
    (scale, shift)
}
