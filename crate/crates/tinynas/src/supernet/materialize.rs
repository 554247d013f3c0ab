//! Materialization: a total selection becomes a standalone discrete network
//! with physically truncated weights, plus its architecture document.

use super::build::dense_in_features;
use super::*;
use crate::tensor::{Tape, TensorId};
use rand::SeedableRng;

/// A discrete network extracted from a supernet (or loaded for training):
/// primitive ops with their own parameter tensors at the selected widths.
#[derive(Debug, Clone)]
pub struct DiscreteNet {
    pub doc: ArchDoc,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub ops: Vec<DiscreteOp>,
}

#[derive(Debug, Clone)]
pub enum DiscreteOp {
    Conv {
        label: String,
        stride: usize,
        padding: Padding,
        depthwise: bool,
        relu: bool,
        weight: ParamTensor,
        bias: ParamTensor,
        scale: ParamTensor,
        shift: ParamTensor,
    },
    AvgPool {
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    },
    GlobalAvgPool,
    AddSkip {
        /// Index of the earlier op whose output is added in.
        from_op: usize,
    },
    Flatten,
    Dense {
        weight: ParamTensor,
        bias: ParamTensor,
    },
}

/// Per-tensor fake-quantization setup for training a discrete network.
#[derive(Debug, Clone, Copy)]
pub struct QuantConfig {
    pub bits: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeKind {
    /// Half-width of a symmetric signed weight range.
    WeightAbs,
    ActMin,
    ActMax,
}

/// Learnable quantizer ranges, in the fixed slot order the forward build
/// consumes: `[input min, input max]`, then per convolution
/// `[weight half-width, activation min, activation max]`, then the
/// classifier's `[weight half-width]` (its logits stay in real precision).
#[derive(Debug, Clone)]
pub struct QuantState {
    pub bits: u8,
    pub kinds: Vec<RangeKind>,
    pub values: Vec<f64>,
}

impl QuantState {
    /// Initialize ranges by observing one unquantized forward pass:
    /// weight ranges from the current absolute maxima, activation ranges
    /// from the values the batch produces (always spanning zero).
    pub fn init(
        net: &DiscreteNet,
        config: QuantConfig,
        input: &[f64],
        batch: usize,
    ) -> Result<QuantState> {
        let mut tape = Tape::new();
        let fw = net.forward(&mut tape, input, batch, None)?;
        let mut kinds = Vec::new();
        let mut values = Vec::new();
        let span = |vals: &[f64]| -> (f64, f64) {
            let lo = vals.iter().cloned().fold(0.0f64, f64::min);
            let hi = vals.iter().cloned().fold(0.0f64, f64::max);
            if hi - lo < 1e-3 {
                (lo - 5e-4, hi + 5e-4)
            } else {
                (lo, hi)
            }
        };
        let (lo, hi) = span(input);
        kinds.extend([RangeKind::ActMin, RangeKind::ActMax]);
        values.extend([lo, hi]);
        let mut act_cursor = 0;
        for op in &net.ops {
            match op {
                DiscreteOp::Conv { weight, .. } => {
                    let a = weight.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
                    kinds.push(RangeKind::WeightAbs);
                    values.push(a);
                    let (lo, hi) = span(tape.values(fw.act_outputs[act_cursor]));
                    act_cursor += 1;
                    kinds.extend([RangeKind::ActMin, RangeKind::ActMax]);
                    values.extend([lo, hi]);
                }
                DiscreteOp::Dense { weight, .. } => {
                    let a = weight.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
                    kinds.push(RangeKind::WeightAbs);
                    values.push(a);
                }
                _ => {}
            }
        }
        Ok(QuantState { bits: config.bits, kinds, values })
    }

    /// Keep ranges usable after a gradient step.
    pub fn clamp_valid(&mut self) {
        let mut i = 0;
        while i < self.kinds.len() {
            match self.kinds[i] {
                RangeKind::WeightAbs => {
                    self.values[i] = self.values[i].max(1e-4);
                    i += 1;
                }
                RangeKind::ActMin => {
                    // paired with the following ActMax
                    self.values[i] = self.values[i].min(-1e-4);
                    self.values[i + 1] = self.values[i + 1].max(1e-4);
                    i += 2;
                }
                RangeKind::ActMax => unreachable!("ActMax always follows ActMin"),
            }
        }
    }
}

pub struct DiscreteForward {
    pub logits: TensorId,
    /// One leaf per parameter slot, in [`DiscreteNet::param_slots`] order.
    pub param_leaves: Vec<TensorId>,
    /// One leaf per quantizer range slot (empty without quantization).
    pub range_leaves: Vec<TensorId>,
    /// Post-activation tensor per convolution, for range observation.
    pub act_outputs: Vec<TensorId>,
    /// Pre-affine tensor per convolution, for normalization statistics.
    pub pre_affine: Vec<TensorId>,
}

impl DiscreteNet {
    /// Build a freshly initialized trainable network from an architecture
    /// document (the classifier layer defines the class count).
    ///
    /// Expansion labels drive the one non-geometric choice: inverted
    /// bottleneck projections (`*.project`) stay linear, every other
    /// convolution is followed by ReLU.
    pub fn from_doc(doc: &ArchDoc, seed: u64) -> Result<DiscreteNet> {
        use crate::supernet::ResolvedKind;
        let resolved = doc.expand()?;
        let num_classes = resolved
            .iter()
            .rev()
            .find_map(|op| match op.kind {
                ResolvedKind::Dense => Some(op.out_shape[2]),
                _ => None,
            })
            .ok_or_else(|| SupernetError::Doc("document has no classifier layer".into()))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ops = Vec::new();
        let mut layer_last_op: Vec<Option<usize>> = vec![None; doc.layers.len()];
        for op in &resolved {
            match &op.kind {
                ResolvedKind::Conv { kh, kw, stride, padding, depthwise } => {
                    let cin = op.in_shapes[0][2];
                    let cout = op.out_shape[2];
                    let cin_g = if *depthwise { 1 } else { cin };
                    ops.push(DiscreteOp::Conv {
                        label: op.label.clone(),
                        stride: *stride,
                        padding: *padding,
                        depthwise: *depthwise,
                        relu: !op.label.ends_with(".project"),
                        weight: glorot_param(
                            &mut rng,
                            format!("{}.weight", op.label),
                            vec![*kh, *kw, cin_g, cout],
                        ),
                        bias: const_param(format!("{}.bias", op.label), vec![cout], 0.0),
                        scale: const_param(format!("{}.scale", op.label), vec![cout], 1.0),
                        shift: const_param(format!("{}.shift", op.label), vec![cout], 0.0),
                    });
                }
                ResolvedKind::AvgPool { kh, kw, stride, padding } => {
                    ops.push(DiscreteOp::AvgPool {
                        kh: *kh,
                        kw: *kw,
                        stride: *stride,
                        padding: *padding,
                    });
                }
                ResolvedKind::GlobalAvgPool => ops.push(DiscreteOp::GlobalAvgPool),
                ResolvedKind::AddSkip => {
                    // the doc validated `from` during expansion
                    let from = match doc.layers[op.layer_index] {
                        ArchLayer::AddSkip { from } => from,
                        _ => unreachable!("AddSkip ops come from AddSkip layers"),
                    };
                    let from_op = layer_last_op[from].ok_or_else(|| {
                        SupernetError::Doc(format!("AddSkip target layer {from} produced no op"))
                    })?;
                    ops.push(DiscreteOp::AddSkip { from_op });
                }
                ResolvedKind::Dense => {
                    let features = op.in_shapes[0][0] * op.in_shapes[0][1] * op.in_shapes[0][2];
                    ops.push(DiscreteOp::Flatten);
                    ops.push(DiscreteOp::Dense {
                        weight: glorot_param(
                            &mut rng,
                            format!("{}.weight", op.label),
                            vec![features, num_classes],
                        ),
                        bias: const_param(format!("{}.bias", op.label), vec![num_classes], 0.0),
                    });
                }
            }
            layer_last_op[op.layer_index] = Some(ops.len() - 1);
        }
        Ok(DiscreteNet {
            doc: doc.clone(),
            input_shape: doc.input_shape,
            num_classes,
            ops,
        })
    }

    /// Number of trainable parameter tensors (weights, biases, affines).
    pub fn param_slots(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                DiscreteOp::Conv { .. } => 4,
                DiscreteOp::Dense { .. } => 2,
                _ => 0,
            })
            .sum()
    }

    /// Mutable views of every parameter tensor, in slot order.
    pub fn param_slots_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for op in &mut self.ops {
            match op {
                DiscreteOp::Conv { weight, bias, scale, shift, .. } => {
                    out.extend([weight, bias, scale, shift].map(|p| &mut *p));
                }
                DiscreteOp::Dense { weight, bias } => {
                    out.extend([weight, bias].map(|p| &mut *p));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                DiscreteOp::Conv { weight, bias, scale, shift, .. } => {
                    weight.elem_count() + bias.elem_count() + scale.elem_count() + shift.elem_count()
                }
                DiscreteOp::Dense { weight, bias } => weight.elem_count() + bias.elem_count(),
                _ => 0,
            })
            .sum()
    }

    /// Build the forward graph for a batch; with `quant`, fake-quantization
    /// wraps the input, every convolution/classifier weight (symmetric
    /// signed range) and every convolution activation (asymmetric range).
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &[f64],
        batch: usize,
        quant: Option<&QuantState>,
    ) -> Result<DiscreteForward> {
        let [h, w, c] = self.input_shape;
        let err = |ctx: &str, e: crate::tensor::TensorError| SupernetError::Tensor {
            context: ctx.to_string(),
            source: e,
        };
        let mut param_leaves = Vec::new();
        let mut range_leaves = Vec::new();
        let mut act_outputs = Vec::new();
        let mut pre_affine = Vec::new();

        fn next_pair(
            tape: &mut Tape,
            quant: Option<&QuantState>,
            cursor: &mut usize,
            range_leaves: &mut Vec<TensorId>,
        ) -> Result<Option<(TensorId, TensorId)>> {
            let Some(q) = quant else { return Ok(None) };
            let err = |e| SupernetError::Tensor { context: "quant range".into(), source: e };
            let lo = tape.leaf(vec![q.values[*cursor]], vec![1], true).map_err(err)?;
            let hi = tape.leaf(vec![q.values[*cursor + 1]], vec![1], true).map_err(err)?;
            *cursor += 2;
            range_leaves.extend([lo, hi]);
            Ok(Some((lo, hi)))
        }
        fn next_sym(
            tape: &mut Tape,
            quant: Option<&QuantState>,
            cursor: &mut usize,
            range_leaves: &mut Vec<TensorId>,
        ) -> Result<Option<(TensorId, TensorId)>> {
            let Some(q) = quant else { return Ok(None) };
            let err = |e| SupernetError::Tensor { context: "quant range".into(), source: e };
            let a = tape.leaf(vec![q.values[*cursor]], vec![1], true).map_err(err)?;
            *cursor += 1;
            range_leaves.push(a);
            let neg = tape.scalar_mul(a, -1.0).map_err(err)?;
            Ok(Some((neg, a)))
        }
        let mut range_cursor = 0;

        let mut cur = tape
            .leaf(input.to_vec(), vec![batch, h, w, c], false)
            .map_err(|e| err("input", e))?;
        if let Some((lo, hi)) = next_pair(tape, quant, &mut range_cursor, &mut range_leaves)? {
            cur = tape
                .fake_quant(cur, quant.unwrap().bits, lo, hi)
                .map_err(|e| err("input quant", e))?;
        }

        let mut op_outputs: Vec<TensorId> = Vec::new();
        let mut logits = None;
        for op in &self.ops {
            cur = match op {
                DiscreteOp::Conv {
                    label,
                    stride,
                    padding,
                    depthwise,
                    relu,
                    weight,
                    bias,
                    scale,
                    shift,
                } => {
                    let mut wl = tape
                        .leaf(weight.values.clone(), weight.dims.clone(), true)
                        .map_err(|e| err(label, e))?;
                    let bl = tape
                        .leaf(bias.values.clone(), bias.dims.clone(), true)
                        .map_err(|e| err(label, e))?;
                    let sl = tape
                        .leaf(scale.values.clone(), scale.dims.clone(), true)
                        .map_err(|e| err(label, e))?;
                    let hl = tape
                        .leaf(shift.values.clone(), shift.dims.clone(), true)
                        .map_err(|e| err(label, e))?;
                    param_leaves.extend([wl, bl, sl, hl]);
                    if let Some((lo, hi)) = next_sym(tape, quant, &mut range_cursor, &mut range_leaves)? {
                        wl = tape
                            .fake_quant(wl, quant.unwrap().bits, lo, hi)
                            .map_err(|e| err(label, e))?;
                    }
                    let groups = if *depthwise { tape.shape(cur).channels() } else { 1 };
                    let mut t = tape
                        .conv2d(cur, wl, bl, *stride, *padding, groups)
                        .map_err(|e| err(label, e))?;
                    pre_affine.push(t);
                    t = tape.channel_affine(t, sl, hl).map_err(|e| err(label, e))?;
                    if *relu {
                        t = tape.relu(t).map_err(|e| err(label, e))?;
                    }
                    act_outputs.push(t);
                    if let Some((lo, hi)) = next_pair(tape, quant, &mut range_cursor, &mut range_leaves)? {
                        t = tape
                            .fake_quant(t, quant.unwrap().bits, lo, hi)
                            .map_err(|e| err(label, e))?;
                    }
                    t
                }
                DiscreteOp::AvgPool { kh, kw, stride, padding } => tape
                    .avg_pool2d(cur, (*kh, *kw), *stride, *padding)
                    .map_err(|e| err("avg_pool", e))?,
                DiscreteOp::GlobalAvgPool => {
                    tape.global_avg_pool(cur).map_err(|e| err("gap", e))?
                }
                DiscreteOp::AddSkip { from_op } => tape
                    .add(cur, op_outputs[*from_op])
                    .map_err(|e| err("add_skip", e))?,
                DiscreteOp::Flatten => {
                    let dims = tape.shape(cur).dims.clone();
                    if dims.len() == 2 {
                        cur
                    } else {
                        tape.reshape(cur, vec![dims[0], dims[1] * dims[2] * dims[3]])
                            .map_err(|e| err("flatten", e))?
                    }
                }
                DiscreteOp::Dense { weight, bias } => {
                    let mut wl = tape
                        .leaf(weight.values.clone(), weight.dims.clone(), true)
                        .map_err(|e| err("fc", e))?;
                    let bl = tape
                        .leaf(bias.values.clone(), bias.dims.clone(), true)
                        .map_err(|e| err("fc", e))?;
                    param_leaves.extend([wl, bl]);
                    if let Some((lo, hi)) = next_sym(tape, quant, &mut range_cursor, &mut range_leaves)? {
                        wl = tape
                            .fake_quant(wl, quant.unwrap().bits, lo, hi)
                            .map_err(|e| err("fc", e))?;
                    }
                    let t = tape.dense(cur, wl, bl).map_err(|e| err("fc", e))?;
                    logits = Some(t);
                    t
                }
            };
            op_outputs.push(cur);
        }
        Ok(DiscreteForward {
            logits: logits.expect("discrete nets always end in a classifier"),
            param_leaves,
            range_leaves,
            act_outputs,
            pre_affine,
        })
    }

    /// Data-dependent normalization init for a freshly built network: set
    /// each convolution's affine to whiten its output per channel on the
    /// probe batch. Walks front to back because each layer's statistics
    /// depend on the ones before it. Do not call on trained networks.
    pub fn normalize_init(&mut self, input: &[f64], batch: usize) -> Result<()> {
        let conv_indices: Vec<usize> = self
            .ops
            .iter()
            .enumerate()
            .filter(|(_, op)| matches!(op, DiscreteOp::Conv { .. }))
            .map(|(i, _)| i)
            .collect();
        for (k, &op_index) in conv_indices.iter().enumerate() {
            let mut tape = Tape::new();
            let fw = self.forward(&mut tape, input, batch, None)?;
            let pre = fw.pre_affine[k];
            let channels = tape.shape(pre).channels();
            let (scale_v, shift_v) =
                super::build::channel_norm_stats(tape.values(pre), channels);
            let DiscreteOp::Conv { scale, shift, .. } = &mut self.ops[op_index] else {
                unreachable!("index filtered on convolutions");
            };
            scale.values = scale_v;
            shift.values = shift_v;
        }
        Ok(())
    }
}

impl Supernet {
    /// Resolve a selection into an architecture document without weights.
    pub fn to_arch_doc(&self, selection: &ArchSelection) -> Result<ArchDoc> {
        selection.validate(self)?;
        let mut layers = Vec::new();
        // effective[i]: doc layer producing plan i's output, if any
        let mut effective: Vec<Option<usize>> = Vec::new();
        let mut prev_effective: Option<usize> = None;

        for plan in &self.layers {
            let skipped = plan
                .depth_decision
                .map(|d| selection.option_index(&self.decisions[d].id) == 0)
                .unwrap_or(false);
            let entry = if skipped {
                if plan.stride > 1 {
                    layers.push(ArchLayer::AvgPool {
                        h: plan.stride,
                        w: plan.stride,
                        s: plan.stride,
                        padding: Padding::Same,
                    });
                    Some(layers.len() - 1)
                } else {
                    prev_effective
                }
            } else {
                let resolved = |spec: &Option<ChannelSpecPlan>| -> u32 {
                    spec.as_ref()
                        .expect("block plans carry channels")
                        .as_src()
                        .resolve(&self.decisions, selection)
                };
                let layer = match plan.kind {
                    LayerPlanKind::Conv2D => ArchLayer::Conv2D {
                        h: plan.kernel.0,
                        w: plan.kernel.1,
                        c: resolved(&plan.channels),
                        s: plan.stride,
                        padding: plan.padding,
                    },
                    LayerPlanKind::DepthwiseSeparable => ArchLayer::DepthwiseSeparableBlock {
                        h: plan.kernel.0,
                        w: plan.kernel.1,
                        c: resolved(&plan.channels),
                        s: plan.stride,
                        padding: plan.padding,
                    },
                    LayerPlanKind::InvertedBottleneck => ArchLayer::InvertedBottleneckBlock {
                        h: plan.kernel.0,
                        w: plan.kernel.1,
                        c: resolved(&plan.channels),
                        e: plan
                            .expansion
                            .as_ref()
                            .expect("inverted bottlenecks carry expansion")
                            .as_src()
                            .resolve(&self.decisions, selection),
                        s: plan.stride,
                        padding: plan.padding,
                    },
                    LayerPlanKind::AvgPool => ArchLayer::AvgPool {
                        h: plan.kernel.0,
                        w: plan.kernel.1,
                        s: plan.stride,
                        padding: plan.padding,
                    },
                    LayerPlanKind::GlobalAvgPool => ArchLayer::GlobalAvgPool,
                    LayerPlanKind::Dense => ArchLayer::FC { c: self.num_classes as u32 },
                    LayerPlanKind::AddSkip => {
                        let from = plan.skip_from.expect("AddSkip plans carry skip_from");
                        let target = effective[from].ok_or_else(|| {
                            SupernetError::Doc(format!(
                                "AddSkip target layer {from} resolves to the network input"
                            ))
                        })?;
                        ArchLayer::AddSkip { from: target }
                    }
                };
                layers.push(layer);
                Some(layers.len() - 1)
            };
            effective.push(entry);
            prev_effective = entry;
        }

        Ok(ArchDoc {
            name: None,
            input_shape: self.input_shape,
            layers,
        })
    }
}

/// Extract the sub-network a total selection denotes: chosen widths only,
/// skipped blocks removed (their pooling kept when they downsampled).
pub fn materialize(model: &SupernetModel, selection: &ArchSelection) -> Result<DiscreteNet> {
    let sn = &model.supernet;
    selection.validate(sn)?;
    let doc = sn.to_arch_doc(selection)?;

    let resolve = |src: &ChannelSrc| src.resolve(&sn.decisions, selection) as usize;
    let mut ops: Vec<DiscreteOp> = Vec::new();
    // op index producing each plan's output
    let mut plan_out_op: Vec<Option<usize>> = Vec::new();
    let mut prev_out_op: Option<usize> = None;

    for plan in &sn.layers {
        let skipped = plan
            .depth_decision
            .map(|d| selection.option_index(&sn.decisions[d].id) == 0)
            .unwrap_or(false);
        let out_op = if skipped {
            if plan.stride > 1 {
                ops.push(DiscreteOp::AvgPool {
                    kh: plan.stride,
                    kw: plan.stride,
                    stride: plan.stride,
                    padding: Padding::Same,
                });
                Some(ops.len() - 1)
            } else {
                prev_out_op
            }
        } else {
            match plan.kind {
                LayerPlanKind::Conv2D
                | LayerPlanKind::DepthwiseSeparable
                | LayerPlanKind::InvertedBottleneck => {
                    let last = plan.node_ids.len() - 1;
                    for (pos, &ni) in plan.node_ids.iter().enumerate() {
                        let node = &sn.nodes[ni];
                        let IrOp::Conv { stride, padding, depthwise, .. } = node.op else {
                            unreachable!("block bodies contain only convolutions");
                        };
                        let cin = resolve(&sn.nodes[node.inputs[0]].out_channels);
                        let cout = resolve(&node.out_channels);
                        let base = model.param_base(ni).expect("conv nodes have params");
                        let w_full = &model.params[base];
                        let weight = slice_conv_weight(w_full, if depthwise { 1 } else { cin }, cout);
                        let bias = slice_tail(&model.params[base + 1], cout);
                        let scale = slice_tail(&model.params[base + 2], cout);
                        let shift = slice_tail(&model.params[base + 3], cout);
                        let relu = !(plan.kind == LayerPlanKind::InvertedBottleneck && pos == last);
                        ops.push(DiscreteOp::Conv {
                            label: node.label.clone(),
                            stride,
                            padding,
                            depthwise,
                            relu,
                            weight,
                            bias,
                            scale,
                            shift,
                        });
                    }
                    Some(ops.len() - 1)
                }
                LayerPlanKind::AvgPool => {
                    ops.push(DiscreteOp::AvgPool {
                        kh: plan.kernel.0,
                        kw: plan.kernel.1,
                        stride: plan.stride,
                        padding: plan.padding,
                    });
                    Some(ops.len() - 1)
                }
                LayerPlanKind::GlobalAvgPool => {
                    ops.push(DiscreteOp::GlobalAvgPool);
                    Some(ops.len() - 1)
                }
                LayerPlanKind::AddSkip => {
                    let from = plan.skip_from.expect("AddSkip plans carry skip_from");
                    let from_op = plan_out_op[from].ok_or_else(|| {
                        SupernetError::Doc(format!(
                            "AddSkip target layer {from} resolves to the network input"
                        ))
                    })?;
                    ops.push(DiscreteOp::AddSkip { from_op });
                    Some(ops.len() - 1)
                }
                LayerPlanKind::Dense => {
                    let ni = plan.out_node;
                    let node = &sn.nodes[ni];
                    let input_node = &sn.nodes[node.inputs[0]];
                    let features = if input_node.out_hw == (1, 1) {
                        resolve(&input_node.out_channels)
                    } else {
                        dense_in_features(sn, ni)
                    };
                    let base = model.param_base(ni).expect("dense node has params");
                    let weight = slice_dense_weight(&model.params[base], features);
                    let bias = model.params[base + 1].clone();
                    ops.push(DiscreteOp::Flatten);
                    ops.push(DiscreteOp::Dense { weight, bias });
                    Some(ops.len() - 1)
                }
            }
        };
        plan_out_op.push(out_op);
        prev_out_op = out_op;
    }

    Ok(DiscreteNet {
        doc,
        input_shape: sn.input_shape,
        num_classes: sn.num_classes,
        ops,
    })
}

/// Slice `[kh, kw, cin_g_max, cout_max]` down to `[kh, kw, cin_g, cout]`,
/// keeping the leading channels.
fn slice_conv_weight(full: &ParamTensor, cin_g: usize, cout: usize) -> ParamTensor {
    let (kh, kw, cin_g_max, cout_max) = (full.dims[0], full.dims[1], full.dims[2], full.dims[3]);
    let mut values = Vec::with_capacity(kh * kw * cin_g * cout);
    for tap in 0..kh * kw {
        for ci in 0..cin_g {
            let base = (tap * cin_g_max + ci) * cout_max;
            values.extend_from_slice(&full.values[base..base + cout]);
        }
    }
    ParamTensor {
        name: full.name.clone(),
        dims: vec![kh, kw, cin_g, cout],
        values,
    }
}

fn slice_dense_weight(full: &ParamTensor, features: usize) -> ParamTensor {
    let classes = full.dims[1];
    ParamTensor {
        name: full.name.clone(),
        dims: vec![features, classes],
        values: full.values[..features * classes].to_vec(),
    }
}

fn slice_tail(full: &ParamTensor, n: usize) -> ParamTensor {
    ParamTensor {
        name: full.name.clone(),
        dims: vec![n],
        values: full.values[..n].to_vec(),
    }
}

fn glorot_param(rng: &mut rand_chacha::ChaCha8Rng, name: String, dims: Vec<usize>) -> ParamTensor {
    use rand::Rng;
    let fan_in: usize = dims[..dims.len() - 1].iter().product();
    let fan_out = dims[dims.len() - 1];
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    ParamTensor {
        name,
        dims,
        values: (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
    }
}

fn const_param(name: String, dims: Vec<usize>, value: f64) -> ParamTensor {
    let n: usize = dims.iter().product();
    ParamTensor { name, dims, values: vec![value; n] }
}
