//! Backbone config parsing: JSON schema -> validated [`Supernet`] IR.

use super::*;
use crate::tensor::Padding;

/// JSON schema of a backbone description.
///
/// ```json
/// {
///   "input_shape": [49, 10, 1],
///   "channel_grid": 4,
///   "layers": [
///     {"kind": "Conv2D", "kernel": [10, 4], "stride": 1,
///      "channels": {"options": [84, 112, 140]}},
///     {"kind": "DepthwiseSeparableBlock", "kernel": [3, 3], "stride": 2,
///      "channels": {"fixed": 140}, "optional_depth": true}
///   ],
///   "head": {"classes": 12, "pool": {"avg": [25, 5]}}
/// }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// `[height, width, channels]` of one input sample.
    pub input_shape: [usize; 3],
    /// Channel counts must be multiples of this; 0 disables the grid.
    #[serde(default)]
    pub channel_grid: u32,
    #[serde(default)]
    pub layers: Vec<LayerConfig>,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub kind: LayerKindConfig,
    #[serde(default = "default_kernel")]
    pub kernel: [usize; 2],
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_padding")]
    pub padding: Padding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<ChannelsConfig>,
    /// Expansion width of an inverted bottleneck's first 1x1 convolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ChannelsConfig>,
    /// Wrap this block in a depth decision (skip branch in parallel).
    #[serde(default)]
    pub optional_depth: bool,
    /// Earlier layer index whose output an `AddSkip` layer adds in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<usize>,
}

fn default_kernel() -> [usize; 2] {
    [1, 1]
}
fn default_stride() -> usize {
    1
}
fn default_padding() -> Padding {
    Padding::Same
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKindConfig {
    Conv2D,
    DepthwiseSeparableBlock,
    InvertedBottleneckBlock,
    AvgPool,
    GlobalAvgPool,
    AddSkip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelsConfig {
    Fixed(u32),
    Options(Vec<u32>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub classes: usize,
    #[serde(default = "default_head_pool")]
    pub pool: HeadPool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadPool {
    /// Global average pooling to `[C]`.
    Global,
    /// Flatten `H*W*C` straight into the classifier.
    Flatten,
    /// Average pooling with an explicit window, then flatten.
    Avg([usize; 2]),
}

fn default_head_pool() -> HeadPool {
    HeadPool::Global
}

/// Parse and validate a backbone config document into a [`Supernet`].
pub fn parse_backbone_config(text: &str) -> Result<Supernet> {
    let config: BackboneConfig =
        serde_json::from_str(text).map_err(|e| SupernetError::Schema(e.to_string()))?;
    build_supernet(&config)
}

/// Validate and expand an already-deserialized backbone config.
pub fn build_supernet(config: &BackboneConfig) -> Result<Supernet> {
    build_supernet_ir(config)
}

struct Builder {
    grid: u32,
    decisions: Vec<DecisionNode>,
    nodes: Vec<IrNode>,
    layers: Vec<LayerPlan>,
}

/// Tensor state flowing between layers during IR construction.
#[derive(Clone)]
struct Cursor {
    node: usize,
    hw: (usize, usize),
    src: ChannelSrc,
}

impl Builder {
    fn decision_for(
        &mut self,
        layer: usize,
        what: &str,
        cfg: &ChannelsConfig,
    ) -> Result<ChannelSpecPlan> {
        match cfg {
            ChannelsConfig::Fixed(c) => {
                self.check_grid(layer, *c)?;
                Ok(ChannelSpecPlan::Fixed(*c))
            }
            ChannelsConfig::Options(options) => {
                if options.is_empty()
                    || options[0] == 0
                    || options.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(SupernetError::BadOptions {
                        layer,
                        options: options.clone(),
                    });
                }
                for &c in options {
                    self.check_grid(layer, c)?;
                }
                self.decisions.push(DecisionNode {
                    id: format!("L{layer}.{what}"),
                    kind: DecisionKind::Width { options: options.clone() },
                    logits: vec![0.0; options.len()],
                    temperature: 1.0,
                });
                Ok(ChannelSpecPlan::Decision(self.decisions.len() - 1))
            }
        }
    }

    fn check_grid(&self, layer: usize, c: u32) -> Result<()> {
        if self.grid > 1 && c % self.grid != 0 {
            return Err(SupernetError::GridViolation { layer, value: c, grid: self.grid });
        }
        Ok(())
    }

    fn push_node(&mut self, node: IrNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn conv_node(
        &mut self,
        layer: usize,
        label: &str,
        input: &Cursor,
        (kh, kw): (usize, usize),
        stride: usize,
        padding: Padding,
        depthwise: bool,
        out_src: ChannelSrc,
        scope: Option<(usize, usize)>,
    ) -> Result<Cursor> {
        let out_hw = spatial(layer, input.hw, (kh, kw), stride, padding)?;
        let node = self.push_node(IrNode {
            op: IrOp::Conv { kh, kw, stride, padding, depthwise },
            inputs: vec![input.node],
            out_channels: out_src.clone(),
            out_hw,
            depth_scope: scope,
            label: format!("L{layer}.{label}"),
        });
        Ok(Cursor { node, hw: out_hw, src: out_src })
    }
}

fn spatial(
    layer: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(SupernetError::BadLayer {
            layer,
            reason: format!("kernel {kh}x{kw} and stride {stride} must be positive"),
        });
    }
    let axis = |len: usize, k: usize| -> Result<usize> {
        match padding {
            Padding::Same => Ok(len.div_ceil(stride)),
            Padding::Valid => {
                if k > len {
                    Err(SupernetError::UnresolvableShape {
                        layer,
                        reason: format!("window {k} exceeds extent {len} under valid padding"),
                    })
                } else {
                    Ok((len - k) / stride + 1)
                }
            }
        }
    };
    Ok((axis(h, kh)?, axis(w, kw)?))
}

fn build_supernet_ir(config: &BackboneConfig) -> Result<Supernet> {
    let [in_h, in_w, in_c] = config.input_shape;
    if in_h == 0 || in_w == 0 || in_c == 0 {
        return Err(SupernetError::Schema("input_shape dimensions must be positive".into()));
    }
    if config.head.classes < 1 {
        return Err(SupernetError::Schema("head.classes must be at least 1".into()));
    }
    let mut b = Builder {
        grid: config.channel_grid,
        decisions: Vec::new(),
        nodes: Vec::new(),
        layers: Vec::new(),
    };

    let input_node = b.push_node(IrNode {
        op: IrOp::Input,
        inputs: vec![],
        out_channels: ChannelSrc::Fixed(in_c as u32),
        out_hw: (in_h, in_w),
        depth_scope: None,
        label: "input".into(),
    });
    let mut cur = Cursor {
        node: input_node,
        hw: (in_h, in_w),
        src: ChannelSrc::Fixed(in_c as u32),
    };
    let mut layer_cursors: Vec<Cursor> = Vec::new();

    for (li, lc) in config.layers.iter().enumerate() {
        let is_block = matches!(
            lc.kind,
            LayerKindConfig::Conv2D
                | LayerKindConfig::DepthwiseSeparableBlock
                | LayerKindConfig::InvertedBottleneckBlock
        );
        if !is_block {
            for (opt, field) in [
                (lc.channels.is_some(), "channels"),
                (lc.expansion.is_some(), "expansion"),
                (lc.optional_depth, "optional_depth"),
            ] {
                if opt {
                    return Err(SupernetError::BadLayer {
                        layer: li,
                        reason: format!("{:?} does not accept `{field}`", lc.kind),
                    });
                }
            }
        }
        if lc.expansion.is_some() && lc.kind != LayerKindConfig::InvertedBottleneckBlock {
            return Err(SupernetError::BadLayer {
                layer: li,
                reason: "`expansion` is only valid on InvertedBottleneckBlock".into(),
            });
        }

        cur = match lc.kind {
            LayerKindConfig::Conv2D
            | LayerKindConfig::DepthwiseSeparableBlock
            | LayerKindConfig::InvertedBottleneckBlock => build_block(&mut b, li, lc, &cur)?,
            LayerKindConfig::AvgPool => {
                let out_hw = spatial(li, cur.hw, (lc.kernel[0], lc.kernel[1]), lc.stride, lc.padding)?;
                let node = b.push_node(IrNode {
                    op: IrOp::AvgPool {
                        kh: lc.kernel[0],
                        kw: lc.kernel[1],
                        stride: lc.stride,
                        padding: lc.padding,
                    },
                    inputs: vec![cur.node],
                    out_channels: cur.src.clone(),
                    out_hw,
                    depth_scope: None,
                    label: format!("L{li}.avgpool"),
                });
                b.layers.push(LayerPlan {
                    kind: LayerPlanKind::AvgPool,
                    kernel: (lc.kernel[0], lc.kernel[1]),
                    stride: lc.stride,
                    padding: lc.padding,
                    channels: None,
                    expansion: None,
                    depth_decision: None,
                    node_ids: vec![node],
                    skip_pool_node: None,
                    merge_node: None,
                    skip_from: None,
                    out_node: node,
                });
                Cursor { node, hw: out_hw, src: cur.src.clone() }
            }
            LayerKindConfig::GlobalAvgPool => {
                let node = b.push_node(IrNode {
                    op: IrOp::GlobalAvgPool,
                    inputs: vec![cur.node],
                    out_channels: cur.src.clone(),
                    out_hw: (1, 1),
                    depth_scope: None,
                    label: format!("L{li}.gap"),
                });
                b.layers.push(LayerPlan {
                    kind: LayerPlanKind::GlobalAvgPool,
                    kernel: (1, 1),
                    stride: 1,
                    padding: Padding::Valid,
                    channels: None,
                    expansion: None,
                    depth_decision: None,
                    node_ids: vec![node],
                    skip_pool_node: None,
                    merge_node: None,
                    skip_from: None,
                    out_node: node,
                });
                Cursor { node, hw: (1, 1), src: cur.src.clone() }
            }
            LayerKindConfig::AddSkip => {
                let from = lc.from.ok_or_else(|| SupernetError::BadLayer {
                    layer: li,
                    reason: "AddSkip requires `from`".into(),
                })?;
                if from >= li {
                    return Err(SupernetError::BadSkipRef { layer: li, from });
                }
                let other = layer_cursors[from].clone();
                if other.hw != cur.hw || other.src != cur.src {
                    return Err(SupernetError::BadLayer {
                        layer: li,
                        reason: format!(
                            "AddSkip operands disagree: {:?}/{:?} vs {:?}/{:?} (shapes and channel sources must match)",
                            cur.hw, cur.src, other.hw, other.src
                        ),
                    });
                }
                let node = b.push_node(IrNode {
                    op: IrOp::AddSkip,
                    inputs: vec![cur.node, other.node],
                    out_channels: cur.src.clone(),
                    out_hw: cur.hw,
                    depth_scope: None,
                    label: format!("L{li}.add"),
                });
                b.layers.push(LayerPlan {
                    kind: LayerPlanKind::AddSkip,
                    kernel: (1, 1),
                    stride: 1,
                    padding: Padding::Same,
                    channels: None,
                    expansion: None,
                    depth_decision: None,
                    node_ids: vec![node],
                    skip_pool_node: None,
                    merge_node: None,
                    skip_from: Some(from),
                    out_node: node,
                });
                Cursor { node, hw: cur.hw, src: cur.src.clone() }
            }
        };
        layer_cursors.push(cur.clone());
    }

    // classifier head: optional pooling, flatten, fully connected
    let head_layer = config.layers.len();
    match &config.head.pool {
        HeadPool::Global => {
            if cur.hw != (1, 1) {
                let node = b.push_node(IrNode {
                    op: IrOp::GlobalAvgPool,
                    inputs: vec![cur.node],
                    out_channels: cur.src.clone(),
                    out_hw: (1, 1),
                    depth_scope: None,
                    label: "head.gap".into(),
                });
                b.layers.push(LayerPlan {
                    kind: LayerPlanKind::GlobalAvgPool,
                    kernel: (1, 1),
                    stride: 1,
                    padding: Padding::Valid,
                    channels: None,
                    expansion: None,
                    depth_decision: None,
                    node_ids: vec![node],
                    skip_pool_node: None,
                    merge_node: None,
                    skip_from: None,
                    out_node: node,
                });
                cur = Cursor { node, hw: (1, 1), src: cur.src.clone() };
            }
        }
        HeadPool::Avg([kh, kw]) => {
            let out_hw = spatial(head_layer, cur.hw, (*kh, *kw), 1, Padding::Valid)?;
            let node = b.push_node(IrNode {
                op: IrOp::AvgPool { kh: *kh, kw: *kw, stride: 1, padding: Padding::Valid },
                inputs: vec![cur.node],
                out_channels: cur.src.clone(),
                out_hw,
                depth_scope: None,
                label: "head.avgpool".into(),
            });
            b.layers.push(LayerPlan {
                kind: LayerPlanKind::AvgPool,
                kernel: (*kh, *kw),
                stride: 1,
                padding: Padding::Valid,
                channels: None,
                expansion: None,
                depth_decision: None,
                node_ids: vec![node],
                skip_pool_node: None,
                merge_node: None,
                skip_from: None,
                out_node: node,
            });
            cur = Cursor { node, hw: out_hw, src: cur.src.clone() };
        }
        HeadPool::Flatten => {}
    }

    // The classifier consumes the flattened tensor. A spatial extent above
    // 1x1 folds into the feature count, which only works for fixed widths.
    if cur.hw != (1, 1) && !matches!(cur.src, ChannelSrc::Fixed(_)) {
        return Err(SupernetError::BadLayer {
            layer: head_layer,
            reason: "flattening a decision-width tensor with spatial extent above 1x1 is not supported; pool first".into(),
        });
    }
    let dense_node = b.push_node(IrNode {
        op: IrOp::Dense,
        inputs: vec![cur.node],
        out_channels: ChannelSrc::Fixed(config.head.classes as u32),
        out_hw: (1, 1),
        depth_scope: None,
        label: "head.fc".into(),
    });
    b.layers.push(LayerPlan {
        kind: LayerPlanKind::Dense,
        kernel: (1, 1),
        stride: 1,
        padding: Padding::Valid,
        channels: Some(ChannelSpecPlan::Fixed(config.head.classes as u32)),
        expansion: None,
        depth_decision: None,
        node_ids: vec![dense_node],
        skip_pool_node: None,
        merge_node: None,
        skip_from: None,
        out_node: dense_node,
    });

    Ok(Supernet {
        input_shape: config.input_shape,
        channel_grid: config.channel_grid,
        num_classes: config.head.classes,
        decisions: b.decisions,
        nodes: b.nodes,
        layers: b.layers,
    })
}

fn build_block(b: &mut Builder, li: usize, lc: &LayerConfig, input: &Cursor) -> Result<Cursor> {
    let channels_cfg = lc.channels.as_ref().ok_or_else(|| SupernetError::BadLayer {
        layer: li,
        reason: format!("{:?} requires `channels`", lc.kind),
    })?;
    let out_plan = b.decision_for(li, "width", channels_cfg)?;
    let out_src = out_plan.as_src();
    let kernel = (lc.kernel[0], lc.kernel[1]);

    let depth_decision = if lc.optional_depth {
        let in_max = input.src.max_channels(&b.decisions);
        let out_max = out_src.max_channels(&b.decisions);
        if in_max != out_max {
            return Err(SupernetError::DepthChannelMismatch { layer: li, inp: in_max, out: out_max });
        }
        b.decisions.push(DecisionNode {
            id: format!("L{li}.depth"),
            kind: DecisionKind::Depth,
            logits: vec![0.0; 2],
            temperature: 1.0,
        });
        Some(b.decisions.len() - 1)
    } else {
        None
    };
    let scope = depth_decision.map(|d| (d, 1));

    let mut node_ids: Vec<usize> = Vec::new();
    let (plan_kind, body_end, expansion_plan) = match lc.kind {
        LayerKindConfig::Conv2D => {
            let c = b.conv_node(
                li, "conv", input, kernel, lc.stride, lc.padding, false, out_src.clone(), scope,
            )?;
            node_ids.push(c.node);
            (LayerPlanKind::Conv2D, c, None)
        }
        LayerKindConfig::DepthwiseSeparableBlock => {
            // depthwise conv keeps the input's channel source
            let dw = b.conv_node(
                li, "dw", input, kernel, lc.stride, lc.padding, true, input.src.clone(), scope,
            )?;
            let pw = b.conv_node(
                li, "pw", &dw, (1, 1), 1, Padding::Same, false, out_src.clone(), scope,
            )?;
            node_ids.extend([dw.node, pw.node]);
            (LayerPlanKind::DepthwiseSeparable, pw, None)
        }
        LayerKindConfig::InvertedBottleneckBlock => {
            let exp_cfg = lc.expansion.as_ref().ok_or_else(|| SupernetError::BadLayer {
                layer: li,
                reason: "InvertedBottleneckBlock requires `expansion`".into(),
            })?;
            let exp_plan = b.decision_for(li, "expansion", exp_cfg)?;
            let exp_src = exp_plan.as_src();
            let expand = b.conv_node(
                li, "expand", input, (1, 1), 1, Padding::Same, false, exp_src.clone(), scope,
            )?;
            let dw = b.conv_node(
                li, "dw", &expand, kernel, lc.stride, lc.padding, true, exp_src, scope,
            )?;
            let project = b.conv_node(
                li, "project", &dw, (1, 1), 1, Padding::Same, false, out_src.clone(), scope,
            )?;
            node_ids.extend([expand.node, dw.node, project.node]);
            (LayerPlanKind::InvertedBottleneck, project, Some(exp_plan))
        }
        _ => unreachable!("non-block kinds handled by the caller"),
    };

    let (out_cursor, skip_pool_node, merge_node) = if let Some(d) = depth_decision {
        // skip branch: identity, or average pooling when the block downsamples
        let (skip_node, skip_hw) = if lc.stride > 1 {
            let hw = spatial(li, input.hw, (lc.stride, lc.stride), lc.stride, Padding::Same)?;
            let n = b.push_node(IrNode {
                op: IrOp::AvgPool {
                    kh: lc.stride,
                    kw: lc.stride,
                    stride: lc.stride,
                    padding: Padding::Same,
                },
                inputs: vec![input.node],
                out_channels: input.src.clone(),
                out_hw: hw,
                depth_scope: Some((d, 0)),
                label: format!("L{li}.skip_pool"),
            });
            (n, hw)
        } else {
            (input.node, input.hw)
        };
        if skip_hw != body_end.hw {
            return Err(SupernetError::UnresolvableShape {
                layer: li,
                reason: format!("skip branch {skip_hw:?} does not match block output {:?}", body_end.hw),
            });
        }
        let mix = ChannelSrc::DepthMix {
            decision: d,
            skip: Box::new(input.src.clone()),
            block: Box::new(body_end.src.clone()),
        };
        let merge = b.push_node(IrNode {
            op: IrOp::DepthMerge { decision: d },
            inputs: vec![skip_node, body_end.node],
            out_channels: mix.clone(),
            out_hw: body_end.hw,
            depth_scope: None,
            label: format!("L{li}.merge"),
        });
        (
            Cursor { node: merge, hw: body_end.hw, src: mix },
            (lc.stride > 1).then_some(skip_node),
            Some(merge),
        )
    } else {
        (body_end.clone(), None, None)
    };

    b.layers.push(LayerPlan {
        kind: plan_kind,
        kernel,
        stride: lc.stride,
        padding: lc.padding,
        channels: Some(out_plan),
        expansion: expansion_plan,
        depth_decision,
        node_ids,
        skip_pool_node,
        merge_node,
        skip_from: None,
        out_node: out_cursor.node,
    });
    Ok(out_cursor)
}
