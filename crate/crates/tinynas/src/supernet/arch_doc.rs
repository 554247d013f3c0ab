//! Discrete architecture documents.
//!
//! The JSON vocabulary mirrors how embedded model tables describe layers:
//! kind plus `h`/`w`/`c`/`s` fields, e.g. `Conv2D (h:10, w:4, c:140, s:1)`.
//! Composite entries expand to primitive ops with resolved shapes before any
//! cost accounting or execution.

use super::{Result, SupernetError};
use crate::tensor::Padding;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// `[height, width, channels]` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<ArchLayer>,
}

fn default_stride() -> usize {
    1
}
fn default_padding() -> Padding {
    Padding::Same
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ArchLayer {
    Conv2D {
        h: usize,
        w: usize,
        c: u32,
        #[serde(default = "default_stride")]
        s: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    DepthwiseSeparableBlock {
        h: usize,
        w: usize,
        c: u32,
        #[serde(default = "default_stride")]
        s: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    InvertedBottleneckBlock {
        h: usize,
        w: usize,
        c: u32,
        /// Expansion width of the leading 1x1 convolution.
        e: u32,
        #[serde(default = "default_stride")]
        s: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    AvgPool {
        h: usize,
        w: usize,
        #[serde(default = "default_stride")]
        s: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    GlobalAvgPool,
    FC {
        c: u32,
    },
    AddSkip {
        /// Index of the earlier layer whose output is added in.
        from: usize,
    },
}

/// A primitive op with fully resolved shapes, ready for cost accounting
/// or execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedOp {
    pub label: String,
    pub kind: ResolvedKind,
    /// `[h, w, c]` per input tensor.
    pub in_shapes: Vec<[usize; 3]>,
    pub out_shape: [usize; 3],
    /// Index of the doc layer this primitive came from.
    pub layer_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedKind {
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
}

fn axis(len: usize, k: usize, stride: usize, padding: Padding, what: &str) -> Result<usize> {
    match padding {
        Padding::Same => Ok(len.div_ceil(stride)),
        Padding::Valid => {
            if k > len {
                Err(SupernetError::Doc(format!(
                    "{what}: window {k} exceeds extent {len} under valid padding"
                )))
            } else {
                Ok((len - k) / stride + 1)
            }
        }
    }
}

impl ArchDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SupernetError::Doc(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch docs always serialize")
    }

    /// Expand composite blocks into primitives and propagate shapes.
    pub fn expand(&self) -> Result<Vec<ResolvedOp>> {
        let mut ops = Vec::new();
        let mut cur = [self.input_shape[0], self.input_shape[1], self.input_shape[2]];
        if cur.iter().any(|&d| d == 0) {
            return Err(SupernetError::Doc("input_shape dimensions must be positive".into()));
        }
        let mut layer_out: Vec<[usize; 3]> = Vec::new();

        for (li, layer) in self.layers.iter().enumerate() {
            match *layer {
                ArchLayer::Conv2D { h, w, c, s, padding } => {
                    let out = [
                        axis(cur[0], h, s, padding, "Conv2D")?,
                        axis(cur[1], w, s, padding, "Conv2D")?,
                        c as usize,
                    ];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.conv"),
                        kind: ResolvedKind::Conv { kh: h, kw: w, stride: s, padding, depthwise: false },
                        in_shapes: vec![cur],
                        out_shape: out,
                        layer_index: li,
                    });
                    cur = out;
                }
                ArchLayer::DepthwiseSeparableBlock { h, w, c, s, padding } => {
                    let mid = [
                        axis(cur[0], h, s, padding, "DepthwiseSeparableBlock")?,
                        axis(cur[1], w, s, padding, "DepthwiseSeparableBlock")?,
                        cur[2],
                    ];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.dw"),
                        kind: ResolvedKind::Conv { kh: h, kw: w, stride: s, padding, depthwise: true },
                        in_shapes: vec![cur],
                        out_shape: mid,
                        layer_index: li,
                    });
                    let out = [mid[0], mid[1], c as usize];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.pw"),
                        kind: ResolvedKind::Conv { kh: 1, kw: 1, stride: 1, padding: Padding::Same, depthwise: false },
                        in_shapes: vec![mid],
                        out_shape: out,
                        layer_index: li,
                    });
                    cur = out;
                }
                ArchLayer::InvertedBottleneckBlock { h, w, c, e, s, padding } => {
                    let expanded = [cur[0], cur[1], e as usize];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.expand"),
                        kind: ResolvedKind::Conv { kh: 1, kw: 1, stride: 1, padding: Padding::Same, depthwise: false },
                        in_shapes: vec![cur],
                        out_shape: expanded,
                        layer_index: li,
                    });
                    let mid = [
                        axis(cur[0], h, s, padding, "InvertedBottleneckBlock")?,
                        axis(cur[1], w, s, padding, "InvertedBottleneckBlock")?,
                        e as usize,
                    ];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.dw"),
                        kind: ResolvedKind::Conv { kh: h, kw: w, stride: s, padding, depthwise: true },
                        in_shapes: vec![expanded],
                        out_shape: mid,
                        layer_index: li,
                    });
                    let out = [mid[0], mid[1], c as usize];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.project"),
                        kind: ResolvedKind::Conv { kh: 1, kw: 1, stride: 1, padding: Padding::Same, depthwise: false },
                        in_shapes: vec![mid],
                        out_shape: out,
                        layer_index: li,
                    });
                    cur = out;
                }
                ArchLayer::AvgPool { h, w, s, padding } => {
                    let out = [
                        axis(cur[0], h, s, padding, "AvgPool")?,
                        axis(cur[1], w, s, padding, "AvgPool")?,
                        cur[2],
                    ];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.avgpool"),
                        kind: ResolvedKind::AvgPool { kh: h, kw: w, stride: s, padding },
                        in_shapes: vec![cur],
                        out_shape: out,
                        layer_index: li,
                    });
                    cur = out;
                }
                ArchLayer::GlobalAvgPool => {
                    let out = [1, 1, cur[2]];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.gap"),
                        kind: ResolvedKind::GlobalAvgPool,
                        in_shapes: vec![cur],
                        out_shape: out,
                        layer_index: li,
                    });
                    cur = out;
                }
                ArchLayer::FC { c } => {
                    let features = cur[0] * cur[1] * cur[2];
                    let out = [1, 1, c as usize];
                    ops.push(ResolvedOp {
                        label: format!("L{li}.fc"),
                        kind: ResolvedKind::Dense,
                        in_shapes: vec![[1, 1, features]],
                        out_shape: out,
                        layer_index: li,
                    });
                    cur = out;
                }
                ArchLayer::AddSkip { from } => {
                    if from >= li {
                        return Err(SupernetError::Doc(format!(
                            "AddSkip at layer {li} references layer {from}, which is not earlier"
                        )));
                    }
                    let other = layer_out[from];
                    if other != cur {
                        return Err(SupernetError::Doc(format!(
                            "AddSkip at layer {li}: operand shapes {cur:?} vs {other:?} differ"
                        )));
                    }
                    ops.push(ResolvedOp {
                        label: format!("L{li}.add"),
                        kind: ResolvedKind::AddSkip,
                        in_shapes: vec![cur, other],
                        out_shape: cur,
                        layer_index: li,
                    });
                }
            }
            layer_out.push(cur);
        }
        Ok(ops)
    }
}
