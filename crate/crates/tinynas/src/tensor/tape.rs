//! Operation tape: forward recording and value storage.

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Padding, Result, Tensor, TensorError, TensorShape};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MaxPair(TensorId, TensorId),
    ScalarMul(TensorId, f64),
    AddScalar(TensorId, f64),
    MaxScalar(TensorId, f64),
    Sum(TensorId),
    MaxMany(Vec<TensorId>),
    Relu(TensorId),
    Softmax(TensorId),
    Reshape(TensorId),
    Dense {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    },
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        groups: usize,
        pad: (usize, usize),
        out_hw: (usize, usize),
    },
    ChannelAffine {
        input: TensorId,
        scale: TensorId,
        bias: TensorId,
    },
    AvgPool2d {
        input: TensorId,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: (usize, usize),
        out_hw: (usize, usize),
    },
    GlobalAvgPool(TensorId),
    SoftmaxCrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
    },
    WeightedSum {
        inputs: Vec<TensorId>,
        weights: TensorId,
    },
    ChannelMask {
        input: TensorId,
        active: usize,
    },
    ScaleChannels {
        input: TensorId,
        gate: TensorId,
    },
    FakeQuant {
        input: TensorId,
        range_min: TensorId,
        range_max: TensorId,
        bits: u8,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub shape: TensorShape,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

/// Records forward operations in topological order. Gradients accumulate in
/// the recorded tensors across [`Tape::backward`] calls until
/// [`Tape::reset_grads`]; training loops reset between steps.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    has_fake_quant: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True if any recorded op uses a straight-through estimator, making
    /// reverse-mode gradients approximate rather than analytic.
    pub fn has_ste_ops(&self) -> bool {
        self.has_fake_quant
    }

    pub fn tensor(&self, id: TensorId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor {
            shape: n.shape.clone(),
            values: n.values.clone(),
            requires_grad: n.requires_grad,
            grad: n.grad.clone(),
        }
    }

    pub fn shape(&self, id: TensorId) -> &TensorShape {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert!(self.nodes[id.0].shape.is_scalar());
        self.nodes[id.0].values[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Overwrite a leaf's values (used by re-evaluation and optimizers that
    /// rebuild tapes between steps). Non-leaf tensors are derived and cannot
    /// be set directly.
    pub fn set_leaf(&mut self, id: TensorId, values: &[f64]) {
        let n = &mut self.nodes[id.0];
        assert!(matches!(n.op, Op::Leaf), "set_leaf on a derived tensor");
        assert_eq!(values.len(), n.values.len());
        n.values.copy_from_slice(values);
    }

    /// Recompute every derived value from current leaf values, preserving the
    /// recorded structure. Errors if any op produces a non-finite value.
    pub fn recompute_forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let values = self.compute(&self.nodes[i].op, &self.nodes[i].shape)?;
            self.nodes[i].values = values;
        }
        Ok(())
    }

    fn push(&mut self, op: Op, shape: TensorShape, values: Vec<f64>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(shape.elem_count(), values.len());
        self.nodes.push(Node {
            op,
            shape,
            values,
            requires_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, shape: TensorShape, op_name: &'static str) -> Result<TensorId> {
        let requires_grad = self.op_inputs(&op).iter().any(|id| self.nodes[id.0].requires_grad);
        let values = self.compute(&op, &shape)?;
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(op, shape, values, requires_grad))
    }

    pub(crate) fn op_inputs(&self, op: &Op) -> Vec<TensorId> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MaxPair(a, b) => vec![*a, *b],
            Op::ScalarMul(a, _) | Op::AddScalar(a, _) | Op::MaxScalar(a, _) => vec![*a],
            Op::Sum(a) | Op::Relu(a) | Op::Softmax(a) | Op::Reshape(a) | Op::GlobalAvgPool(a) => {
                vec![*a]
            }
            Op::MaxMany(ids) => ids.clone(),
            Op::Dense { input, weight, bias } => vec![*input, *weight, *bias],
            Op::Conv2d { input, weight, bias, .. } => vec![*input, *weight, *bias],
            Op::ChannelAffine { input, scale, bias } => vec![*input, *scale, *bias],
            Op::AvgPool2d { input, .. } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::WeightedSum { inputs, weights } => {
                let mut v = inputs.clone();
                v.push(*weights);
                v
            }
            Op::ChannelMask { input, .. } => vec![*input],
            Op::ScaleChannels { input, gate } => vec![*input, *gate],
            Op::FakeQuant { input, range_min, range_max, .. } => vec![*input, *range_min, *range_max],
        }
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, values: Vec<f64>, dims: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        let shape = TensorShape::new(dims);
        if values.len() != shape.elem_count() {
            return Err(TensorError::ValueCount {
                values: values.len(),
                dims: shape.dims,
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push(Op::Leaf, shape, values, requires_grad))
    }

    pub fn constant(&mut self, values: Vec<f64>, dims: Vec<usize>) -> Result<TensorId> {
        self.leaf(values, dims, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<TensorId> {
        self.constant(vec![value], vec![1])
    }

    // ── Elementwise and reductions ───────────────────────────────────

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.nodes[a.0].shape.dims != self.nodes[b.0].shape.dims {
            return Err(TensorError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].shape.dims, self.nodes[b.0].shape.dims
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        self.record(Op::Add(a, b), self.nodes[a.0].shape.clone(), "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        self.record(Op::Sub(a, b), self.nodes[a.0].shape.clone(), "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        self.record(Op::Mul(a, b), self.nodes[a.0].shape.clone(), "mul")
    }

    /// Elementwise max; at a tie, the gradient routes to the first argument.
    pub fn max_pair(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "max")?;
        self.record(Op::MaxPair(a, b), self.nodes[a.0].shape.clone(), "max")
    }

    pub fn scalar_mul(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.record(Op::ScalarMul(a, c), self.nodes[a.0].shape.clone(), "scalar_mul")
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.record(Op::AddScalar(a, c), self.nodes[a.0].shape.clone(), "add_scalar")
    }

    /// Elementwise `max(x, c)`; at a tie the gradient routes to `x`.
    pub fn max_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.record(Op::MaxScalar(a, c), self.nodes[a.0].shape.clone(), "max_scalar")
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        self.record(Op::Sum(a), TensorShape::scalar(), "sum")
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.nodes[a.0].shape.elem_count() as f64;
        let s = self.sum(a)?;
        self.scalar_mul(s, 1.0 / n)
    }

    /// Maximum over a list of scalars; the gradient routes to the first
    /// input attaining the maximum.
    pub fn max_many(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        if ids.is_empty() {
            return Err(TensorError::EmptyInputs("max_many"));
        }
        for &id in ids {
            if !self.nodes[id.0].shape.is_scalar() {
                return Err(TensorError::BadRank {
                    expected: "scalar inputs",
                    got: self.nodes[id.0].shape.dims.clone(),
                });
            }
        }
        self.record(Op::MaxMany(ids.to_vec()), TensorShape::scalar(), "max_many")
    }

    /// Rectified linear unit; the gradient at exactly zero is zero.
    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.record(Op::Relu(a), self.nodes[a.0].shape.clone(), "relu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        self.record(Op::Softmax(a), self.nodes[a.0].shape.clone(), "softmax")
    }

    pub fn reshape(&mut self, a: TensorId, dims: Vec<usize>) -> Result<TensorId> {
        let shape = TensorShape::new(dims);
        if shape.elem_count() != self.nodes[a.0].shape.elem_count() {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape {:?} -> {:?}",
                self.nodes[a.0].shape.dims, shape.dims
            )));
        }
        self.record(Op::Reshape(a), shape, "reshape")
    }

    // ── Neural network ops ───────────────────────────────────────────

    /// Affine map: `input [B, F] x weight [F, O] + bias [O]`.
    pub fn dense(&mut self, input: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let in_dims = &self.nodes[input.0].shape.dims;
        let w_dims = &self.nodes[weight.0].shape.dims;
        let b_dims = &self.nodes[bias.0].shape.dims;
        if in_dims.len() != 2 {
            return Err(TensorError::BadRank { expected: "[B, F] input", got: in_dims.clone() });
        }
        if w_dims.len() != 2 || w_dims[0] != in_dims[1] {
            return Err(TensorError::ShapeMismatch(format!(
                "dense weight {w_dims:?} incompatible with input {in_dims:?}"
            )));
        }
        if b_dims.len() != 1 || b_dims[0] != w_dims[1] {
            return Err(TensorError::ShapeMismatch(format!(
                "dense bias {b_dims:?} incompatible with weight {w_dims:?}"
            )));
        }
        let shape = TensorShape::new(vec![in_dims[0], w_dims[1]]);
        self.record(Op::Dense { input, weight, bias }, shape, "dense")
    }

    /// 2-D convolution, NHWC activations, weight `[kh, kw, cin/groups, cout]`.
    /// `groups == 1` is a standard convolution; `groups == cin` is depthwise.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        padding: Padding,
        groups: usize,
    ) -> Result<TensorId> {
        let in_dims = self.nodes[input.0].shape.dims.clone();
        let w_dims = self.nodes[weight.0].shape.dims.clone();
        let b_dims = self.nodes[bias.0].shape.dims.clone();
        if in_dims.len() != 4 {
            return Err(TensorError::BadRank { expected: "[B, H, W, C] input", got: in_dims });
        }
        if w_dims.len() != 4 {
            return Err(TensorError::BadRank { expected: "[kh, kw, cin/groups, cout] weight", got: w_dims });
        }
        let (batch, in_h, in_w, cin) = (in_dims[0], in_dims[1], in_dims[2], in_dims[3]);
        let (kh, kw, cin_g, cout) = (w_dims[0], w_dims[1], w_dims[2], w_dims[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(TensorError::BadGroups { groups, cin, cout });
        }
        if cin_g != cin / groups {
            return Err(TensorError::ShapeMismatch(format!(
                "weight expects {cin_g} channels per group, input provides {}",
                cin / groups
            )));
        }
        if b_dims != [cout] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv bias {b_dims:?} incompatible with {cout} output channels"
            )));
        }
        if padding == Padding::Valid && (kh > in_h || kw > in_w) {
            return Err(TensorError::WindowTooLarge { kh, kw, h: in_h, w: in_w });
        }
        let (out_h, pad_top) = kernels::conv_axis(in_h, kh, stride, padding);
        let (out_w, pad_left) = kernels::conv_axis(in_w, kw, stride, padding);
        let shape = TensorShape::new(vec![batch, out_h, out_w, cout]);
        self.record(
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                groups,
                pad: (pad_top, pad_left),
                out_hw: (out_h, out_w),
            },
            shape,
            "conv2d",
        )
    }

    /// Per-channel learnable scale and bias over the last axis
    /// (deployment-foldable normalization).
    pub fn channel_affine(&mut self, input: TensorId, scale: TensorId, bias: TensorId) -> Result<TensorId> {
        let c = self.nodes[input.0].shape.channels();
        for (id, what) in [(scale, "scale"), (bias, "bias")] {
            if self.nodes[id.0].shape.dims != [c] {
                return Err(TensorError::ShapeMismatch(format!(
                    "channel_affine {what} {:?} incompatible with {c} channels",
                    self.nodes[id.0].shape.dims
                )));
            }
        }
        self.record(
            Op::ChannelAffine { input, scale, bias },
            self.nodes[input.0].shape.clone(),
            "channel_affine",
        )
    }

    pub fn avg_pool2d(
        &mut self,
        input: TensorId,
        (kh, kw): (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<TensorId> {
        let dims = self.nodes[input.0].shape.dims.clone();
        if dims.len() != 4 {
            return Err(TensorError::BadRank { expected: "[B, H, W, C] input", got: dims });
        }
        let (batch, in_h, in_w, c) = (dims[0], dims[1], dims[2], dims[3]);
        if padding == Padding::Valid && (kh > in_h || kw > in_w) {
            return Err(TensorError::WindowTooLarge { kh, kw, h: in_h, w: in_w });
        }
        let (out_h, pad_top) = kernels::conv_axis(in_h, kh, stride, padding);
        let (out_w, pad_left) = kernels::conv_axis(in_w, kw, stride, padding);
        let shape = TensorShape::new(vec![batch, out_h, out_w, c]);
        self.record(
            Op::AvgPool2d {
                input,
                kh,
                kw,
                stride,
                pad: (pad_top, pad_left),
                out_hw: (out_h, out_w),
            },
            shape,
            "avg_pool2d",
        )
    }

    /// Mean over both spatial axes: `[B, H, W, C] -> [B, C]`.
    pub fn global_avg_pool(&mut self, input: TensorId) -> Result<TensorId> {
        let dims = self.nodes[input.0].shape.dims.clone();
        if dims.len() != 4 {
            return Err(TensorError::BadRank { expected: "[B, H, W, C] input", got: dims });
        }
        let shape = TensorShape::new(vec![dims[0], dims[3]]);
        self.record(Op::GlobalAvgPool(input), shape, "global_avg_pool")
    }

    /// Mean cross-entropy over the batch, numerically stabilized by
    /// max-subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let dims = self.nodes[logits.0].shape.dims.clone();
        if dims.len() != 2 {
            return Err(TensorError::BadRank { expected: "[B, classes] logits", got: dims });
        }
        let (batch, classes) = (dims[0], dims[1]);
        if labels.len() != batch {
            return Err(TensorError::ShapeMismatch(format!(
                "{} labels for batch of {batch}",
                labels.len()
            )));
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(TensorError::LabelOutOfRange { label, classes, row });
            }
        }
        self.record(
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() },
            TensorShape::scalar(),
            "softmax_cross_entropy",
        )
    }

    /// `sum_k w_k * input_k` over equal-shaped inputs, differentiable in both
    /// the inputs and the weight vector.
    pub fn weighted_sum(&mut self, inputs: &[TensorId], weights: TensorId) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(TensorError::EmptyInputs("weighted_sum"));
        }
        for &id in &inputs[1..] {
            self.same_shape(inputs[0], id, "weighted_sum")?;
        }
        if self.nodes[weights.0].shape.dims != [inputs.len()] {
            return Err(TensorError::ShapeMismatch(format!(
                "weighted_sum expects {} weights, got {:?}",
                inputs.len(),
                self.nodes[weights.0].shape.dims
            )));
        }
        self.record(
            Op::WeightedSum { inputs: inputs.to_vec(), weights },
            self.nodes[inputs[0].0].shape.clone(),
            "weighted_sum",
        )
    }

    /// Zero every channel at index >= `active`; gradients flow only through
    /// the surviving channels.
    pub fn channel_mask(&mut self, input: TensorId, active: usize) -> Result<TensorId> {
        let c = self.nodes[input.0].shape.channels();
        if active == 0 || active > c {
            return Err(TensorError::ActiveChannelsOutOfRange { active, channels: c });
        }
        self.record(
            Op::ChannelMask { input, active },
            self.nodes[input.0].shape.clone(),
            "channel_mask",
        )
    }

    /// Multiply channel `c` of the input by `gate[c]` (gate is a `[C]`
    /// tensor broadcast over the leading axes).
    pub fn scale_channels(&mut self, input: TensorId, gate: TensorId) -> Result<TensorId> {
        let c = self.nodes[input.0].shape.channels();
        if self.nodes[gate.0].shape.dims != [c] {
            return Err(TensorError::ShapeMismatch(format!(
                "scale_channels gate {:?} incompatible with {c} channels",
                self.nodes[gate.0].shape.dims
            )));
        }
        self.record(
            Op::ScaleChannels { input, gate },
            self.nodes[input.0].shape.clone(),
            "scale_channels",
        )
    }

    /// Uniform affine quantize-dequantize with learnable range scalars.
    ///
    /// Round-half-to-even onto a grid whose zero point is nudged so zero is
    /// exactly representable. Straight-through input gradient inside the
    /// clamp range, zero outside; the range scalars receive gradients from
    /// the clamped elements only. A symmetric signed range is obtained by
    /// passing `range_min = scalar_mul(range_max, -1)`.
    pub fn fake_quant(
        &mut self,
        input: TensorId,
        bits: u8,
        range_min: TensorId,
        range_max: TensorId,
    ) -> Result<TensorId> {
        if bits != 4 && bits != 8 {
            return Err(TensorError::UnsupportedBits(bits));
        }
        for (id, what) in [(range_min, "range_min"), (range_max, "range_max")] {
            if !self.nodes[id.0].shape.is_scalar() {
                return Err(TensorError::ShapeMismatch(format!(
                    "fake_quant {what} must be a scalar, got {:?}",
                    self.nodes[id.0].shape.dims
                )));
            }
        }
        let lo = self.nodes[range_min.0].values[0];
        let hi = self.nodes[range_max.0].values[0];
        if !(lo < hi) {
            return Err(TensorError::DegenerateRange { min: lo, max: hi });
        }
        self.has_fake_quant = true;
        self.record(
            Op::FakeQuant { input, range_min, range_max, bits },
            self.nodes[input.0].shape.clone(),
            "fake_quant",
        )
    }

    // ── Forward evaluation ───────────────────────────────────────────

    fn vals(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub(crate) fn compute(&self, op: &Op, out_shape: &TensorShape) -> Result<Vec<f64>> {
        let out = match op {
            Op::Leaf => unreachable!("leaves are never recomputed"),
            Op::Add(a, b) => zip_map(self.vals(*a), self.vals(*b), |x, y| x + y),
            Op::Sub(a, b) => zip_map(self.vals(*a), self.vals(*b), |x, y| x - y),
            Op::Mul(a, b) => zip_map(self.vals(*a), self.vals(*b), |x, y| x * y),
            Op::MaxPair(a, b) => zip_map(self.vals(*a), self.vals(*b), f64::max),
            Op::ScalarMul(a, c) => self.vals(*a).iter().map(|x| x * c).collect(),
            Op::AddScalar(a, c) => self.vals(*a).iter().map(|x| x + c).collect(),
            Op::MaxScalar(a, c) => self.vals(*a).iter().map(|x| x.max(*c)).collect(),
            Op::Sum(a) => vec![self.vals(*a).iter().sum()],
            Op::MaxMany(ids) => {
                let mut m = f64::NEG_INFINITY;
                for &id in ids {
                    m = m.max(self.vals(id)[0]);
                }
                vec![m]
            }
            Op::Relu(a) => self.vals(*a).iter().map(|x| x.max(0.0)).collect(),
            Op::Softmax(a) => {
                let row_len = *self.nodes[a.0].shape.dims.last().unwrap();
                let mut out = vec![0.0; self.vals(*a).len()];
                kernels::softmax_rows(self.vals(*a), row_len, &mut out);
                out
            }
            Op::Reshape(a) => self.vals(*a).to_vec(),
            Op::Dense { input, weight, bias } => {
                let (b, f) = dims2(&self.nodes[input.0].shape);
                let o = self.nodes[weight.0].shape.dims[1];
                let (x, w, bv) = (self.vals(*input), self.vals(*weight), self.vals(*bias));
                let mut out = vec![0.0; b * o];
                for bi in 0..b {
                    for oi in 0..o {
                        let mut acc = bv[oi];
                        for fi in 0..f {
                            acc += x[bi * f + fi] * w[fi * o + oi];
                        }
                        out[bi * o + oi] = acc;
                    }
                }
                out
            }
            Op::Conv2d { input, weight, bias, stride, groups, pad, out_hw } => {
                let g = self.conv_geom(*input, *weight, *stride, *groups, *pad, *out_hw);
                let mut out = vec![0.0; out_shape.elem_count()];
                kernels::conv2d(self.vals(*input), self.vals(*weight), self.vals(*bias), &g, &mut out);
                out
            }
            Op::ChannelAffine { input, scale, bias } => {
                let c = self.nodes[input.0].shape.channels();
                let (s, bv) = (self.vals(*scale), self.vals(*bias));
                self.vals(*input)
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * s[i % c] + bv[i % c])
                    .collect()
            }
            Op::AvgPool2d { input, kh, kw, stride, pad, out_hw } => {
                let g = self.pool_geom(*input, *kh, *kw, *stride, *pad, *out_hw);
                let mut out = vec![0.0; out_shape.elem_count()];
                kernels::avg_pool2d(self.vals(*input), &g, &mut out);
                out
            }
            Op::GlobalAvgPool(a) => {
                let d = &self.nodes[a.0].shape.dims;
                let (b, h, w, c) = (d[0], d[1], d[2], d[3]);
                let x = self.vals(*a);
                let mut out = vec![0.0; b * c];
                for bi in 0..b {
                    for hi in 0..h {
                        for wi in 0..w {
                            let base = ((bi * h + hi) * w + wi) * c;
                            for ci in 0..c {
                                out[bi * c + ci] += x[base + ci];
                            }
                        }
                    }
                }
                let denom = (h * w) as f64;
                out.iter_mut().for_each(|v| *v /= denom);
                out
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let (b, c) = dims2(&self.nodes[logits.0].shape);
                let x = self.vals(*logits);
                let mut total = 0.0;
                for bi in 0..b {
                    let row = &x[bi * c..(bi + 1) * c];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    total += lse - row[labels[bi]];
                }
                vec![total / b as f64]
            }
            Op::WeightedSum { inputs, weights } => {
                let w = self.vals(*weights).to_vec();
                let mut out = vec![0.0; out_shape.elem_count()];
                for (k, &id) in inputs.iter().enumerate() {
                    for (o, &x) in out.iter_mut().zip(self.vals(id)) {
                        *o += w[k] * x;
                    }
                }
                out
            }
            Op::ChannelMask { input, active } => {
                let c = self.nodes[input.0].shape.channels();
                self.vals(*input)
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| if i % c < *active { x } else { 0.0 })
                    .collect()
            }
            Op::ScaleChannels { input, gate } => {
                let c = self.nodes[input.0].shape.channels();
                let g = self.vals(*gate);
                self.vals(*input)
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x * g[i % c])
                    .collect()
            }
            Op::FakeQuant { input, range_min, range_max, bits } => {
                let q = kernels::quant_geom(
                    self.vals(*range_min)[0],
                    self.vals(*range_max)[0],
                    *bits,
                );
                let mut out = vec![0.0; out_shape.elem_count()];
                kernels::fake_quant(self.vals(*input), &q, &mut out);
                out
            }
        };
        Ok(out)
    }

    pub(crate) fn conv_geom(
        &self,
        input: TensorId,
        weight: TensorId,
        stride: usize,
        groups: usize,
        pad: (usize, usize),
        out_hw: (usize, usize),
    ) -> ConvGeom {
        let i = &self.nodes[input.0].shape.dims;
        let w = &self.nodes[weight.0].shape.dims;
        ConvGeom {
            batch: i[0],
            in_h: i[1],
            in_w: i[2],
            cin: i[3],
            kh: w[0],
            kw: w[1],
            cin_g: w[2],
            cout: w[3],
            stride,
            groups,
            pad_top: pad.0,
            pad_left: pad.1,
            out_h: out_hw.0,
            out_w: out_hw.1,
        }
    }

    pub(crate) fn pool_geom(
        &self,
        input: TensorId,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: (usize, usize),
        out_hw: (usize, usize),
    ) -> PoolGeom {
        let i = &self.nodes[input.0].shape.dims;
        PoolGeom {
            batch: i[0],
            in_h: i[1],
            in_w: i[2],
            channels: i[3],
            kh,
            kw,
            stride,
            pad_top: pad.0,
            pad_left: pad.1,
            out_h: out_hw.0,
            out_w: out_hw.1,
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn dims2(shape: &TensorShape) -> (usize, usize) {
    (shape.dims[0], shape.dims[1])
}
