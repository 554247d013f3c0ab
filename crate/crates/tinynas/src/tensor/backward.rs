//! Reverse pass: walks the tape backwards accumulating vector-Jacobian
//! products into per-node adjoints, then folds them into the stored grads.

use super::kernels;
use super::tape::{dims2, Op, Tape, TensorId};
use super::{Result, TensorError};

impl Tape {
    /// Populate `grad` for every `requires_grad` tensor reachable from the
    /// scalar `loss`. Repeated calls accumulate until [`Tape::reset_grads`].
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.nodes[loss.0].shape.is_scalar() {
            return Err(TensorError::NonScalarLoss(
                self.nodes[loss.0].shape.dims.clone(),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            adj[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(gy) = adj[i].take() else { continue };
            self.propagate(i, &gy, &mut adj);
            let node = &mut self.nodes[i];
            let grad = node.grad.get_or_insert_with(|| vec![0.0; gy.len()]);
            for (g, a) in grad.iter_mut().zip(&gy) {
                *g += a;
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, gy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let op = &self.nodes[idx].op;
        let needs = |t: &Tape, id: TensorId| t.nodes[id.0].requires_grad;
        let push = |adj: &mut [Option<Vec<f64>>], id: TensorId, mut write: Box<dyn FnMut(&mut [f64]) + '_>| {
            if !needs(self, id) {
                return;
            }
            let buf = adj[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].values.len()]);
            write(buf);
        };

        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                push(adj, *a, Box::new(|d| acc(d, gy, |g| g)));
                push(adj, *b, Box::new(|d| acc(d, gy, |g| g)));
            }
            Op::Sub(a, b) => {
                push(adj, *a, Box::new(|d| acc(d, gy, |g| g)));
                push(adj, *b, Box::new(|d| acc(d, gy, |g| -g)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                push(adj, *a, Box::new(|d| {
                    for ((d, &g), &y) in d.iter_mut().zip(gy).zip(bv.iter()) {
                        *d += g * y;
                    }
                }));
                push(adj, *b, Box::new(|d| {
                    for ((d, &g), &x) in d.iter_mut().zip(gy).zip(av.iter()) {
                        *d += g * x;
                    }
                }));
            }
            Op::MaxPair(a, b) => {
                let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                // tie routes to the first argument
                push(adj, *a, Box::new(|d| {
                    for i in 0..d.len() {
                        if av[i] >= bv[i] {
                            d[i] += gy[i];
                        }
                    }
                }));
                push(adj, *b, Box::new(|d| {
                    for i in 0..d.len() {
                        if bv[i] > av[i] {
                            d[i] += gy[i];
                        }
                    }
                }));
            }
            Op::ScalarMul(a, c) => {
                let c = *c;
                push(adj, *a, Box::new(move |d| acc(d, gy, move |g| g * c)));
            }
            Op::AddScalar(a, _) => push(adj, *a, Box::new(|d| acc(d, gy, |g| g))),
            Op::MaxScalar(a, c) => {
                let av = &self.nodes[a.0].values;
                let c = *c;
                push(adj, *a, Box::new(move |d| {
                    for i in 0..d.len() {
                        if av[i] >= c {
                            d[i] += gy[i];
                        }
                    }
                }));
            }
            Op::Sum(a) => {
                push(adj, *a, Box::new(|d| d.iter_mut().for_each(|v| *v += gy[0])));
            }
            Op::MaxMany(ids) => {
                // first maximal input wins the subgradient
                let mut best = ids[0];
                for &id in &ids[1..] {
                    if self.nodes[id.0].values[0] > self.nodes[best.0].values[0] {
                        best = id;
                    }
                }
                push(adj, best, Box::new(|d| d[0] += gy[0]));
            }
            Op::Relu(a) => {
                let av = &self.nodes[a.0].values;
                // gradient at exactly zero is zero
                push(adj, *a, Box::new(|d| {
                    for i in 0..d.len() {
                        if av[i] > 0.0 {
                            d[i] += gy[i];
                        }
                    }
                }));
            }
            Op::Softmax(a) => {
                let y = &self.nodes[idx].values;
                let row_len = *self.nodes[a.0].shape.dims.last().unwrap();
                push(adj, *a, Box::new(|d| {
                    for r in 0..d.len() / row_len {
                        let s = r * row_len;
                        let dot: f64 = (0..row_len).map(|j| gy[s + j] * y[s + j]).sum();
                        for j in 0..row_len {
                            d[s + j] += y[s + j] * (gy[s + j] - dot);
                        }
                    }
                }));
            }
            Op::Reshape(a) => push(adj, *a, Box::new(|d| acc(d, gy, |g| g))),
            Op::Dense { input, weight, bias } => {
                let (b, f) = dims2(&self.nodes[input.0].shape);
                let o = self.nodes[weight.0].shape.dims[1];
                let x = &self.nodes[input.0].values;
                let w = &self.nodes[weight.0].values;
                push(adj, *input, Box::new(|d| {
                    for bi in 0..b {
                        for fi in 0..f {
                            let mut g = 0.0;
                            for oi in 0..o {
                                g += w[fi * o + oi] * gy[bi * o + oi];
                            }
                            d[bi * f + fi] += g;
                        }
                    }
                }));
                push(adj, *weight, Box::new(|d| {
                    for bi in 0..b {
                        for fi in 0..f {
                            let xv = x[bi * f + fi];
                            for oi in 0..o {
                                d[fi * o + oi] += xv * gy[bi * o + oi];
                            }
                        }
                    }
                }));
                push(adj, *bias, Box::new(|d| {
                    for bi in 0..b {
                        for oi in 0..o {
                            d[oi] += gy[bi * o + oi];
                        }
                    }
                }));
            }
            Op::Conv2d { input, weight, bias, stride, groups, pad, out_hw } => {
                let g = self.conv_geom(*input, *weight, *stride, *groups, *pad, *out_hw);
                let x = &self.nodes[input.0].values;
                let w = &self.nodes[weight.0].values;
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; self.nodes[bias.0].values.len()];
                kernels::conv2d_backward(x, w, &g, gy, &mut dx, &mut dw, &mut db);
                push(adj, *input, Box::new(|d| acc_from(d, &dx)));
                push(adj, *weight, Box::new(|d| acc_from(d, &dw)));
                push(adj, *bias, Box::new(|d| acc_from(d, &db)));
            }
            Op::ChannelAffine { input, scale, bias } => {
                let c = self.nodes[input.0].shape.channels();
                let x = &self.nodes[input.0].values;
                let s = &self.nodes[scale.0].values;
                push(adj, *input, Box::new(|d| {
                    for i in 0..d.len() {
                        d[i] += s[i % c] * gy[i];
                    }
                }));
                push(adj, *scale, Box::new(|d| {
                    for i in 0..x.len() {
                        d[i % c] += x[i] * gy[i];
                    }
                }));
                push(adj, *bias, Box::new(|d| {
                    for i in 0..x.len() {
                        d[i % c] += gy[i];
                    }
                }));
            }
            Op::AvgPool2d { input, kh, kw, stride, pad, out_hw } => {
                let g = self.pool_geom(*input, *kh, *kw, *stride, *pad, *out_hw);
                let mut dx = vec![0.0; self.nodes[input.0].values.len()];
                kernels::avg_pool2d_backward(&g, gy, &mut dx);
                push(adj, *input, Box::new(|d| acc_from(d, &dx)));
            }
            Op::GlobalAvgPool(a) => {
                let dims = &self.nodes[a.0].shape.dims;
                let (h, w, c) = (dims[1], dims[2], dims[3]);
                let denom = (h * w) as f64;
                push(adj, *a, Box::new(|d| {
                    for (i, v) in d.iter_mut().enumerate() {
                        let bi = i / (h * w * c);
                        let ci = i % c;
                        *v += gy[bi * c + ci] / denom;
                    }
                }));
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let (b, c) = dims2(&self.nodes[logits.0].shape);
                let x = &self.nodes[logits.0].values;
                push(adj, *logits, Box::new(|d| {
                    let scale = gy[0] / b as f64;
                    let mut probs = vec![0.0; c];
                    for bi in 0..b {
                        kernels::softmax_rows(&x[bi * c..(bi + 1) * c], c, &mut probs);
                        for ci in 0..c {
                            let indicator = if ci == labels[bi] { 1.0 } else { 0.0 };
                            d[bi * c + ci] += (probs[ci] - indicator) * scale;
                        }
                    }
                }));
            }
            Op::WeightedSum { inputs, weights } => {
                let wv = self.nodes[weights.0].values.clone();
                for (k, &inp) in inputs.iter().enumerate() {
                    let wk = wv[k];
                    push(adj, inp, Box::new(move |d| acc(d, gy, move |g| g * wk)));
                }
                let dots: Vec<f64> = inputs
                    .iter()
                    .map(|&inp| {
                        self.nodes[inp.0]
                            .values
                            .iter()
                            .zip(gy)
                            .map(|(&x, &g)| x * g)
                            .sum()
                    })
                    .collect();
                push(adj, *weights, Box::new(|d| acc_from(d, &dots)));
            }
            Op::ChannelMask { input, active } => {
                let c = self.nodes[input.0].shape.channels();
                let active = *active;
                push(adj, *input, Box::new(move |d| {
                    for i in 0..d.len() {
                        if i % c < active {
                            d[i] += gy[i];
                        }
                    }
                }));
            }
            Op::ScaleChannels { input, gate } => {
                let c = self.nodes[input.0].shape.channels();
                let x = &self.nodes[input.0].values;
                let gv = &self.nodes[gate.0].values;
                push(adj, *input, Box::new(|d| {
                    for i in 0..d.len() {
                        d[i] += gv[i % c] * gy[i];
                    }
                }));
                push(adj, *gate, Box::new(|d| {
                    for i in 0..x.len() {
                        d[i % c] += x[i] * gy[i];
                    }
                }));
            }
            Op::FakeQuant { input, range_min, range_max, bits } => {
                let q = kernels::quant_geom(
                    self.nodes[range_min.0].values[0],
                    self.nodes[range_max.0].values[0],
                    *bits,
                );
                let x = &self.nodes[input.0].values;
                push(adj, *input, Box::new(|d| {
                    // straight-through inside the clamp range
                    for i in 0..d.len() {
                        if x[i] >= q.nudged_min && x[i] <= q.nudged_max {
                            d[i] += gy[i];
                        }
                    }
                }));
                let mut d_lo = 0.0;
                let mut d_hi = 0.0;
                for (i, &xv) in x.iter().enumerate() {
                    if xv < q.nudged_min {
                        d_lo += gy[i] * q.dmin.0;
                        d_hi += gy[i] * q.dmin.1;
                    } else if xv > q.nudged_max {
                        d_lo += gy[i] * q.dmax.0;
                        d_hi += gy[i] * q.dmax.1;
                    }
                }
                push(adj, *range_min, Box::new(move |d| d[0] += d_lo));
                push(adj, *range_max, Box::new(move |d| d[0] += d_hi));
            }
        }
    }
}

fn acc(dst: &mut [f64], gy: &[f64], f: impl Fn(f64) -> f64) {
    for (d, &g) in dst.iter_mut().zip(gy) {
        *d += f(g);
    }
}

fn acc_from(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
