//! Decision-weighted resources as differentiable tape expressions.
//!
//! Size and op count are multilinear in the decision weights (each node's
//! cost couples its own decision with the width expectation of its input);
//! working memory is a max of such terms, differentiated by subgradient to
//! the first maximal node. At one-hot weights every expression evaluates,
//! exactly, to the discrete report of the selected architecture.

use super::{check_bits, Result, ResourceError};
use crate::supernet::{ChannelSrc, DecisionKind, IrOp, Supernet};
use crate::tensor::{Tape, TensorId};
use std::collections::HashMap;

/// Differentiable scalars on the tape.
pub struct ExpectedResources {
    pub param_bytes: TensorId,
    pub ops: TensorId,
    pub working_bytes: TensorId,
}

struct Ctx<'t> {
    tape: &'t mut Tape,
    /// Expected width per width decision.
    widths: HashMap<usize, TensorId>,
    /// z component scalars, keyed by (decision, option).
    components: HashMap<(usize, usize), TensorId>,
    z: Vec<TensorId>,
}

impl Ctx<'_> {
    fn expected_width(&mut self, d: usize, options: &[u32]) -> Result<TensorId> {
        if let Some(&id) = self.widths.get(&d) {
            return Ok(id);
        }
        let consts = self
            .tape
            .constant(options.iter().map(|&w| w as f64).collect(), vec![options.len()])?;
        let prod = self.tape.mul(self.z[d], consts)?;
        let id = self.tape.sum(prod)?;
        self.widths.insert(d, id);
        Ok(id)
    }

    fn z_component(&mut self, d: usize, k: usize) -> Result<TensorId> {
        if let Some(&id) = self.components.get(&(d, k)) {
            return Ok(id);
        }
        let len = self.tape.shape(self.z[d]).elem_count();
        let mut onehot = vec![0.0; len];
        onehot[k] = 1.0;
        let oh = self.tape.constant(onehot, vec![len])?;
        let prod = self.tape.mul(self.z[d], oh)?;
        let id = self.tape.sum(prod)?;
        self.components.insert((d, k), id);
        Ok(id)
    }

    fn expected_channels(&mut self, src: &ChannelSrc, supernet: &Supernet) -> Result<TensorId> {
        match src {
            ChannelSrc::Fixed(c) => Ok(self.tape.scalar(*c as f64)?),
            ChannelSrc::Decision(d) => {
                let DecisionKind::Width { options } = &supernet.decisions[*d].kind else {
                    unreachable!("width sources reference width decisions");
                };
                self.expected_width(*d, &options.clone())
            }
            ChannelSrc::DepthMix { decision, skip, block } => {
                let e_skip = self.expected_channels(skip, supernet)?;
                let e_block = self.expected_channels(block, supernet)?;
                let z_skip = self.z_component(*decision, 0)?;
                let z_block = self.z_component(*decision, 1)?;
                let a = self.tape.mul(z_skip, e_skip)?;
                let b = self.tape.mul(z_block, e_block)?;
                Ok(self.tape.add(a, b)?)
            }
        }
    }
}

/// Build differentiable expected size / ops / working-memory expressions
/// for a supernet under decision weights `z` (one row per decision, each
/// summing to one within 1e-6).
pub fn expected_resources(
    tape: &mut Tape,
    supernet: &Supernet,
    z: &[TensorId],
    weight_bits: u8,
    activation_bits: u8,
) -> Result<ExpectedResources> {
    check_bits(weight_bits)?;
    check_bits(activation_bits)?;
    assert_eq!(z.len(), supernet.decisions.len(), "one z row per decision");
    for (d, decision) in supernet.decisions.iter().enumerate() {
        let row = tape.values(z[d]);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ResourceError::ZNotNormalized { decision: decision.id.clone(), sum });
        }
        assert_eq!(row.len(), decision.num_options(), "z row length per decision");
    }

    let wbytes = weight_bits as f64 / 8.0;
    let abytes = activation_bits as f64 / 8.0;
    let mut ctx = Ctx {
        tape,
        widths: HashMap::new(),
        components: HashMap::new(),
        z: z.to_vec(),
    };

    let mut ops_terms: Vec<TensorId> = Vec::new();
    let mut size_terms: Vec<TensorId> = Vec::new();
    let mut working_terms: Vec<TensorId> = Vec::new();

    for node in &supernet.nodes {
        let (ops_expr, size_expr): (Option<TensorId>, Option<TensorId>) = match &node.op {
            IrOp::Conv { kh, kw, depthwise, .. } => {
                let e_out = ctx.expected_channels(&node.out_channels, supernet)?;
                let spatial = (node.out_hw.0 * node.out_hw.1) as f64;
                let taps = (*kh * *kw) as f64;
                if *depthwise {
                    let ops = ctx.tape.scalar_mul(e_out, 2.0 * spatial * taps)?;
                    let wsum = ctx.tape.scalar_mul(e_out, taps * wbytes + 4.0)?;
                    (Some(ops), Some(wsum))
                } else {
                    let in_src = supernet.nodes[node.inputs[0]].out_channels.clone();
                    let e_in = ctx.expected_channels(&in_src, supernet)?;
                    let cross = ctx.tape.mul(e_in, e_out)?;
                    let ops = ctx.tape.scalar_mul(cross, 2.0 * spatial * taps)?;
                    let w = ctx.tape.scalar_mul(cross, taps * wbytes)?;
                    let b = ctx.tape.scalar_mul(e_out, 4.0)?;
                    (Some(ops), Some(ctx.tape.add(w, b)?))
                }
            }
            IrOp::Dense => {
                let input = &supernet.nodes[node.inputs[0]];
                let e_feat = if input.out_hw == (1, 1) {
                    ctx.expected_channels(&input.out_channels, supernet)?
                } else {
                    // flattening a spatial tensor requires a fixed width
                    let c = input.out_channels.max_channels(&supernet.decisions) as usize;
                    let features = input.out_hw.0 * input.out_hw.1 * c;
                    ctx.tape.scalar(features as f64)?
                };
                let classes = supernet.num_classes as f64;
                let ops = ctx.tape.scalar_mul(e_feat, 2.0 * classes)?;
                let size = ctx.tape.scalar_mul(e_feat, classes * wbytes)?;
                let size = ctx.tape.add_scalar(size, classes * 4.0)?;
                (Some(ops), Some(size))
            }
            IrOp::AvgPool { .. } | IrOp::GlobalAvgPool | IrOp::AddSkip => (None, None),
            IrOp::Input | IrOp::DepthMerge { .. } => {
                continue; // not deployment nodes
            }
        };

        // working memory: all live inputs plus the output
        let mut elems: Option<TensorId> = None;
        for &inp in &node.inputs {
            let producer = &supernet.nodes[inp];
            let e_c = ctx.expected_channels(&producer.out_channels, supernet)?;
            let spatial = (producer.out_hw.0 * producer.out_hw.1) as f64;
            let term = ctx.tape.scalar_mul(e_c, spatial)?;
            elems = Some(match elems {
                None => term,
                Some(acc) => ctx.tape.add(acc, term)?,
            });
        }
        let e_out = ctx.expected_channels(&node.out_channels, supernet)?;
        let out_term = ctx
            .tape
            .scalar_mul(e_out, (node.out_hw.0 * node.out_hw.1) as f64)?;
        let total_elems = match elems {
            None => out_term,
            Some(acc) => ctx.tape.add(acc, out_term)?,
        };
        let mut working = ctx.tape.scalar_mul(total_elems, abytes)?;

        let mut ops_expr = ops_expr;
        let mut size_expr = size_expr;
        if let Some((d, branch)) = node.depth_scope {
            let scale = ctx.z_component(d, branch)?;
            working = ctx.tape.mul(working, scale)?;
            if let Some(o) = ops_expr {
                ops_expr = Some(ctx.tape.mul(o, scale)?);
            }
            if let Some(s) = size_expr {
                size_expr = Some(ctx.tape.mul(s, scale)?);
            }
        }

        working_terms.push(working);
        if let Some(o) = ops_expr {
            ops_terms.push(o);
        }
        if let Some(s) = size_expr {
            size_terms.push(s);
        }
    }

    let fold_sum = |tape: &mut Tape, terms: &[TensorId]| -> Result<TensorId> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        Ok(acc)
    };
    let ops = fold_sum(ctx.tape, &ops_terms)?;
    let param_bytes = fold_sum(ctx.tape, &size_terms)?;
    let working_bytes = ctx.tape.max_many(&working_terms)?;

    Ok(ExpectedResources { param_bytes, ops, working_bytes })
}
