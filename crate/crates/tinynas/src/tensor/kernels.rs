//! Forward kernels shared by graph construction and re-evaluation.
//!
//! Plain loop nests: the search problems this crate targets are desk-scale,
//! so clarity wins over blocking/SIMD.

use super::Padding;

/// Output extent and begin-padding for one spatial axis.
pub(crate) fn conv_axis(len: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            (out, total / 2)
        }
        Padding::Valid => ((len - k) / stride + 1, 0),
    }
}

pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cin_g: usize,
    pub cout: usize,
    pub stride: usize,
    pub groups: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Weight layout is `[kh, kw, cin/groups, cout]`, row-major.
pub(crate) fn conv2d(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: &ConvGeom,
    out: &mut [f64],
) {
    let cout_g = g.cout / g.groups;
    for b in 0..g.batch {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let out_base = ((b * g.out_h + oh) * g.out_w + ow) * g.cout;
                for co in 0..g.cout {
                    let grp = co / cout_g;
                    let mut acc = bias[co];
                    for ki in 0..g.kh {
                        let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                        if ih < 0 || ih >= g.in_h as isize {
                            continue;
                        }
                        for kj in 0..g.kw {
                            let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                            if iw < 0 || iw >= g.in_w as isize {
                                continue;
                            }
                            let in_base =
                                ((b * g.in_h + ih as usize) * g.in_w + iw as usize) * g.cin;
                            let w_base = ((ki * g.kw + kj) * g.cin_g) * g.cout + co;
                            for ci_g in 0..g.cin_g {
                                let ci = grp * g.cin_g + ci_g;
                                acc += input[in_base + ci] * weight[w_base + ci_g * g.cout];
                            }
                        }
                    }
                    out[out_base + co] = acc;
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    g: &ConvGeom,
    d_out: &[f64],
    d_input: &mut [f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) {
    let cout_g = g.cout / g.groups;
    for b in 0..g.batch {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let out_base = ((b * g.out_h + oh) * g.out_w + ow) * g.cout;
                for co in 0..g.cout {
                    let gy = d_out[out_base + co];
                    if gy == 0.0 {
                        continue;
                    }
                    let grp = co / cout_g;
                    d_bias[co] += gy;
                    for ki in 0..g.kh {
                        let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                        if ih < 0 || ih >= g.in_h as isize {
                            continue;
                        }
                        for kj in 0..g.kw {
                            let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                            if iw < 0 || iw >= g.in_w as isize {
                                continue;
                            }
                            let in_base =
                                ((b * g.in_h + ih as usize) * g.in_w + iw as usize) * g.cin;
                            let w_base = ((ki * g.kw + kj) * g.cin_g) * g.cout + co;
                            for ci_g in 0..g.cin_g {
                                let ci = grp * g.cin_g + ci_g;
                                d_input[in_base + ci] += weight[w_base + ci_g * g.cout] * gy;
                                d_weight[w_base + ci_g * g.cout] += input[in_base + ci] * gy;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct PoolGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Average pooling; padded positions are excluded from the mean.
pub(crate) fn avg_pool2d(input: &[f64], g: &PoolGeom, out: &mut [f64]) {
    pool_visit(g, |b, oh, ow, window, count| {
        let out_base = ((b * g.out_h + oh) * g.out_w + ow) * g.channels;
        for c in 0..g.channels {
            let mut acc = 0.0;
            for &in_base in window {
                acc += input[in_base + c];
            }
            out[out_base + c] = acc / count as f64;
        }
    });
}

pub(crate) fn avg_pool2d_backward(g: &PoolGeom, d_out: &[f64], d_input: &mut [f64]) {
    pool_visit(g, |b, oh, ow, window, count| {
        let out_base = ((b * g.out_h + oh) * g.out_w + ow) * g.channels;
        for c in 0..g.channels {
            let gy = d_out[out_base + c] / count as f64;
            for &in_base in window {
                d_input[in_base + c] += gy;
            }
        }
    });
}

fn pool_visit<F: FnMut(usize, usize, usize, &[usize], usize)>(g: &PoolGeom, mut f: F) {
    let mut window = Vec::with_capacity(g.kh * g.kw);
    for b in 0..g.batch {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                window.clear();
                for ki in 0..g.kh {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    for kj in 0..g.kw {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if iw < 0 || iw >= g.in_w as isize {
                            continue;
                        }
                        window
                            .push(((b * g.in_h + ih as usize) * g.in_w + iw as usize) * g.channels);
                    }
                }
                let count = window.len();
                f(b, oh, ow, &window, count);
            }
        }
    }
}

/// Row-wise softmax over the last axis with max-subtraction.
pub(crate) fn softmax_rows(input: &[f64], row_len: usize, out: &mut [f64]) {
    for (row_in, row_out) in input.chunks(row_len).zip(out.chunks_mut(row_len)) {
        let m = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &x) in row_out.iter_mut().zip(row_in) {
            let e = (x - m).exp();
            *o = e;
            denom += e;
        }
        for o in row_out.iter_mut() {
            *o /= denom;
        }
    }
}

pub(crate) struct QuantGeom {
    /// Grid step `(max - min) / (2^bits - 1)`.
    pub step: f64,
    /// Clamp bounds nudged so the grid passes exactly through zero.
    pub nudged_min: f64,
    pub nudged_max: f64,
    /// d nudged_min / d (range_min, range_max) and same for nudged_max;
    /// the zero point is piecewise constant so these are the only terms.
    pub dmin: (f64, f64),
    pub dmax: (f64, f64),
}

/// Uniform affine quantize-dequantize parameters with zero-point nudging,
/// the convention of common 8-bit integer inference stacks.
pub(crate) fn quant_geom(range_min: f64, range_max: f64, bits: u8) -> QuantGeom {
    let levels = ((1u32 << bits) - 1) as f64;
    let step = (range_max - range_min) / levels;
    let zero_point = (-range_min / step).round_ties_even().clamp(0.0, levels);
    let zp_frac = zero_point / levels;
    QuantGeom {
        step,
        nudged_min: -zero_point * step,
        nudged_max: (levels - zero_point) * step,
        dmin: (zp_frac, -zp_frac),
        dmax: (-(1.0 - zp_frac), 1.0 - zp_frac),
    }
}

pub(crate) fn fake_quant(input: &[f64], q: &QuantGeom, out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(input) {
        let clamped = x.clamp(q.nudged_min, q.nudged_max);
        *o = (clamped / q.step).round_ties_even() * q.step;
    }
}
