//! Forward kernels and backward rules for every primitive.

use super::{Node, Op, Var};
use num_complex::Complex64;
use rayon::prelude::*;
use std::rc::Rc;

const CHANNEL_NORM_EPS: f64 = 1e-6;

/// Spatial size below which conv2d stays single-threaded.
const CONV_PAR_MIN: usize = 32 * 32;

fn shape_of(v: &Var) -> Vec<usize> {
    v.shape()
}

pub(super) fn unary_elementwise(x: &Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
    let requires = x.tape().requires(&[x.id()]);
    let data = x.with_value(|xs| xs.iter().map(|&a| f(a)).collect());
    x.tape().push(shape_of(x), data, requires, op)
}

pub(super) fn binary_elementwise(
    a: &Var,
    b: &Var,
    op: Op,
    f: impl Fn(f64, f64) -> f64,
) -> Var {
    assert_eq!(
        a.shape(),
        b.shape(),
        "elementwise op on mismatched shapes {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let requires = a.tape().requires(&[a.id(), b.id()]);
    let data = a.with_value(|xs| {
        b.with_value(|ys| xs.iter().zip(ys).map(|(&x, &y)| f(x, y)).collect())
    });
    a.tape().push(shape_of(a), data, requires, op)
}

pub(super) fn matmul(a: &Var, b: &Var) -> Var {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(sa.len() == 2 && sb.len() == 2, "matmul expects rank-2 tensors");
    assert_eq!(sa[1], sb[0], "matmul inner dimensions {} vs {}", sa[1], sb[0]);
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let data = a.with_value(|av| {
        b.with_value(|bv| {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
            out
        })
    });
    let requires = a.tape().requires(&[a.id(), b.id()]);
    a.tape().push(vec![m, n], data, requires, Op::Matmul(a.id(), b.id()))
}

fn conv_dims(x_shape: &[usize], w_shape: &[usize], b_shape: &[usize]) -> (usize, usize, usize, usize, usize, usize) {
    assert_eq!(x_shape.len(), 3, "conv2d input must be (C, H, W)");
    assert_eq!(w_shape.len(), 4, "conv2d weight must be (Co, Ci, kh, kw)");
    assert_eq!(b_shape.len(), 1, "conv2d bias must be (Co)");
    let (ci, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let (co, wci, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    assert_eq!(ci, wci, "conv2d channel mismatch");
    assert_eq!(co, b_shape[0], "conv2d bias length mismatch");
    assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d kernels must be odd-sized");
    (ci, h, w, co, kh, kw)
}

/// `(output range, shifted input range)` of equal length for a horizontal
/// kernel offset; slices of these ranges zip cleanly so the inner loops
/// vectorize.
fn shift_ranges(w: usize, shift: isize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let lo = (-shift).max(0) as usize;
    let hi = (w as isize - shift.max(0)) as usize;
    let src_lo = (lo as isize + shift) as usize;
    (lo..hi, src_lo..src_lo + (hi - lo))
}

fn conv2d_forward(
    x: &[f64],
    wt: &[f64],
    bias: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; co * h * w];
    let run = |(o, plane): (usize, &mut [f64])| {
        plane.fill(bias[o]);
        for c in 0..ci {
            let xplane = &x[c * h * w..(c + 1) * h * w];
            for u in 0..kh {
                for v in 0..kw {
                    let k = wt[((o * ci + c) * kh + u) * kw + v];
                    if k == 0.0 {
                        continue;
                    }
                    let (dst, src) = shift_ranges(w, v as isize - pw as isize);
                    // Output rows where the shifted input row is in range.
                    for r in 0..h {
                        let ir = r as isize + u as isize - ph as isize;
                        if ir < 0 || ir >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[ir as usize * w + src.start..ir as usize * w + src.end];
                        let orow = &mut plane[r * w + dst.start..r * w + dst.end];
                        for (o, xv) in orow.iter_mut().zip(xrow) {
                            *o += k * xv;
                        }
                    }
                }
            }
        }
    };
    if h * w >= CONV_PAR_MIN {
        out.par_chunks_mut(h * w).enumerate().for_each(run);
    } else {
        out.chunks_mut(h * w).enumerate().for_each(run);
    }
    out
}

pub(super) fn conv2d(x: &Var, weight: &Var, bias: &Var) -> Var {
    let (ci, h, w, co, kh, kw) = conv_dims(&x.shape(), &weight.shape(), &bias.shape());
    let data = x.with_value(|xv| {
        weight.with_value(|wv| {
            bias.with_value(|bv| conv2d_forward(xv, wv, bv, ci, h, w, co, kh, kw))
        })
    });
    let requires = x.tape().requires(&[x.id(), weight.id(), bias.id()]);
    x.tape().push(
        vec![co, h, w],
        data,
        requires,
        Op::Conv2d { x: x.id(), w: weight.id(), b: bias.id() },
    )
}

pub(super) fn upsample2(x: &Var) -> Var {
    let s = x.shape();
    assert_eq!(s.len(), 3, "upsample2 expects (C, H, W)");
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = x.with_value(|xv| {
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for r in 0..2 * h {
                for col in 0..2 * w {
                    out[(ch * 2 * h + r) * 2 * w + col] = xv[(ch * h + r / 2) * w + col / 2];
                }
            }
        }
        out
    });
    let requires = x.tape().requires(&[x.id()]);
    x.tape().push(vec![c, 2 * h, 2 * w], data, requires, Op::Upsample2(x.id()))
}

fn channel_stats(x: &[f64], c: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let plane = &x[ch * n..(ch + 1) * n];
        let m = crate::field::fft::pairwise_sum(plane) / n as f64;
        let sq: Vec<f64> = plane.iter().map(|&v| (v - m) * (v - m)).collect();
        let var = crate::field::fft::pairwise_sum(&sq) / n as f64;
        mu[ch] = m;
        inv_std[ch] = 1.0 / (var + CHANNEL_NORM_EPS).sqrt();
    }
    (mu, inv_std)
}

pub(super) fn channel_norm(x: &Var, gamma: &Var, beta: &Var) -> Var {
    let s = x.shape();
    assert_eq!(s.len(), 3, "channel_norm expects (C, H, W)");
    let c = s[0];
    assert_eq!(gamma.shape(), vec![c], "gamma must be (C)");
    assert_eq!(beta.shape(), vec![c], "beta must be (C)");
    let n = s[1] * s[2];
    let data = x.with_value(|xv| {
        gamma.with_value(|gv| {
            beta.with_value(|bv| {
                let (mu, inv_std) = channel_stats(xv, c, n);
                let mut out = vec![0.0; c * n];
                for ch in 0..c {
                    for i in 0..n {
                        let xhat = (xv[ch * n + i] - mu[ch]) * inv_std[ch];
                        out[ch * n + i] = xhat * gv[ch] + bv[ch];
                    }
                }
                out
            })
        })
    });
    let requires = x.tape().requires(&[x.id(), gamma.id(), beta.id()]);
    x.tape().push(
        s,
        data,
        requires,
        Op::ChannelNorm { x: x.id(), gamma: gamma.id(), beta: beta.id() },
    )
}

pub(super) fn channel_affine(x: &Var, scale: &Var, bias: &Var) -> Var {
    let s = x.shape();
    assert_eq!(s.len(), 3, "channel_affine expects (C, H, W)");
    let c = s[0];
    assert_eq!(scale.shape(), vec![c], "scale must be (C)");
    assert_eq!(bias.shape(), vec![c], "bias must be (C)");
    let n = s[1] * s[2];
    let data = x.with_value(|xv| {
        scale.with_value(|sv| {
            bias.with_value(|bv| {
                let mut out = vec![0.0; c * n];
                for ch in 0..c {
                    for i in 0..n {
                        out[ch * n + i] = xv[ch * n + i] * sv[ch] + bv[ch];
                    }
                }
                out
            })
        })
    });
    let requires = x.tape().requires(&[x.id(), scale.id(), bias.id()]);
    x.tape().push(
        s,
        data,
        requires,
        Op::ChannelAffine { x: x.id(), scale: scale.id(), bias: bias.id() },
    )
}

/// `(outer, mid, inner)` strides for slicing/concatenating along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

pub(super) fn slice(x: &Var, axis: usize, start: usize, len: usize) -> Var {
    let s = x.shape();
    let (outer, mid, inner) = axis_split(&s, axis);
    assert!(start + len <= mid, "slice {start}..{} out of range {mid}", start + len);
    assert!(len > 0, "empty slice");
    let data = x.with_value(|xv| {
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = &xv[(o * mid + start) * inner..(o * mid + start + len) * inner];
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        out
    });
    let mut out_shape = s.clone();
    out_shape[axis] = len;
    let requires = x.tape().requires(&[x.id()]);
    x.tape().push(out_shape, data, requires, Op::Slice { x: x.id(), axis, start, len })
}

pub(super) fn concat(parts: &[&Var], axis: usize) -> Var {
    let first_shape = parts[0].shape();
    let (outer, _, inner) = axis_split(&first_shape, axis);
    let mut mids = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        assert_eq!(s.len(), first_shape.len(), "concat rank mismatch");
        for (d, (&a, &b)) in s.iter().zip(&first_shape).enumerate() {
            if d != axis {
                assert_eq!(a, b, "concat shape mismatch on axis {d}");
            }
        }
        mids.push(s[axis]);
    }
    let total_mid: usize = mids.iter().sum();
    let mut data = vec![0.0; outer * total_mid * inner];
    let mut offset = 0usize;
    for (p, &mid) in parts.iter().zip(&mids) {
        p.with_value(|pv| {
            for o in 0..outer {
                let dst_start = (o * total_mid + offset) * inner;
                data[dst_start..dst_start + mid * inner]
                    .copy_from_slice(&pv[o * mid * inner..(o + 1) * mid * inner]);
            }
        });
        offset += mid;
    }
    let mut out_shape = first_shape;
    out_shape[axis] = total_mid;
    let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
    let requires = parts[0].tape().requires(&ids);
    parts[0]
        .tape()
        .push(out_shape, data, requires, Op::Concat { xs: ids, axis })
}

/// `squeezed[4c + 2 dr + dc][i][j] = full[c][2i + dr][2j + dc]`.
fn space_to_channel(c: usize, h2: usize, w2: usize, full: &[f64], squeezed: &mut [f64]) {
    for ch in 0..c {
        for dr in 0..2 {
            for dc in 0..2 {
                let out_ch = ch * 4 + dr * 2 + dc;
                for i in 0..h2 {
                    for j in 0..w2 {
                        squeezed[(out_ch * h2 + i) * w2 + j] =
                            full[(ch * 2 * h2 + 2 * i + dr) * 2 * w2 + 2 * j + dc];
                    }
                }
            }
        }
    }
}

/// Exact inverse of [`space_to_channel`].
fn channel_to_space(c: usize, h2: usize, w2: usize, squeezed: &[f64], full: &mut [f64]) {
    for ch in 0..c {
        for dr in 0..2 {
            for dc in 0..2 {
                let in_ch = ch * 4 + dr * 2 + dc;
                for i in 0..h2 {
                    for j in 0..w2 {
                        full[(ch * 2 * h2 + 2 * i + dr) * 2 * w2 + 2 * j + dc] =
                            squeezed[(in_ch * h2 + i) * w2 + j];
                    }
                }
            }
        }
    }
}

pub(super) fn squeeze2(x: &Var) -> Var {
    let s = x.shape();
    assert_eq!(s.len(), 3, "squeeze2 expects (C, H, W)");
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(h % 2 == 0 && w % 2 == 0, "squeeze2 needs even spatial dims");
    let data = x.with_value(|xv| {
        let mut out = vec![0.0; c * h * w];
        space_to_channel(c, h / 2, w / 2, xv, &mut out);
        out
    });
    let requires = x.tape().requires(&[x.id()]);
    x.tape().push(vec![4 * c, h / 2, w / 2], data, requires, Op::Squeeze2(x.id()))
}

pub(super) fn unsqueeze2(x: &Var) -> Var {
    let s = x.shape();
    assert_eq!(s.len(), 3, "unsqueeze2 expects (C, H, W)");
    let (c4, h, w) = (s[0], s[1], s[2]);
    assert!(c4 % 4 == 0, "unsqueeze2 needs channels divisible by 4");
    let c = c4 / 4;
    let data = x.with_value(|xv| {
        let mut full = vec![0.0; c4 * h * w];
        channel_to_space(c, h, w, xv, &mut full);
        full
    });
    let requires = x.tape().requires(&[x.id()]);
    x.tape().push(vec![c, 2 * h, 2 * w], data, requires, Op::Unsqueeze2(x.id()))
}

pub(super) fn permute_channels(x: &Var, perm: Rc<Vec<usize>>) -> Var {
    let s = x.shape();
    assert_eq!(s.len(), 3, "permute_channels expects (C, H, W)");
    let c = s[0];
    assert_eq!(perm.len(), c, "permutation length mismatch");
    {
        let mut seen = vec![false; c];
        for &p in perm.iter() {
            assert!(p < c && !seen[p], "not a permutation");
            seen[p] = true;
        }
    }
    let n = s[1] * s[2];
    let data = x.with_value(|xv| {
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            out[ch * n..(ch + 1) * n].copy_from_slice(&xv[perm[ch] * n..(perm[ch] + 1) * n]);
        }
        out
    });
    let requires = x.tape().requires(&[x.id()]);
    x.tape().push(s, data, requires, Op::PermuteChannels { x: x.id(), perm })
}

// --- complex-packed helpers --------------------------------------------

pub(super) fn packed_dims(shape: &[usize]) -> (usize, usize) {
    assert!(
        shape.len() == 3 && shape[0] == 2,
        "packed complex tensors are (2, H, W), got {shape:?}"
    );
    (shape[1], shape[2])
}

fn packed_to_complex(data: &[f64], n: usize) -> Vec<Complex64> {
    (0..n).map(|i| Complex64::new(data[i], data[n + i])).collect()
}

fn complex_to_packed(values: &[Complex64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; 2 * n];
    for (i, v) in values.iter().enumerate() {
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}

pub(super) fn fft2_packed(x: &Var, inverse: bool) -> Var {
    let s = x.shape();
    let (h, w) = packed_dims(&s);
    crate::field::fft::check_pow2_dims(h, w).expect("fft layer needs power-of-two dims");
    let data = x.with_value(|xv| {
        let c = packed_to_complex(xv, h * w);
        complex_to_packed(&crate::field::fft::fft2_raw(c, h, w, inverse))
    });
    let requires = x.tape().requires(&[x.id()]);
    let op = if inverse { Op::Ifft2(x.id()) } else { Op::Fft2(x.id()) };
    x.tape().push(s, data, requires, op)
}

pub(super) fn magnitude_packed(x: &Var) -> Var {
    let s = x.shape();
    let (h, w) = packed_dims(&s);
    let n = h * w;
    let data = x.with_value(|xv| {
        (0..n)
            .map(|i| (xv[i] * xv[i] + xv[n + i] * xv[n + i]).sqrt())
            .collect()
    });
    let requires = x.tape().requires(&[x.id()]);
    x.tape().push(vec![h, w], data, requires, Op::Magnitude(x.id()))
}

// --- backward ------------------------------------------------------------

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
    for (g, d) in slot.iter_mut().zip(delta) {
        *g += d;
    }
}

/// Applies one node's backward rule, accumulating into its parents.
pub(super) fn backward_step(
    nodes: &[Node],
    id: usize,
    g: &[f64],
    grads: &mut Vec<Option<Vec<f64>>>,
) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g);
            accumulate(grads, nodes, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            accumulate(grads, nodes, *b, &neg);
        }
        Op::Neg(a) => {
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            accumulate(grads, nodes, *a, &neg);
        }
        Op::Mul(a, b) => {
            let da: Vec<f64> = g.iter().zip(&nodes[*b].data).map(|(g, b)| g * b).collect();
            let db: Vec<f64> = g.iter().zip(&nodes[*a].data).map(|(g, a)| g * a).collect();
            accumulate(grads, nodes, *a, &da);
            accumulate(grads, nodes, *b, &db);
        }
        Op::Scale(a, k) => {
            let da: Vec<f64> = g.iter().map(|v| k * v).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::MulConst(a, mask) => {
            let da: Vec<f64> = g.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Matmul(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            let (av, bv) = (&nodes[*a].data, &nodes[*b].data);
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    for p in 0..k {
                        da[i * k + p] += gij * bv[p * n + j];
                        db[p * n + j] += av[i * k + p] * gij;
                    }
                }
            }
            accumulate(grads, nodes, *a, &da);
            accumulate(grads, nodes, *b, &db);
        }
        Op::Conv2d { x, w, b } => {
            conv2d_backward(nodes, *x, *w, *b, g, grads);
        }
        Op::Upsample2(a) => {
            let s = &nodes[*a].shape;
            let (c, h, w) = (s[0], s[1], s[2]);
            let mut da = vec![0.0; c * h * w];
            for ch in 0..c {
                for r in 0..2 * h {
                    for col in 0..2 * w {
                        da[(ch * h + r / 2) * w + col / 2] += g[(ch * 2 * h + r) * 2 * w + col];
                    }
                }
            }
            accumulate(grads, nodes, *a, &da);
        }
        Op::Relu(a) => {
            // Gradient at exactly zero is zero.
            let da: Vec<f64> = g
                .iter()
                .zip(&nodes[*a].data)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::LeakyRelu(a, slope) => {
            let da: Vec<f64> = g
                .iter()
                .zip(&nodes[*a].data)
                .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                .collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Sigmoid(a) => {
            let y = &nodes[id].data;
            let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Tanh(a) => {
            let y = &nodes[id].data;
            let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Exp(a) => {
            let y = &nodes[id].data;
            let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Log(a) => {
            let x = &nodes[*a].data;
            let da: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::ChannelNorm { x, gamma, beta } => {
            channel_norm_backward(nodes, *x, *gamma, *beta, g, grads);
        }
        Op::ChannelAffine { x, scale, bias } => {
            let s = &nodes[*x].shape;
            let (c, n) = (s[0], s[1] * s[2]);
            let xv = &nodes[*x].data;
            let sv = &nodes[*scale].data;
            let mut dx = vec![0.0; c * n];
            let mut ds = vec![0.0; c];
            let mut db = vec![0.0; c];
            for ch in 0..c {
                for i in 0..n {
                    let gi = g[ch * n + i];
                    dx[ch * n + i] = gi * sv[ch];
                    ds[ch] += gi * xv[ch * n + i];
                    db[ch] += gi;
                }
            }
            accumulate(grads, nodes, *x, &dx);
            accumulate(grads, nodes, *scale, &ds);
            accumulate(grads, nodes, *bias, &db);
        }
        Op::Sum(a) => {
            let da = vec![g[0]; nodes[*a].data.len()];
            accumulate(grads, nodes, *a, &da);
        }
        Op::Mean(a) => {
            let n = nodes[*a].data.len();
            let da = vec![g[0] / n as f64; n];
            accumulate(grads, nodes, *a, &da);
        }
        Op::SumSquares(a) => {
            let da: Vec<f64> = nodes[*a].data.iter().map(|&x| 2.0 * x * g[0]).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Slice { x, axis, start, len } => {
            let s = &nodes[*x].shape;
            let (outer, mid, inner) = axis_split(s, *axis);
            let mut dx = vec![0.0; nodes[*x].data.len()];
            for o in 0..outer {
                let dst = (o * mid + start) * inner;
                dx[dst..dst + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Concat { xs, axis } => {
            let out_shape = &nodes[id].shape;
            let (outer, total_mid, inner) = axis_split(out_shape, *axis);
            let mut offset = 0usize;
            for &xid in xs {
                let mid = nodes[xid].shape[*axis];
                let mut dx = vec![0.0; nodes[xid].data.len()];
                for o in 0..outer {
                    let src = (o * total_mid + offset) * inner;
                    dx[o * mid * inner..(o + 1) * mid * inner]
                        .copy_from_slice(&g[src..src + mid * inner]);
                }
                accumulate(grads, nodes, xid, &dx);
                offset += mid;
            }
        }
        Op::Reshape(a) => {
            accumulate(grads, nodes, *a, g);
        }
        Op::Squeeze2(a) => {
            let s = &nodes[*a].shape;
            let (c, h, w) = (s[0], s[1], s[2]);
            let mut dx = vec![0.0; c * h * w];
            channel_to_space(c, h / 2, w / 2, g, &mut dx);
            accumulate(grads, nodes, *a, &dx);
        }
        Op::Unsqueeze2(a) => {
            // Output is (C, 2H, 2W); the parent holds the squeezed layout.
            let s = &nodes[id].shape;
            let (c, h2, w2) = (s[0], s[1] / 2, s[2] / 2);
            let mut dx = vec![0.0; nodes[*a].data.len()];
            space_to_channel(c, h2, w2, g, &mut dx);
            accumulate(grads, nodes, *a, &dx);
        }
        Op::PermuteChannels { x, perm } => {
            let s = &nodes[*x].shape;
            let (c, n) = (s[0], s[1] * s[2]);
            let mut dx = vec![0.0; c * n];
            for ch in 0..c {
                for i in 0..n {
                    dx[perm[ch] * n + i] += g[ch * n + i];
                }
            }
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Fft2(a) | Op::Ifft2(a) => {
            // The map is unitary, so the real-Jacobian transpose is the
            // inverse transform applied to the (packed) cotangent.
            let forward_was_inverse = matches!(nodes[id].op, Op::Ifft2(_));
            let (h, w) = packed_dims(&nodes[id].shape);
            let c = packed_to_complex(g, h * w);
            let back = crate::field::fft::fft2_raw(c, h, w, !forward_was_inverse);
            accumulate(grads, nodes, *a, &complex_to_packed(&back));
        }
        Op::Magnitude(a) => {
            let xv = &nodes[*a].data;
            let m = &nodes[id].data;
            let n = m.len();
            let mut dx = vec![0.0; 2 * n];
            for i in 0..n {
                if m[i] != 0.0 {
                    dx[i] = g[i] * xv[i] / m[i];
                    dx[n + i] = g[i] * xv[n + i] / m[i];
                }
                // Subgradient 0 at exact zeros.
            }
            accumulate(grads, nodes, *a, &dx);
        }
    }
}

fn conv2d_backward(
    nodes: &[Node],
    x: usize,
    w: usize,
    b: usize,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let (ci, h, wd, co, kh, kw) =
        conv_dims(&nodes[x].shape, &nodes[w].shape, &nodes[b].shape);
    let (ph, pw) = (kh / 2, kw / 2);
    let xv = &nodes[x].data;
    let wv = &nodes[w].data;

    if nodes[b].requires_grad {
        let mut db = vec![0.0; co];
        for o in 0..co {
            db[o] = crate::field::fft::pairwise_sum(&g[o * h * wd..(o + 1) * h * wd]);
        }
        accumulate_raw(grads, nodes, b, &db);
    }

    if nodes[w].requires_grad {
        let mut dw = vec![0.0; co * ci * kh * kw];
        let run = |(o, dwo): (usize, &mut [f64])| {
            let gplane = &g[o * h * wd..(o + 1) * h * wd];
            for c in 0..ci {
                let xplane = &xv[c * h * wd..(c + 1) * h * wd];
                for u in 0..kh {
                    for v in 0..kw {
                        let (dst, src) = shift_ranges(wd, v as isize - pw as isize);
                        let mut acc = 0.0;
                        for r in 0..h {
                            let ir = r as isize + u as isize - ph as isize;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            let xrow =
                                &xplane[ir as usize * wd + src.start..ir as usize * wd + src.end];
                            let grow = &gplane[r * wd + dst.start..r * wd + dst.end];
                            acc += grow
                                .iter()
                                .zip(xrow)
                                .map(|(gv, xv)| gv * xv)
                                .sum::<f64>();
                        }
                        dwo[(c * kh + u) * kw + v] = acc;
                    }
                }
            }
        };
        if h * wd >= CONV_PAR_MIN {
            dw.par_chunks_mut(ci * kh * kw).enumerate().for_each(run);
        } else {
            dw.chunks_mut(ci * kh * kw).enumerate().for_each(run);
        }
        accumulate_raw(grads, nodes, w, &dw);
    }

    if nodes[x].requires_grad {
        let mut dx = vec![0.0; ci * h * wd];
        let run = |(c, dxc): (usize, &mut [f64])| {
            for o in 0..co {
                let gplane = &g[o * h * wd..(o + 1) * h * wd];
                for u in 0..kh {
                    for v in 0..kw {
                        let k = wv[((o * ci + c) * kh + u) * kw + v];
                        if k == 0.0 {
                            continue;
                        }
                        // Scatter is the forward access pattern transposed:
                        // dx[row + shift] += k * g[row].
                        let (dst, src) = shift_ranges(wd, v as isize - pw as isize);
                        for r in 0..h {
                            let ir = r as isize + u as isize - ph as isize;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            let dxrow =
                                &mut dxc[ir as usize * wd + src.start..ir as usize * wd + src.end];
                            let grow = &gplane[r * wd + dst.start..r * wd + dst.end];
                            for (d, gv) in dxrow.iter_mut().zip(grow) {
                                *d += k * gv;
                            }
                        }
                    }
                }
            }
        };
        if h * wd >= CONV_PAR_MIN {
            dx.par_chunks_mut(h * wd).enumerate().for_each(run);
        } else {
            dx.chunks_mut(h * wd).enumerate().for_each(run);
        }
        accumulate_raw(grads, nodes, x, &dx);
    }
}

fn accumulate_raw(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: &[f64]) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
    for (g, d) in slot.iter_mut().zip(delta) {
        *g += d;
    }
}

fn channel_norm_backward(
    nodes: &[Node],
    x: usize,
    gamma: usize,
    beta: usize,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let s = &nodes[x].shape;
    let (c, n) = (s[0], s[1] * s[2]);
    let xv = &nodes[x].data;
    let gv = &nodes[gamma].data;
    let (mu, inv_std) = channel_stats(xv, c, n);
    let mut dx = vec![0.0; c * n];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let xp = &xv[ch * n..(ch + 1) * n];
        let gp = &g[ch * n..(ch + 1) * n];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..n {
            let xhat = (xp[i] - mu[ch]) * inv_std[ch];
            sum_g += gp[i];
            sum_gx += gp[i] * xhat;
            dgamma[ch] += gp[i] * xhat;
            dbeta[ch] += gp[i];
        }
        let (mg, mgx) = (sum_g / n as f64, sum_gx / n as f64);
        for i in 0..n {
            let xhat = (xp[i] - mu[ch]) * inv_std[ch];
            dx[ch * n + i] = gv[ch] * inv_std[ch] * (gp[i] - mg - xhat * mgx);
        }
    }
    accumulate(grads, nodes, x, &dx);
    accumulate(grads, nodes, gamma, &dgamma);
    accumulate(grads, nodes, beta, &dbeta);
}
