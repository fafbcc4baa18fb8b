//! Primitive layer forward/backward kernels. Feature maps are flat `f64`
//! buffers in channel-major `(c, h, w)` order.

/// Output spatial size of a 3x3 stride-2 pad-1 convolution.
#[inline]
pub fn conv_out_dim(d: usize) -> usize {
    (d - 1) / 2 + 1
}

pub fn conv3x3s2_forward(
    inp: &[f64],
    ci: usize,
    hi: usize,
    wi: usize,
    weights: &[f64],
    bias: &[f64],
    co: usize,
    out: &mut [f64],
) {
    let ho = conv_out_dim(hi);
    let wo = conv_out_dim(wi);
    debug_assert_eq!(out.len(), co * ho * wo);
    debug_assert_eq!(weights.len(), co * ci * 9);
    for oc in 0..co {
        let w_oc = &weights[oc * ci * 9..(oc + 1) * ci * 9];
        let out_oc = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
        out_oc.fill(bias[oc]);
        for ic in 0..ci {
            let w9 = &w_oc[ic * 9..ic * 9 + 9];
            let in_ic = &inp[ic * hi * wi..(ic + 1) * hi * wi];
            for oy in 0..ho {
                let iy0 = 2 * oy as i64 - 1;
                for ky in 0..3i64 {
                    let iy = iy0 + ky;
                    if iy < 0 || iy >= hi as i64 {
                        continue;
                    }
                    let row = &in_ic[iy as usize * wi..(iy as usize + 1) * wi];
                    let wrow = &w9[ky as usize * 3..ky as usize * 3 + 3];
                    let orow = &mut out_oc[oy * wo..(oy + 1) * wo];
                    for ox in 0..wo {
                        let ix0 = 2 * ox as i64 - 1;
                        let mut acc = 0.0;
                        for kx in 0..3i64 {
                            let ix = ix0 + kx;
                            if ix >= 0 && ix < wi as i64 {
                                acc += wrow[kx as usize] * row[ix as usize];
                            }
                        }
                        orow[ox] += acc;
                    }
                }
            }
        }
    }
}

/// Accumulates into `grad_inp`, `grad_w`, `grad_b`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3s2_backward(
    inp: &[f64],
    ci: usize,
    hi: usize,
    wi: usize,
    weights: &[f64],
    co: usize,
    grad_out: &[f64],
    grad_inp: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let ho = conv_out_dim(hi);
    let wo = conv_out_dim(wi);
    for oc in 0..co {
        let go_oc = &grad_out[oc * ho * wo..(oc + 1) * ho * wo];
        grad_b[oc] += go_oc.iter().sum::<f64>();
        for ic in 0..ci {
            let w9 = &weights[(oc * ci + ic) * 9..(oc * ci + ic) * 9 + 9];
            let gw9 = &mut grad_w[(oc * ci + ic) * 9..(oc * ci + ic) * 9 + 9];
            let in_ic = &inp[ic * hi * wi..(ic + 1) * hi * wi];
            let gi_ic = &mut grad_inp[ic * hi * wi..(ic + 1) * hi * wi];
            for oy in 0..ho {
                let iy0 = 2 * oy as i64 - 1;
                for ky in 0..3i64 {
                    let iy = iy0 + ky;
                    if iy < 0 || iy >= hi as i64 {
                        continue;
                    }
                    let in_row = &in_ic[iy as usize * wi..(iy as usize + 1) * wi];
                    let gi_row = &mut gi_ic[iy as usize * wi..(iy as usize + 1) * wi];
                    let go_row = &go_oc[oy * wo..(oy + 1) * wo];
                    for ox in 0..wo {
                        let g = go_row[ox];
                        if g == 0.0 {
                            continue;
                        }
                        let ix0 = 2 * ox as i64 - 1;
                        for kx in 0..3i64 {
                            let ix = ix0 + kx;
                            if ix >= 0 && ix < wi as i64 {
                                let k = (ky * 3 + kx) as usize;
                                gw9[k] += g * in_row[ix as usize];
                                gi_row[ix as usize] += g * w9[k];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Normalized coordinate of cell `i` along an axis of length `n`, in
/// `[-0.5, 0.5]` (cell centers).
#[inline]
pub fn coord_value(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 - 0.5
}

/// Coordinate modulation: a weightless layer that triples the channel
/// count, `out = [f, f*x, f*y]` with fixed per-pixel coordinate maps.
/// Convolutions and dense layers are linear in their inputs, so products
/// of intensity and position (the moments that encode center, widths and
/// orientation) are otherwise inexpressible; this layer supplies them.
pub fn coord_modulate_forward(inp: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    debug_assert_eq!(inp.len(), c * plane);
    debug_assert_eq!(out.len(), 3 * c * plane);
    out[..c * plane].copy_from_slice(inp);
    for ch in 0..c {
        let src = &inp[ch * plane..(ch + 1) * plane];
        let (xm, ym) = out[c * plane..].split_at_mut(c * plane);
        let xm = &mut xm[ch * plane..(ch + 1) * plane];
        let ym = &mut ym[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            let yv = coord_value(y, h);
            for x in 0..w {
                let xv = coord_value(x, w);
                let v = src[y * w + x];
                xm[y * w + x] = v * xv;
                ym[y * w + x] = v * yv;
            }
        }
    }
}

/// Accumulates into `grad_inp` (length `c*h*w`); `grad_out` has `3c` channels.
pub fn coord_modulate_backward(grad_out: &[f64], c: usize, h: usize, w: usize, grad_inp: &mut [f64]) {
    let plane = h * w;
    debug_assert_eq!(grad_out.len(), 3 * c * plane);
    debug_assert_eq!(grad_inp.len(), c * plane);
    for ch in 0..c {
        let g0 = &grad_out[ch * plane..(ch + 1) * plane];
        let gx = &grad_out[(c + ch) * plane..(c + ch + 1) * plane];
        let gy = &grad_out[(2 * c + ch) * plane..(2 * c + ch + 1) * plane];
        let gi = &mut grad_inp[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            let yv = coord_value(y, h);
            for x in 0..w {
                let xv = coord_value(x, w);
                let i = y * w + x;
                gi[i] += g0[i] + gx[i] * xv + gy[i] * yv;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth ReLU-like activation `x * sigmoid(x)`.
pub fn silu_forward(pre: &[f64], out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(pre) {
        *o = x * sigmoid(x);
    }
}

pub fn silu_backward(pre: &[f64], grad_out: &[f64], grad_pre: &mut [f64]) {
    for i in 0..pre.len() {
        let s = sigmoid(pre[i]);
        grad_pre[i] += grad_out[i] * s * (1.0 + pre[i] * (1.0 - s));
    }
}

/// 2x2 average pooling; spatial dims must be even.
pub fn avgpool2_forward(inp: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (h / 2, w / 2);
    for ch in 0..c {
        let src = &inp[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let i = 2 * oy * w + 2 * ox;
                dst[oy * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
}

/// Dense layer `out = W x + b`, `W` row-major `(n_out, n_in)`.
pub fn fc_forward(inp: &[f64], weights: &[f64], bias: &[f64], n_out: usize, out: &mut [f64]) {
    let n_in = inp.len();
    for o in 0..n_out {
        let row = &weights[o * n_in..(o + 1) * n_in];
        out[o] = bias[o] + row.iter().zip(inp).map(|(w, x)| w * x).sum::<f64>();
    }
}

#[allow(clippy::too_many_arguments)]
pub fn fc_backward(
    inp: &[f64],
    weights: &[f64],
    n_out: usize,
    grad_out: &[f64],
    grad_inp: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let n_in = inp.len();
    for o in 0..n_out {
        let g = grad_out[o];
        grad_b[o] += g;
        let row = &weights[o * n_in..(o + 1) * n_in];
        let grow = &mut grad_w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * inp[i];
            grad_inp[i] += g * row[i];
        }
    }
}
