//! Slice-level forward/backward kernels. Shapes are validated by the caller
//! (`graph.rs`); these functions only index.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Geometry of a 2-D cross-correlation over `N×C×H×W` planes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn output_extent(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = len + 2 * pad;
        (padded >= k).then(|| (padded - k) / stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output indices `[lo, hi)` whose input tap `o*stride + k_off - pad` lands in `[0, in_len)`.
fn valid_range(k_off: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    if in_len + pad < k_off + 1 {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - k_off) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Accumulates `out[o] += wv * x[tap(o)]` (or the adjoint) over one plane.
#[inline]
fn plane_taps(
    g: &ConvGeom,
    ki: usize,
    kj: usize,
    mut f: impl FnMut(usize, usize), // (out index, in index)
) {
    let (oh_lo, oh_hi) = valid_range(ki, g.pad, g.stride, g.h, g.oh);
    let (ow_lo, ow_hi) = valid_range(kj, g.pad, g.stride, g.w, g.ow);
    for oy in oh_lo..oh_hi {
        let iy = oy * g.stride + ki - g.pad;
        let orow = oy * g.ow;
        let irow = iy * g.w;
        for ox in ow_lo..ow_hi {
            let ix = ox * g.stride + kj - g.pad;
            f(orow + ox, irow + ix);
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    if g.is_pointwise() {
        return channel_linear_forward(x, w, b, g.n, g.cin, g.cout, g.h * g.w);
    }
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![0.0; g.n * g.cout * op];
    for n in 0..g.n {
        for co in 0..g.cout {
            let y = &mut out[(n * g.cout + co) * op..][..op];
            y.fill(b[co]);
            for ci in 0..g.cin {
                let xp = &x[(n * g.cin + ci) * ip..][..ip];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                        plane_taps(g, ki, kj, |o, i| y[o] += wv * xp[i]);
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    if g.is_pointwise() {
        return channel_linear_backward(x, w, dy, g.n, g.cin, g.cout, g.h * g.w);
    }
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            let gy = &dy[(n * g.cout + co) * op..][..op];
            db[co] += gy.iter().sum::<f64>();
            for ci in 0..g.cin {
                let base = (n * g.cin + ci) * ip;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let widx = ((co * g.cin + ci) * g.kh + ki) * g.kw + kj;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        {
                            let xp = &x[base..][..ip];
                            plane_taps(g, ki, kj, |o, i| acc += gy[o] * xp[i]);
                        }
                        dw[widx] += acc;
                        let dxp = &mut dx[base..][..ip];
                        plane_taps(g, ki, kj, |o, i| dxp[i] += wv * gy[o]);
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Depthwise: channel `c` of the output only reads channel `c` of the input.
pub(crate) fn depthwise_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![0.0; g.n * g.cin * op];
    for n in 0..g.n {
        for c in 0..g.cin {
            let xp = &x[(n * g.cin + c) * ip..][..ip];
            let y = &mut out[(n * g.cin + c) * op..][..op];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let wv = w[(c * g.kh + ki) * g.kw + kj];
                    plane_taps(g, ki, kj, |o, i| y[o] += wv * xp[i]);
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for n in 0..g.n {
        for c in 0..g.cin {
            let base = (n * g.cin + c) * ip;
            let gy = &dy[(n * g.cin + c) * op..][..op];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let widx = (c * g.kh + ki) * g.kw + kj;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    {
                        let xp = &x[base..][..ip];
                        plane_taps(g, ki, kj, |o, i| acc += gy[o] * xp[i]);
                    }
                    dw[widx] += acc;
                    let dxp = &mut dx[base..][..ip];
                    plane_taps(g, ki, kj, |o, i| dxp[i] += wv * gy[o]);
                }
            }
        }
    }
    (dx, dw)
}

/// `y[n,co,p] = b[co] + Σ_ci w[co,ci]·x[n,ci,p]` over `planes` positions.
pub(crate) fn channel_linear_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    planes: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * cout * planes];
    for ni in 0..n {
        let xs = &x[ni * cin * planes..][..cin * planes];
        for co in 0..cout {
            let y = &mut out[(ni * cout + co) * planes..][..planes];
            y.fill(b[co]);
            for ci in 0..cin {
                let wv = w[co * cin + ci];
                let xp = &xs[ci * planes..][..planes];
                for (yv, xv) in y.iter_mut().zip(xp) {
                    *yv += wv * xv;
                }
            }
        }
    }
    out
}

pub(crate) fn channel_linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    planes: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for ni in 0..n {
        let xs = &x[ni * cin * planes..][..cin * planes];
        let dxs = &mut dx[ni * cin * planes..][..cin * planes];
        for co in 0..cout {
            let gy = &dy[(ni * cout + co) * planes..][..planes];
            db[co] += gy.iter().sum::<f64>();
            for ci in 0..cin {
                let xp = &xs[ci * planes..][..planes];
                dw[co * cin + ci] += gy.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
                let wv = w[co * cin + ci];
                for (d, gv) in dxs[ci * planes..][..planes].iter_mut().zip(gy) {
                    *d += wv * gv;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Row-major token projection `y[m,co] = b[co] + Σ_ci x[m,ci]·w[co,ci]`.
pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cout];
    for m in 0..rows {
        let xr = &x[m * cin..][..cin];
        for co in 0..cout {
            let wr = &w[co * cin..][..cin];
            out[m * cout + co] = b[co] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for m in 0..rows {
        let xr = &x[m * cin..][..cin];
        for co in 0..cout {
            let gv = dy[m * cout + co];
            db[co] += gv;
            let wr = &w[co * cin..][..cin];
            for ci in 0..cin {
                dx[m * cin + ci] += gv * wr[ci];
                dw[co * cin + ci] += gv * xr[ci];
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping transposed convolution (kernel == stride).
pub(crate) fn conv_transpose_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    (n, cin, h, wd): (usize, usize, usize, usize),
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let (oh, ow) = (h * k, wd * k);
    let (ip, op) = (h * wd, oh * ow);
    let mut out = vec![0.0; n * cout * op];
    for ni in 0..n {
        for co in 0..cout {
            let y = &mut out[(ni * cout + co) * op..][..op];
            y.fill(b[co]);
            for ci in 0..cin {
                let xp = &x[(ni * cin + ci) * ip..][..ip];
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = w[((ci * cout + co) * k + ki) * k + kj];
                        for iy in 0..h {
                            let orow = (iy * k + ki) * ow + kj;
                            for ix in 0..wd {
                                y[orow + ix * k] += wv * xp[iy * wd + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    (n, cin, h, wd): (usize, usize, usize, usize),
    cout: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (h * k, wd * k);
    let (ip, op) = (h * wd, oh * ow);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for ni in 0..n {
        for co in 0..cout {
            let gy = &dy[(ni * cout + co) * op..][..op];
            db[co] += gy.iter().sum::<f64>();
            for ci in 0..cin {
                let base = (ni * cin + ci) * ip;
                for ki in 0..k {
                    for kj in 0..k {
                        let widx = ((ci * cout + co) * k + ki) * k + kj;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for iy in 0..h {
                            let orow = (iy * k + ki) * ow + kj;
                            for ix in 0..wd {
                                let gv = gy[orow + ix * k];
                                acc += gv * x[base + iy * wd + ix];
                                dx[base + iy * wd + ix] += wv * gv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Standard normal CDF via `erf`.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Softmax over the class axis of `N×K×P` logits.
pub(crate) fn softmax_classes(logits: &[f64], n: usize, k: usize, planes: usize) -> Vec<f64> {
    let mut probs = vec![0.0; logits.len()];
    for ni in 0..n {
        let base = ni * k * planes;
        for p in 0..planes {
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                max = max.max(logits[base + c * planes + p]);
            }
            let mut total = 0.0;
            for c in 0..k {
                let e = (logits[base + c * planes + p] - max).exp();
                probs[base + c * planes + p] = e;
                total += e;
            }
            for c in 0..k {
                probs[base + c * planes + p] /= total;
            }
        }
    }
    probs
}

/// Calls `f(out, a_off, b_off)` for every element of a same-rank singleton broadcast.
pub(crate) fn for_each_broadcast(
    shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    if shape.contains(&0) {
        return;
    }
    let last = rank - 1;
    let inner = shape[last];
    let (ia, ib) = (sa[last], sb[last]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    loop {
        for i in 0..inner {
            f(o + i, oa + i * ia, ob + i * ib);
        }
        o += inner;
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Row-major strides with zero stride on axes that are broadcast (extent 1 → `out` extent > 1).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == out[d] { acc } else { 0 };
        acc *= shape[d];
    }
    strides
}
