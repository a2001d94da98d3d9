//! 2-D convolution kernels over `[C, H, W]` buffers (im2col plus a small
//! blocked matrix product).
//!
//! Three loops cover both conv2d and its transpose: the transpose forward is
//! the conv2d input-gradient, and vice versa. Weights are laid out
//! `[C_out, C_in, kH, kW]` for conv2d and `[C_in, C_out, kH, kW]` for the
//! transpose, so one kernel buffer serves both directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stride and zero padding for one convolution, `(rows, cols)` each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }
}

/// `floor((n + 2p - k) / s) + 1`
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let padded = input + 2 * padding;
    if kernel > padded || kernel == 0 {
        return Err(Error::NonPositiveExtent {
            op: "conv2d",
            extent: padded as i64 - kernel as i64 + 1,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// `(n - 1) s - 2p + k + output_padding`
pub fn conv_transpose_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let extent = (input as i64 - 1) * stride as i64 - 2 * padding as i64
        + kernel as i64
        + output_padding as i64;
    if extent <= 0 {
        return Err(Error::NonPositiveExtent {
            op: "conv2d_transpose",
            extent,
        });
    }
    Ok(extent as usize)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Output indices `o` in `0..out_len` with `o*stride + k - pad` inside `0..in_len`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds `x` into a `[C_in * kH * kW, H_out * W_out]` patch matrix; taps
/// that land in the zero padding stay zero.
fn im2col(x: &[f64], xd: Dims, kernel: (usize, usize), geo: ConvGeometry, od: Dims) -> Vec<f64> {
    let (kh, kw) = kernel;
    let (sh, sw) = geo.stride;
    let (ph, pw) = geo.padding;
    let p = od.plane();
    let mut cols = vec![0.0; xd.c * kh * kw * p];
    for ci in 0..xd.c {
        let x_plane = &x[ci * xd.plane()..(ci + 1) * xd.plane()];
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(ky, ph, sh, xd.h, od.h);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(kx, pw, sw, xd.w, od.w);
                let row = ((ci * kh + ky) * kw + kx) * p;
                let col = &mut cols[row..row + p];
                for oy in oy_lo..oy_hi {
                    let x_row = &x_plane[(oy * sh + ky - ph) * xd.w..][..xd.w];
                    let dst = &mut col[oy * od.w..(oy + 1) * od.w];
                    for ox in ox_lo..ox_hi {
                        dst[ox] = x_row[ox * sw + kx - pw];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto the input grid.
fn col2im(cols: &[f64], xd: Dims, kernel: (usize, usize), geo: ConvGeometry, od: Dims) -> Vec<f64> {
    let (kh, kw) = kernel;
    let (sh, sw) = geo.stride;
    let (ph, pw) = geo.padding;
    let p = od.plane();
    let mut x = vec![0.0; xd.c * xd.plane()];
    for ci in 0..xd.c {
        let x_plane = &mut x[ci * xd.plane()..(ci + 1) * xd.plane()];
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(ky, ph, sh, xd.h, od.h);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(kx, pw, sw, xd.w, od.w);
                let row = ((ci * kh + ky) * kw + kx) * p;
                let col = &cols[row..row + p];
                for oy in oy_lo..oy_hi {
                    let x_row = &mut x_plane[(oy * sh + ky - ph) * xd.w..][..xd.w];
                    let src = &col[oy * od.w..(oy + 1) * od.w];
                    for ox in ox_lo..ox_hi {
                        x_row[ox * sw + kx - pw] += src[ox];
                    }
                }
            }
        }
    }
    x
}

/// `c[m x n] += a[m x k] * b[k x n]`, all row-major. Column blocks keep
/// the accumulator rows cache resident; four rows share each `b` load.
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    const NB: usize = 256;
    for n0 in (0..n).step_by(NB) {
        let len = NB.min(n - n0);
        let mut i = 0;
        while i + 4 <= m {
            let (r0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (c0, c1, c2, c3) = (
                &mut r0[n0..n0 + len],
                &mut r1[n0..n0 + len],
                &mut r2[n0..n0 + len],
                &mut r3[n0..n0 + len],
            );
            for kk in 0..k {
                let (a0, a1, a2, a3) = (a[i * k + kk], a[(i + 1) * k + kk], a[(i + 2) * k + kk], a[(i + 3) * k + kk]);
                let brow = &b[kk * n + n0..kk * n + n0 + len];
                for j in 0..len {
                    let bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
            i += 4;
        }
        for i in i..m {
            let ci = &mut c[i * n + n0..i * n + n0 + len];
            for kk in 0..k {
                let av = a[i * k + kk];
                let brow = &b[kk * n + n0..kk * n + n0 + len];
                for (cv, &bv) in ci.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// Dot product with four interleaved partial sums (fixed order).
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for j in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * j + l] * b[4 * j + l];
        }
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cross-correlation: `out[co] = bias[co] + sum_ci x[ci] * w[co, ci]`.
pub(crate) fn conv2d_forward(
    x: &[f64],
    xd: Dims,
    weight: &[f64],
    kernel: (usize, usize),
    bias: Option<&[f64]>,
    geo: ConvGeometry,
    od: Dims,
) -> Vec<f64> {
    let cols = im2col(x, xd, kernel, geo, od);
    let mut out = vec![0.0; od.c * od.plane()];
    if let Some(b) = bias {
        add_bias(&mut out, od, b);
    }
    gemm_acc(od.c, xd.c * kernel.0 * kernel.1, od.plane(), weight, &cols, &mut out);
    out
}

/// Gradient of [`conv2d_forward`] with respect to its input, given the
/// output gradient `g` (shape `gd`) and the input shape `xd`.
pub(crate) fn conv2d_backward_input(
    g: &[f64],
    gd: Dims,
    weight: &[f64],
    kernel: (usize, usize),
    geo: ConvGeometry,
    xd: Dims,
) -> Vec<f64> {
    let k = xd.c * kernel.0 * kernel.1;
    let mut wt = vec![0.0; k * gd.c];
    for co in 0..gd.c {
        for r in 0..k {
            wt[r * gd.c + co] = weight[co * k + r];
        }
    }
    let mut cols = vec![0.0; k * gd.plane()];
    gemm_acc(k, gd.c, gd.plane(), &wt, g, &mut cols);
    col2im(&cols, xd, kernel, geo, gd)
}

/// Gradient of [`conv2d_forward`] with respect to its weights.
pub(crate) fn conv2d_backward_weight(
    g: &[f64],
    gd: Dims,
    x: &[f64],
    xd: Dims,
    kernel: (usize, usize),
    geo: ConvGeometry,
) -> Vec<f64> {
    let cols = im2col(x, xd, kernel, geo, gd);
    let k = xd.c * kernel.0 * kernel.1;
    let p = gd.plane();
    let mut gw = vec![0.0; gd.c * k];
    for co in 0..gd.c {
        let g_plane = &g[co * p..(co + 1) * p];
        for r in 0..k {
            gw[co * k + r] = dot4(g_plane, &cols[r * p..(r + 1) * p]);
        }
    }
    gw
}

pub(crate) fn bias_grad(g: &[f64], gd: Dims) -> Vec<f64> {
    g.chunks(gd.plane()).map(|p| p.iter().sum()).collect()
}

pub(crate) fn add_bias(out: &mut [f64], od: Dims, bias: &[f64]) {
    for (plane, &b) in out.chunks_mut(od.plane()).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}
