//! Forward and backward kernels on raw `NCHW` buffers.
//!
//! Interpolation convention: both [`upsample_bilinear`] and
//! [`bilinear_sample`] treat integer coordinates as pixel centres. Resizing
//! maps output pixel `d` to source coordinate `(d + 0.5) * in / out - 0.5`,
//! clamped below at 0 (the "align corners = false" rule). Sampling clamps
//! coordinates into `[0, extent - 1]`, so reads past the border repeat the
//! edge pixel.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// `C = op(A) * op(B) + beta * C` with `op(A)` of size `m × k`, `op(B)` of
/// size `k × n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe buffers whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (b, ci, h, w) = match *input {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::contract(format!("conv input must be 4-d, got {input:?}"))),
        };
        let (co, wci, kh, kw) = match *weight {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::contract(format!("conv weight must be 4-d, got {weight:?}"))),
        };
        if wci != ci {
            return Err(Error::contract(format!(
                "conv expects {wci} input channels, input has {ci}"
            )));
        }
        if kh != kw || kh == 0 || stride == 0 {
            return Err(Error::contract(format!(
                "unsupported kernel {kh}x{kw} / stride {stride}"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::contract("conv input smaller than kernel"));
        }
        Ok(ConvGeom {
            batch: b,
            in_ch: ci,
            h,
            w,
            out_ch: co,
            kernel: kh,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let p = g.col_cols();
    let k = g.kernel;
    for c in 0..g.in_ch {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let p = g.col_cols();
    let k = g.kernel;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. Returns the output and the unfolded input columns
/// (one `in_ch·k·k × out_h·out_w` block per sample) for reuse in backward.
pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f64>, ConvGeom)> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.out_ch {
            return Err(Error::contract(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                g.out_ch
            )));
        }
    }
    let (kr, p) = (g.col_rows(), g.col_cols());
    let in_len = g.in_ch * g.h * g.w;
    let out_len = g.out_ch * p;
    let mut cols = vec![0.0; g.batch * kr * p];
    let mut out = vec![0.0; g.batch * out_len];
    for b in 0..g.batch {
        let col = &mut cols[b * kr * p..(b + 1) * kr * p];
        im2col(&g, &x.data()[b * in_len..(b + 1) * in_len], col);
        let y = &mut out[b * out_len..(b + 1) * out_len];
        gemm(g.out_ch, kr, p, weight.data(), false, col, false, y, 0.0);
        if let Some(bias) = bias {
            for (o, chunk) in y.chunks_mut(p).enumerate() {
                let bv = bias.data()[o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    let out = Tensor::new(vec![g.batch, g.out_ch, g.out_h, g.out_w], out)?;
    Ok((out, cols, g))
}

/// Accumulates convolution gradients into `dx`, `dw` and `db`.
pub fn conv2d_backward(
    g: &ConvGeom,
    weight: &[f64],
    cols: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (kr, p) = (g.col_rows(), g.col_cols());
    let out_len = g.out_ch * p;
    let in_len = g.in_ch * g.h * g.w;
    if let Some(dw) = dw {
        for b in 0..g.batch {
            let col = &cols[b * kr * p..(b + 1) * kr * p];
            let gy = &dy[b * out_len..(b + 1) * out_len];
            gemm(g.out_ch, p, kr, gy, false, col, true, dw, 1.0);
        }
    }
    if let Some(db) = db {
        for b in 0..g.batch {
            let gy = &dy[b * out_len..(b + 1) * out_len];
            for (o, chunk) in gy.chunks(p).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
            }
        }
    }
    if let Some(dx) = dx {
        let mut dcols = vec![0.0; kr * p];
        for b in 0..g.batch {
            let gy = &dy[b * out_len..(b + 1) * out_len];
            gemm(kr, g.out_ch, p, weight, true, gy, false, &mut dcols, 0.0);
            col2im_add(g, &dcols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
}

/// Saved statistics of a group-norm forward pass.
#[derive(Clone, Debug)]
pub struct GroupNormCache {
    pub groups: usize,
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn group_norm_forward(
    x: &Tensor,
    groups: usize,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, GroupNormCache)> {
    let (b, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::config(format!(
            "{c} channels are not divisible into {groups} groups"
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config("group norm eps must be positive"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::contract(format!(
            "group norm affine parameters must have {c} entries"
        )));
    }
    let hw = h * w;
    let cpg = c / groups;
    let n = (cpg * hw) as f64;
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let mut rstd = vec![0.0; b * groups];
    for bi in 0..b {
        for gi in 0..groups {
            let start = (bi * c + gi * cpg) * hw;
            let seg = &x.data()[start..start + cpg * hw];
            let mean = seg.iter().sum::<f64>() / n;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + eps).sqrt();
            rstd[bi * groups + gi] = r;
            for (j, &v) in seg.iter().enumerate() {
                let ch = gi * cpg + j / hw;
                let xh = (v - mean) * r;
                xhat[start + j] = xh;
                out[start + j] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        GroupNormCache { groups, xhat, rstd },
    ))
}

pub fn group_norm_backward(
    shape: (usize, usize, usize, usize),
    cache: &GroupNormCache,
    gamma: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let (b, c, h, w) = shape;
    let hw = h * w;
    let groups = cache.groups;
    let cpg = c / groups;
    if let Some(dg) = dgamma {
        for (i, (&g, &xh)) in dy.iter().zip(&cache.xhat).enumerate() {
            dg[(i / hw) % c] += g * xh;
        }
    }
    if let Some(dbt) = dbeta {
        for (i, &g) in dy.iter().enumerate() {
            dbt[(i / hw) % c] += g;
        }
    }
    if let Some(dx) = dx {
        let n = (cpg * hw) as f64;
        for bi in 0..b {
            for gi in 0..groups {
                let start = (bi * c + gi * cpg) * hw;
                let r = cache.rstd[bi * groups + gi];
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..cpg * hw {
                    let d = dy[start + j] * gamma[gi * cpg + j / hw];
                    sum_d += d;
                    sum_dx += d * cache.xhat[start + j];
                }
                for j in 0..cpg * hw {
                    let d = dy[start + j] * gamma[gi * cpg + j / hw];
                    dx[start + j] += r / n * (n * d - sum_d - cache.xhat[start + j] * sum_dx);
                }
            }
        }
    }
}

/// Softmax over the channel axis of a `B×C×H×W` tensor.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if c == 0 {
        return Err(Error::contract("softmax needs at least one channel"));
    }
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    let xd = x.data();
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(xd[base + ch * hw + p]);
            }
            let mut s = 0.0;
            for ch in 0..c {
                let e = (xd[base + ch * hw + p] - m).exp();
                out[base + ch * hw + p] = e;
                s += e;
            }
            for ch in 0..c {
                out[base + ch * hw + p] /= s;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_channels_backward(
    shape: (usize, usize, usize, usize),
    y: &[f64],
    dy: &[f64],
    dx: &mut [f64],
) {
    let (b, c, h, w) = shape;
    let hw = h * w;
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut dot = 0.0;
            for ch in 0..c {
                let i = base + ch * hw + p;
                dot += dy[i] * y[i];
            }
            for ch in 0..c {
                let i = base + ch * hw + p;
                dx[i] += y[i] * (dy[i] - dot);
            }
        }
    }
}

/// Source index pair and weight for one resized output coordinate.
fn resize_coord(d: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = if i0 == in_len - 1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("upsample target extents must be positive"));
    }
    let ys: Vec<_> = (0..out_h).map(|d| resize_coord(d, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|d| resize_coord(d, w, out_w)).collect();
    let mut out = vec![0.0; b * c * out_h * out_w];
    for (plane_i, plane) in x.data().chunks(h * w).enumerate() {
        let dst = &mut out[plane_i * out_h * out_w..(plane_i + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                let bot = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                dst[oy * out_w + ox] = (1.0 - fy) * top + fy * bot;
            }
        }
    }
    Tensor::new(vec![b, c, out_h, out_w], out)
}

pub fn upsample_bilinear_backward(
    in_shape: (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
    dy: &[f64],
    dx: &mut [f64],
) {
    let (_, _, h, w) = in_shape;
    let ys: Vec<_> = (0..out_h).map(|d| resize_coord(d, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|d| resize_coord(d, w, out_w)).collect();
    for (plane_i, g) in dy.chunks(out_h * out_w).enumerate() {
        let dst = &mut dx[plane_i * h * w..(plane_i + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v = g[oy * out_w + ox];
                dst[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * v;
                dst[y0 * w + x1] += (1.0 - fy) * fx * v;
                dst[y1 * w + x0] += fy * (1.0 - fx) * v;
                dst[y1 * w + x1] += fy * fx * v;
            }
        }
    }
}

struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    /// Coordinate strictly inside the clamp range (derivative is live).
    x_live: bool,
    y_live: bool,
}

fn tap(xc: f64, yc: f64, h: usize, w: usize) -> Tap {
    let xmax = (w - 1) as f64;
    let ymax = (h - 1) as f64;
    let cx = xc.clamp(0.0, xmax);
    let cy = yc.clamp(0.0, ymax);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    Tap {
        x0,
        y0,
        x1: (x0 + 1).min(w - 1),
        y1: (y0 + 1).min(h - 1),
        fx: cx - x0 as f64,
        fy: cy - y0 as f64,
        x_live: xc > 0.0 && xc < xmax,
        y_live: yc > 0.0 && yc < ymax,
    }
}

fn check_coords(feature: &Tensor, xs: &Tensor, ys: &Tensor) -> Result<(usize, usize)> {
    let (b, _, _, _) = feature.dims4()?;
    let (bx, cx, hx, wx) = xs.dims4()?;
    if xs.shape() != ys.shape() || bx != b || cx != 1 {
        return Err(Error::contract(format!(
            "sample coordinates must both be {b}×1×H×W, got {:?} and {:?}",
            xs.shape(),
            ys.shape()
        )));
    }
    Ok((hx, wx))
}

/// Bilinear read of `feature` at per-pixel coordinates `(xs, ys)`, each
/// shaped `B×1×H×W`.
pub fn bilinear_sample(feature: &Tensor, xs: &Tensor, ys: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = feature.dims4()?;
    let (oh, ow) = check_coords(feature, xs, ys)?;
    let mut out = vec![0.0; b * c * oh * ow];
    let fd = feature.data();
    for bi in 0..b {
        for p in 0..oh * ow {
            let t = tap(xs.data()[bi * oh * ow + p], ys.data()[bi * oh * ow + p], h, w);
            for ch in 0..c {
                let plane = &fd[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                if t.fx == 0.0 && t.fy == 0.0 {
                    out[(bi * c + ch) * oh * ow + p] = plane[t.y0 * w + t.x0];
                    continue;
                }
                let top = (1.0 - t.fx) * plane[t.y0 * w + t.x0] + t.fx * plane[t.y0 * w + t.x1];
                let bot = (1.0 - t.fx) * plane[t.y1 * w + t.x0] + t.fx * plane[t.y1 * w + t.x1];
                out[(bi * c + ch) * oh * ow + p] = (1.0 - t.fy) * top + t.fy * bot;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn bilinear_sample_backward(
    feature: &Tensor,
    xs: &Tensor,
    ys: &Tensor,
    dy: &[f64],
    mut dfeat: Option<&mut [f64]>,
    mut dxs: Option<&mut [f64]>,
    mut dys: Option<&mut [f64]>,
) {
    let (b, c, h, w) = (
        feature.shape()[0],
        feature.shape()[1],
        feature.shape()[2],
        feature.shape()[3],
    );
    let (oh, ow) = (xs.shape()[2], xs.shape()[3]);
    let fd = feature.data();
    for bi in 0..b {
        for p in 0..oh * ow {
            let ci = bi * oh * ow + p;
            let t = tap(xs.data()[ci], ys.data()[ci], h, w);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for ch in 0..c {
                let base = (bi * c + ch) * h * w;
                let g = dy[(bi * c + ch) * oh * ow + p];
                let (i00, i01) = (base + t.y0 * w + t.x0, base + t.y0 * w + t.x1);
                let (i10, i11) = (base + t.y1 * w + t.x0, base + t.y1 * w + t.x1);
                if let Some(df) = dfeat.as_deref_mut() {
                    df[i00] += (1.0 - t.fy) * (1.0 - t.fx) * g;
                    df[i01] += (1.0 - t.fy) * t.fx * g;
                    df[i10] += t.fy * (1.0 - t.fx) * g;
                    df[i11] += t.fy * t.fx * g;
                }
                gx += g * ((1.0 - t.fy) * (fd[i01] - fd[i00]) + t.fy * (fd[i11] - fd[i10]));
                let top = (1.0 - t.fx) * fd[i00] + t.fx * fd[i01];
                let bot = (1.0 - t.fx) * fd[i10] + t.fx * fd[i11];
                gy += g * (bot - top);
            }
            if let (Some(d), true) = (dxs.as_deref_mut(), t.x_live) {
                d[ci] += gx;
            }
            if let (Some(d), true) = (dys.as_deref_mut(), t.y_live) {
                d[ci] += gy;
            }
        }
    }
}

/// Reflect-pad a feature map on the bottom and right edges.
pub fn pad_reflect(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if out_h < h || out_w < w {
        return Err(Error::contract("reflect padding cannot shrink"));
    }
    if (out_h - h >= h && h > 1) || (out_w - w >= w && w > 1) {
        return Err(Error::contract("reflect padding wider than the image"));
    }
    let reflect = |i: usize, n: usize| -> usize {
        if n == 1 {
            0
        } else if i < n {
            i
        } else {
            2 * (n - 1) - i
        }
    };
    let mut out = vec![0.0; b * c * out_h * out_w];
    for (pi, plane) in x.data().chunks(h * w).enumerate() {
        for y in 0..out_h {
            for xx in 0..out_w {
                out[pi * out_h * out_w + y * out_w + xx] =
                    plane[reflect(y, h) * w + reflect(xx, w)];
            }
        }
    }
    Tensor::new(vec![b, c, out_h, out_w], out)
}
