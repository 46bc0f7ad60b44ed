//! Raw numeric kernels behind the tape ops: GEMM-backed convolutions,
//! normalization, pooling and resampling.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::tensor::{Shape, Tensor};

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output extent for an input extent, `None` if the kernel does not fit.
    pub fn out_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    // SAFETY: the index bounds of all three operands are checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one `[c, h, w]` item into a `[c*k*k, oh*ow]` column matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.kernel;
    let p = oh * ow;
    let mut col = vec![0.0; c * k * k * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulate columns back into a `[c, h, w]` item.
#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    out: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
) {
    let k = g.kernel;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_out_shape(x: Shape, w: Shape, g: ConvGeom) -> Option<Shape> {
    if w.h != g.kernel || w.w != g.kernel || w.c != x.c {
        return None;
    }
    Some(Shape::new(x.n, w.n, g.out_len(x.h)?, g.out_len(x.w)?))
}

/// `x: [n, cin, h, w]`, `w: [cout, cin, k, k]`, `b: [1, cout, 1, 1]`.
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom, out: Shape) -> Tensor {
    let xs = x.shape();
    let kdim = xs.c * g.kernel * g.kernel;
    let p = out.plane();
    let mut y = Tensor::zeros(out);
    for n in 0..xs.n {
        let col;
        let colref: &[f64] = if g.is_pointwise() {
            x.item(n)
        } else {
            col = im2col(x.item(n), xs.c, xs.h, xs.w, g, out.h, out.w);
            &col
        };
        let yn = &mut y.data_mut()[n * out.c * p..(n + 1) * out.c * p];
        gemm(out.c, kdim, p, w.data(), (kdim, 1), colref, (p, 1), yn, 0.0);
        if let Some(b) = b {
            for (co, chunk) in yn.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

/// Gradients of [`conv2d`]; `dx`/`dw`/`db` are accumulated when present.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: ConvGeom,
    dy: &Tensor,
    dx: Option<&mut Tensor>,
    dw: Option<&mut Tensor>,
    db: Option<&mut Tensor>,
) {
    let xs = x.shape();
    let out = dy.shape();
    let kdim = xs.c * g.kernel * g.kernel;
    let p = out.plane();
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..xs.n {
        let dyn_ = &dy.data()[n * out.c * p..(n + 1) * out.c * p];
        if let Some(dw) = dw.as_deref_mut() {
            let col;
            let colref: &[f64] = if g.is_pointwise() {
                x.item(n)
            } else {
                col = im2col(x.item(n), xs.c, xs.h, xs.w, g, out.h, out.w);
                &col
            };
            gemm(out.c, p, kdim, dyn_, (p, 1), colref, (1, p), dw.data_mut(), 1.0);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let item = xs.c * xs.plane();
            let dxn = &mut dx.data_mut()[n * item..(n + 1) * item];
            if g.is_pointwise() {
                gemm(kdim, out.c, p, w.data(), (1, kdim), dyn_, (p, 1), dxn, 1.0);
            } else {
                let mut dcol = vec![0.0; kdim * p];
                gemm(kdim, out.c, p, w.data(), (1, kdim), dyn_, (p, 1), &mut dcol, 0.0);
                col2im(&dcol, dxn, xs.c, xs.h, xs.w, g, out.h, out.w);
            }
        }
    }
    if let Some(db) = db {
        for n in 0..out.n {
            for co in 0..out.c {
                db.data_mut()[co] += dy.plane(n, co).iter().sum::<f64>();
            }
        }
    }
}

pub(crate) fn conv_transpose2d_out_shape(
    x: Shape,
    w: Shape,
    g: ConvGeom,
    output_pad: usize,
) -> Option<Shape> {
    if w.h != g.kernel || w.w != g.kernel || w.n != x.c || output_pad >= g.stride.max(1) {
        return None;
    }
    let len = |i: usize| ((i - 1) * g.stride + g.kernel + output_pad).checked_sub(2 * g.pad);
    if x.h == 0 || x.w == 0 {
        return None;
    }
    Some(Shape::new(x.n, w.c, len(x.h)?, len(x.w)?))
}

/// Transposed convolution, `w: [cin, cout, k, k]`.
pub(crate) fn conv_transpose2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom, out: Shape) -> Tensor {
    let xs = x.shape();
    let kdim = out.c * g.kernel * g.kernel;
    let p = xs.plane();
    let mut y = Tensor::zeros(out);
    let oitem = out.c * out.plane();
    for n in 0..xs.n {
        let mut col = vec![0.0; kdim * p];
        gemm(kdim, xs.c, p, w.data(), (1, kdim), x.item(n), (p, 1), &mut col, 0.0);
        let yn = &mut y.data_mut()[n * oitem..(n + 1) * oitem];
        col2im(&col, yn, out.c, out.h, out.w, g, xs.h, xs.w);
        if let Some(b) = b {
            for (co, chunk) in yn.chunks_mut(out.plane()).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: ConvGeom,
    dy: &Tensor,
    dx: Option<&mut Tensor>,
    dw: Option<&mut Tensor>,
    db: Option<&mut Tensor>,
) {
    let xs = x.shape();
    let out = dy.shape();
    let kdim = out.c * g.kernel * g.kernel;
    let p = xs.plane();
    let oitem = out.c * out.plane();
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..xs.n {
        let dcol = im2col(&dy.data()[n * oitem..(n + 1) * oitem], out.c, out.h, out.w, g, xs.h, xs.w);
        if let Some(dx) = dx.as_deref_mut() {
            let item = xs.c * p;
            let dxn = &mut dx.data_mut()[n * item..(n + 1) * item];
            gemm(xs.c, kdim, p, w.data(), (kdim, 1), &dcol, (p, 1), dxn, 1.0);
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm(xs.c, p, kdim, x.item(n), (p, 1), &dcol, (1, p), dw.data_mut(), 1.0);
        }
    }
    if let Some(db) = db {
        for n in 0..out.n {
            for co in 0..out.c {
                db.data_mut()[co] += dy.plane(n, co).iter().sum::<f64>();
            }
        }
    }
}

pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-plane standardization; returns the output and each plane's `1/σ`.
pub(crate) fn instance_norm(x: &Tensor) -> (Tensor, Vec<f64>) {
    let s = x.shape();
    let p = s.plane();
    let mut y = Tensor::zeros(s);
    let mut inv = Vec::with_capacity(s.n * s.c);
    for (src, dst) in x.data().chunks(p).zip(y.data_mut().chunks_mut(p)) {
        let mean = src.iter().sum::<f64>() / p as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64;
        let r = 1.0 / libm::sqrt(var + INSTANCE_NORM_EPS);
        for (d, v) in dst.iter_mut().zip(src) {
            *d = (v - mean) * r;
        }
        inv.push(r);
    }
    (y, inv)
}

pub(crate) fn instance_norm_backward(y: &Tensor, inv: &[f64], dy: &Tensor, dx: &mut Tensor) {
    let p = y.shape().plane();
    let planes = y.data().chunks(p).zip(dy.data().chunks(p)).zip(dx.data_mut().chunks_mut(p));
    for (((yp, gp), dp), r) in planes.zip(inv) {
        let mean_g = gp.iter().sum::<f64>() / p as f64;
        let mean_gy = gp.iter().zip(yp).map(|(g, y)| g * y).sum::<f64>() / p as f64;
        for ((d, g), yv) in dp.iter_mut().zip(gp).zip(yp) {
            *d += r * (g - mean_g - yv * mean_gy);
        }
    }
}

/// 2×2 average pooling with stride 2.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out = s.with_spatial(oh, ow);
    let mut y = Tensor::zeros(out);
    for (src, dst) in x.data().chunks(s.plane()).zip(y.data_mut().chunks_mut(out.plane())) {
        for oy in 0..oh {
            let r0 = &src[2 * oy * s.w..][..s.w];
            let r1 = &src[(2 * oy + 1) * s.w..][..s.w];
            for ox in 0..ow {
                dst[oy * ow + ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * 0.25;
            }
        }
    }
    y
}

pub(crate) fn avg_pool2_backward(dy: &Tensor, dx: &mut Tensor) {
    let s = dx.shape();
    let o = dy.shape();
    for (g, d) in dy.data().chunks(o.plane()).zip(dx.data_mut().chunks_mut(s.plane())) {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let v = g[oy * o.w + ox] * 0.25;
                d[2 * oy * s.w + 2 * ox] += v;
                d[2 * oy * s.w + 2 * ox + 1] += v;
                d[(2 * oy + 1) * s.w + 2 * ox] += v;
                d[(2 * oy + 1) * s.w + 2 * ox + 1] += v;
            }
        }
    }
}

/// Source taps for 2× bilinear upsampling with half-pixel centers.
fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// 2× bilinear upsampling (half-pixel centers, edge clamped).
pub fn bilinear_up2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let out = s.with_spatial(2 * s.h, 2 * s.w);
    let ty = bilinear_taps(s.h);
    let tx = bilinear_taps(s.w);
    let mut y = Tensor::zeros(out);
    let mut row = vec![0.0; out.w];
    for (src, dst) in x.data().chunks(s.plane()).zip(y.data_mut().chunks_mut(out.plane())) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (r, &(x0, x1, lx)) in row.iter_mut().zip(&tx) {
                let top = src[y0 * s.w + x0] * (1.0 - lx) + src[y0 * s.w + x1] * lx;
                let bot = src[y1 * s.w + x0] * (1.0 - lx) + src[y1 * s.w + x1] * lx;
                *r = top * (1.0 - ly) + bot * ly;
            }
            dst[oy * out.w..(oy + 1) * out.w].copy_from_slice(&row);
        }
    }
    y
}

pub(crate) fn bilinear_up2_backward(dy: &Tensor, dx: &mut Tensor) {
    let s = dx.shape();
    let o = dy.shape();
    let ty = bilinear_taps(s.h);
    let tx = bilinear_taps(s.w);
    for (g, d) in dy.data().chunks(o.plane()).zip(dx.data_mut().chunks_mut(s.plane())) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * o.w + ox];
                d[y0 * s.w + x0] += v * (1.0 - ly) * (1.0 - lx);
                d[y0 * s.w + x1] += v * (1.0 - ly) * lx;
                d[y1 * s.w + x0] += v * ly * (1.0 - lx);
                d[y1 * s.w + x1] += v * ly * lx;
            }
        }
    }
}

/// Max pooling; returns the output and the flat argmax index per output.
pub(crate) fn max_pool(x: &Tensor, g: ConvGeom, out: Shape) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let mut y = Tensor::full(out, f64::NEG_INFINITY);
    let mut arg = vec![0usize; out.len()];
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..out.h {
            for ox in 0..out.w {
                let oi = plane * out.plane() + oy * out.w + ox;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let ii = base + iy as usize * s.w + ix as usize;
                        if x.data()[ii] > y.data()[oi] {
                            y.data_mut()[oi] = x.data()[ii];
                            arg[oi] = ii;
                        }
                    }
                }
            }
        }
    }
    (y, arg)
}
