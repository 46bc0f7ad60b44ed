//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every op of one forward pass; [`Tape::backward`]
//! replays it in reverse. Parameters enter through [`Tape::param`] and
//! their gradients come back keyed by [`ParamId`]; everything entered with
//! [`Tape::constant`] is frozen, although gradients still flow *through*
//! ops that consume frozen values.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::kernels::{self, ConvGeom};
use crate::nn::ParamId;
use crate::tensor::{Shape, Tensor};

/// Logit bound matching probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub const LOGIT_CLAMP: f64 = 16.118_095_550_958_32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    Conv2d { x: Var, w: Var, b: Option<Var>, g: ConvGeom },
    ConvT2d { x: Var, w: Var, b: Option<Var>, g: ConvGeom },
    InstanceNorm { x: Var, inv: Vec<f64> },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Blend { main: Var, side: Var, alpha: f64 },
    AvgPool2(Var),
    BilinearUp2(Var),
    MaxPool { x: Var, arg: Vec<usize> },
    Concat(Var, Var),
    ChannelAffine { x: Var, scale: Vec<f64> },
    ChannelMean(Var),
    ChannelVar(Var),
    Sum(Var),
    Mean(Var),
    LogSigmoid(Var),
    LogOneMinusSigmoid(Var),
    SoftmaxXent { logits: Var, target: Vec<u8>, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor)> {
        self.params
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf(None),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted but which is not a network parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf(None),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        self.nodes.push(Node {
            value: value.clone(),
            op: Op::Leaf(Some(id)),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, g: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let Some(out) = kernels::conv2d_out_shape(xs, ws, g) else {
            bail!(Dimension, "conv2d: input {xs} incompatible with weight {ws} ({g:?})");
        };
        let y = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), g, out);
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, g }, &ins))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
        output_pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let Some(out) = kernels::conv_transpose2d_out_shape(xs, ws, g, output_pad) else {
            bail!(Dimension, "conv_transpose2d: input {xs} incompatible with weight {ws}");
        };
        let y = kernels::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), g, out);
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::ConvT2d { x, w, b, g }, &ins))
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (y, inv) = kernels::instance_norm(self.value(x));
        self.push(y, Op::InstanceNorm { x, inv }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(y, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(libm::tanh);
        self.push(y, Op::Tanh(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let y = self.value(x).map(libm::fabs);
        self.push(y, Op::Abs(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let y = self.value(x).map(|v| v * s);
        self.push(y, Op::Scale(x, s), &[x])
    }

    /// `alpha·main + (1 - alpha)·side`.
    pub fn blend(&mut self, main: Var, side: Var, alpha: f64) -> Result<Var> {
        let y = self
            .value(main)
            .zip_map(self.value(side), |m, s| alpha * m + (1.0 - alpha) * s)?;
        Ok(self.push(y, Op::Blend { main, side, alpha }, &[main, side]))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            bail!(Dimension, "average pooling needs even spatial size, got {s}");
        }
        let y = kernels::avg_pool2(self.value(x));
        Ok(self.push(y, Op::AvgPool2(x), &[x]))
    }

    pub fn bilinear_up2(&mut self, x: Var) -> Var {
        let y = kernels::bilinear_up2(self.value(x));
        self.push(y, Op::BilinearUp2(x), &[x])
    }

    pub fn max_pool(&mut self, x: Var, g: ConvGeom) -> Result<Var> {
        let s = self.shape(x);
        let (Some(h), Some(w)) = (g.out_len(s.h), g.out_len(s.w)) else {
            bail!(Dimension, "max pool window does not fit {s}");
        };
        let (y, arg) = kernels::max_pool(self.value(x), g, s.with_spatial(h, w));
        Ok(self.push(y, Op::MaxPool { x, arg }, &[x]))
    }

    /// Channel-axis concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            bail!(Dimension, "concat: {sa} vs {sb}");
        }
        let out = sa.with_channels(sa.c + sb.c);
        let mut data = Vec::with_capacity(out.len());
        for n in 0..sa.n {
            data.extend_from_slice(self.value(a).item(n));
            data.extend_from_slice(self.value(b).item(n));
        }
        let y = Tensor::from_vec(out, data)?;
        Ok(self.push(y, Op::Concat(a, b), &[a, b]))
    }

    /// `y = x·scale[c] + shift[c]` with frozen per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let s = self.shape(x);
        if scale.len() != s.c || shift.len() != s.c {
            bail!(Dimension, "channel affine: {} coefficients for {s}", scale.len());
        }
        let mut y = self.value(x).clone();
        let p = s.plane();
        for (i, chunk) in y.data_mut().chunks_mut(p).enumerate() {
            let c = i % s.c;
            chunk.iter_mut().for_each(|v| *v = *v * scale[c] + shift[c]);
        }
        Ok(self.push(y, Op::ChannelAffine { x, scale: scale.to_vec() }, &[x]))
    }

    /// Spatial mean per channel, `[n, c, 1, 1]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let p = s.plane() as f64;
        let data = self.value(x).data().chunks(s.plane()).map(|c| c.iter().sum::<f64>() / p).collect();
        let y = Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("shape");
        self.push(y, Op::ChannelMean(x), &[x])
    }

    /// Spatial population variance per channel, `[n, c, 1, 1]`.
    pub fn channel_var(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let p = s.plane() as f64;
        let data = self
            .value(x)
            .data()
            .chunks(s.plane())
            .map(|c| {
                let m = c.iter().sum::<f64>() / p;
                c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / p
            })
            .collect();
        let y = Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("shape");
        self.push(y, Op::ChannelVar(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.push(y, Op::Mean(x), &[x])
    }

    /// Elementwise `ln σ(x)` with `x` clamped to `±LOGIT_CLAMP`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let y = self
            .value(x)
            .map(|v| -softplus(-v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)));
        self.push(y, Op::LogSigmoid(x), &[x])
    }

    /// Elementwise `ln(1 - σ(x))` with `x` clamped to `±LOGIT_CLAMP`.
    pub fn log_one_minus_sigmoid(&mut self, x: Var) -> Var {
        let y = self
            .value(x)
            .map(|v| -softplus(v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)));
        self.push(y, Op::LogOneMinusSigmoid(x), &[x])
    }

    /// Mean per-pixel softmax cross entropy against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &[u8]) -> Result<Var> {
        let s = self.shape(logits);
        if target.len() != s.n * s.plane() {
            bail!(Dimension, "cross entropy: {} targets for logits {s}", target.len());
        }
        let p = s.plane();
        let x = self.value(logits);
        let mut probs = Tensor::zeros(s);
        let mut loss = 0.0;
        for n in 0..s.n {
            for i in 0..p {
                let t = target[n * p + i] as usize;
                if t >= s.c {
                    bail!(Input, "cross entropy target {t} out of range for {} classes", s.c);
                }
                let m = (0..s.c).map(|c| x.data()[(n * s.c + c) * p + i]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for c in 0..s.c {
                    let e = libm::exp(x.data()[(n * s.c + c) * p + i] - m);
                    probs.data_mut()[(n * s.c + c) * p + i] = e;
                    z += e;
                }
                for c in 0..s.c {
                    probs.data_mut()[(n * s.c + c) * p + i] /= z;
                }
                loss -= libm::log(probs.data()[(n * s.c + t) * p + i].max(1e-300));
            }
        }
        let y = Tensor::scalar(loss / (s.n * p) as f64);
        Ok(self.push(
            y,
            Op::SoftmaxXent {
                logits,
                target: target.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if let Op::Leaf(pid) = node.op {
                if let Some(pid) = pid {
                    params.push((pid, g.clone()));
                }
                grads[i] = Some(g);
            }
        }
        Grads {
            nodes: grads,
            params,
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |v: Var, grads: &mut [Option<Tensor>], f: &dyn Fn(&mut Tensor)| {
            if !self.wants(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
            f(slot);
        };
        match &node.op {
            Op::Leaf(_) => {}
            Op::Conv2d { x, w, b, g: geom } | Op::ConvT2d { x, w, b, g: geom } => {
                let transposed = matches!(node.op, Op::ConvT2d { .. });
                let mut dx = self.wants(*x).then(|| take_or_zero(grads, *x, self.shape(*x)));
                let mut dw = self.wants(*w).then(|| take_or_zero(grads, *w, self.shape(*w)));
                let mut db = b
                    .filter(|b| self.wants(*b))
                    .map(|b| take_or_zero(grads, b, self.shape(b)));
                let (xv, wv) = (self.value(*x), self.value(*w));
                if transposed {
                    kernels::conv_transpose2d_backward(xv, wv, *geom, g, dx.as_mut(), dw.as_mut(), db.as_mut());
                } else {
                    kernels::conv2d_backward(xv, wv, *geom, g, dx.as_mut(), dw.as_mut(), db.as_mut());
                }
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    grads[b.0] = Some(db);
                }
            }
            Op::InstanceNorm { x, inv } => acc(*x, grads, &|d| {
                kernels::instance_norm_backward(&node.value, inv, g, d)
            }),
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, grads, &|d| {
                    for ((d, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                })
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                acc(*x, grads, &|d| {
                    for ((d, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *d += if *xv > 0.0 { *gv } else { slope * gv };
                    }
                })
            }
            Op::Tanh(x) => acc(*x, grads, &|d| {
                for ((d, gv), y) in d.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }),
            Op::Abs(x) => {
                let xv = self.value(*x);
                acc(*x, grads, &|d| {
                    for ((d, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *d += if *xv > 0.0 {
                            *gv
                        } else if *xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        };
                    }
                })
            }
            Op::Add(a, b) => {
                acc(*a, grads, &|d| d.add_assign(g));
                acc(*b, grads, &|d| d.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(*a, grads, &|d| d.add_assign(g));
                acc(*b, grads, &|d| axpy(d, g, -1.0));
            }
            Op::Scale(x, s) => acc(*x, grads, &|d| axpy(d, g, *s)),
            Op::Blend { main, side, alpha } => {
                acc(*main, grads, &|d| axpy(d, g, *alpha));
                acc(*side, grads, &|d| axpy(d, g, 1.0 - alpha));
            }
            Op::AvgPool2(x) => acc(*x, grads, &|d| kernels::avg_pool2_backward(g, d)),
            Op::BilinearUp2(x) => acc(*x, grads, &|d| kernels::bilinear_up2_backward(g, d)),
            Op::MaxPool { x, arg } => acc(*x, grads, &|d| {
                for (gv, &i) in g.data().iter().zip(arg) {
                    d.data_mut()[i] += gv;
                }
            }),
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
                acc(*a, grads, &|d| {
                    for n in 0..sa.n {
                        let src = &g.data()[n * (la + lb)..][..la];
                        for (d, s) in d.data_mut()[n * la..][..la].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
                acc(*b, grads, &|d| {
                    for n in 0..sb.n {
                        let src = &g.data()[n * (la + lb) + la..][..lb];
                        for (d, s) in d.data_mut()[n * lb..][..lb].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }
            Op::ChannelAffine { x, scale } => {
                let s = self.shape(*x);
                acc(*x, grads, &|d| {
                    for (i, (dc, gc)) in d.data_mut().chunks_mut(s.plane()).zip(g.data().chunks(s.plane())).enumerate() {
                        let k = scale[i % s.c];
                        dc.iter_mut().zip(gc).for_each(|(d, g)| *d += g * k);
                    }
                })
            }
            Op::ChannelMean(x) => {
                let s = self.shape(*x);
                let p = s.plane() as f64;
                acc(*x, grads, &|d| {
                    for (dc, gv) in d.data_mut().chunks_mut(s.plane()).zip(g.data()) {
                        dc.iter_mut().for_each(|d| *d += gv / p);
                    }
                })
            }
            Op::ChannelVar(x) => {
                let s = self.shape(*x);
                let p = s.plane() as f64;
                let xv = self.value(*x);
                acc(*x, grads, &|d| {
                    for ((dc, xc), gv) in d.data_mut().chunks_mut(s.plane()).zip(xv.data().chunks(s.plane())).zip(g.data()) {
                        let m = xc.iter().sum::<f64>() / p;
                        dc.iter_mut().zip(xc).for_each(|(d, x)| *d += gv * 2.0 * (x - m) / p);
                    }
                })
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                acc(*x, grads, &|d| d.data_mut().iter_mut().for_each(|d| *d += gv))
            }
            Op::Mean(x) => {
                let gv = g.data()[0] / self.shape(*x).len() as f64;
                acc(*x, grads, &|d| d.data_mut().iter_mut().for_each(|d| *d += gv))
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x);
                acc(*x, grads, &|d| {
                    for ((d, gv), x) in d.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if x.abs() < LOGIT_CLAMP {
                            *d += gv * (1.0 - sigmoid(*x));
                        }
                    }
                })
            }
            Op::LogOneMinusSigmoid(x) => {
                let xv = self.value(*x);
                acc(*x, grads, &|d| {
                    for ((d, gv), x) in d.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if x.abs() < LOGIT_CLAMP {
                            *d -= gv * sigmoid(*x);
                        }
                    }
                })
            }
            Op::SoftmaxXent { logits, target, probs } => {
                let s = self.shape(*logits);
                let p = s.plane();
                let scale = g.data()[0] / (s.n * p) as f64;
                acc(*logits, grads, &|d| {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            for i in 0..p {
                                let idx = (n * s.c + c) * p + i;
                                let hot = if target[n * p + i] as usize == c { 1.0 } else { 0.0 };
                                d.data_mut()[idx] += scale * (probs.data()[idx] - hot);
                            }
                        }
                    }
                })
            }
        }
    }
}

fn take_or_zero(grads: &mut [Option<Tensor>], v: Var, shape: Shape) -> Tensor {
    grads[v.0].take().unwrap_or_else(|| Tensor::zeros(shape))
}

fn axpy(d: &mut Tensor, g: &Tensor, a: f64) {
    for (d, g) in d.data_mut().iter_mut().zip(g.data()) {
        *d += a * g;
    }
}
