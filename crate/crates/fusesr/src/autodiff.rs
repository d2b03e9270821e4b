//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every differentiable computation in the crate (forward passes and training
//! losses) is recorded as a sequence of [`Op`] nodes on a [`Tape`]. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and the backward sweep is a single reverse pass. Values are `f64`
//! throughout; gradient-check tests rely on double precision.
//!
//! Shape preconditions are enforced with assertions: public APIs validate
//! their inputs before tracing, so a shape mismatch on the tape is a bug.

use crate::kernels;

/// Dense tensor of arbitrary rank. Scalars use shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    /// Interpret as `(c, h, w)`.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected rank-3 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var, f64),
    MulScalar(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    /// Element-wise maximum; exact ties route the subgradient to the first
    /// argument.
    Maximum(Var, Var),
    /// `max(x, floor)` with the subgradient on `x` when `x >= floor`.
    FloorAt(Var, f64),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    NearestUp2(Var),
    Bilinear {
        x: Var,
        out_h: usize,
        out_w: usize,
    },
    ConcatChannels(Var, Var),
    GlobalAvgPool(Var),
    Linear {
        weight: Var,
        x: Var,
        bias: Var,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
    },
    MeanAll(Var),
    SumAll(Var),
    Dot(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, materializing zeros of the right shape if the
    /// variable did not participate in the loss.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(1024) }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Tensor::scalar(v), Op::Leaf)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape, tb.shape, "elementwise op on mismatched shapes");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, data), op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| f(x)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a, c), |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::MulScalar(a, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Maximum(a, b), f64::max)
    }

    pub fn floor_at(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::FloorAt(a, floor), |x| x.max(floor))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let tx = &self.nodes[x.0].value;
        let tk = &self.nodes[kernel.0].value;
        let tb = &self.nodes[bias.0].value;
        let (ci, h, w) = tx.chw();
        assert_eq!(tk.shape.len(), 4, "kernel must be rank 4");
        let (co, kci, kh, kw) = (tk.shape[0], tk.shape[1], tk.shape[2], tk.shape[3]);
        assert_eq!(ci, kci, "conv input channels");
        assert_eq!(tb.shape, vec![co], "conv bias shape");
        let oh = kernels::conv_out_dim(h, kh, stride, pad);
        let ow = kernels::conv_out_dim(w, kw, stride, pad);
        let data = kernels::conv2d(&tx.data, (ci, h, w), &tk.data, (co, kh, kw), &tb.data, stride, pad);
        self.push(
            Tensor::new(vec![co, oh, ow], data),
            Op::Conv2d { x, kernel, bias, stride, pad },
        )
    }

    pub fn nearest_up2(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let (c, h, w) = tx.chw();
        let data = kernels::nearest_upsample2(&tx.data, c, h, w);
        self.push(Tensor::new(vec![c, h * 2, w * 2], data), Op::NearestUp2(x))
    }

    pub fn bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let tx = &self.nodes[x.0].value;
        let (c, h, w) = tx.chw();
        let data = kernels::bilinear_resize(&tx.data, c, h, w, out_h, out_w);
        self.push(Tensor::new(vec![c, out_h, out_w], data), Op::Bilinear { x, out_h, out_w })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let (ca, ha, wa) = ta.chw();
        let (cb, hb, wb) = tb.chw();
        assert_eq!((ha, wa), (hb, wb), "concat spatial dims");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        self.push(Tensor::new(vec![ca + cb, ha, wa], data), Op::ConcatChannels(a, b))
    }

    /// `[c, h, w] -> [c]` spatial mean per channel.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let (c, h, w) = tx.chw();
        let inv = 1.0 / (h * w) as f64;
        let data = (0..c)
            .map(|ch| tx.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() * inv)
            .collect();
        self.push(Tensor::new(vec![c], data), Op::GlobalAvgPool(x))
    }

    /// `weight [out, in] * x [in] + bias [out]`.
    pub fn linear(&mut self, weight: Var, x: Var, bias: Var) -> Var {
        let tw = &self.nodes[weight.0].value;
        let tx = &self.nodes[x.0].value;
        let tb = &self.nodes[bias.0].value;
        assert_eq!(tw.shape.len(), 2, "linear weight rank");
        let (out_dim, in_dim) = (tw.shape[0], tw.shape[1]);
        assert_eq!(tx.shape, vec![in_dim], "linear input shape");
        assert_eq!(tb.shape, vec![out_dim], "linear bias shape");
        let data = (0..out_dim)
            .map(|o| {
                let row = &tw.data[o * in_dim..(o + 1) * in_dim];
                row.iter().zip(&tx.data).map(|(&w, &v)| w * v).sum::<f64>() + tb.data[o]
            })
            .collect();
        self.push(Tensor::new(vec![out_dim], data), Op::Linear { weight, x, bias })
    }

    /// Group normalization over `[c, h, w]` with per-channel affine.
    /// Statistics are per-sample (no batch coupling).
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let tx = &self.nodes[x.0].value;
        let (c, h, w) = tx.chw();
        assert!(groups >= 1 && c % groups == 0, "groups {groups} must divide channels {c}");
        assert_eq!(self.nodes[gamma.0].value.shape, vec![c]);
        assert_eq!(self.nodes[beta.0].value.shape, vec![c]);
        let (normalized, _, _) = group_norm_stats(&tx.data, c, h, w, groups, eps);
        let gamma_d = &self.nodes[gamma.0].value.data;
        let beta_d = &self.nodes[beta.0].value.data;
        let mut data = normalized;
        for ch in 0..c {
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v = *v * gamma_d[ch] + beta_d[ch];
            }
        }
        self.push(
            Tensor::new(vec![c, h, w], data),
            Op::GroupNorm { x, gamma, beta, groups, eps },
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let m = tx.data.iter().sum::<f64>() / tx.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let s = tx.data.iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        assert_eq!(ta.shape, tb.shape, "dot on mismatched shapes");
        let s = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::Dot(a, b))
    }

    /// Mean of a list of scalar vars.
    pub fn mean_of(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        self.mul_scalar(acc, 1.0 / vars.len() as f64)
    }

    /// Reverse sweep from `loss` (a scalar). Returns per-variable gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| {
            match &mut grads[v.0] {
                Some(t) => {
                    debug_assert_eq!(t.shape, contrib.shape);
                    for (a, b) in t.data.iter_mut().zip(&contrib.data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, map1(g, |x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, zip2(g, val(*b), |gv, bv| gv * bv));
                acc(*b, zip2(g, val(*a), |gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, zip2(g, tb, |gv, bv| gv / bv));
                let db = Tensor::new(
                    g.shape.clone(),
                    g.data
                        .iter()
                        .zip(&ta.data)
                        .zip(&tb.data)
                        .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                        .collect(),
                );
                acc(*b, db);
            }
            Op::AddScalar(a, _) => acc(*a, g.clone()),
            Op::MulScalar(a, c) => acc(*a, map1(g, |x| x * c)),
            Op::Relu(a) => acc(*a, zip2(g, val(*a), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => acc(*a, zip2(g, &node.value, |gv, yv| gv * (1.0 - yv * yv))),
            Op::Sigmoid(a) => acc(*a, zip2(g, &node.value, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Exp(a) => acc(*a, zip2(g, &node.value, |gv, yv| gv * yv)),
            Op::Ln(a) => acc(*a, zip2(g, val(*a), |gv, xv| gv / xv)),
            Op::Sqrt(a) => acc(*a, zip2(g, &node.value, |gv, yv| gv * 0.5 / yv)),
            Op::Maximum(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, zip3(g, ta, tb, |gv, av, bv| if av >= bv { gv } else { 0.0 }));
                acc(*b, zip3(g, ta, tb, |gv, av, bv| if bv > av { gv } else { 0.0 }));
            }
            Op::FloorAt(a, floor) => {
                acc(*a, zip2(g, val(*a), |gv, xv| if xv >= *floor { gv } else { 0.0 }));
            }
            Op::Conv2d { x, kernel, bias, stride, pad } => {
                let tx = val(*x);
                let tk = val(*kernel);
                let (ci, h, w) = tx.chw();
                let (co, kh, kw) = (tk.shape[0], tk.shape[2], tk.shape[3]);
                let dx = kernels::conv2d_backward_input(
                    &g.data, (ci, h, w), &tk.data, (co, kh, kw), *stride, *pad,
                );
                acc(*x, Tensor::new(tx.shape.clone(), dx));
                let dk = kernels::conv2d_backward_kernel(
                    &g.data, &tx.data, (ci, h, w), (co, kh, kw), *stride, *pad,
                );
                acc(*kernel, Tensor::new(tk.shape.clone(), dk));
                let db = kernels::conv2d_backward_bias(&g.data, co);
                acc(*bias, Tensor::new(vec![co], db));
            }
            Op::NearestUp2(x) => {
                let (c, h, w) = val(*x).chw();
                let dx = kernels::nearest_upsample2_backward(&g.data, c, h, w);
                acc(*x, Tensor::new(vec![c, h, w], dx));
            }
            Op::Bilinear { x, out_h, out_w } => {
                let (c, h, w) = val(*x).chw();
                let dx = kernels::bilinear_resize_backward(&g.data, c, h, w, *out_h, *out_w);
                acc(*x, Tensor::new(vec![c, h, w], dx));
            }
            Op::ConcatChannels(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = Tensor::new(ta.shape.clone(), g.data[..ta.len()].to_vec());
                let db = Tensor::new(tb.shape.clone(), g.data[ta.len()..].to_vec());
                acc(*a, da);
                acc(*b, db);
            }
            Op::GlobalAvgPool(x) => {
                let (c, h, w) = val(*x).chw();
                let inv = 1.0 / (h * w) as f64;
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    let gv = g.data[ch] * inv;
                    for v in &mut dx[ch * h * w..(ch + 1) * h * w] {
                        *v = gv;
                    }
                }
                acc(*x, Tensor::new(vec![c, h, w], dx));
            }
            Op::Linear { weight, x, bias } => {
                let tw = val(*weight);
                let tx = val(*x);
                let (out_dim, in_dim) = (tw.shape[0], tw.shape[1]);
                let mut dw = vec![0.0; out_dim * in_dim];
                for o in 0..out_dim {
                    for i2 in 0..in_dim {
                        dw[o * in_dim + i2] = g.data[o] * tx.data[i2];
                    }
                }
                acc(*weight, Tensor::new(vec![out_dim, in_dim], dw));
                let dx = (0..in_dim)
                    .map(|i2| (0..out_dim).map(|o| tw.data[o * in_dim + i2] * g.data[o]).sum())
                    .collect();
                acc(*x, Tensor::new(vec![in_dim], dx));
                acc(*bias, Tensor::new(vec![out_dim], g.data.clone()));
            }
            Op::GroupNorm { x, gamma, beta, groups, eps } => {
                let tx = val(*x);
                let tg = val(*gamma);
                let (c, h, w) = tx.chw();
                let (normalized, _, inv_std) = group_norm_stats(&tx.data, c, h, w, *groups, *eps);
                let spatial = h * w;
                let group_ch = c / groups;
                let group_len = group_ch * spatial;

                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for s in 0..spatial {
                        let idx = ch * spatial + s;
                        dgamma[ch] += g.data[idx] * normalized[idx];
                        dbeta[ch] += g.data[idx];
                    }
                }
                acc(*gamma, Tensor::new(vec![c], dgamma));
                acc(*beta, Tensor::new(vec![c], dbeta));

                let mut dx = vec![0.0; c * spatial];
                for grp in 0..*groups {
                    let base = grp * group_len;
                    // d_xhat, mean(d_xhat), mean(d_xhat * xhat) within the group
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..group_len {
                        let idx = base + j;
                        let ch = idx / spatial;
                        let dxh = g.data[idx] * tg.data[ch];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * normalized[idx];
                    }
                    mean_dxh /= group_len as f64;
                    mean_dxh_xh /= group_len as f64;
                    let inv = inv_std[grp];
                    for j in 0..group_len {
                        let idx = base + j;
                        let ch = idx / spatial;
                        let dxh = g.data[idx] * tg.data[ch];
                        dx[idx] = inv * (dxh - mean_dxh - normalized[idx] * mean_dxh_xh);
                    }
                }
                acc(*x, Tensor::new(vec![c, h, w], dx));
            }
            Op::MeanAll(x) => {
                let tx = val(*x);
                let gv = g.item() / tx.len() as f64;
                acc(*x, Tensor::new(tx.shape.clone(), vec![gv; tx.len()]));
            }
            Op::SumAll(x) => {
                let tx = val(*x);
                let gv = g.item();
                acc(*x, Tensor::new(tx.shape.clone(), vec![gv; tx.len()]));
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                acc(*a, map1(val(*b), |x| gv * x));
                acc(*b, map1(val(*a), |x| gv * x));
            }
        }
    }
}

fn map1(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape.clone(), t.data.iter().map(|&v| f(v)).collect())
}

fn zip2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape.clone(),
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn zip3(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape.clone(),
        a.data
            .iter()
            .zip(&b.data)
            .zip(&c.data)
            .map(|((&x, &y), &z)| f(x, y, z))
            .collect(),
    )
}

/// Normalized values plus per-group mean and 1/sqrt(var + eps).
fn group_norm_stats(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    groups: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let spatial = h * w;
    let group_len = (c / groups) * spatial;
    let mut normalized = vec![0.0; c * spatial];
    let mut means = vec![0.0; groups];
    let mut inv_stds = vec![0.0; groups];
    for grp in 0..groups {
        let base = grp * group_len;
        let slice = &x[base..base + group_len];
        let mean = slice.iter().sum::<f64>() / group_len as f64;
        let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / group_len as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, &v) in slice.iter().enumerate() {
            normalized[base + j] = (v - mean) * inv;
        }
        means[grp] = mean;
        inv_stds[grp] = inv;
    }
    (normalized, means, inv_stds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of a scalar-valued function of one leaf.
    fn finite_diff(
        build: &dyn Fn(&mut Tape, Var) -> Var,
        input: &Tensor,
        h: f64,
    ) -> Vec<f64> {
        (0..input.len())
            .map(|i| {
                let mut plus = input.clone();
                plus.data[i] += h;
                let mut minus = input.clone();
                minus.data[i] -= h;
                let eval = |t: Tensor| {
                    let mut tape = Tape::new();
                    let v = tape.leaf(t);
                    let out = build(&mut tape, v);
                    tape.value(out).item()
                };
                (eval(plus) - eval(minus)) / (2.0 * h)
            })
            .collect()
    }

    fn check_grad(build: &dyn Fn(&mut Tape, Var) -> Var, input: Tensor) {
        let mut tape = Tape::new();
        let v = tape.leaf(input.clone());
        let out = build(&mut tape, v);
        let grads = tape.backward(out);
        let analytic = &grads.get(v).expect("input reaches the loss").data;
        let numeric = finite_diff(build, &input, 1e-5);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!(
                (a - n).abs() / scale < 1e-5,
                "grad mismatch at {i}: analytic {a}, numeric {n}"
            );
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, vec![2, 3, 3]);
        check_grad(
            &|t, v| {
                let a = t.tanh(v);
                let b = t.mul(a, v);
                let c = t.add_scalar(b, 0.3);
                let d = t.mul(c, c);
                t.mean_all(d)
            },
            x,
        );
    }

    #[test]
    fn conv_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![2, 5, 5]);
        let k = rand_tensor(&mut rng, vec![3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, vec![3]);

        // w.r.t. input
        let kc = k.clone();
        let bc = b.clone();
        check_grad(
            &move |t, v| {
                let kv = t.leaf(kc.clone());
                let bv = t.leaf(bc.clone());
                let y = t.conv2d(v, kv, bv, 2, 1);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            x.clone(),
        );

        // w.r.t. kernel
        let xc = x.clone();
        let bc = b.clone();
        check_grad(
            &move |t, v| {
                let xv = t.leaf(xc.clone());
                let bv = t.leaf(bc.clone());
                let y = t.conv2d(xv, v, bv, 1, 1);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            k,
        );

        // w.r.t. bias
        let xc = x.clone();
        let kc2 = Tensor::new(vec![3, 2, 3, 3], vec![0.1; 54]);
        check_grad(
            &move |t, v| {
                let xv = t.leaf(xc.clone());
                let kv = t.leaf(kc2.clone());
                let y = t.conv2d(xv, kv, v, 1, 0);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            b,
        );
    }

    #[test]
    fn resize_and_pool_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check_grad(
            &|t, v| {
                let up = t.nearest_up2(v);
                let sq = t.mul(up, up);
                t.mean_all(sq)
            },
            rand_tensor(&mut rng, vec![2, 3, 3]),
        );
        check_grad(
            &|t, v| {
                let up = t.bilinear(v, 7, 9);
                let sq = t.mul(up, up);
                t.mean_all(sq)
            },
            rand_tensor(&mut rng, vec![1, 3, 4]),
        );
        check_grad(
            &|t, v| {
                let p = t.global_avg_pool(v);
                let sq = t.mul(p, p);
                t.sum_all(sq)
            },
            rand_tensor(&mut rng, vec![3, 4, 4]),
        );
    }

    #[test]
    fn group_norm_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, vec![4, 3, 3]);
        let gamma = rand_tensor(&mut rng, vec![4]);
        let beta = rand_tensor(&mut rng, vec![4]);

        let (gc, bc) = (gamma.clone(), beta.clone());
        check_grad(
            &move |t, v| {
                let g = t.leaf(gc.clone());
                let b = t.leaf(bc.clone());
                let y = t.group_norm(v, g, b, 2, 1e-5);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            x.clone(),
        );

        let xc = x.clone();
        let bc = beta.clone();
        check_grad(
            &move |t, v| {
                let xv = t.leaf(xc.clone());
                let b = t.leaf(bc.clone());
                let y = t.group_norm(xv, v, b, 2, 1e-5);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            gamma,
        );
    }

    #[test]
    fn linear_and_dot_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        let x = rand_tensor(&mut rng, vec![4]);
        let b = rand_tensor(&mut rng, vec![3]);

        let (wc, bc) = (w.clone(), b.clone());
        check_grad(
            &move |t, v| {
                let wv = t.leaf(wc.clone());
                let bv = t.leaf(bc.clone());
                let y = t.linear(wv, v, bv);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            x.clone(),
        );

        let xc = x.clone();
        check_grad(
            &move |t, v| {
                let xv = t.leaf(xc.clone());
                let d = t.dot(v, xv);
                t.mul(d, d)
            },
            rand_tensor(&mut rng, vec![4]),
        );
        let _ = (w, b);
    }

    #[test]
    fn maximum_routes_ties_to_first_argument() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 5.0]));
        let b = tape.leaf(Tensor::new(vec![3], vec![1.0, 3.0, 4.0]));
        let m = tape.maximum(a, b);
        assert_eq!(tape.value(m).data, vec![1.0, 3.0, 5.0]);
        let s = tape.sum_all(m);
        let grads = tape.backward(s);
        assert_eq!(grads.get(a).unwrap().data, vec![1.0, 0.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn fan_in_reuse_accumulates() {
        // y = x*x + x -> dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(x, x);
        let y = tape.add(sq, x);
        let grads = tape.backward(y);
        assert_eq!(grads.get(x).unwrap().data, vec![7.0]);
    }
}
