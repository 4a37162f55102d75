//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from the model and referenced by index, so [`Graph::backward`]
//! returns gradients aligned with the model's parameter list.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::losses::{huber_quantile_grad, huber_quantile_value, mono_smooth, mono_smooth_grad};

use super::conv::{partial_conv_backward, partial_conv_forward, ConvGeom, PartialConvCache};
use super::tensor::{gemm, Tensor};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Elu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    pub fn grad(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Act(Var, Activation),
    Column(Var, usize),
    SliceDim0(Var, usize),
    Concat(Vec<Var>),
    Upsample2x(Var),
    PartialConv {
        x: Var,
        w: Var,
        b: Var,
        mask: Vec<f64>,
        cache: Box<PartialConvCache>,
    },
    Huber {
        v: Var,
        r: Vec<f64>,
        alpha: Vec<f64>,
        h: f64,
    },
    L1Target {
        x: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
    GaussianNll {
        mu: Var,
        log_sigma: Var,
        r: Vec<f64>,
    },
    MonoSmooth(Var),
    MaskedMean {
        x: Var,
        mask: Vec<f64>,
        count: usize,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// One recorded forward computation.
pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

fn same_len(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(RiskError::invalid(format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph { params, nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(i) => &self.params[*i],
            _ => self.nodes[v.0].value.as_ref().expect("node value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input (no gradient is reported for it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, index: usize) -> Result<Var> {
        if index >= self.params.len() {
            return Err(RiskError::invalid(format!("no parameter {index}")));
        }
        self.nodes.push(Node { op: Op::Param(index), value: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(RiskError::invalid(format!("matmul shapes {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = *ta.shape().last().unwrap_or(&0);
        if ta.shape().len() != 2 || tb.len() != n {
            return Err(RiskError::invalid("row bias shape mismatch"));
        }
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        Ok(self.push(Op::AddRowBias(a, bias), out))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_len(ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(op, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(op, t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| s * x, Op::Scale(a, s))
    }

    /// Elementwise product with a constant vector.
    pub fn mul_const(&mut self, a: Var, k: &[f64]) -> Result<Var> {
        let ta = self.value(a);
        if k.len() != ta.len() {
            return Err(RiskError::invalid("constant factor length differs"));
        }
        let data = ta.data().iter().zip(k).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::MulConst(a, k.to_vec()), t))
    }

    pub fn act(&mut self, a: Var, f: Activation) -> Var {
        self.map(a, |x| f.apply(x), Op::Act(a, f))
    }

    pub fn mono_smooth(&mut self, a: Var) -> Var {
        self.map(a, mono_smooth, Op::MonoSmooth(a))
    }

    /// Column `j` of a `[n, m]` matrix as a `[n]` vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 2 || j >= s[1] {
            return Err(RiskError::invalid(format!("column {j} of {s:?}")));
        }
        let m = s[1];
        let data: Vec<f64> = ta.data().chunks(m).map(|r| r[j]).collect();
        let t = Tensor::new(vec![s[0]], data)?;
        Ok(self.push(Op::Column(a, j), t))
    }

    /// Index `i` along the leading dimension.
    pub fn slice0(&mut self, a: Var, i: usize) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() < 2 || i >= s[0] {
            return Err(RiskError::invalid(format!("slice {i} of {s:?}")));
        }
        let inner: usize = s[1..].iter().product();
        let t = Tensor::new(s[1..].to_vec(), ta.data()[i * inner..(i + 1) * inner].to_vec())?;
        Ok(self.push(Op::SliceDim0(a, i), t))
    }

    /// Concatenation along the leading dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| RiskError::invalid("empty concat"))?);
        let tail = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(RiskError::invalid("concat trailing shapes differ"));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), t))
    }

    /// Nearest-neighbour 2× upsampling of a `[C, H, W]` tensor.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 3 {
            return Err(RiskError::invalid("upsample expects [C,H,W]"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let t = Tensor::new(vec![c, 2 * h, 2 * w], upsample_nearest(ta.data(), c, h, w))?;
        Ok(self.push(Op::Upsample2x(a), t))
    }

    /// Partial convolution of `x: [C, H, W]` with mask `[H, W]`.
    /// Returns the output node and the propagated mask.
    pub fn partial_conv(&mut self, x: Var, w: Var, b: Var, mask: &[f64], geom: ConvGeom) -> Result<(Var, Vec<f64>)> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || s[0] != geom.in_ch {
            return Err(RiskError::invalid(format!("conv input {s:?} for {geom:?}")));
        }
        let in_hw = (s[1], s[2]);
        let (y, mask_out, cache) =
            partial_conv_forward(tx.data(), mask, self.value(w).data(), self.value(b).data(), geom, in_hw)?;
        let t = Tensor::new(vec![geom.out_ch, cache.out_hw.0, cache.out_hw.1], y)?;
        let node = self.push(
            Op::PartialConv {
                x,
                w,
                b,
                mask: mask.to_vec(),
                cache: Box::new(cache),
            },
            t,
        );
        Ok((node, mask_out))
    }

    /// Elementwise smoothed pinball loss of `r − v` with per-element α.
    pub fn huber_quantile(&mut self, v: Var, r: &[f64], alpha: &[f64], h: f64) -> Result<Var> {
        let tv = self.value(v);
        if r.len() != tv.len() || alpha.len() != tv.len() {
            return Err(RiskError::invalid("huber operand lengths differ"));
        }
        let data = tv
            .data()
            .iter()
            .zip(r.iter().zip(alpha))
            .map(|(&vv, (&rr, &a))| huber_quantile_value(rr - vv, a, h))
            .collect();
        let t = Tensor::new(tv.shape().to_vec(), data)?;
        Ok(self.push(Op::Huber { v, r: r.to_vec(), alpha: alpha.to_vec(), h }, t))
    }

    /// Elementwise `weight·|x − target|` with constant target and weight.
    pub fn l1_target(&mut self, x: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        if target.len() != tx.len() || weight.len() != tx.len() {
            return Err(RiskError::invalid("l1 operand lengths differ"));
        }
        let data = tx
            .data()
            .iter()
            .zip(target.iter().zip(weight))
            .map(|(&a, (&t, &w))| w * (a - t).abs())
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::L1Target { x, target: target.to_vec(), weight: weight.to_vec() }, t))
    }

    /// Elementwise Gaussian negative log-likelihood (without the constant).
    pub fn gaussian_nll(&mut self, mu: Var, log_sigma: Var, r: &[f64]) -> Result<Var> {
        let (tm, ts) = (self.value(mu), self.value(log_sigma));
        same_len(tm, ts)?;
        if r.len() != tm.len() {
            return Err(RiskError::invalid("nll operand lengths differ"));
        }
        let data = tm
            .data()
            .iter()
            .zip(ts.data().iter().zip(r))
            .map(|(&m, (&ls, &rr))| {
                let z = (rr - m) * (-ls).exp();
                ls + 0.5 * z * z
            })
            .collect();
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        Ok(self.push(Op::GaussianNll { mu, log_sigma, r: r.to_vec() }, t))
    }

    /// Mean over elements whose mask is non-zero.
    pub fn masked_mean(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        if mask.len() != tx.len() {
            return Err(RiskError::invalid("mask length differs"));
        }
        let count = mask.iter().filter(|&&m| m != 0.0).count();
        if count == 0 {
            return Err(RiskError::EmptyMask);
        }
        let s: f64 = tx.data().iter().zip(mask).filter(|(_, &m)| m != 0.0).map(|(v, _)| v).sum();
        let t = Tensor::scalar(s / count as f64);
        Ok(self.push(Op::MaskedMean { x, mask: mask.to_vec(), count }, t))
    }

    /// `Σ wᵢ·xᵢ` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = self.value(terms.first().ok_or_else(|| RiskError::invalid("empty sum"))?.0);
        let mut acc = vec![0.0; first.len()];
        let shape = first.shape().to_vec();
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != &shape[..] {
                return Err(RiskError::invalid("weighted sum shapes differ"));
            }
            for (a, &x) in acc.iter_mut().zip(t.data()) {
                *a += w * x;
            }
        }
        let t = Tensor::new(shape, acc)?;
        Ok(self.push(Op::WeightedSum(terms.to_vec()), t))
    }

    /// Back-propagates from scalar node `out`; returns one gradient per parameter.
    pub fn backward(&self, out: Var) -> Result<Vec<Vec<f64>>> {
        if self.value(out).len() != 1 {
            return Err(RiskError::invalid("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        grads[out.0] = Some(vec![1.0]);

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| self.value(v);
            let send = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, d: Vec<f64>| accumulate(grads, v, d);
            match &node.op {
                Op::Input => {}
                Op::Param(i) => {
                    for (a, b) in pgrads[*i].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.needs_grad(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, tb.data(), true, &mut da, 0.0);
                        send(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, ta.data(), true, &g, false, &mut db, 0.0);
                        send(&mut grads, *b, db);
                    }
                }
                Op::AddRowBias(a, b) => {
                    let n = val(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    send(&mut grads, *b, db);
                    send(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *b, g.clone());
                    send(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, g.iter().map(|x| -x).collect());
                    send(&mut grads, *a, g);
                }
                Op::Scale(a, s) => send(&mut grads, *a, g.iter().map(|x| s * x).collect()),
                Op::MulConst(a, k) => send(&mut grads, *a, g.iter().zip(k).map(|(x, y)| x * y).collect()),
                Op::Act(a, f) => {
                    let (x, y) = (val(*a).data(), node.value.as_ref().unwrap().data());
                    let d = g.iter().zip(x.iter().zip(y)).map(|(gi, (&xi, &yi))| gi * f.grad(xi, yi)).collect();
                    send(&mut grads, *a, d);
                }
                Op::MonoSmooth(a) => {
                    let x = val(*a).data();
                    let d = g.iter().zip(x).map(|(gi, &xi)| gi * mono_smooth_grad(xi)).collect();
                    send(&mut grads, *a, d);
                }
                Op::Column(a, j) => {
                    let s = val(*a).shape();
                    let m = s[1];
                    let mut d = vec![0.0; s[0] * m];
                    for (r, gi) in g.iter().enumerate() {
                        d[r * m + j] = *gi;
                    }
                    send(&mut grads, *a, d);
                }
                Op::SliceDim0(a, i) => {
                    let ta = val(*a);
                    let inner = ta.len() / ta.shape()[0];
                    let mut d = vec![0.0; ta.len()];
                    d[i * inner..(i + 1) * inner].copy_from_slice(&g);
                    send(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).len();
                        send(&mut grads, p, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Upsample2x(a) => {
                    let s = val(*a).shape();
                    let d = downsample_sum(&g, s[0], s[1], s[2]);
                    send(&mut grads, *a, d);
                }
                Op::PartialConv { x, w, b, mask, cache } => {
                    let need_dx = self.needs_grad(*x);
                    let (dx, dw, db) = partial_conv_backward(cache, mask, val(*w).data(), &g, need_dx);
                    send(&mut grads, *w, dw);
                    send(&mut grads, *b, db);
                    if let Some(dx) = dx {
                        send(&mut grads, *x, dx);
                    }
                }
                Op::Huber { v, r, alpha, h } => {
                    let tv = val(*v).data();
                    let d = (0..tv.len())
                        .map(|i| -g[i] * huber_quantile_grad(r[i] - tv[i], alpha[i], *h))
                        .collect();
                    send(&mut grads, *v, d);
                }
                Op::L1Target { x, target, weight } => {
                    let tx = val(*x).data();
                    let d = (0..tx.len())
                        .map(|i| g[i] * weight[i] * sign(tx[i] - target[i]))
                        .collect();
                    send(&mut grads, *x, d);
                }
                Op::GaussianNll { mu, log_sigma, r } => {
                    let (tm, ts) = (val(*mu).data(), val(*log_sigma).data());
                    let mut dm = vec![0.0; tm.len()];
                    let mut ds = vec![0.0; tm.len()];
                    for i in 0..tm.len() {
                        let inv_var = (-2.0 * ts[i]).exp();
                        let e = r[i] - tm[i];
                        dm[i] = -g[i] * e * inv_var;
                        ds[i] = g[i] * (1.0 - e * e * inv_var);
                    }
                    send(&mut grads, *mu, dm);
                    send(&mut grads, *log_sigma, ds);
                }
                Op::MaskedMean { x, mask, count } => {
                    let s = g[0] / *count as f64;
                    let d = mask.iter().map(|&m| if m != 0.0 { s } else { 0.0 }).collect();
                    send(&mut grads, *x, d);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        send(&mut grads, v, g.iter().map(|x| w * x).collect());
                    }
                }
            }
        }
        Ok(pgrads)
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&d) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn upsample_nearest(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(ch * h2 + y) * w2 + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

fn downsample_sum(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(ch * h + y / 2) * w + xx / 2] += g[(ch * h2 + y) * w2 + xx];
            }
        }
    }
    out
}
