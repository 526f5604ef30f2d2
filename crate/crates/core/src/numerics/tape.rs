//! Reverse-mode differentiation over a recorded op list.
//!
//! Every op appends one node holding its output value plus whatever the
//! backward pass needs. [`Tape::backward`] walks the nodes in reverse and
//! returns a [`Gradients`] table. Parameters enter the tape through
//! [`Tape::param`], which memoizes one node per parameter so a weight used
//! twice (the siamese encoder) accumulates both contributions.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, ConvGeom, GroupNormCache};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: GroupNormCache,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Upsample(Var),
    Sample {
        feat: Var,
        xs: Var,
        ys: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    MulChannels {
        x: Var,
        m: Var,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
    SumSquares(Var),
    Linear(Vec<(Var, f64)>),
    /// Scalar whose gradient with respect to `input` was computed eagerly.
    Fused {
        input: Var,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (out, cols, geom) = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            },
        ))
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let (out, cache) = kernels::group_norm_forward(
            self.value(x),
            groups,
            self.value(gamma),
            self.value(beta),
            eps,
        )?;
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, cache }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_channels(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn upsample(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = kernels::upsample_bilinear(self.value(x), h, w)?;
        Ok(self.push(out, Op::Upsample(x)))
    }

    pub fn bilinear_sample(&mut self, feat: Var, xs: Var, ys: Var) -> Result<Var> {
        let out = kernels::bilinear_sample(self.value(feat), self.value(xs), self.value(ys))?;
        Ok(self.push(out, Op::Sample { feat, xs, ys }))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale })
    }

    /// Multiply a `B×C×H×W` map by a `B×1×H×W` mask broadcast over channels.
    pub fn mul_channels(&mut self, x: Var, m: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let mshape = self.value(m).shape().to_vec();
        if mshape != [b, 1, h, w] {
            return Err(Error::contract(format!(
                "channel mask must be {:?}, got {mshape:?}",
                [b, 1, h, w]
            )));
        }
        let hw = h * w;
        let (xd, md) = (self.value(x).data(), self.value(m).data());
        let mut out = vec![0.0; xd.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let bi = i / (c * hw);
            *o = xd[i] * md[bi * hw + i % hw];
        }
        let out = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push(out, Op::MulChannels { x, m }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let (b, _, h, w) = self.value(*first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::contract(format!(
                    "concat operands disagree: {:?} vs {:?}",
                    self.value(*first).shape(),
                    self.value(p).shape()
                )));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * total_c * hw);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let out = Tensor::new(vec![b, total_c, h, w], out)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if start + len > c || len == 0 {
            return Err(Error::contract(format!(
                "channel slice {start}..{} outside 0..{c}",
                start + len
            )));
        }
        let hw = h * w;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * len * hw);
        for bi in 0..b {
            out.extend_from_slice(&xd[(bi * c + start) * hw..(bi * c + start + len) * hw]);
        }
        let out = Tensor::new(vec![b, len, h, w], out)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    /// `Σ weight · term` over scalar nodes.
    pub fn linear(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, wt) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::contract("linear combination expects scalars"));
            }
            s += wt * self.scalar(v);
        }
        Ok(self.push(Tensor::scalar(s), Op::Linear(terms.to_vec())))
    }

    /// Record a scalar computed outside the tape together with its gradient
    /// with respect to `input`.
    pub fn fused_scalar(&mut self, input: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(input).len() {
            return Err(Error::contract("fused gradient length mismatch"));
        }
        Ok(self.push(Tensor::scalar(value), Op::Fused { input, grad }))
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::contract("backward root must be a scalar"));
        }
        self.value(root).check_finite("backward root")?;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let wv = self.value(*w).data();
                    let mut dw = std::mem::take(slot(&self.nodes, *w, &mut grads));
                    let mut db = b.map(|b| std::mem::take(slot(&self.nodes, b, &mut grads)));
                    let dx = slot(&self.nodes, *x, &mut grads);
                    kernels::conv2d_backward(
                        geom,
                        wv,
                        cols,
                        &g,
                        Some(dx),
                        Some(&mut dw),
                        db.as_deref_mut(),
                    );
                    grads[w.0] = Some(dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        grads[b.0] = Some(db);
                    }
                }
                Op::GroupNorm { x, gamma, beta, cache } => {
                    let shape = self.value(*x).dims4()?;
                    let gv = self.value(*gamma).data();
                    let mut dg = std::mem::take(slot(&self.nodes, *gamma, &mut grads));
                    let mut dbt = std::mem::take(slot(&self.nodes, *beta, &mut grads));
                    let dx = slot(&self.nodes, *x, &mut grads);
                    kernels::group_norm_backward(
                        shape,
                        cache,
                        gv,
                        &g,
                        Some(dx),
                        Some(&mut dg),
                        Some(&mut dbt),
                    );
                    grads[gamma.0] = Some(dg);
                    grads[beta.0] = Some(dbt);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx = slot(&self.nodes, *x, &mut grads);
                    for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let dx = slot(&self.nodes, *x, &mut grads);
                    for ((d, &gi), &yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Softmax(x) => {
                    let shape = node.value.dims4()?;
                    let y = node.value.data();
                    let dx = slot(&self.nodes, *x, &mut grads);
                    kernels::softmax_channels_backward(shape, y, &g, dx);
                }
                Op::Upsample(x) => {
                    let in_shape = self.value(*x).dims4()?;
                    let (_, _, oh, ow) = node.value.dims4()?;
                    let dx = slot(&self.nodes, *x, &mut grads);
                    kernels::upsample_bilinear_backward(in_shape, oh, ow, &g, dx);
                }
                Op::Sample { feat, xs, ys } => {
                    let n = self.value(*xs).len();
                    let (mut dxs, mut dys) = (vec![0.0; n], vec![0.0; n]);
                    let df = slot(&self.nodes, *feat, &mut grads);
                    kernels::bilinear_sample_backward(
                        self.value(*feat),
                        self.value(*xs),
                        self.value(*ys),
                        &g,
                        Some(df),
                        Some(&mut dxs),
                        Some(&mut dys),
                    );
                    // xs and ys may alias (same node); accumulate rather than overwrite.
                    add_into(slot(&self.nodes, *xs, &mut grads), &dxs);
                    add_into(slot(&self.nodes, *ys, &mut grads), &dys);
                }
                Op::Add(a, b) => {
                    add_into(slot(&self.nodes, *a, &mut grads), &g);
                    add_into(slot(&self.nodes, *b, &mut grads), &g);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&self.nodes, *a, &mut grads), &g);
                    let db = slot(&self.nodes, *b, &mut grads);
                    db.iter_mut().zip(&g).for_each(|(d, gi)| *d -= gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = slot(&self.nodes, *a, &mut grads);
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                    let db = slot(&self.nodes, *b, &mut grads);
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
                Op::Affine { x, scale } => {
                    let dx = slot(&self.nodes, *x, &mut grads);
                    dx.iter_mut().zip(&g).for_each(|(d, gi)| *d += scale * gi);
                }
                Op::MulChannels { x, m } => {
                    let (b, c, h, w) = self.value(*x).dims4()?;
                    let hw = h * w;
                    let (xv, mv) = (self.value(*x).data(), self.value(*m).data());
                    let dx = slot(&self.nodes, *x, &mut grads);
                    for i in 0..g.len() {
                        dx[i] += g[i] * mv[(i / (c * hw)) * hw + i % hw];
                    }
                    let dm = slot(&self.nodes, *m, &mut grads);
                    for i in 0..g.len() {
                        dm[(i / (c * hw)) * hw + i % hw] += g[i] * xv[i];
                    }
                    debug_assert_eq!(dm.len(), b * hw);
                }
                Op::Concat(parts) => {
                    let (b, total_c, h, w) = node.value.dims4()?;
                    let hw = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        let dp = slot(&self.nodes, p, &mut grads);
                        for bi in 0..b {
                            let src = &g[(bi * total_c + offset) * hw..(bi * total_c + offset + c) * hw];
                            add_into(&mut dp[bi * c * hw..(bi + 1) * c * hw], src);
                        }
                        offset += c;
                    }
                }
                Op::Slice { x, start } => {
                    let (b, c, h, w) = self.value(*x).dims4()?;
                    let len = node.value.shape()[1];
                    let hw = h * w;
                    let dx = slot(&self.nodes, *x, &mut grads);
                    for bi in 0..b {
                        let dst = &mut dx[(bi * c + start) * hw..(bi * c + start + len) * hw];
                        add_into(dst, &g[bi * len * hw..(bi + 1) * len * hw]);
                    }
                }
                Op::Sum(x) => {
                    let dx = slot(&self.nodes, *x, &mut grads);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x).data();
                    let dx = slot(&self.nodes, *x, &mut grads);
                    for (d, &xi) in dx.iter_mut().zip(xv) {
                        *d += 2.0 * xi * g[0];
                    }
                }
                Op::Linear(terms) => {
                    for &(v, wt) in terms {
                        slot(&self.nodes, v, &mut grads)[0] += wt * g[0];
                    }
                }
                Op::Fused { input, grad } => {
                    let dx = slot(&self.nodes, *input, &mut grads);
                    dx.iter_mut().zip(grad).for_each(|(d, gi)| *d += gi * g[0]);
                }
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[i] = Some(g);
            }
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of node {i} entry {j} is {}",
                        g[j]
                    )));
                }
            }
        }

        let params = self
            .params
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Gradients { grads, params })
    }
}

fn slot<'a>(nodes: &[Node], v: Var, grads: &'a mut [Option<Vec<f64>>]) -> &'a mut Vec<f64> {
    let n = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of a backward pass. Only leaves and parameters keep theirs.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of every parameter that took part in the computation.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_deref().map(|g| (id, g)))
    }

    /// Write parameter gradients into the store (added to existing ones).
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut pairs: Vec<_> = self.params().collect();
        pairs.sort_by_key(|(id, _)| *id);
        for (id, g) in pairs {
            store.accumulate_grad(id, g)?;
        }
        Ok(())
    }
}
