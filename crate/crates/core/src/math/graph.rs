//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation pushes a
//! node holding its output value plus whatever the backward rule needs, and
//! returns a [`Var`] handle. [`Graph::backward`] walks the nodes in reverse
//! insertion order (a valid reverse topological order, since inputs always
//! precede outputs) and accumulates gradients.
//!
//! An inference graph ([`Graph::inference`]) computes the same values but
//! records no backward state.

use rand::Rng;

use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};

/// Guard added under square roots in the backward rule, and used in place of
/// an exactly-zero divisor.
pub const SQRT_EPS: f64 = 1e-12;

/// Variance epsilon for [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operations. Binary variants take a second operand that either
/// matches the first operand's dims or broadcasts against it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ew {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Square,
    /// `max(x, c)`; gradient passes only where `x > c`.
    ClampMin(f64),
    /// Multiplication by a constant.
    Scale(f64),
}

impl Ew {
    fn is_binary(self) -> bool {
        matches!(self, Ew::Add | Ew::Sub | Ew::Mul | Ew::Div)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

enum Op {
    Leaf,
    Binary {
        op: Ew,
        a: Var,
        b: Var,
    },
    Unary {
        op: Ew,
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Reduce {
        op: Reduce,
        a: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    MaskedMean {
        a: Var,
        axis: usize,
        weights: Vec<f64>,
        totals: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Dropout {
        a: Var,
        scale: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Reshape {
        a: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// The gradient tape.
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
    empty_reductions: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records backward state.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            empty_reductions: 0,
        }
    }

    /// A graph that only computes values.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of masked reductions whose weights summed to zero.
    pub fn empty_reductions(&self) -> usize {
        self.empty_reductions
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// Elementwise operation. `b` is required for binary variants and
    /// ignored otherwise.
    pub fn ew(&mut self, op: Ew, a: Var, b: Option<Var>) -> Result<Var> {
        if op.is_binary() {
            let b = b.ok_or_else(|| {
                Error::InvalidArgument(format!("{op:?} requires two operands"))
            })?;
            self.binary(op, a, b)
        } else {
            Ok(self.unary(op, a))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Ew::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Ew::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Ew::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Ew::Div, a, b)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Ew::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Ew::Square, a)
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        self.unary(Ew::ClampMin(c), a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Ew::ClampMin(0.0), a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(Ew::Scale(s), a)
    }

    fn binary(&mut self, op: Ew, a: Var, b: Var) -> Result<Var> {
        let plan = Broadcast::plan(self.dims(a), self.dims(b), op)?;
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let f = |x: f64, y: f64| match op {
            Ew::Add => x + y,
            Ew::Sub => x - y,
            Ew::Mul => x * y,
            Ew::Div => x / guard_divisor(y),
            _ => unreachable!(),
        };
        let mut out = vec![0.0; plan.len()];
        if plan.is_elementwise() {
            for ((o, &x), &y) in out.iter_mut().zip(av).zip(bv) {
                *o = f(x, y);
            }
        } else {
            plan.walk(|o, ia, ib| out[o] = f(av[ia], bv[ib]));
        }
        let value = Tensor::from_parts_unchecked(plan.out_dims.clone(), out);
        Ok(self.push(value, Op::Binary { op, a, b }))
    }

    fn unary(&mut self, op: Ew, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| match op {
            Ew::Sqrt => x.max(0.0).sqrt(),
            Ew::Square => x * x,
            Ew::ClampMin(c) => x.max(c),
            Ew::Scale(s) => s * x,
            _ => unreachable!("binary op routed to unary"),
        });
        self.push(value, Op::Unary { op, a })
    }

    /// Matrix product of two rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad.len() != 2 || bd.len() != 2 || ad[1] != bd[0] {
            return Err(Error::shape("matmul", ad, bd));
        }
        let (m, k, p) = (ad[0], ad[1], bd[1]);
        let mut out = vec![0.0; m * p];
        gemm(
            m,
            k,
            p,
            self.nodes[a.0].value.data(),
            (k, 1),
            self.nodes[b.0].value.data(),
            (p, 1),
            &mut out,
            0.0,
        );
        let value = Tensor::from_parts_unchecked(vec![m, p], out);
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// `x · w + b` over the last axis of `x`: `[.., k] · [k, p] + [p]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xd, wd, bd) = (self.dims(x).to_vec(), self.dims(w), self.dims(b));
        let k = xd.last().copied().unwrap_or(0);
        if xd.is_empty() || wd.len() != 2 || wd[0] != k || bd != [wd[1]] {
            return Err(Error::shape("affine", &xd, wd));
        }
        let p = wd[1];
        let rows = self.nodes[x.0].value.len() / k.max(1);
        let bias = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(rows * p);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm(
            rows,
            k,
            p,
            self.nodes[x.0].value.data(),
            (k, 1),
            self.nodes[w.0].value.data(),
            (p, 1),
            &mut out,
            1.0,
        );
        let mut dims = xd;
        *dims.last_mut().unwrap() = p;
        let value = Tensor::from_parts_unchecked(dims, out);
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    /// Reduce along `axis`, removing it. Reducing a rank-1 tensor yields a
    /// one-element tensor.
    pub fn reduce(&mut self, op: Reduce, a: Var, axis: usize) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if axis >= dims.len() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for rank {}",
                dims.len()
            )));
        }
        let (outer, len, inner) = split_axis(&dims, axis);
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match op {
            Reduce::Sum | Reduce::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let src = &x[(o * len + l) * inner..][..inner];
                        let dst = &mut out[o * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if op == Reduce::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            Reduce::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let (mut best, mut at) = (f64::NEG_INFINITY, 0);
                        for l in 0..len {
                            let v = x[(o * len + l) * inner + i];
                            if v > best {
                                best = v;
                                at = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = at;
                    }
                }
            }
        }
        let mut out_dims: Vec<usize> = dims
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_dims.is_empty() {
            out_dims.push(1);
        }
        let value = Tensor::from_parts_unchecked(out_dims, out);
        Ok(self.push(value, Op::Reduce { op, a, axis, argmax }))
    }

    /// Weighted mean along `axis`. `weights` holds one constant per
    /// (leading index, axis position) pair and broadcasts over trailing
    /// axes. A slice whose weights sum to zero reduces to 0 with zero
    /// gradient and is counted in [`Graph::empty_reductions`].
    pub fn masked_mean(&mut self, a: Var, weights: &[f64], axis: usize) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if axis >= dims.len() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for rank {}",
                dims.len()
            )));
        }
        let (outer, len, inner) = split_axis(&dims, axis);
        if weights.len() != outer * len {
            return Err(Error::shape("masked_mean", &dims, &[weights.len()]));
        }
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; outer * inner];
        let mut totals = vec![0.0; outer];
        for o in 0..outer {
            let total: f64 = weights[o * len..(o + 1) * len].iter().sum();
            totals[o] = total;
            if total == 0.0 {
                self.empty_reductions += 1;
                continue;
            }
            let dst = &mut out[o * inner..][..inner];
            for l in 0..len {
                let w = weights[o * len + l] / total;
                if w == 0.0 {
                    continue;
                }
                let src = &x[(o * len + l) * inner..][..inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let mut out_dims: Vec<usize> = dims
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_dims.is_empty() {
            out_dims.push(1);
        }
        let value = Tensor::from_parts_unchecked(out_dims, out);
        let op = Op::MaskedMean {
            a,
            axis,
            weights: weights.to_vec(),
            totals,
        };
        Ok(self.push(value, op))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let dims = self.dims(x).to_vec();
        let d = *dims.last().expect("tensor rank >= 1");
        if self.dims(gain) != [d] || self.dims(bias) != [d] {
            return Err(Error::shape("layer_norm", &dims, self.dims(gain)));
        }
        let rows = self.nodes[x.0].value.len() / d;
        let xv = self.nodes[x.0].value.data();
        let g = self.nodes[gain.0].value.data();
        let bvals = self.nodes[bias.0].value.data();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv[r * d..][..d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for k in 0..d {
                let h = (row[k] - mean) * inv;
                xhat[r * d + k] = h;
                out[r * d + k] = h * g[k] + bvals[k];
            }
        }
        let value = Tensor::from_parts_unchecked(dims, out);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(value, op))
    }

    /// Mean cross-entropy of `logits` (`[b, C]`) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let dims = self.dims(logits).to_vec();
        if dims.len() != 2 || dims[0] != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", &dims, &[labels.len()]));
        }
        let (b, c) = (dims[0], dims[1]);
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {l} at index {i} out of range for {c} classes"
            )));
        }
        let z = self.nodes[logits.0].value.data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z[i * c..][..c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (p, &v) in probs[i * c..][..c].iter_mut().zip(row) {
                *p = (v - max).exp();
                total += *p;
            }
            probs[i * c..][..c].iter_mut().for_each(|p| *p /= total);
            loss += total.ln() + max - row[labels[i]];
        }
        let value = Tensor::scalar(loss / b as f64);
        let op = Op::SoftmaxCe {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(value, op))
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `a`
    /// unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout_p", format!("{p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.nodes[a.0].value.len();
        let scale: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
        let value = Tensor::from_parts_unchecked(src.dims().to_vec(), data);
        Ok(self.push(value, Op::Dropout { a, scale }))
    }

    /// Rows of a rank-2 `table` selected by `ids`, giving `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let dims = self.dims(table).to_vec();
        if dims.len() != 2 {
            return Err(Error::shape("gather_rows", &dims, &[ids.len()]));
        }
        let (v, d) = (dims[0], dims[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "row id {bad} out of range for table of {v} rows"
            )));
        }
        let t = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..][..d]);
        }
        let value = Tensor::from_parts_unchecked(vec![ids.len(), d], out);
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(value, op))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        if ad.len() != bd.len() || ad[..ad.len() - 1] != bd[..bd.len() - 1] {
            return Err(Error::shape("concat_last", &ad, &bd));
        }
        let (wa, wb) = (ad[ad.len() - 1], bd[bd.len() - 1]);
        let rows = self.nodes[a.0].value.len() / wa;
        let (x, y) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut out = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            out.extend_from_slice(&x[r * wa..][..wa]);
            out.extend_from_slice(&y[r * wb..][..wb]);
        }
        let mut dims = ad;
        *dims.last_mut().unwrap() = wa + wb;
        let value = Tensor::from_parts_unchecked(dims, out);
        Ok(self.push(value, Op::Concat { a, b }))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.reshape(dims)?;
        Ok(self.push(value, Op::Reshape { a }))
    }

    /// Back-propagates from a one-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::InvalidArgument(
                "backward() on an inference graph".into(),
            ));
        }
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward() needs a scalar output, got dims {:?}",
                out.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor::ones(out.dims()));

        // Only leaf gradients are kept; the rest are dropped once propagated.
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            } else {
                self.backprop_node(idx, g, &mut grads);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        if let Op::Reshape { a } = &node.op {
            accumulate(grads, *a, self.dims(*a), g.into_data());
            return;
        }
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { op, a, b } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let plan = Broadcast::plan(self.dims(*a), self.dims(*b), *op)
                    .expect("shapes validated in forward");
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                let mut rule = |o: usize, ia: usize, ib: usize| {
                    let go = gd[o];
                    match op {
                        Ew::Add => {
                            ga[ia] += go;
                            gb[ib] += go;
                        }
                        Ew::Sub => {
                            ga[ia] += go;
                            gb[ib] -= go;
                        }
                        Ew::Mul => {
                            ga[ia] += go * bv[ib];
                            gb[ib] += go * av[ia];
                        }
                        Ew::Div => {
                            let y = guard_divisor(bv[ib]);
                            ga[ia] += go / y;
                            gb[ib] -= go * av[ia] / (y * y);
                        }
                        _ => unreachable!(),
                    }
                };
                if plan.is_elementwise() {
                    (0..gd.len()).for_each(|i| rule(i, i, i));
                } else {
                    plan.walk(rule);
                }
                accumulate(grads, *a, self.dims(*a), ga);
                accumulate(grads, *b, self.dims(*b), gb);
            }
            Op::Unary { op, a } => {
                let x = self.nodes[a.0].value.data();
                let ga: Vec<f64> = gd
                    .iter()
                    .zip(x)
                    .map(|(&go, &xv)| match op {
                        Ew::Sqrt => {
                            if xv < 0.0 {
                                0.0
                            } else {
                                go * 0.5 / (xv + SQRT_EPS).sqrt()
                            }
                        }
                        Ew::Square => go * 2.0 * xv,
                        Ew::ClampMin(c) => {
                            if xv > *c {
                                go
                            } else {
                                0.0
                            }
                        }
                        Ew::Scale(s) => go * s,
                        _ => unreachable!(),
                    })
                    .collect();
                accumulate(grads, *a, self.dims(*a), ga);
            }
            Op::MatMul { a, b } => {
                let (m, k) = (self.dims(*a)[0], self.dims(*a)[1]);
                let p = self.dims(*b)[1];
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                // dA = dC · Bᵀ
                let mut ga = vec![0.0; m * k];
                gemm(m, p, k, gd, (p, 1), bv, (1, p), &mut ga, 0.0);
                // dB = Aᵀ · dC
                let mut gb = vec![0.0; k * p];
                gemm(k, m, p, av, (1, k), gd, (p, 1), &mut gb, 0.0);
                accumulate(grads, *a, self.dims(*a), ga);
                accumulate(grads, *b, self.dims(*b), gb);
            }
            Op::Affine { x, w, b } => {
                let (k, p) = (self.dims(*w)[0], self.dims(*w)[1]);
                let rows = gd.len() / p.max(1);
                let xv = self.nodes[x.0].value.data();
                let wv = self.nodes[w.0].value.data();
                let mut gx = vec![0.0; rows * k];
                gemm(rows, p, k, gd, (p, 1), wv, (1, p), &mut gx, 0.0);
                let mut gw = vec![0.0; k * p];
                gemm(k, rows, p, xv, (1, k), gd, (p, 1), &mut gw, 0.0);
                let mut gb = vec![0.0; p];
                for row in gd.chunks_exact(p) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                accumulate(grads, *x, self.dims(*x), gx);
                accumulate(grads, *w, self.dims(*w), gw);
                accumulate(grads, *b, self.dims(*b), gb);
            }
            Op::Reduce { op, a, axis, argmax } => {
                let dims = self.dims(*a);
                let (outer, len, inner) = split_axis(dims, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let go = gd[o * inner + i];
                        match op {
                            Reduce::Sum | Reduce::Mean => {
                                let v = if *op == Reduce::Mean {
                                    go / len as f64
                                } else {
                                    go
                                };
                                for l in 0..len {
                                    ga[(o * len + l) * inner + i] += v;
                                }
                            }
                            Reduce::Max => {
                                let l = argmax[o * inner + i];
                                ga[(o * len + l) * inner + i] += go;
                            }
                        }
                    }
                }
                accumulate(grads, *a, dims, ga);
            }
            Op::MaskedMean {
                a,
                axis,
                weights,
                totals,
            } => {
                let dims = self.dims(*a);
                let (outer, len, inner) = split_axis(dims, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    if totals[o] == 0.0 {
                        continue;
                    }
                    let src = &gd[o * inner..][..inner];
                    for l in 0..len {
                        let w = weights[o * len + l] / totals[o];
                        if w == 0.0 {
                            continue;
                        }
                        let dst = &mut ga[(o * len + l) * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
                accumulate(grads, *a, dims, ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.dims(*gain)[0];
                let rows = inv_std.len();
                let gv = self.nodes[gain.0].value.data();
                let mut gx = vec![0.0; rows * d];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let go = &gd[r * d..][..d];
                    let h = &xhat[r * d..][..d];
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for k in 0..d {
                        ggain[k] += go[k] * h[k];
                        gbias[k] += go[k];
                        dxhat[k] = go[k] * gv[k];
                        s1 += dxhat[k];
                        s2 += dxhat[k] * h[k];
                    }
                    let scale = inv_std[r] / d as f64;
                    for k in 0..d {
                        gx[r * d + k] = scale * (d as f64 * dxhat[k] - s1 - h[k] * s2);
                    }
                }
                accumulate(grads, *x, self.dims(*x), gx);
                accumulate(grads, *gain, &[d], ggain);
                accumulate(grads, *bias, &[d], gbias);
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = gd[0] / b as f64;
                let mut gl = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    gl[i * c + l] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= scale);
                accumulate(grads, *logits, self.dims(*logits), gl);
            }
            Op::Dropout { a, scale } => {
                let ga = gd.iter().zip(scale).map(|(g, s)| g * s).collect();
                accumulate(grads, *a, self.dims(*a), ga);
            }
            Op::Gather { table, ids } => {
                let dims = self.dims(*table);
                let d = dims[1];
                let mut gt = vec![0.0; dims[0] * d];
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut gt[i * d..][..d];
                    for (t, s) in dst.iter_mut().zip(&gd[r * d..][..d]) {
                        *t += s;
                    }
                }
                accumulate(grads, *table, dims, gt);
            }
            Op::Concat { a, b } => {
                let wa = *self.dims(*a).last().unwrap();
                let wb = *self.dims(*b).last().unwrap();
                let rows = gd.len() / (wa + wb);
                let mut ga = Vec::with_capacity(rows * wa);
                let mut gb = Vec::with_capacity(rows * wb);
                for r in 0..rows {
                    let row = &gd[r * (wa + wb)..][..wa + wb];
                    ga.extend_from_slice(&row[..wa]);
                    gb.extend_from_slice(&row[wa..]);
                }
                accumulate(grads, *a, self.dims(*a), ga);
                accumulate(grads, *b, self.dims(*b), gb);
            }
            Op::Reshape { .. } => unreachable!(),
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of leaf `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled to `like`'s dims when unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.dims()))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, dims: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.data_mut().iter_mut().zip(&data).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(Tensor::from_parts_unchecked(dims.to_vec(), data)),
    }
}

fn guard_divisor(y: f64) -> f64 {
    if y == 0.0 {
        SQRT_EPS
    } else {
        y
    }
}

fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// `c = a · b + beta · c` for row/column-strided operands.
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
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides describe dense row-major or
    // transposed views that stay inside those bounds.
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

/// Index plan for a broadcasting binary op. Dims are right-aligned; each
/// axis must match or be 1 on one side.
struct Broadcast {
    out_dims: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

impl Broadcast {
    fn plan(a: &[usize], b: &[usize], op: Ew) -> Result<Self> {
        if a == b {
            return Ok(Self {
                out_dims: a.to_vec(),
                a_strides: Vec::new(),
                b_strides: Vec::new(),
                same: true,
            });
        }
        let rank = a.len().max(b.len());
        let pad = |d: &[usize]| {
            let mut v = vec![1; rank - d.len()];
            v.extend_from_slice(d);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out_dims = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            out_dims.push(match (x, y) {
                _ if x == y => x,
                (1, _) => y,
                (_, 1) => x,
                _ => return Err(Error::shape(op_name(op), a, b)),
            });
        }
        let masked = |d: &[usize]| -> Vec<usize> {
            strides(d)
                .into_iter()
                .zip(d)
                .map(|(s, &n)| if n == 1 { 0 } else { s })
                .collect()
        };
        Ok(Self {
            a_strides: masked(&pa),
            b_strides: masked(&pb),
            out_dims,
            same: false,
        })
    }

    fn len(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn is_elementwise(&self) -> bool {
        self.same
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in
    /// row-major order.
    fn walk(&self, mut f: impl FnMut(usize, usize, usize)) {
        let dims = &self.out_dims;
        let (sa, sb) = (&self.a_strides, &self.b_strides);
        let rank = dims.len();
        let last = dims[rank - 1];
        let (la, lb) = (sa[rank - 1], sb[rank - 1]);
        let outer: usize = dims[..rank - 1].iter().product();
        let mut counter = vec![0usize; rank - 1];
        let (mut base_a, mut base_b, mut o) = (0usize, 0usize, 0usize);
        for _ in 0..outer {
            for k in 0..last {
                f(o, base_a + k * la, base_b + k * lb);
                o += 1;
            }
            for ax in (0..rank - 1).rev() {
                counter[ax] += 1;
                base_a += sa[ax];
                base_b += sb[ax];
                if counter[ax] < dims[ax] {
                    break;
                }
                base_a -= sa[ax] * dims[ax];
                base_b -= sb[ax] * dims[ax];
                counter[ax] = 0;
            }
        }
    }
}

fn op_name(op: Ew) -> &'static str {
    match op {
        Ew::Add => "add",
        Ew::Sub => "sub",
        Ew::Mul => "mul",
        Ew::Div => "div",
        Ew::Sqrt => "sqrt",
        Ew::Square => "square",
        Ew::ClampMin(_) => "clamp_min",
        Ew::Scale(_) => "scale",
    }
}
