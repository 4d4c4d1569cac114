//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass; node
//! ids are handed out in creation order, so each node's inputs precede it
//! and the recording is acyclic by construction. [`Tape::backward`] walks
//! the nodes in reverse and accumulates adjoints.
//!
//! Wrapping onto `[-pi, pi)` is recorded as an identity for differentiation.

use crate::error::{Result, WonnError};
use crate::phase::wrap_unchecked;
use crate::tensor::{conv2d, conv2d_backward, gemm, softmax_rows, ConvShape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias { a: usize, bias: usize },
    Sin(usize),
    Cos(usize),
    Tanh(usize),
    Atan2 { y: usize, x: usize },
    Wrap(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool, m: usize, k: usize, n: usize },
    Conv2d { x: usize, k: usize, shape: ConvShape },
    Softmax { a: usize, n: usize },
    Concat { a: usize, b: usize, ca: usize, cb: usize },
    Reshape(usize),
    MeanRows { a: usize, rows: usize, cols: usize },
    Sum(usize),
    PatchMean { a: usize, h: usize, w: usize, c: usize, n: usize },
    PatchBroadcast { a: usize, h: usize, w: usize, c: usize, n: usize },
    PatchGather { a: usize, h: usize, w: usize, c: usize, n: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, mask: Vec<bool>, classes: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node that requires a gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, zeros if nothing flowed into it.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

fn patch_index(h: usize, w: usize, n: usize) -> impl Fn(usize, usize) -> (usize, usize) {
    let _ = h;
    let pw = w / n;
    move |y, x| ((y / n) * pw + x / n, (y % n) * n + x % n)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[a.0].value;
        let value = Tensor { shape: src.shape.clone(), data: src.data.iter().map(|&v| f(v)).collect() };
        let rg = self.rg(a.0);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.data.len(), y.data.len(), "elementwise op on mismatched sizes {:?} vs {:?}", x.shape, y.shape);
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        };
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p + q, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p - q, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p * q, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |v| v * s, Op::Scale(a.0, s))
    }

    /// `[rows, c] + [c]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let b = &self.nodes[bias.0].value;
        let c = b.data.len();
        assert!(c > 0 && x.data.len() % c == 0, "bias of length {c} does not divide {:?}", x.shape);
        let data = x.data.chunks(c).flat_map(|row| row.iter().zip(&b.data).map(|(p, q)| p + q)).collect();
        let value = Tensor { shape: x.shape.clone(), data };
        let rg = self.rg(a.0) || self.rg(bias.0);
        self.push(value, Op::AddBias { a: a.0, bias: bias.0 }, rg)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        {
            let (yv, xv) = (&self.nodes[y.0].value, &self.nodes[x.0].value);
            if let Some(i) = yv.data.iter().zip(&xv.data).position(|(a, b)| *a == 0.0 && *b == 0.0) {
                return Err(WonnError::numeric(format!("atan2 at (0, 0), element {i}")));
            }
        }
        Ok(self.binary(y, x, f64::atan2, Op::Atan2 { y: y.0, x: x.0 }))
    }

    pub fn wrap(&mut self, a: Var) -> Var {
        self.unary(a, wrap_unchecked, Op::Wrap(a.0))
    }

    /// `op(a) * op(b)` where `a` is `[m, k]` (or `[k, m]` if `ta`) and `b` is
    /// `[k, n]` (or `[n, k]` if `tb`).
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ar, ac) = av.rows_cols();
        let (br, bc) = bv.rows_cols();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims differ: {:?} x {:?} (ta={ta}, tb={tb})", av.shape, bv.shape);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &av.data, ta, &bv.data, tb, 0.0, &mut out);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a: a.0, b: b.0, ta, tb, m, k, n }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// Same-size cross-correlation; `x` is `[h, w, c_in]`, `k` is `[k, k, c_in, c_out]`.
    pub fn conv2d(&mut self, x: Var, k: Var, h: usize, w: usize) -> Var {
        let kv = &self.nodes[k.0].value;
        assert_eq!(kv.rank(), 4, "conv kernel must be rank 4");
        let shape = ConvShape { h, w, c_in: kv.shape[2], c_out: kv.shape[3], k: kv.shape[0] };
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.data.len(), h * w * shape.c_in, "conv input size");
        let out = conv2d(&xv.data, &kv.data, shape);
        let rg = self.rg(x.0) || self.rg(k.0);
        self.push(Tensor { shape: vec![h, w, shape.c_out], data: out }, Op::Conv2d { x: x.0, k: k.0, shape }, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (_, n) = av.rows_cols();
        let value = Tensor { shape: av.shape.clone(), data: softmax_rows(&av.data, n) };
        let rg = self.rg(a.0);
        self.push(value, Op::Softmax { a: a.0, n }, rg)
    }

    /// Concatenate two `[rows, *]` tensors along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ra, ca) = av.rows_cols();
        let (rb, cb) = bv.rows_cols();
        assert_eq!(ra, rb, "concat row mismatch");
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&av.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bv.data[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Tensor { shape: vec![ra, ca + cb], data }, Op::Concat { a: a.0, b: b.0, ca, cb }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.nodes[a.0].value.clone().reshaped(shape).expect("reshape size");
        let rg = self.rg(a.0);
        self.push(v, Op::Reshape(a.0), rg)
    }

    /// Mean over rows of `[rows, cols]`, giving `[cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = av.rows_cols();
        let mut out = vec![0.0; cols];
        for row in av.data.chunks(cols) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let rg = self.rg(a.0);
        self.push(Tensor { shape: vec![cols], data: out }, Op::MeanRows { a: a.0, rows, cols }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    /// `[h, w, c]` -> `[h/n, w/n, c]` patch means.
    pub fn patch_mean(&mut self, a: Var, h: usize, w: usize, c: usize, n: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let (ph, pw) = (h / n, w / n);
        let mut out = vec![0.0; ph * pw * c];
        let idx = patch_index(h, w, n);
        let inv = 1.0 / (n * n) as f64;
        for y in 0..h {
            for x in 0..w {
                let (p, _) = idx(y, x);
                for ch in 0..c {
                    out[p * c + ch] += av.data[(y * w + x) * c + ch] * inv;
                }
            }
        }
        let rg = self.rg(a.0);
        self.push(Tensor { shape: vec![ph, pw, c], data: out }, Op::PatchMean { a: a.0, h, w, c, n }, rg)
    }

    /// `[h/n, w/n, c]` -> `[h, w, c]`, copying each patch value to its members.
    pub fn patch_broadcast(&mut self, a: Var, h: usize, w: usize, c: usize, n: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; h * w * c];
        let idx = patch_index(h, w, n);
        for y in 0..h {
            for x in 0..w {
                let (p, _) = idx(y, x);
                out[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&av.data[p * c..(p + 1) * c]);
            }
        }
        let rg = self.rg(a.0);
        self.push(Tensor { shape: vec![h, w, c], data: out }, Op::PatchBroadcast { a: a.0, h, w, c, n }, rg)
    }

    /// `[h, w, c]` -> `[(h/n)(w/n), n*n*c]`: each row holds one patch's members
    /// in row-major order.
    pub fn patch_gather(&mut self, a: Var, h: usize, w: usize, c: usize, n: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let np = (h / n) * (w / n);
        let f = n * n * c;
        let mut out = vec![0.0; np * f];
        let idx = patch_index(h, w, n);
        for y in 0..h {
            for x in 0..w {
                let (p, m) = idx(y, x);
                out[p * f + m * c..p * f + (m + 1) * c].copy_from_slice(&av.data[(y * w + x) * c..(y * w + x + 1) * c]);
            }
        }
        let rg = self.rg(a.0);
        self.push(Tensor { shape: vec![np, f], data: out }, Op::PatchGather { a: a.0, h, w, c, n }, rg)
    }

    /// Mean softmax cross-entropy over the rows of `[rows, classes]` whose
    /// mask entry is true.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        let (rows, classes) = lv.rows_cols();
        if targets.len() != rows || mask.len() != rows {
            return Err(WonnError::shape(format!(
                "cross-entropy over {rows} rows got {} targets / {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        if let Some(t) = targets.iter().zip(mask).find(|(t, m)| **m && **t >= classes) {
            return Err(WonnError::shape(format!("target class {} out of {classes}", t.0)));
        }
        let count = mask.iter().filter(|m| **m).count().max(1) as f64;
        let probs = softmax_rows(&lv.data, classes);
        let loss: f64 = (0..rows)
            .filter(|&r| mask[r])
            .map(|r| -probs[r * classes + targets[r]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / count;
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), mask: mask.to_vec(), classes },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.data.len() != 1 {
            return Err(WonnError::shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(WonnError::numeric(format!("non-finite gradient at tape node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value.data;
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[j].requires_grad {
                return;
            }
            let slot = grads[j].get_or_insert_with(|| vec![0.0; self.nodes[j].value.data.len()]);
            f(slot);
        };
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * bv[k];
                    }
                });
                acc(b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * av[k];
                    }
                });
            }
            Op::Scale(a, c) => acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::AddBias { a, bias } => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(bias, &mut |s| {
                    let c = s.len();
                    for row in g.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Sin(a) => {
                let av = val(a);
                acc(a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * av[k].cos();
                    }
                });
            }
            Op::Cos(a) => {
                let av = val(a);
                acc(a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] -= g[k] * av[k].sin();
                    }
                });
            }
            Op::Tanh(a) => {
                let out = &node.value.data;
                acc(a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * (1.0 - out[k] * out[k]);
                    }
                });
            }
            Op::Atan2 { y, x } => {
                let (yv, xv) = (val(y), val(x));
                acc(y, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * xv[k] / (xv[k] * xv[k] + yv[k] * yv[k]);
                    }
                });
                acc(x, &mut |s| {
                    for k in 0..s.len() {
                        s[k] -= g[k] * yv[k] / (xv[k] * xv[k] + yv[k] * yv[k]);
                    }
                });
            }
            Op::Wrap(a) | Op::Reshape(a) => acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
            Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (av, bv) = (val(a), val(b));
                // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G
                acc(a, &mut |s| {
                    if ta {
                        // A stored k x m: dA = op(B) G^T
                        gemm(k, n, m, bv, tb, g, true, 1.0, s);
                    } else {
                        gemm(m, n, k, g, false, bv, !tb, 1.0, s);
                    }
                });
                acc(b, &mut |s| {
                    if tb {
                        // B stored n x k: dB = G^T op(A)
                        gemm(n, m, k, g, true, av, ta, 1.0, s);
                    } else {
                        gemm(k, m, n, av, !ta, g, false, 1.0, s);
                    }
                });
            }
            Op::Conv2d { x, k, shape } => {
                let (gx, gk) = conv2d_backward(val(x), val(k), g, shape);
                acc(x, &mut |s| s.iter_mut().zip(&gx).for_each(|(s, g)| *s += g));
                acc(k, &mut |s| s.iter_mut().zip(&gk).for_each(|(s, g)| *s += g));
            }
            Op::Softmax { a, n } => {
                let p = &node.value.data;
                acc(a, &mut |s| {
                    for ((srow, prow), grow) in s.chunks_mut(n).zip(p.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = prow.iter().zip(grow).map(|(p, g)| p * g).sum();
                        for j in 0..n {
                            srow[j] += prow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Concat { a, b, ca, cb } => {
                let w = ca + cb;
                acc(a, &mut |s| {
                    for (srow, grow) in s.chunks_mut(ca).zip(g.chunks(w)) {
                        srow.iter_mut().zip(&grow[..ca]).for_each(|(s, g)| *s += g);
                    }
                });
                acc(b, &mut |s| {
                    for (srow, grow) in s.chunks_mut(cb).zip(g.chunks(w)) {
                        srow.iter_mut().zip(&grow[ca..]).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::MeanRows { a, rows, cols } => {
                let inv = 1.0 / rows as f64;
                acc(a, &mut |s| {
                    for srow in s.chunks_mut(cols) {
                        srow.iter_mut().zip(g).for_each(|(s, g)| *s += g * inv);
                    }
                });
            }
            Op::Sum(a) => acc(a, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::PatchMean { a, h, w, c, n } => {
                let idx = patch_index(h, w, n);
                let inv = 1.0 / (n * n) as f64;
                acc(a, &mut |s| {
                    for y in 0..h {
                        for x in 0..w {
                            let (p, _) = idx(y, x);
                            for ch in 0..c {
                                s[(y * w + x) * c + ch] += g[p * c + ch] * inv;
                            }
                        }
                    }
                });
            }
            Op::PatchBroadcast { a, h, w, c, n } => {
                let idx = patch_index(h, w, n);
                acc(a, &mut |s| {
                    for y in 0..h {
                        for x in 0..w {
                            let (p, _) = idx(y, x);
                            for ch in 0..c {
                                s[p * c + ch] += g[(y * w + x) * c + ch];
                            }
                        }
                    }
                });
            }
            Op::PatchGather { a, h, w, c, n } => {
                let idx = patch_index(h, w, n);
                let f = n * n * c;
                acc(a, &mut |s| {
                    for y in 0..h {
                        for x in 0..w {
                            let (p, m) = idx(y, x);
                            for ch in 0..c {
                                s[(y * w + x) * c + ch] += g[p * f + m * c + ch];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, ref targets, ref mask, classes } => {
                let lv = val(logits);
                let probs = softmax_rows(lv, classes);
                let count = mask.iter().filter(|m| **m).count().max(1) as f64;
                acc(logits, &mut |s| {
                    for r in (0..targets.len()).filter(|&r| mask[r]) {
                        for j in 0..classes {
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            s[r * classes + j] += g[0] * (probs[r * classes + j] - onehot) / count;
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn atan2_origin_is_rejected() {
        let mut tape = Tape::new();
        let y = tape.param(Tensor::scalar(0.0));
        let x = tape.param(Tensor::scalar(0.0));
        assert!(matches!(tape.atan2(y, x), Err(WonnError::Numeric(_))));
    }

    #[test]
    fn wrap_is_identity_for_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[3.0, -4.0]));
        let w = tape.wrap(x);
        assert!(tape.value(w).data.iter().all(|v| (-std::f64::consts::PI..std::f64::consts::PI).contains(v)));
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let p = tape.param(t(&[2], &[0.5, 0.5]));
        let m = tape.mul(c, p);
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn patch_ops_round_trip() {
        // 4x4x1 field, n = 2
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4, 4, 1], &data));
        let gathered = tape.patch_gather(x, 4, 4, 1, 2);
        assert_eq!(&tape.value(gathered).data[..4], &[0.0, 1.0, 4.0, 5.0]);
        let mean = tape.patch_mean(x, 4, 4, 1, 2);
        assert_eq!(tape.value(mean).data, vec![2.5, 4.5, 10.5, 12.5]);
        let back = tape.patch_broadcast(mean, 4, 4, 1, 2);
        assert_eq!(tape.value(back).data[5], 2.5);
        assert_eq!(tape.value(back).data[15], 12.5);
    }
}
