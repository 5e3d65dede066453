//! Elementwise, reduction, normalisation and shape operations.

use super::graph::{GradSink, Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Neg,
    Abs,
    Log,
    Exp,
    Gelu,
    Sigmoid,
    Tanh,
    Sqrt,
    Square,
    LogSigmoid,
}

/// Index maps from output positions to operand positions.
pub(crate) enum Broadcast {
    Same,
    Indexed { ia: Vec<usize>, ib: Vec<usize> },
}

/// Trailing-dimension broadcasting of two shapes.
pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Broadcast)> {
    if a == b {
        return Ok((a.to_vec(), Broadcast::Same));
    }
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; rank - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out = vec![0; rank];
    for d in 0..rank {
        out[d] = match (pa[d], pb[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!("shapes {a:?} and {b:?} do not broadcast")));
            }
        };
    }
    let strides = |p: &[usize]| {
        let mut s = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            s[d] = if p[d] == 1 && out[d] != 1 { 0 } else { acc };
            acc *= p[d];
        }
        s
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    let n: usize = out.iter().product();
    let mut ia = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        ia.push(oa);
        ib.push(ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
    Ok((out, Broadcast::Indexed { ia, ib }))
}

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

impl Graph {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (shape, bcast) = broadcast(self.shape(a), self.shape(b))?;
        let av = self.values(a);
        let bv = self.values(b);
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        if kind == BinaryKind::Div && bv.contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let values: Vec<f64> = match &bcast {
            Broadcast::Same => av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::Indexed { ia, ib } => ia.iter().zip(ib).map(|(i, j)| f(av[*i], bv[*j])).collect(),
        };
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        self.push(shape, values, Op::Binary { kind, a, b, bcast }, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xv = self.values(x);
        let (name, domain_ok): (&'static str, fn(f64) -> bool) = match kind {
            UnaryKind::Neg => ("neg", |_| true),
            UnaryKind::Abs => ("abs", |_| true),
            UnaryKind::Log => ("log", |v| v > 0.0),
            UnaryKind::Exp => ("exp", |_| true),
            UnaryKind::Gelu => ("gelu", |_| true),
            UnaryKind::Sigmoid => ("sigmoid", |_| true),
            UnaryKind::Tanh => ("tanh", |_| true),
            UnaryKind::Sqrt => ("sqrt", |v| v >= 0.0),
            UnaryKind::Square => ("square", |_| true),
            UnaryKind::LogSigmoid => ("log_sigmoid", |_| true),
        };
        if let Some(bad) = xv.iter().find(|v| !domain_ok(**v)) {
            return Err(Error::Domain {
                op: name,
                detail: format!("input {bad} outside the domain"),
            });
        }
        let values: Vec<f64> = xv
            .iter()
            .map(|&v| match kind {
                UnaryKind::Neg => -v,
                UnaryKind::Abs => v.abs(),
                UnaryKind::Log => v.ln(),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Gelu => gelu(v),
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Sqrt => v.sqrt(),
                UnaryKind::Square => v * v,
                UnaryKind::LogSigmoid => log_sigmoid(v),
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::Unary { kind, x }, name)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x)
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::LogSigmoid, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let values = self.values(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::Scale { x, factor }, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let values = self.values(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::AddScalar { x }, "add_scalar")
    }

    /// `max(x, floor)` elementwise; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let values = self.values(x).iter().map(|v| v.max(floor)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::ClampMin { x, floor }, "clamp_min")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.values(x).iter().sum();
        self.push(vec![], vec![s], Op::SumAll { x }, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.values(x);
        if v.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![], vec![m], Op::MeanAll { x }, "mean")
    }

    /// Euclidean norm of all elements; the gradient at zero is zero.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let n = self.values(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(vec![], vec![n], Op::Norm2 { x }, "norm")
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("sum_last of a scalar"))?;
        let values: Vec<f64> = self.values(x).chunks(d.max(1)).map(|c| c.iter().sum()).collect();
        let mut out = shape;
        *out.last_mut().unwrap() = 1;
        self.push(out, values, Op::SumLast { x }, "sum_last")
    }

    /// Mean over rows of a `[T×D]` tensor, giving `[1×D]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (t, d) = self.value(x).dims2()?;
        if t == 0 {
            return Err(Error::shape("mean_rows over zero rows"));
        }
        let xv = self.values(x);
        let mut out = vec![0.0; d];
        for r in 0..t {
            for (o, v) in out.iter_mut().zip(&xv[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= t as f64;
        }
        self.push(vec![1, d], out, Op::MeanRows { x }, "mean_rows")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("softmax of a scalar"))?;
        let mut values = self.values(x).to_vec();
        for row in values.chunks_mut(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(shape, values, Op::SoftmaxLast { x }, "softmax")
    }

    /// Mean cross-entropy of `[N×C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= c) {
            return Err(Error::shape(format!("label {bad} out of range for {c} classes")));
        }
        let lv = self.values(logits);
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
            loss += lse - row[labels[r]];
        }
        loss /= n as f64;
        self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm of a scalar"))?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape(format!("layer_norm affine params must have {d} values")));
        }
        let xv = self.values(x);
        let gv = self.values(gamma);
        let bv = self.values(beta);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for k in 0..d {
                let h = (row[k] - mu) * rs;
                xhat[r * d + k] = h;
                out[r * d + k] = h * gv[k] + bv[k];
            }
        }
        self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            "layer_norm",
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let xv = self.values(x);
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = xv[i * c + j];
            }
        }
        self.push(vec![c, r], t, Op::Transpose { x }, "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let values = self.values(x).to_vec();
        self.push(shape.to_vec(), values, Op::Reshape { x }, "reshape")
    }

    /// Columns `start..end` of a `[R×C]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start >= end || end > c {
            return Err(Error::shape(format!("column slice {start}..{end} of width {c}")));
        }
        let w = end - start;
        let xv = self.values(x);
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        self.push(vec![r, w], out, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = *shape.first().ok_or_else(|| Error::shape("slice_rows of a scalar"))?;
        if start >= end || end > r {
            return Err(Error::shape(format!("row slice {start}..{end} of {r} rows")));
        }
        let inner: usize = shape[1..].iter().product();
        let out = self.values(x)[start * inner..end * inner].to_vec();
        let mut s = shape;
        s[0] = end - start;
        self.push(s, out, Op::SliceRows { x, start }, "slice_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (r, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = self.value(*p).dims2()?;
            if pr != r {
                return Err(Error::shape(format!("concat_cols row mismatch {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values(*p)[i * w..(i + 1) * w]);
            }
        }
        self.push(
            vec![r, total],
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let inner = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[1..] != inner[..] {
                return Err(Error::shape(format!("concat_rows trailing shape mismatch {s:?}")));
            }
            rows += s[0];
            out.extend_from_slice(self.values(*p));
        }
        let mut shape = vec![rows];
        shape.extend(inner);
        self.push(
            shape,
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            "concat_rows",
        )
    }
}

pub(crate) fn binary_backward(kind: BinaryKind, a: Var, b: Var, bcast: &Broadcast, g: &[f64], sink: &mut GradSink<'_>) {
    let want_a = sink.wants(a);
    let want_b = sink.wants(b);
    let av = &sink.value(a).values;
    let bv = &sink.value(b).values;
    let da = |o: usize, _i: usize, j: usize| match kind {
        BinaryKind::Add | BinaryKind::Sub => g[o],
        BinaryKind::Mul => g[o] * bv[j],
        BinaryKind::Div => g[o] / bv[j],
    };
    let db = |o: usize, i: usize, j: usize| match kind {
        BinaryKind::Add => g[o],
        BinaryKind::Sub => -g[o],
        BinaryKind::Mul => g[o] * av[i],
        BinaryKind::Div => -g[o] * av[i] / (bv[j] * bv[j]),
    };
    match bcast {
        Broadcast::Same => {
            if want_a {
                let buf = sink.buf(a);
                for (o, v) in buf.iter_mut().enumerate() {
                    *v += da(o, o, o);
                }
            }
            if want_b {
                let buf = sink.buf(b);
                for (o, v) in buf.iter_mut().enumerate() {
                    *v += db(o, o, o);
                }
            }
        }
        Broadcast::Indexed { ia, ib } => {
            if want_a {
                let buf = sink.buf(a);
                for o in 0..g.len() {
                    buf[ia[o]] += da(o, ia[o], ib[o]);
                }
            }
            if want_b {
                let buf = sink.buf(b);
                for o in 0..g.len() {
                    buf[ib[o]] += db(o, ia[o], ib[o]);
                }
            }
        }
    }
}

pub(crate) fn unary_backward(kind: UnaryKind, x: Var, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(x) {
        return;
    }
    let xv = &sink.value(x).values;
    let yv = &out.values;
    let c: Vec<f64> = (0..g.len())
        .map(|i| {
            let (xi, yi) = (xv[i], yv[i]);
            g[i] * match kind {
                UnaryKind::Neg => -1.0,
                UnaryKind::Abs => {
                    if xi > 0.0 {
                        1.0
                    } else if xi < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                UnaryKind::Log => 1.0 / xi,
                UnaryKind::Exp => yi,
                UnaryKind::Gelu => gelu_grad(xi),
                UnaryKind::Sigmoid => yi * (1.0 - yi),
                UnaryKind::Tanh => 1.0 - yi * yi,
                UnaryKind::Sqrt => {
                    if yi > 0.0 {
                        0.5 / yi
                    } else {
                        0.0
                    }
                }
                UnaryKind::Square => 2.0 * xi,
                UnaryKind::LogSigmoid => sigmoid(-xi),
            }
        })
        .collect();
    sink.add(x, &c);
}

pub(crate) fn sum_last_backward(x: Var, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(x) {
        return;
    }
    let d = *sink.value(x).shape.last().unwrap();
    let buf = sink.buf(x);
    for (r, row) in buf.chunks_mut(d).enumerate() {
        for v in row {
            *v += g[r];
        }
    }
}

pub(crate) fn mean_rows_backward(x: Var, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(x) {
        return;
    }
    let t = sink.value(x).shape[0] as f64;
    let d = g.len();
    let buf = sink.buf(x);
    for row in buf.chunks_mut(d) {
        for (v, gv) in row.iter_mut().zip(g) {
            *v += gv / t;
        }
    }
}

pub(crate) fn softmax_backward(x: Var, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(x) {
        return;
    }
    let d = *out.shape.last().unwrap();
    let buf = sink.buf(x);
    for ((brow, yrow), grow) in buf.chunks_mut(d).zip(out.values.chunks(d)).zip(g.chunks(d)) {
        let dot: f64 = yrow.iter().zip(grow).map(|(y, gv)| y * gv).sum();
        for k in 0..d {
            brow[k] += yrow[k] * (grow[k] - dot);
        }
    }
}

pub(crate) fn cross_entropy_backward(logits: Var, labels: &[usize], probs: &[f64], g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(logits) {
        return;
    }
    let n = labels.len();
    let c = probs.len() / n;
    let scale = g[0] / n as f64;
    let buf = sink.buf(logits);
    for r in 0..n {
        for k in 0..c {
            let target = if k == labels[r] { 1.0 } else { 0.0 };
            buf[r * c + k] += scale * (probs[r * c + k] - target);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
    sink: &mut GradSink<'_>,
) {
    let d = sink.value(gamma).len();
    let gv = &sink.value(gamma).values;
    if sink.wants(gamma) {
        let buf = sink.buf(gamma);
        for (i, gi) in g.iter().enumerate() {
            buf[i % d] += gi * xhat[i];
        }
    }
    if sink.wants(beta) {
        let buf = sink.buf(beta);
        for (i, gi) in g.iter().enumerate() {
            buf[i % d] += gi;
        }
    }
    if sink.wants(x) {
        let buf = sink.buf(x);
        for (r, rs) in rstd.iter().enumerate() {
            let off = r * d;
            let mut mean_dh = 0.0;
            let mut mean_dh_h = 0.0;
            for k in 0..d {
                let dh = g[off + k] * gv[k];
                mean_dh += dh;
                mean_dh_h += dh * xhat[off + k];
            }
            mean_dh /= d as f64;
            mean_dh_h /= d as f64;
            for k in 0..d {
                let dh = g[off + k] * gv[k];
                buf[off + k] += rs * (dh - mean_dh - xhat[off + k] * mean_dh_h);
            }
        }
    }
}

pub(crate) fn slice_cols_backward(x: Var, start: usize, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(x) {
        return;
    }
    let c = sink.value(x).shape[1];
    let (r, w) = (out.shape[0], out.shape[1]);
    let buf = sink.buf(x);
    for i in 0..r {
        for j in 0..w {
            buf[i * c + start + j] += g[i * w + j];
        }
    }
}

pub(crate) fn concat_cols_backward(parts: &[Var], out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    let (r, total) = (out.shape[0], out.shape[1]);
    let mut off = 0;
    for p in parts {
        let w = sink.value(*p).shape[1];
        if sink.wants(*p) {
            let buf = sink.buf(*p);
            for i in 0..r {
                for j in 0..w {
                    buf[i * w + j] += g[i * total + off + j];
                }
            }
        }
        off += w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        let (s, _) = broadcast(&[3, 4], &[4]).unwrap();
        assert_eq!(s, vec![3, 4]);
        let (s, _) = broadcast(&[3, 1], &[1, 4]).unwrap();
        assert_eq!(s, vec![3, 4]);
        assert!(broadcast(&[3, 4], &[3]).is_err());
    }

    #[test]
    fn sigmoid_and_gelu_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(&[1], vec![0.0]).unwrap();
        let s = g.sigmoid(x).unwrap();
        let e = g.gelu(x).unwrap();
        assert_eq!(g.values(s), &[0.5]);
        assert_eq!(g.values(e), &[0.0]);
    }

    #[test]
    fn add_and_gradient_of_sum() {
        let mut g = Graph::new();
        let a = g.variable(&[2], vec![1.0, 2.0]).unwrap();
        let b = g.variable(&[2], vec![3.0, 4.0]).unwrap();
        let c = g.add(a, b).unwrap();
        assert_eq!(g.values(c), &[4.0, 6.0]);
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn broadcast_gradient_sums_over_expanded_axes() {
        let mut g = Graph::new();
        let a = g.variable(&[3, 2], vec![1.0; 6]).unwrap();
        let b = g.variable(&[2], vec![0.5, -0.5]).unwrap();
        let c = g.mul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
        assert_eq!(g.grad(a).unwrap(), &[0.5, -0.5, 0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn domain_errors() {
        let mut g = Graph::new();
        let x = g.constant(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(g.log(x), Err(Error::Domain { op: "log", .. })));
        let y = g.constant(&[2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(g.div(y, x), Err(Error::Domain { op: "div", .. })));
        let z = g.constant(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(g.add(y, z), Err(Error::Shape(_))));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let a = g.variable(&[1], vec![2.0]).unwrap();
        let s = g.sum(a).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        assert!(matches!(g.sum(a), Err(Error::State(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(&[2, 3], vec![1.0, -2.0, 0.5, 30.0, 31.0, -40.0]).unwrap();
        let y = g.softmax(x).unwrap();
        for row in g.values(y).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }
}
