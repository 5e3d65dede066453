use std::collections::HashMap;

use super::ops::{BinaryKind, Broadcast, UnaryKind};
use super::params::ParamStore;
use super::recurrent::LstmSaved;
use super::spectral::{StftMagSaved, SynthesisSaved};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddScalar {
        x: Var,
    },
    ClampMin {
        x: Var,
        floor: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    SumLast {
        x: Var,
    },
    MeanRows {
        x: Var,
    },
    Norm2 {
        x: Var,
    },
    SoftmaxLast {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        cols: Vec<f64>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Lstm(Box<LstmSaved>),
    StftMag(Box<StftMagSaved>),
    Synthesis(Box<SynthesisSaved>),
}

pub(crate) struct Node {
    pub(crate) tensor: Tensor,
    pub(crate) op: Op,
}

/// Records operations in creation order and runs reverse-mode
/// differentiation over them.
///
/// A graph is differentiated at most once; build a new graph for the next
/// forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    bound: Vec<(String, Var)>,
    bound_index: HashMap<String, Var>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Adds a leaf. Its `requires_grad` flag decides whether gradients flow
    /// into it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut tensor = tensor;
        tensor.grad = None;
        self.nodes.push(Node {
            tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    pub fn variable(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, values)?.with_requires_grad(true)))
    }

    /// Binds a named parameter from `store`. Binding the same name twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound_index.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::State(format!("parameter `{name}` is not initialised")))?;
        let v = self.leaf(t.clone());
        self.bound.push((name.to_string(), v));
        self.bound_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].tensor.values[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    /// Gradients of every bound parameter that received one, in binding
    /// order.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.bound
            .iter()
            .filter_map(|(name, v)| {
                self.nodes[v.0]
                    .tensor
                    .grad
                    .as_ref()
                    .map(|g| (name.clone(), g.clone()))
            })
            .collect()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        if self.consumed {
            return Err(Error::State(format!(
                "cannot record `{name}` on a graph that has already been differentiated"
            )));
        }
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].tensor.requires_grad);
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                values,
                requires_grad,
                grad: None,
            },
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode pass from a scalar `loss`. Leaf gradients are stored on
    /// the leaf tensors; intermediate gradients are dropped.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this graph; run a new forward pass".into(),
            ));
        }
        if self.nodes[loss.0].tensor.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].tensor.shape
            )));
        }
        self.consumed = true;
        if !self.nodes[loss.0].tensor.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tensor.requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                self.nodes[i].tensor.grad = Some(g);
                continue;
            }
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            backward_node(&self.nodes[i], &g, &mut sink)?;
        }
        Ok(())
    }
}

/// Accumulates gradient contributions into input nodes.
pub(crate) struct GradSink<'a> {
    pub(crate) nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl<'a> GradSink<'a> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor {
        let nodes: &'a [Node] = self.nodes;
        &nodes[v.0].tensor
    }

    /// Mutable gradient buffer for `v`, allocated as zeros on first use.
    pub(crate) fn buf(&mut self, v: Var) -> &mut [f64] {
        let n = self.nodes[v.0].tensor.len();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    pub(crate) fn add(&mut self, v: Var, contribution: &[f64]) {
        if !self.wants(v) {
            return;
        }
        let buf = self.buf(v);
        for (b, c) in buf.iter_mut().zip(contribution) {
            *b += *c;
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Binary { a, b, .. } | Op::MatMul { a, b } => vec![*a, *b],
        Op::Unary { x, .. }
        | Op::Scale { x, .. }
        | Op::AddScalar { x }
        | Op::ClampMin { x, .. }
        | Op::Transpose { x }
        | Op::Reshape { x }
        | Op::SumAll { x }
        | Op::MeanAll { x }
        | Op::SumLast { x }
        | Op::MeanRows { x }
        | Op::Norm2 { x }
        | Op::SoftmaxLast { x }
        | Op::SliceCols { x, .. }
        | Op::SliceRows { x, .. } => vec![*x],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::ConcatCols { parts } | Op::ConcatRows { parts } => parts.clone(),
        Op::Conv1d { x, w, b, .. } | Op::ConvTranspose1d { x, w, b, .. } => {
            let mut v = vec![*x, *w];
            v.extend(b.iter().copied());
            v
        }
        Op::Lstm(s) => vec![s.x, s.w_ih, s.w_hh, s.bias],
        Op::StftMag(s) => vec![s.x],
        Op::Synthesis(s) => vec![s.mag],
    }
}

fn backward_node(node: &Node, g: &[f64], sink: &mut GradSink<'_>) -> Result<()> {
    use super::{linalg, ops, recurrent, spectral};
    let out = &node.tensor;
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b, bcast } => ops::binary_backward(*kind, *a, *b, bcast, g, sink),
        Op::Unary { kind, x } => ops::unary_backward(*kind, *x, out, g, sink),
        Op::Scale { x, factor } => {
            let c: Vec<f64> = g.iter().map(|v| v * factor).collect();
            sink.add(*x, &c);
        }
        Op::AddScalar { x } => sink.add(*x, g),
        Op::ClampMin { x, floor } => {
            let xv = &sink.value(*x).values;
            let c: Vec<f64> = xv.iter().zip(g).map(|(v, gv)| if *v > *floor { *gv } else { 0.0 }).collect();
            sink.add(*x, &c);
        }
        Op::MatMul { a, b } => linalg::matmul_backward(*a, *b, g, sink),
        Op::Transpose { x } => {
            let s = &sink.value(*x).shape;
            let (r, c) = (s[0], s[1]);
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[i * c + j] = g[j * r + i];
                }
            }
            sink.add(*x, &t);
        }
        Op::Reshape { x } => sink.add(*x, g),
        Op::SumAll { x } => {
            let n = sink.value(*x).len();
            sink.add(*x, &vec![g[0]; n]);
        }
        Op::MeanAll { x } => {
            let n = sink.value(*x).len();
            sink.add(*x, &vec![g[0] / n as f64; n]);
        }
        Op::SumLast { x } => ops::sum_last_backward(*x, g, sink),
        Op::MeanRows { x } => ops::mean_rows_backward(*x, g, sink),
        Op::Norm2 { x } => {
            let n = out.values[0];
            if n > 0.0 {
                let c: Vec<f64> = sink.value(*x).values.iter().map(|v| g[0] * v / n).collect();
                sink.add(*x, &c);
            }
        }
        Op::SoftmaxLast { x } => ops::softmax_backward(*x, out, g, sink),
        Op::CrossEntropy { logits, labels, probs } => ops::cross_entropy_backward(*logits, labels, probs, g, sink),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => ops::layer_norm_backward(*x, *gamma, *beta, xhat, rstd, g, sink),
        Op::SliceCols { x, start } => ops::slice_cols_backward(*x, *start, out, g, sink),
        Op::SliceRows { x, start } => {
            let cols = sink.value(*x).shape[1..].iter().product::<usize>();
            if sink.wants(*x) {
                let buf = sink.buf(*x);
                let off = start * cols;
                for (b, gv) in buf[off..off + g.len()].iter_mut().zip(g) {
                    *b += gv;
                }
            }
        }
        Op::ConcatCols { parts } => ops::concat_cols_backward(parts, out, g, sink),
        Op::ConcatRows { parts } => {
            let mut off = 0;
            for p in parts {
                let n = sink.value(*p).len();
                sink.add(*p, &g[off..off + n]);
                off += n;
            }
        }
        Op::Conv1d {
            x,
            w,
            b,
            stride,
            padding,
            cols,
        } => linalg::conv1d_backward(*x, *w, *b, *stride, *padding, cols, out, g, sink),
        Op::ConvTranspose1d {
            x,
            w,
            b,
            stride,
            padding,
        } => linalg::conv_transpose1d_backward(*x, *w, *b, *stride, *padding, out, g, sink),
        Op::Lstm(saved) => recurrent::lstm_backward(saved, g, sink),
        Op::StftMag(saved) => spectral::stft_mag_backward(saved, g, sink),
        Op::Synthesis(saved) => spectral::synthesis_backward(saved, g, sink),
    }
    Ok(())
}
