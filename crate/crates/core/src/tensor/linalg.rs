//! Matrix products and 1-D convolutions, lowered onto a dense gemm kernel.

use super::graph::{GradSink, Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// `c = op(a)·op(b) + beta·c` for row-major buffers. `a_t` means `a` is
/// stored as `[k×m]` and used transposed; likewise `b_t` for `[n×k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least m·k, k·n and m·n elements as asserted
    // above, and the strides describe dense row-major layouts inside them.
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

struct MatDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatDims> {
    let (a_batched, batch_a, m, ka) = match a {
        [m, k] => (false, 1, *m, *k),
        [bt, m, k] => (true, *bt, *m, *k),
        s => return Err(Error::shape(format!("matmul lhs must be rank 2 or 3, got {s:?}"))),
    };
    let (b_batched, batch_b, kb, n) = match b {
        [k, n] => (false, 1, *k, *n),
        [bt, k, n] => (true, *bt, *k, *n),
        s => return Err(Error::shape(format!("matmul rhs must be rank 2 or 3, got {s:?}"))),
    };
    if ka != kb {
        return Err(Error::shape(format!("matmul inner dimensions differ: {a:?} · {b:?}")));
    }
    if a_batched && b_batched && batch_a != batch_b {
        return Err(Error::shape(format!("matmul batch sizes differ: {a:?} · {b:?}")));
    }
    Ok(MatDims {
        batch: batch_a.max(batch_b),
        a_batched,
        b_batched,
        m,
        k: ka,
        n,
    })
}

pub(crate) fn conv_out_len(t: usize, width: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv1d stride must be at least 1"));
    }
    if t + 2 * padding < width {
        return Err(Error::shape(format!(
            "conv1d input of length {t} (padding {padding}) is shorter than kernel width {width}"
        )));
    }
    Ok((t + 2 * padding - width) / stride + 1)
}

impl Graph {
    /// Matrix product with an optional leading batch axis on either side.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = matmul_dims(self.shape(a), self.shape(b))?;
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; d.batch * d.m * d.n];
        for bi in 0..d.batch {
            let ao = if d.a_batched { bi * d.m * d.k } else { 0 };
            let bo = if d.b_batched { bi * d.k * d.n } else { 0 };
            gemm(
                d.m,
                d.k,
                d.n,
                &av[ao..ao + d.m * d.k],
                false,
                &bv[bo..bo + d.k * d.n],
                false,
                0.0,
                &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n],
            );
        }
        let shape = if d.a_batched || d.b_batched {
            vec![d.batch, d.m, d.n]
        } else {
            vec![d.m, d.n]
        };
        self.push(shape, out, Op::MatMul { a, b }, "matmul")
    }

    /// `y = x·wᵀ + b` for `x: [T×in]`, `w: [out×in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        self.add(y, b)
    }

    /// Cross-correlation of `x: [C_in×T]` with `w: [C_out×C_in×W]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (cin, t) = self.value(x).dims2()?;
        let (cout, wcin, width) = match self.shape(w) {
            [o, i, k] => (*o, *i, *k),
            s => return Err(Error::shape(format!("conv1d kernel must be [C_out×C_in×W], got {s:?}"))),
        };
        if wcin != cin {
            return Err(Error::shape(format!("conv1d kernel expects {wcin} input channels, got {cin}")));
        }
        if let Some(b) = bias {
            if self.value(b).len() != cout {
                return Err(Error::shape(format!("conv1d bias must have {cout} values")));
            }
        }
        let tout = conv_out_len(t, width, stride, padding)?;
        let xv = self.values(x);
        let kdim = cin * width;
        let mut cols = vec![0.0; kdim * tout];
        for c in 0..cin {
            for k in 0..width {
                let row = &mut cols[(c * width + k) * tout..(c * width + k + 1) * tout];
                for (ti, slot) in row.iter_mut().enumerate() {
                    let pos = (ti * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < t {
                        *slot = xv[c * t + pos as usize];
                    }
                }
            }
        }
        let mut out = vec![0.0; cout * tout];
        if let Some(b) = bias {
            for (o, bv) in self.values(b).iter().enumerate() {
                out[o * tout..(o + 1) * tout].fill(*bv);
            }
            gemm(cout, kdim, tout, self.values(w), false, &cols, false, 1.0, &mut out);
        } else {
            gemm(cout, kdim, tout, self.values(w), false, &cols, false, 0.0, &mut out);
        }
        self.push(
            vec![cout, tout],
            out,
            Op::Conv1d {
                x,
                w,
                b: bias,
                stride,
                padding,
                cols,
            },
            "conv1d",
        )
    }

    /// Transposed convolution of `x: [C_in×T]` with `w: [C_in×C_out×W]`;
    /// output length `(T−1)·stride + W − 2·padding`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (cin, t) = self.value(x).dims2()?;
        if t == 0 || cin == 0 {
            return Err(Error::shape("conv_transpose1d of an empty input"));
        }
        if stride == 0 {
            return Err(Error::shape("conv_transpose1d stride must be at least 1"));
        }
        let (wcin, cout, width) = match self.shape(w) {
            [i, o, k] => (*i, *o, *k),
            s => {
                return Err(Error::shape(format!(
                    "conv_transpose1d kernel must be [C_in×C_out×W], got {s:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv_transpose1d kernel expects {wcin} input channels, got {cin}"
            )));
        }
        let full = (t - 1) * stride + width;
        if full <= 2 * padding {
            return Err(Error::shape("conv_transpose1d padding removes the whole output"));
        }
        let tout = full - 2 * padding;
        let kdim = cout * width;
        let mut cols = vec![0.0; kdim * t];
        gemm(kdim, cin, t, self.values(w), true, self.values(x), false, 0.0, &mut cols);
        let mut out = vec![0.0; cout * tout];
        if let Some(b) = bias {
            let bv = self.values(b);
            if bv.len() != cout {
                return Err(Error::shape(format!("conv_transpose1d bias must have {cout} values")));
            }
            for (o, v) in bv.iter().enumerate() {
                out[o * tout..(o + 1) * tout].fill(*v);
            }
        }
        for o in 0..cout {
            for k in 0..width {
                let row = &cols[(o * width + k) * t..(o * width + k + 1) * t];
                for (ti, v) in row.iter().enumerate() {
                    let pos = (ti * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < tout {
                        out[o * tout + pos as usize] += v;
                    }
                }
            }
        }
        self.push(
            vec![cout, tout],
            out,
            Op::ConvTranspose1d {
                x,
                w,
                b: bias,
                stride,
                padding,
            },
            "conv_transpose1d",
        )
    }
}

pub(crate) fn matmul_backward(a: Var, b: Var, g: &[f64], sink: &mut GradSink<'_>) {
    let at = sink.value(a);
    let bt = sink.value(b);
    let d = matmul_dims(&at.shape, &bt.shape).expect("validated in forward");
    let (m, k, n) = (d.m, d.k, d.n);
    if sink.wants(a) {
        let bv = &bt.values;
        let buf = sink.buf(a);
        for bi in 0..d.batch {
            let ao = if d.a_batched { bi * m * k } else { 0 };
            let bo = if d.b_batched { bi * k * n } else { 0 };
            gemm(
                m,
                n,
                k,
                &g[bi * m * n..(bi + 1) * m * n],
                false,
                &bv[bo..bo + k * n],
                true,
                1.0,
                &mut buf[ao..ao + m * k],
            );
        }
    }
    if sink.wants(b) {
        let av = &at.values;
        let buf = sink.buf(b);
        for bi in 0..d.batch {
            let ao = if d.a_batched { bi * m * k } else { 0 };
            let bo = if d.b_batched { bi * k * n } else { 0 };
            gemm(
                k,
                m,
                n,
                &av[ao..ao + m * k],
                true,
                &g[bi * m * n..(bi + 1) * m * n],
                false,
                1.0,
                &mut buf[bo..bo + k * n],
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    cols: &[f64],
    out: &Tensor,
    g: &[f64],
    sink: &mut GradSink<'_>,
) {
    let (cin, t) = (sink.value(x).shape[0], sink.value(x).shape[1]);
    let width = sink.value(w).shape[2];
    let (cout, tout) = (out.shape[0], out.shape[1]);
    let kdim = cin * width;
    if let Some(b) = bias {
        if sink.wants(b) {
            let sums: Vec<f64> = g.chunks(tout).map(|r| r.iter().sum()).collect();
            sink.add(b, &sums);
        }
    }
    if sink.wants(w) {
        let buf = sink.buf(w);
        gemm(cout, tout, kdim, g, false, cols, true, 1.0, buf);
    }
    if sink.wants(x) {
        let wv = &sink.value(w).values;
        let mut dcols = vec![0.0; kdim * tout];
        gemm(kdim, cout, tout, wv, true, g, false, 0.0, &mut dcols);
        let buf = sink.buf(x);
        for c in 0..cin {
            for k in 0..width {
                let row = &dcols[(c * width + k) * tout..(c * width + k + 1) * tout];
                for (ti, v) in row.iter().enumerate() {
                    let pos = (ti * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < t {
                        buf[c * t + pos as usize] += v;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose1d_backward(
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    out: &Tensor,
    g: &[f64],
    sink: &mut GradSink<'_>,
) {
    let (cin, t) = (sink.value(x).shape[0], sink.value(x).shape[1]);
    let width = sink.value(w).shape[2];
    let (cout, tout) = (out.shape[0], out.shape[1]);
    let kdim = cout * width;
    if let Some(b) = bias {
        if sink.wants(b) {
            let sums: Vec<f64> = g.chunks(tout).map(|r| r.iter().sum()).collect();
            sink.add(b, &sums);
        }
    }
    if !sink.wants(x) && !sink.wants(w) {
        return;
    }
    let mut dcols = vec![0.0; kdim * t];
    for o in 0..cout {
        for k in 0..width {
            let row = &mut dcols[(o * width + k) * t..(o * width + k + 1) * t];
            for (ti, slot) in row.iter_mut().enumerate() {
                let pos = (ti * stride + k) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < tout {
                    *slot = g[o * tout + pos as usize];
                }
            }
        }
    }
    if sink.wants(w) {
        let xv = &sink.value(x).values;
        let buf = sink.buf(w);
        gemm(cin, t, kdim, xv, false, &dcols, true, 1.0, buf);
    }
    if sink.wants(x) {
        let wv = &sink.value(w).values;
        let buf = sink.buf(x);
        gemm(cin, kdim, t, wv, false, &dcols, false, 1.0, buf);
    }
}
