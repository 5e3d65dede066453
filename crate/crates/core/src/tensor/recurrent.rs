//! Single-direction LSTM layer as one fused graph node with hand-written
//! backpropagation through time.

use super::graph::{GradSink, Graph, Op, Var};
use super::linalg::gemm;
use super::ops::sigmoid;
use crate::error::{Error, Result};

pub(crate) struct LstmSaved {
    pub(crate) x: Var,
    pub(crate) w_ih: Var,
    pub(crate) w_hh: Var,
    pub(crate) bias: Var,
    reverse: bool,
    hidden: usize,
    /// Gate activations per processed step, `[T×4H]` in (i, f, g, o) order.
    gates: Vec<f64>,
    /// Cell state per step, `[T×H]`.
    cells: Vec<f64>,
}

impl Graph {
    /// Runs one LSTM direction over `x: [T×D]` with weights `w_ih: [4H×D]`,
    /// `w_hh: [4H×H]`, `bias: [4H]` (gate order i, f, g, o) from a zero
    /// initial state. Returns `[T×H]`, aligned with the input time axis even
    /// when `reverse` is set.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let (t, d) = self.value(x).dims2()?;
        if t == 0 {
            return Err(Error::shape("lstm over an empty sequence"));
        }
        let (g4, din) = self.value(w_ih).dims2()?;
        if din != d || g4 % 4 != 0 {
            return Err(Error::shape(format!(
                "lstm input weights {:?} do not fit inputs of width {d}",
                self.shape(w_ih)
            )));
        }
        let h = g4 / 4;
        if self.shape(w_hh) != [g4, h] || self.value(bias).len() != g4 {
            return Err(Error::shape(format!(
                "lstm recurrent weights must be [{g4}×{h}] with a {g4}-value bias"
            )));
        }
        let mut pre = vec![0.0; t * g4];
        for row in pre.chunks_mut(g4) {
            row.copy_from_slice(self.values(bias));
        }
        gemm(t, d, g4, self.values(x), false, self.values(w_ih), true, 1.0, &mut pre);
        let whh = self.values(w_hh);
        let mut gates = vec![0.0; t * g4];
        let mut cells = vec![0.0; t * h];
        let mut out = vec![0.0; t * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for step in 0..t {
            let ti = if reverse { t - 1 - step } else { step };
            let z = &mut pre[ti * g4..(ti + 1) * g4];
            for (r, zr) in z.iter_mut().enumerate() {
                let wrow = &whh[r * h..(r + 1) * h];
                *zr += wrow.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let gt = &mut gates[ti * g4..(ti + 1) * g4];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let gg = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                let c = f * c_prev[j] + i * gg;
                gt[j] = i;
                gt[h + j] = f;
                gt[2 * h + j] = gg;
                gt[3 * h + j] = o;
                cells[ti * h + j] = c;
                out[ti * h + j] = o * c.tanh();
            }
            h_prev.copy_from_slice(&out[ti * h..(ti + 1) * h]);
            c_prev.copy_from_slice(&cells[ti * h..(ti + 1) * h]);
        }
        let saved = LstmSaved {
            x,
            w_ih,
            w_hh,
            bias,
            reverse,
            hidden: h,
            gates,
            cells,
        };
        self.push(vec![t, h], out, Op::Lstm(Box::new(saved)), "lstm")
    }
}

pub(crate) fn lstm_backward(s: &LstmSaved, g: &[f64], sink: &mut GradSink<'_>) {
    let h = s.hidden;
    let g4 = 4 * h;
    let xt = sink.value(s.x);
    let (t, d) = (xt.shape[0], xt.shape[1]);
    let whh = &sink.value(s.w_hh).values;
    let out = |ti: usize, j: usize| s.gates[ti * g4 + 3 * h + j] * s.cells[ti * h + j].tanh();

    let mut dz_all = vec![0.0; t * g4];
    let mut dwhh = vec![0.0; g4 * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for step in (0..t).rev() {
        let ti = if s.reverse { t - 1 - step } else { step };
        let prev = if step == 0 {
            None
        } else if s.reverse {
            Some(ti + 1)
        } else {
            Some(ti - 1)
        };
        let gt = &s.gates[ti * g4..(ti + 1) * g4];
        let dz = &mut dz_all[ti * g4..(ti + 1) * g4];
        for j in 0..h {
            let (i, f, gg, o) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
            let c = s.cells[ti * h + j];
            let tc = c.tanh();
            let c_prev = prev.map_or(0.0, |p| s.cells[p * h + j]);
            let dh = g[ti * h + j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[h + j] = dc * c_prev * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - gg * gg);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.fill(0.0);
        if let Some(p) = prev {
            let h_prev: Vec<f64> = (0..h).map(|j| out(p, j)).collect();
            for r in 0..g4 {
                let dzr = dz[r];
                if dzr == 0.0 {
                    continue;
                }
                let wrow = &whh[r * h..(r + 1) * h];
                let drow = &mut dwhh[r * h..(r + 1) * h];
                for j in 0..h {
                    dh_next[j] += wrow[j] * dzr;
                    drow[j] += dzr * h_prev[j];
                }
            }
        }
    }
    if sink.wants(s.w_hh) {
        sink.add(s.w_hh, &dwhh);
    }
    if sink.wants(s.bias) {
        let mut db = vec![0.0; g4];
        for row in dz_all.chunks(g4) {
            for (a, b) in db.iter_mut().zip(row) {
                *a += b;
            }
        }
        sink.add(s.bias, &db);
    }
    if sink.wants(s.w_ih) {
        let xv = &xt.values;
        let buf = sink.buf(s.w_ih);
        gemm(g4, t, d, &dz_all, true, xv, false, 1.0, buf);
    }
    if sink.wants(s.x) {
        let wih = &sink.value(s.w_ih).values;
        let buf = sink.buf(s.x);
        gemm(t, g4, d, &dz_all, false, wih, false, 1.0, buf);
    }
}
