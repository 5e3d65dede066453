//! Distillation and enhancement losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::mr_stft_loss;
use crate::signal::FRAME_SAMPLES;
use crate::tensor::{Graph, Var};

const NORM_FLOOR: f64 = 1e-12;

/// Per-frame L1 distance scaled by 1/D minus `lambda · log σ(cos)`, averaged
/// over frames. Both inputs are `[T×D]`.
pub fn distill_loss(g: &mut Graph, teacher: Var, student: Var, lambda: f64) -> Result<Var> {
    let ta = g.value(teacher).dims2()?;
    let sa = g.value(student).dims2()?;
    if ta != sa {
        return Err(Error::shape(format!("teacher features {ta:?} against student predictions {sa:?}")));
    }
    if ta.1 == 0 || ta.0 == 0 {
        return Err(Error::shape("distill_loss needs T ≥ 1 and D ≥ 1"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::config("distill.lambda_cos", format!("{lambda} must be finite and ≥ 0")));
    }
    let diff = g.sub(teacher, student)?;
    let ad = g.abs(diff)?;
    let l1 = g.mean(ad)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let prod = g.mul(teacher, student)?;
    let dot = g.sum_last(prod)?;
    let norm = |g: &mut Graph, x: Var| -> Result<Var> {
        let sq = g.square(x)?;
        let s = g.sum_last(sq)?;
        let s = g.clamp_min(s, NORM_FLOOR * NORM_FLOOR)?;
        g.sqrt(s)
    };
    let na = norm(g, teacher)?;
    let nb = norm(g, student)?;
    let den = g.mul(na, nb)?;
    let cos = g.div(dot, den)?;
    let ls = g.log_sigmoid(cos)?;
    let mls = g.mean(ls)?;
    let cos_term = g.scale(mls, -lambda)?;
    g.add(l1, cos_term)
}

/// `(1/m) Σ_i Σ_ℓ distill_loss(teacher[i][ℓ], student[i][ℓ], λ)`.
pub fn feature_denoising_objective(g: &mut Graph, teacher: &[Vec<Var>], student: &[Vec<Var>], lambda: f64) -> Result<Var> {
    if teacher.is_empty() {
        return Err(Error::config("train.batch_size", "empty batch"));
    }
    if teacher.len() != student.len() {
        return Err(Error::shape(format!("{} teacher items against {} student items", teacher.len(), student.len())));
    }
    let mut terms = Vec::new();
    for (t, s) in teacher.iter().zip(student) {
        if t.len() != s.len() || t.is_empty() {
            return Err(Error::shape(format!("{} teacher layers against {} predictions", t.len(), s.len())));
        }
        for (a, b) in t.iter().zip(s) {
            terms.push(distill_loss(g, *a, *b, lambda)?);
        }
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = g.add(total, *t)?;
    }
    g.scale(total, 1.0 / teacher.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhLoss {
    #[default]
    L1,
    L2,
    MrStft,
}

impl EnhLoss {
    pub const ALL: [EnhLoss; 3] = [EnhLoss::L1, EnhLoss::L2, EnhLoss::MrStft];

    pub fn as_str(self) -> &'static str {
        match self {
            EnhLoss::L1 => "l1",
            EnhLoss::L2 => "l2",
            EnhLoss::MrStft => "mr_stft",
        }
    }
}

fn trim_1d(g: &mut Graph, x: Var, len: usize) -> Result<Var> {
    let n = g.value(x).len();
    if n == len {
        return Ok(x);
    }
    g.slice_rows(x, 0, len)
}

/// Reconstruction loss between an estimate and the clean reference. Lengths
/// may differ by at most one hop, in which case both are cut to the shorter.
pub fn enhancement_loss(g: &mut Graph, estimate: Var, reference: Var, kind: EnhLoss) -> Result<Var> {
    let (ne, nr) = (g.value(estimate).len(), g.value(reference).len());
    if g.shape(estimate).len() != 1 || g.shape(reference).len() != 1 {
        return Err(Error::shape("enhancement_loss expects 1-D waveforms"));
    }
    if ne.abs_diff(nr) > FRAME_SAMPLES {
        return Err(Error::shape(format!("estimate has {ne} samples, reference {nr}")));
    }
    let (est, re) = if ne != nr {
        log::warn!("trimming enhancement estimate ({ne}) and reference ({nr}) to the shorter length");
        let n = ne.min(nr);
        (trim_1d(g, estimate, n)?, trim_1d(g, reference, n)?)
    } else {
        (estimate, reference)
    };
    match kind {
        EnhLoss::L1 => {
            let d = g.sub(est, re)?;
            let a = g.abs(d)?;
            g.mean(a)
        }
        EnhLoss::L2 => {
            let d = g.sub(est, re)?;
            let s = g.square(d)?;
            g.mean(s)
        }
        EnhLoss::MrStft => mr_stft_loss(g, est, re),
    }
}
