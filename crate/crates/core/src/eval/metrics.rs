//! Classification accuracy and verification equal-error rate.

use crate::error::{Error, Result};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::metric("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::metric(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Equal-error rate of `(similarity, same_speaker)` trials. A trial is
/// accepted when its score is at or above the threshold. Thresholds are the
/// sorted unique scores plus one above them all; between the last threshold
/// with FAR > FRR and the first with FAR ≤ FRR the crossing is linearly
/// interpolated.
pub fn eer(trials: &[(f64, bool)]) -> Result<f64> {
    let pos = trials.iter().filter(|t| t.1).count();
    let neg = trials.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::metric(format!("EER needs both trial classes ({pos} target, {neg} non-target)")));
    }
    if let Some(t) = trials.iter().find(|t| !t.0.is_finite()) {
        return Err(Error::metric(format!("non-finite trial score {}", t.0)));
    }
    let mut sorted: Vec<(f64, bool)> = trials.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Rejected counts below the current threshold.
    let (mut rej_pos, mut rej_neg) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut i = 0;
    loop {
        let far = (neg - rej_neg) as f64 / neg as f64;
        let frr = rej_pos as f64 / pos as f64;
        if let Some(v) = crossing(prev, far, frr) {
            return Ok(v);
        }
        prev = Some((far, frr));
        if i == sorted.len() {
            unreachable!("the threshold above every score always has FAR ≤ FRR");
        }
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                rej_pos += 1;
            } else {
                rej_neg += 1;
            }
            i += 1;
        }
    }
}

/// EER at the current threshold if the sign of FAR − FRR has flipped.
pub(crate) fn crossing(prev: Option<(f64, f64)>, far: f64, frr: f64) -> Option<f64> {
    let d = far - frr;
    if d > 0.0 {
        return None;
    }
    if d == 0.0 {
        return Some(far);
    }
    let (pf, pr) = prev.expect("the lowest threshold accepts everything, so FAR > FRR there");
    let dp = pf - pr;
    let alpha = dp / (dp - d);
    Some(pf + alpha * (far - pf))
}
