//! Scale-invariant signal-to-distortion ratio.

use crate::error::{Error, Result};

/// Reports are kept finite by capping at ±100 dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// SI-SDR in dB with both signals mean-removed first.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    si_sdr_with(estimate, reference, true)
}

pub fn si_sdr_with(estimate: &[f64], reference: &[f64], zero_mean: bool) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(format!(
            "si_sdr lengths differ: estimate {}, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::metric("si_sdr of empty signals"));
    }
    let centre = |x: &[f64]| -> Vec<f64> {
        if zero_mean {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| v - m).collect()
        } else {
            x.to_vec()
        }
    };
    let s = centre(reference);
    let e = centre(estimate);
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return Err(Error::metric("si_sdr reference has zero power"));
    }
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (ei, si) in e.iter().zip(&s) {
        let t = alpha * si;
        target += t * t;
        resid += (ei - t) * (ei - t);
    }
    if resid == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / resid).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}
