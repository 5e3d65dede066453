//! Additive noise at a target SNR and room-impulse convolution.

use super::fft::{self, C64};
use super::rir::Rir;
use super::{power, AudioClip};
use crate::error::{Error, Result};

/// Convolution switches from direct summation to FFT above this many taps.
const DIRECT_TAPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub clip: AudioClip,
    /// Noise gain; 1 for pure convolution.
    pub alpha: f64,
    /// Factor applied after mixing to keep the peak within [−1, 1]; 1 if
    /// none was needed.
    pub renorm_scale: f64,
}

fn renormalize(mut x: Vec<f64>) -> (Vec<f64>, f64) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        let s = 1.0 / peak;
        x.iter_mut().for_each(|v| *v *= s);
        (x, s)
    } else {
        (x, 1.0)
    }
}

/// Noise looped or trimmed to `len` samples.
pub(crate) fn fit_length(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Noise gain giving `snr_db` between `speech` and the fitted noise.
pub fn snr_gain(speech: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::config("snr_db", format!("{snr_db} dB is not a finite SNR")));
    }
    let ps = power(speech);
    let pn = power(noise);
    if ps <= 0.0 {
        return Err(Error::metric("speech has zero power"));
    }
    if pn <= 0.0 {
        return Err(Error::metric("noise has zero power"));
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

pub fn mix_at_snr(speech: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<Mixed> {
    mix_at_snr_offset(speech, noise, snr_db, 0)
}

/// As [`mix_at_snr`], reading the looped noise from `offset`.
pub fn mix_at_snr_offset(speech: &AudioClip, noise: &AudioClip, snr_db: f64, offset: usize) -> Result<Mixed> {
    if speech.sample_rate() != noise.sample_rate() {
        return Err(Error::format(
            "mix_at_snr",
            format!(
                "sample rates differ: speech {} Hz, noise {} Hz",
                speech.sample_rate(),
                noise.sample_rate()
            ),
        ));
    }
    let n = fit_length(noise.samples(), speech.len(), offset);
    let alpha = snr_gain(speech.samples(), &n, snr_db)?;
    let y: Vec<f64> = speech.samples().iter().zip(&n).map(|(s, v)| s + alpha * v).collect();
    let (y, renorm_scale) = renormalize(y);
    Ok(Mixed {
        clip: AudioClip::new(y, speech.sample_rate())?,
        alpha,
        renorm_scale,
    })
}

/// Linear convolution of `x` with `h`, keeping the first `x.len()` outputs.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if h.len() <= DIRECT_TAPS {
        let mut y = vec![0.0; n];
        for (k, hk) in h.iter().enumerate() {
            if *hk == 0.0 {
                continue;
            }
            for (yi, xi) in y[k.min(n)..].iter_mut().zip(x) {
                *yi += hk * xi;
            }
        }
        return y;
    }
    let size = (n + h.len() - 1).next_power_of_two();
    let mut a = vec![C64::new(0.0, 0.0); size];
    let mut b = vec![C64::new(0.0, 0.0); size];
    for (ai, xi) in a.iter_mut().zip(x) {
        ai.re = *xi;
    }
    for (bi, hi) in b.iter_mut().zip(h) {
        bi.re = *hi;
    }
    fft::forward(&mut a);
    fft::forward(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    fft::inverse(&mut a);
    a[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Reverberates `speech` with `rir`. Returns the clip and the peak
/// renormalization factor (1 if none was needed).
pub fn apply_rir(speech: &AudioClip, rir: &Rir) -> Result<(AudioClip, f64)> {
    if speech.sample_rate() != rir.sample_rate {
        return Err(Error::format(
            "apply_rir",
            format!(
                "sample rates differ: speech {} Hz, rir {} Hz",
                speech.sample_rate(),
                rir.sample_rate
            ),
        ));
    }
    let (y, s) = renormalize(convolve_truncated(speech.samples(), &rir.taps));
    Ok((AudioClip::new(y, speech.sample_rate())?, s))
}
