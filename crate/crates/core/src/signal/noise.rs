//! Three synthetic noise families standing in for indoor, outdoor and
//! transport recordings.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Mains hum plus modulated babble-like bands.
    #[serde(rename = "indoor-like")]
    Indoor,
    /// Low-passed wind with slow gusts.
    #[serde(rename = "outdoor-like")]
    Outdoor,
    /// Engine firing harmonics plus rumble.
    #[serde(rename = "transport-like")]
    Transport,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Indoor, NoiseKind::Outdoor, NoiseKind::Transport];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Indoor => "indoor-like",
            NoiseKind::Outdoor => "outdoor-like",
            NoiseKind::Transport => "transport-like",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two-pole resonator with unit peak gain, run over white noise.
fn resonant_noise(r: &mut StreamRng, n: usize, center: f64, bandwidth: f64, fs: f64) -> Vec<f64> {
    let rad = (-PI * bandwidth / fs).exp();
    let theta = 2.0 * PI * center / fs;
    let (a1, a2) = (2.0 * rad * theta.cos(), -rad * rad);
    let gain = 1.0 - rad;
    let (mut y1, mut y2) = (0.0, 0.0);
    (0..n)
        .map(|_| {
            let y = gain * r.random_range(-1.0..1.0) + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn one_pole_lowpass(x: &mut [f64], cutoff: f64, fs: f64) {
    let a = (-2.0 * PI * cutoff / fs).exp();
    let mut y = 0.0;
    for v in x.iter_mut() {
        y = (1.0 - a) * *v + a * y;
        *v = y;
    }
}

/// `len` samples of noise of family `kind`, peak-normalized to 0.5.
pub fn synth_noise(kind: NoiseKind, len: usize, seed: u64) -> Result<AudioClip> {
    if len == 0 {
        return Err(Error::config("noise.len", "noise clip must be non-empty"));
    }
    let fs = f64::from(DEFAULT_SAMPLE_RATE);
    let mut r = rng::stream(seed, kind.as_str());
    let t = |i: usize| i as f64 / fs;
    let mut x = vec![0.0; len];
    match kind {
        NoiseKind::Indoor => {
            let mains = if r.random_bool(0.5) { 50.0 } else { 60.0 };
            let hum_phase: f64 = r.random_range(0.0..2.0 * PI);
            for talker in 0..4 {
                let center = r.random_range(400.0..2000.0);
                let rate = r.random_range(3.0..6.0);
                let ph: f64 = r.random_range(0.0..2.0 * PI);
                let band = resonant_noise(&mut r, len, center, 300.0 + 100.0 * talker as f64, fs);
                for (i, (xi, b)) in x.iter_mut().zip(band).enumerate() {
                    let m = 0.5 + 0.5 * (2.0 * PI * rate * t(i) + ph).sin();
                    *xi += 8.0 * m * m * b;
                }
            }
            for (i, xi) in x.iter_mut().enumerate() {
                let w = 2.0 * PI * mains * t(i) + hum_phase;
                *xi += 0.2 * w.sin() + 0.1 * (2.0 * w).sin() + 0.05 * (3.0 * w).sin();
            }
        }
        NoiseKind::Outdoor => {
            for v in x.iter_mut() {
                *v = r.random_range(-1.0..1.0);
            }
            one_pole_lowpass(&mut x, r.random_range(200.0..500.0), fs);
            one_pole_lowpass(&mut x, 800.0, fs);
            let gusts: Vec<(f64, f64)> = (0..3)
                .map(|_| (r.random_range(0.2..1.5), r.random_range(0.0..2.0 * PI)))
                .collect();
            for (i, v) in x.iter_mut().enumerate() {
                let g: f64 = gusts.iter().map(|(f, p)| (2.0 * PI * f * t(i) + p).sin()).sum::<f64>() / 3.0;
                *v *= 1.0 + 0.8 * g;
            }
        }
        NoiseKind::Transport => {
            let firing = r.random_range(25.0..60.0);
            let ph: f64 = r.random_range(0.0..2.0 * PI);
            let mut rumble: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
            one_pole_lowpass(&mut rumble, 120.0, fs);
            for (i, (v, rb)) in x.iter_mut().zip(&rumble).enumerate() {
                let w = 2.0 * PI * firing * t(i) + ph;
                let pulses: f64 = (1..=8).map(|h| (h as f64 * w).cos() / h as f64).sum();
                *v = 0.3 * pulses + 6.0 * rb;
            }
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioClip::new(x, DEFAULT_SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_family_is_nonsilent_and_reproducible() {
        for kind in NoiseKind::ALL {
            let a = synth_noise(kind, 8000, 5).unwrap();
            let b = synth_noise(kind, 8000, 5).unwrap();
            assert_eq!(a, b);
            assert!(a.power() > 1e-4, "{kind} is too quiet");
            assert!((a.peak() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn families_differ() {
        let a = synth_noise(NoiseKind::Indoor, 4000, 1).unwrap();
        let b = synth_noise(NoiseKind::Outdoor, 4000, 1).unwrap();
        assert_ne!(a, b);
    }
}
