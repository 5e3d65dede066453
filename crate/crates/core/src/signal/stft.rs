//! Short-time Fourier analysis and least-squares overlap-add synthesis.
//!
//! Frame `k` covers samples `k·hop − pad .. k·hop − pad + window_length`
//! with `pad = (window_length − hop)/2`, weighted by a periodic Hann window
//! and zero-padded to `fft_size`. A clip of `len` samples gives
//! `ceil(len/hop)` frames, so a clip of `320·T` samples analysed with hop 320
//! yields exactly `T` frames. Synthesis divides the overlap-added frames by
//! the summed squared window, which inverts analysis for every sample the
//! windows cover.

use super::fft::{self, C64};
use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window_length: usize,
}

impl StftConfig {
    /// Mask-head analysis: hop matches the encoder frame stride.
    pub const MASK: StftConfig = StftConfig {
        fft_size: 512,
        hop: 320,
        window_length: 400,
    };

    pub fn new(fft_size: usize, hop: usize, window_length: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop,
            window_length,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window_length == 0 {
            return Err(Error::config("stft", "hop and window length must be positive"));
        }
        if self.hop > self.window_length {
            return Err(Error::config(
                "stft.hop",
                format!("hop {} exceeds window length {}", self.hop, self.window_length),
            ));
        }
        if self.window_length > self.fft_size || !self.fft_size.is_multiple_of(2) {
            return Err(Error::config(
                "stft.fft_size",
                format!(
                    "fft size {} must be even and at least the window length {}",
                    self.fft_size, self.window_length
                ),
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub(crate) fn pad(&self) -> usize {
        (self.window_length - self.hop) / 2
    }

    pub fn frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Periodic Hann window of `window_length` taps.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        (0..self.window_length)
            .map(|j| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * j as f64 / n).cos())
            .collect()
    }

    /// Signal index of tap `j` of frame `k`, if it lies inside `0..len`.
    #[inline]
    pub(crate) fn sample_index(&self, k: usize, j: usize, len: usize) -> Option<usize> {
        let s = (k * self.hop + j).checked_sub(self.pad())?;
        (s < len).then_some(s)
    }

    /// Summed squared window at every sample of a `len`-sample signal.
    pub(crate) fn ola_norm(&self, len: usize) -> Vec<f64> {
        let w = self.window();
        let mut d = vec![0.0; len];
        for k in 0..self.frames(len) {
            for (j, wj) in w.iter().enumerate() {
                if let Some(s) = self.sample_index(k, j, len) {
                    d[s] += wj * wj;
                }
            }
        }
        d
    }
}

/// Complex spectra of every frame, frames-major `[N×F]`.
pub(crate) fn analyze(x: &[f64], cfg: &StftConfig) -> Vec<C64> {
    let w = cfg.window();
    let f = cfg.bins();
    let n = cfg.frames(x.len());
    let mut out = Vec::with_capacity(n * f);
    let mut buf = vec![C64::new(0.0, 0.0); cfg.fft_size];
    for k in 0..n {
        buf.fill(C64::new(0.0, 0.0));
        for (j, wj) in w.iter().enumerate() {
            if let Some(s) = cfg.sample_index(k, j, x.len()) {
                buf[j].re = wj * x[s];
            }
        }
        fft::forward(&mut buf);
        out.extend_from_slice(&buf[..f]);
    }
    out
}

/// Inverse of [`analyze`] for a `len`-sample signal from frames-major
/// half spectra.
pub(crate) fn synthesize(spec: &[C64], cfg: &StftConfig, len: usize) -> Vec<f64> {
    let w = cfg.window();
    let f = cfg.bins();
    let nfft = cfg.fft_size;
    let mut y = vec![0.0; len];
    let mut buf = vec![C64::new(0.0, 0.0); nfft];
    for (k, frame) in spec.chunks(f).enumerate() {
        buf[..f].copy_from_slice(frame);
        for b in 1..nfft / 2 {
            buf[nfft - b] = frame[b].conj();
        }
        fft::inverse(&mut buf);
        for (j, wj) in w.iter().enumerate() {
            if let Some(s) = cfg.sample_index(k, j, len) {
                y[s] += wj * buf[j].re / nfft as f64;
            }
        }
    }
    for (v, d) in y.iter_mut().zip(cfg.ola_norm(len)) {
        *v = if d > 1e-12 { *v / d } else { 0.0 };
    }
    y
}

/// Magnitude and phase of a clip's STFT, stored bins-major `[F×N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrame {
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub fft_size: usize,
    pub hop: usize,
    pub window_length: usize,
    pub frames: usize,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl StftFrame {
    pub fn config(&self) -> StftConfig {
        StftConfig {
            fft_size: self.fft_size,
            hop: self.hop,
            window_length: self.window_length,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn magnitude_at(&self, bin: usize, frame: usize) -> f64 {
        self.magnitude[bin * self.frames + frame]
    }

    /// Magnitudes transposed to frames-major `[N×F]`.
    pub fn magnitude_frames(&self) -> Vec<f64> {
        transpose(&self.magnitude, self.bins(), self.frames)
    }

    pub fn phase_frames(&self) -> Vec<f64> {
        transpose(&self.phase, self.bins(), self.frames)
    }
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub fn stft(clip: &AudioClip, cfg: StftConfig) -> Result<StftFrame> {
    cfg.validate()?;
    let spec = analyze(clip.samples(), &cfg);
    let f = cfg.bins();
    let n = cfg.frames(clip.len());
    let mut magnitude = vec![0.0; f * n];
    let mut phase = vec![0.0; f * n];
    for k in 0..n {
        for b in 0..f {
            let c = spec[k * f + b];
            magnitude[b * n + k] = c.norm();
            phase[b * n + k] = c.arg();
        }
    }
    Ok(StftFrame {
        magnitude,
        phase,
        fft_size: cfg.fft_size,
        hop: cfg.hop,
        window_length: cfg.window_length,
        frames: n,
        signal_len: clip.len(),
        sample_rate: clip.sample_rate(),
    })
}

pub fn istft(frame: &StftFrame) -> Result<AudioClip> {
    let cfg = frame.config();
    cfg.validate()?;
    let f = frame.bins();
    let n = frame.frames;
    if frame.magnitude.len() != f * n || frame.phase.len() != f * n {
        return Err(Error::shape(format!(
            "stft frame holds {} magnitudes and {} phases, expected {f}×{n}",
            frame.magnitude.len(),
            frame.phase.len()
        )));
    }
    let mut spec = Vec::with_capacity(f * n);
    for k in 0..n {
        for b in 0..f {
            spec.push(C64::from_polar(frame.magnitude[b * n + k], frame.phase[b * n + k]));
        }
    }
    AudioClip::new(synthesize(&spec, &cfg, frame.signal_len), frame.sample_rate)
}
