//! Differentiable STFT magnitude and fixed-phase overlap-add synthesis.

use super::graph::{GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::signal::fft::{self, C64};
use crate::signal::stft::{analyze, synthesize, StftConfig};

pub(crate) struct StftMagSaved {
    pub(crate) x: Var,
    cfg: StftConfig,
    spectra: Vec<C64>,
}

pub(crate) struct SynthesisSaved {
    pub(crate) mag: Var,
    cfg: StftConfig,
    phase: Vec<f64>,
    len: usize,
}

impl Graph {
    /// Magnitude STFT of the samples in `x` (any shape, read flat), frames-major
    /// `[N×F]`.
    pub fn stft_mag(&mut self, x: Var, cfg: StftConfig) -> Result<Var> {
        cfg.validate()?;
        let len = self.value(x).len();
        if len == 0 {
            return Err(Error::shape("stft of an empty signal"));
        }
        let spectra = analyze(self.values(x), &cfg);
        let mag: Vec<f64> = spectra.iter().map(|c| c.norm()).collect();
        let saved = StftMagSaved { x, cfg, spectra };
        self.push(vec![cfg.frames(len), cfg.bins()], mag, Op::StftMag(Box::new(saved)), "stft_mag")
    }

    /// Overlap-add synthesis of `mag: [N×F]` with a fixed `phase` of the same
    /// layout, cropped to `len` samples. Returns shape `[len]`.
    pub fn synthesis(&mut self, mag: Var, phase: Vec<f64>, cfg: StftConfig, len: usize) -> Result<Var> {
        cfg.validate()?;
        let (n, f) = self.value(mag).dims2()?;
        if f != cfg.bins() || phase.len() != n * f || n != cfg.frames(len) {
            return Err(Error::shape(format!(
                "synthesis of {len} samples needs [{}×{}] magnitudes and phases, got {:?} and {}",
                cfg.frames(len),
                cfg.bins(),
                self.shape(mag),
                phase.len()
            )));
        }
        let spec: Vec<C64> = self
            .values(mag)
            .iter()
            .zip(&phase)
            .map(|(m, p)| C64::from_polar(*m, *p))
            .collect();
        let y = synthesize(&spec, &cfg, len);
        let saved = SynthesisSaved { mag, cfg, phase, len };
        self.push(vec![len], y, Op::Synthesis(Box::new(saved)), "synthesis")
    }
}

pub(crate) fn stft_mag_backward(s: &StftMagSaved, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(s.x) {
        return;
    }
    let cfg = &s.cfg;
    let f = cfg.bins();
    let len = sink.value(s.x).len();
    let w = cfg.window();
    let mut gx = vec![0.0; len];
    let mut buf = vec![C64::new(0.0, 0.0); cfg.fft_size];
    for (k, (spec, gk)) in s.spectra.chunks(f).zip(g.chunks(f)).enumerate() {
        buf.fill(C64::new(0.0, 0.0));
        for b in 0..f {
            let m = spec[b].norm();
            if m > 0.0 {
                buf[b] = (spec[b] * (gk[b] / m)).conj();
            }
        }
        fft::forward(&mut buf);
        for (j, wj) in w.iter().enumerate() {
            if let Some(si) = cfg.sample_index(k, j, len) {
                gx[si] += wj * buf[j].re;
            }
        }
    }
    sink.add(s.x, &gx);
}

pub(crate) fn synthesis_backward(s: &SynthesisSaved, g: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(s.mag) {
        return;
    }
    let cfg = &s.cfg;
    let f = cfg.bins();
    let nfft = cfg.fft_size;
    let w = cfg.window();
    let gs: Vec<f64> = g
        .iter()
        .zip(cfg.ola_norm(s.len))
        .map(|(gv, d)| if d > 1e-12 { gv / d } else { 0.0 })
        .collect();
    let frames = cfg.frames(s.len);
    let mut gm = vec![0.0; frames * f];
    let mut buf = vec![C64::new(0.0, 0.0); nfft];
    for k in 0..frames {
        buf.fill(C64::new(0.0, 0.0));
        for (j, wj) in w.iter().enumerate() {
            if let Some(si) = cfg.sample_index(k, j, s.len) {
                buf[j].re = wj * gs[si];
            }
        }
        fft::forward(&mut buf);
        for b in 0..f {
            let c = if b == 0 || b == nfft / 2 { 1.0 } else { 2.0 };
            let rot = C64::from_polar(1.0, s.phase[k * f + b]);
            gm[k * f + b] = c / nfft as f64 * (rot * buf[b].conj()).re;
        }
    }
    sink.add(s.mag, &gm);
}
