//! Audio clips, synthetic corpora, the contamination engine, STFT analysis
//! and synthesis, and waveform-domain metrics.

pub mod contaminate;
pub mod fft;
pub mod metrics;
pub mod mix;
pub mod mrstft;
pub mod noise;
pub mod rir;
pub mod stft;
pub mod synth;
pub mod wav;

pub use contaminate::{contaminate, draw_plan, Action, NoiseSource, NoisyView, Plan, Sidecar, TrainSpec};
pub use metrics::{si_sdr, si_sdr_with};
pub use mix::{apply_rir, mix_at_snr, Mixed};
pub use mrstft::{mr_stft_loss, mr_stft_loss_value, MRSTFT_RESOLUTIONS};
pub use noise::{synth_noise, NoiseKind};
pub use rir::{synth_rir, Rir, RoomClass};
pub use stft::{istft, stft, StftConfig, StftFrame};
pub use synth::{synth_speech, SpeakerSpec, FRAME_SAMPLES};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("audio clip", "no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::data("audio clip", "sample rate is zero"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::data("audio clip", format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean square over the full clip.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    /// Keeps the first `len` samples.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        Self::new(self.samples[..len.min(self.samples.len())].to_vec(), self.sample_rate)
    }
}

pub(crate) fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_clips() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000).is_err());
    }

    #[test]
    fn duration_and_power() {
        let c = AudioClip::new(vec![1.0, -1.0, 1.0, -1.0], 4).unwrap();
        assert_eq!(c.duration_s(), 1.0);
        assert_eq!(c.power(), 1.0);
        assert_eq!(c.peak(), 1.0);
    }
}
