//! Feature-denoising distillation: losses, teacher pretraining and the
//! training loop.

pub mod loss;
pub mod teacher;
pub mod train;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use loss::{distill_loss, enhancement_loss, feature_denoising_objective, EnhLoss};
pub use teacher::{pretrain_teacher, PretrainReport, TeacherSection};
pub use train::{StepRecord, Trainer, TrainOutput};

use crate::error::{Error, Result};
use crate::models::{DistillMode, EncoderConfig, EnhancementHead, EnhancementKind, MaskHeadConfig, WaveformHeadConfig};
use crate::rng;
use crate::signal::Action;
use crate::tensor::ScheduleKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    /// Teacher layers to distil, 1-based transformer layer indices.
    pub layers: Vec<usize>,
    pub lambda_cos: f64,
    pub mode: DistillMode,
    /// Feed the student contaminated views. Off gives the plain Distiller.
    pub contaminate: bool,
    pub snr_range_db: [f64; 2],
    pub actions: Vec<Action>,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            layers: vec![2, 4, 6],
            lambda_cos: 1.0,
            mode: DistillMode::Layerwise,
            contaminate: true,
            snr_range_db: [0.0, 20.0],
            actions: Action::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancementSection {
    pub kind: EnhancementKind,
    pub loss: EnhLoss,
    pub beta: f64,
    pub mask: MaskHeadConfig,
    pub waveform: WaveformHeadConfig,
}

impl Default for EnhancementSection {
    fn default() -> Self {
        Self {
            kind: EnhancementKind::Mask,
            loss: EnhLoss::L1,
            beta: 1.0,
            mask: MaskHeadConfig::default(),
            waveform: WaveformHeadConfig::default(),
        }
    }
}

impl EnhancementSection {
    pub fn head(&self) -> Option<EnhancementHead> {
        match self.kind {
            EnhancementKind::None => None,
            EnhancementKind::Mask => Some(EnhancementHead::Mask(self.mask.clone())),
            EnhancementKind::Waveform => Some(EnhancementHead::Waveform(self.waveform.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub total_steps: u64,
    /// Defaults to 7% of `total_steps` when absent.
    pub warmup_steps: Option<u64>,
    pub peak_lr: f64,
    pub schedule: ScheduleKind,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Write a resumable checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 8,
            total_steps: 5000,
            warmup_steps: None,
            peak_lr: 2e-4,
            schedule: ScheduleKind::WarmupLinear,
            weight_decay: 0.01,
            clip_norm: 5.0,
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainSection {
    pub fn warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or((self.total_steps * 7) / 100)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentSection {
    pub encoder: EncoderConfig,
    /// Copy the conv stack, projection and lower layers from the teacher.
    pub init_from_teacher: bool,
}

impl Default for StudentSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::student(),
            init_from_teacher: true,
        }
    }
}

/// Everything the training loop reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub distill: DistillSection,
    pub enhancement: EnhancementSection,
    pub train: TrainSection,
}

impl DistillConfig {
    /// The plain Distiller: clean student inputs and no enhancement head.
    pub fn plain(mut self) -> Self {
        self.distill.contaminate = false;
        self.enhancement.kind = EnhancementKind::None;
        self
    }

    pub fn validate(&self, teacher_layers: usize) -> Result<()> {
        let d = &self.distill;
        if d.layers.is_empty() {
            return Err(Error::config("distill.layers", "needs at least one layer"));
        }
        if d.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("distill.layers", format!("{:?} is not strictly increasing", d.layers)));
        }
        if let Some(l) = d.layers.iter().find(|l| **l == 0 || **l > teacher_layers) {
            return Err(Error::config(
                "distill.layers",
                format!("layer {l} is outside 1..={teacher_layers}"),
            ));
        }
        if !(d.lambda_cos.is_finite() && d.lambda_cos >= 0.0) {
            return Err(Error::config("distill.lambda_cos", format!("{} must be finite and ≥ 0", d.lambda_cos)));
        }
        let e = &self.enhancement;
        if !(e.beta.is_finite() && e.beta >= 0.0) {
            return Err(Error::config("enhancement.beta", format!("{} must be finite and ≥ 0", e.beta)));
        }
        if e.kind == EnhancementKind::Waveform {
            e.waveform.validate()?;
        }
        if e.kind == EnhancementKind::Mask {
            e.mask.stft().validate()?;
            if e.mask.hop != crate::signal::FRAME_SAMPLES {
                return Err(Error::config(
                    "enhancement.mask.hop",
                    format!("mask frames must align with encoder frames ({} samples)", crate::signal::FRAME_SAMPLES),
                ));
            }
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(t.peak_lr.is_finite() && t.peak_lr >= 0.0) {
            return Err(Error::config("train.peak_lr", format!("{} must be finite and ≥ 0", t.peak_lr)));
        }
        if !(t.clip_norm > 0.0) {
            return Err(Error::config("train.clip_norm", "must be positive"));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be finite and ≥ 0"));
        }
        crate::tensor::lr_schedule_with(t.schedule, 0, t.peak_lr, t.warmup(), t.total_steps)?;
        Ok(())
    }

    /// Copy with every defaulted field written out.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.warmup_steps = Some(self.train.warmup());
        c
    }
}

/// `(epoch, item)` pairs of the `m` items drawn at `step`. Items are visited
/// in a fresh seeded permutation every epoch.
pub fn batch_items(seed: u64, n: usize, m: usize, step: u64) -> Vec<(u64, usize)> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..m as u64)
        .map(|i| {
            let pos = step * m as u64 + i;
            let epoch = pos / n as u64;
            let slot = (pos % n as u64) as usize;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng::stream(rng::derive(seed, &[epoch]), "epoch-order"));
                cached = Some((epoch, perm));
            }
            (epoch, cached.as_ref().expect("just set").1[slot])
        })
        .collect()
}
