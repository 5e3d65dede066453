//! Training-time and evaluation-time corruption of clean clips.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mix::{apply_rir, mix_at_snr_offset};
use super::noise::NoiseKind;
use super::rir::{Rir, RoomClass};
use super::AudioClip;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "none", alias = "c")]
    None,
    #[serde(rename = "noise", alias = "n")]
    Noise,
    #[serde(rename = "reverb", alias = "r")]
    Reverb,
    #[serde(rename = "noise+reverb", alias = "n+r")]
    NoiseReverb,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::None, Action::Noise, Action::Reverb, Action::NoiseReverb];

    pub fn has_noise(self) -> bool {
        matches!(self, Action::Noise | Action::NoiseReverb)
    }

    pub fn has_reverb(self) -> bool {
        matches!(self, Action::Reverb | Action::NoiseReverb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::None => "none",
            Action::Noise => "noise",
            Action::Reverb => "reverb",
            Action::NoiseReverb => "noise+reverb",
        }
    }

    /// Evaluation-scenario tag: c, n, r or n+r.
    pub fn scenario_tag(self) -> &'static str {
        match self {
            Action::None => "c",
            Action::Noise => "n",
            Action::Reverb => "r",
            Action::NoiseReverb => "n+r",
        }
    }

    pub fn from_scenario_tag(tag: &str) -> Option<Self> {
        Action::ALL.into_iter().find(|a| a.scenario_tag() == tag || a.as_str() == tag)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource {
    pub id: String,
    pub kind: NoiseKind,
    pub clip: AudioClip,
}

/// Noise and RIR pools plus the action set and SNR range to draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub noises: Vec<NoiseSource>,
    pub rirs: Vec<Rir>,
    pub snr_range_db: (f64, f64),
    pub actions: Vec<Action>,
}

impl TrainSpec {
    /// All four actions with training SNRs in [0, 20] dB.
    pub fn uniform(noises: Vec<NoiseSource>, rirs: Vec<Rir>) -> Self {
        Self {
            noises,
            rirs,
            snr_range_db: (0.0, 20.0),
            actions: Action::ALL.to_vec(),
        }
    }

    /// A single evaluation condition.
    pub fn scenario(condition: Action, noises: Vec<NoiseSource>, rirs: Vec<Rir>, snr_range_db: (f64, f64)) -> Self {
        Self {
            noises,
            rirs,
            snr_range_db,
            actions: vec![condition],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("contamination.snr_range_db", format!("[{lo}, {hi}] is not a valid range")));
        }
        if self.actions.is_empty() {
            return Err(Error::config("contamination.actions", "no actions to draw from"));
        }
        if self.actions.iter().any(|a| a.has_noise()) && self.noises.is_empty() {
            return Err(Error::config("contamination.noises", "noise pool is empty"));
        }
        if self.actions.iter().any(|a| a.has_reverb()) && self.rirs.is_empty() {
            return Err(Error::config("contamination.rirs", "RIR pool is empty"));
        }
        Ok(())
    }
}

/// Every random choice behind one contamination, drawn in a fixed order
/// whatever the action so that the same seed picks the same noise, SNR and
/// RIR under every condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub action: Action,
    pub noise: usize,
    pub noise_offset: usize,
    pub snr_db: f64,
    pub rir: usize,
}

pub fn draw_plan(spec: &TrainSpec, seed: u64) -> Plan {
    let mut r = rng::stream(seed, "contaminate");
    let action = spec.actions[r.random_range(0..spec.actions.len())];
    let noise = r.random_range(0..spec.noises.len().max(1));
    let noise_len = spec.noises.get(noise).map_or(1, |n| n.clip.len());
    let noise_offset = r.random_range(0..noise_len);
    let (lo, hi) = spec.snr_range_db;
    let snr_db = if lo < hi { r.random_range(lo..hi) } else { lo };
    let rir = r.random_range(0..spec.rirs.len().max(1));
    Plan {
        action,
        noise,
        noise_offset,
        snr_db,
        rir,
    }
}

/// The distorted view of a clean clip, with everything needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyView {
    pub clip: AudioClip,
    pub action: Action,
    pub snr_db: Option<f64>,
    pub rir_id: Option<String>,
    pub seed: u64,
    pub noise_id: Option<String>,
    pub noise_kind: Option<NoiseKind>,
    pub rt60_s: Option<f64>,
    pub room_class: Option<RoomClass>,
    pub renorm_scale: f64,
}

/// Sidecar record describing how a contaminated file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub source: String,
    pub action: Action,
    pub snr_db: Option<f64>,
    pub rir_id: Option<String>,
    pub rt60_s: Option<f64>,
    pub seed: u64,
    pub renorm_scale: f64,
    pub noise_id: Option<String>,
    pub noise_type: Option<NoiseKind>,
    pub room_class: Option<RoomClass>,
}

impl NoisyView {
    pub fn sidecar(&self, source: impl Into<String>) -> Sidecar {
        Sidecar {
            source: source.into(),
            action: self.action,
            snr_db: self.snr_db,
            rir_id: self.rir_id.clone(),
            rt60_s: self.rt60_s,
            seed: self.seed,
            renorm_scale: self.renorm_scale,
            noise_id: self.noise_id.clone(),
            noise_type: self.noise_kind,
            room_class: self.room_class,
        }
    }
}

/// Applies one action drawn from `spec` to `clip`. The result depends only
/// on `(clip, spec, seed)`. With noise and reverb together the speech is
/// reverberated first and the noise is scaled against the reverberant
/// speech.
pub fn contaminate(clip: &AudioClip, spec: &TrainSpec, seed: u64) -> Result<NoisyView> {
    spec.validate()?;
    let plan = draw_plan(spec, seed);
    let mut view = NoisyView {
        clip: clip.clone(),
        action: plan.action,
        snr_db: None,
        rir_id: None,
        seed,
        noise_id: None,
        noise_kind: None,
        rt60_s: None,
        room_class: None,
        renorm_scale: 1.0,
    };
    if plan.action.has_reverb() {
        let rir = &spec.rirs[plan.rir];
        let (wet, s) = apply_rir(&view.clip, rir)?;
        view.clip = wet;
        view.renorm_scale *= s;
        view.rir_id = Some(rir.id.clone());
        view.rt60_s = Some(rir.rt60_s);
        view.room_class = Some(rir.room_class);
    }
    if plan.action.has_noise() {
        let src = &spec.noises[plan.noise];
        let m = mix_at_snr_offset(&view.clip, &src.clip, plan.snr_db, plan.noise_offset)?;
        view.clip = m.clip;
        view.renorm_scale *= m.renorm_scale;
        view.snr_db = Some(plan.snr_db);
        view.noise_id = Some(src.id.clone());
        view.noise_kind = Some(src.kind);
    }
    Ok(view)
}
