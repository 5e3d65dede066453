//! Distillation prediction heads and the two enhancement heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::stft::{analyze, StftConfig};
use crate::signal::FRAME_SAMPLES;
use crate::tensor::{Graph, ParamStore, Var};

/// Bidirectional LSTM stack over `x: [T×D]` returning `[T×2H]`.
pub fn bilstm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, layers: usize) -> Result<Var> {
    if layers == 0 {
        return Err(Error::config(format!("{prefix}.layers"), "needs at least one layer"));
    }
    let mut h = x;
    for l in 0..layers {
        let mut dirs = Vec::with_capacity(2);
        for (dir, reverse) in [("fwd", false), ("bwd", true)] {
            let p = format!("{prefix}.l{l}.{dir}");
            let wih = g.param(store, &format!("{p}.w_ih"))?;
            let whh = g.param(store, &format!("{p}.w_hh"))?;
            let b = g.param(store, &format!("{p}.bias"))?;
            dirs.push(g.lstm(h, wih, whh, b, reverse)?);
        }
        h = g.concat_cols(&dirs)?;
    }
    Ok(h)
}

/// Uniform weights, biases zero except the forget gate at 1.
pub fn init_bilstm(store: &mut ParamStore, seed: u64, prefix: &str, input: usize, hidden: usize, layers: usize) {
    let mut din = input;
    for l in 0..layers {
        for dir in ["fwd", "bwd"] {
            let p = format!("{prefix}.l{l}.{dir}");
            store.init_uniform(seed, &format!("{p}.w_ih"), &[4 * hidden, din], hidden);
            store.init_uniform(seed, &format!("{p}.w_hh"), &[4 * hidden, hidden], hidden);
            let mut bias = vec![0.0; 4 * hidden];
            bias[hidden..2 * hidden].fill(1.0);
            store.insert(format!("{p}.bias"), crate::tensor::Tensor::new(&[4 * hidden], bias).expect("sized"));
        }
        din = 2 * hidden;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementKind {
    #[default]
    None,
    Waveform,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskHeadConfig {
    pub hidden: usize,
    pub layers: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub window_length: usize,
}

impl Default for MaskHeadConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 3,
            fft_size: StftConfig::MASK.fft_size,
            hop: StftConfig::MASK.hop,
            window_length: StftConfig::MASK.window_length,
        }
    }
}

impl MaskHeadConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            fft_size: self.fft_size,
            hop: self.hop,
            window_length: self.window_length,
        }
    }
}

/// One upsampling stage of the waveform head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconvStage {
    pub channels: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformHeadConfig {
    pub hidden: usize,
    pub stages: Vec<DeconvStage>,
}

impl Default for WaveformHeadConfig {
    fn default() -> Self {
        // Each stage multiplies the length by exactly its stride:
        // (T−1)·s + width − 2·padding == s·T.
        let st = |channels, stride| {
            let (width, padding) = match stride {
                5 => (5, 0),
                4 => (8, 2),
                2 => (4, 1),
                _ => (3, 1),
            };
            DeconvStage {
                channels,
                width,
                stride,
                padding,
            }
        };
        Self {
            hidden: 32,
            stages: vec![st(32, 5), st(32, 4), st(16, 4), st(16, 2), st(8, 2), st(8, 1), st(1, 1)],
        }
    }
}

impl WaveformHeadConfig {
    pub fn validate(&self) -> Result<()> {
        let mut scale = 1;
        for (i, s) in self.stages.iter().enumerate() {
            if s.stride == 0 || s.width != s.stride + 2 * s.padding {
                return Err(Error::config(
                    format!("enhancement.waveform.stages[{i}]"),
                    "width must equal stride + 2·padding so each stage scales length by its stride",
                ));
            }
            scale *= s.stride;
        }
        if scale != FRAME_SAMPLES || self.stages.last().map(|s| s.channels) != Some(1) {
            return Err(Error::config(
                "enhancement.waveform.stages",
                format!("strides must multiply to {FRAME_SAMPLES} and end in one channel"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnhancementHead {
    Waveform(WaveformHeadConfig),
    Mask(MaskHeadConfig),
}

pub const ENH_PREFIX: &str = "enh";

impl EnhancementHead {
    pub fn kind(&self) -> EnhancementKind {
        match self {
            EnhancementHead::Waveform(_) => EnhancementKind::Waveform,
            EnhancementHead::Mask(_) => EnhancementKind::Mask,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64, input_dim: usize) {
        match self {
            EnhancementHead::Waveform(c) => {
                init_bilstm(store, seed, &format!("{ENH_PREFIX}.lstm"), input_dim, c.hidden, 1);
                let mut cin = 2 * c.hidden;
                for (i, s) in c.stages.iter().enumerate() {
                    let fan = cin * s.width / s.stride;
                    store.init_uniform(seed, &format!("{ENH_PREFIX}.up{i}.weight"), &[cin, s.channels, s.width], fan);
                    store.init_uniform(seed, &format!("{ENH_PREFIX}.up{i}.bias"), &[s.channels], fan);
                    cin = s.channels;
                }
            }
            EnhancementHead::Mask(c) => {
                init_bilstm(store, seed, &format!("{ENH_PREFIX}.lstm"), input_dim, c.hidden, c.layers);
                let f = c.stft().bins();
                store.init_uniform(seed, &format!("{ENH_PREFIX}.out.weight"), &[f, 2 * c.hidden], 2 * c.hidden);
                store.init_uniform(seed, &format!("{ENH_PREFIX}.out.bias"), &[f], 2 * c.hidden);
            }
        }
    }

    /// Mask values `[T×F]` in (0, 1) for a student hidden `[T×D]`.
    pub fn mask(&self, g: &mut Graph, store: &ParamStore, hidden: Var) -> Result<Var> {
        let EnhancementHead::Mask(c) = self else {
            return Err(Error::State("mask requested from a waveform head".into()));
        };
        let h = bilstm(g, store, &format!("{ENH_PREFIX}.lstm"), hidden, c.layers)?;
        let w = g.param(store, &format!("{ENH_PREFIX}.out.weight"))?;
        let b = g.param(store, &format!("{ENH_PREFIX}.out.bias"))?;
        let z = g.affine(h, w, b)?;
        g.sigmoid(z)
    }

    /// Estimate of the clean waveform, `[T·320]` samples, from the student's
    /// final hidden `[T×D]` and the noisy input it saw.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, hidden: Var, noisy: &[f64]) -> Result<Var> {
        let (t, _) = g.value(hidden).dims2()?;
        let len = t * FRAME_SAMPLES;
        match self {
            EnhancementHead::Waveform(c) => {
                let h = bilstm(g, store, &format!("{ENH_PREFIX}.lstm"), hidden, 1)?;
                let mut x = g.transpose(h)?;
                for (i, s) in c.stages.iter().enumerate() {
                    let w = g.param(store, &format!("{ENH_PREFIX}.up{i}.weight"))?;
                    let b = g.param(store, &format!("{ENH_PREFIX}.up{i}.bias"))?;
                    x = g.conv_transpose1d(x, w, Some(b), s.stride, s.padding)?;
                    if i + 1 < c.stages.len() {
                        x = g.gelu(x)?;
                    }
                }
                g.reshape(x, &[len])
            }
            EnhancementHead::Mask(c) => {
                let mask = self.mask(g, store, hidden)?;
                let (mag, phase) = noisy_spectrum(noisy, &c.stft(), t)?;
                let m = g.constant(&[t, c.stft().bins()], mag)?;
                let masked = g.mul(mask, m)?;
                g.synthesis(masked, phase, c.stft(), len)
            }
        }
    }
}

/// Frames-major magnitude and phase of the first `t` frames of `noisy`,
/// analysed over the trimmed length `t·320`.
pub fn noisy_spectrum(noisy: &[f64], cfg: &StftConfig, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = t * FRAME_SAMPLES;
    if noisy.len() < len {
        return Err(Error::shape(format!(
            "noisy clip has {} samples, fewer than the {len} covered by {t} frames",
            noisy.len()
        )));
    }
    let n = cfg.frames(len);
    if n.abs_diff(t) > 1 {
        return Err(Error::shape(format!("stft gives {n} frames against {t} encoder frames")));
    }
    if n != t {
        return Err(Error::shape(format!(
            "stft hop {} does not tile {t} encoder frames exactly",
            cfg.hop
        )));
    }
    let spec = analyze(&noisy[..len], cfg);
    Ok((spec.iter().map(|c| c.norm()).collect(), spec.iter().map(|c| c.arg()).collect()))
}
