//! Convolutional feature extractor followed by post-norm transformer layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::FRAME_SAMPLES;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub channels: usize,
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub conv_stack: Vec<ConvStage>,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Length of the learned position table.
    pub max_frames: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::teacher()
    }
}

impl EncoderConfig {
    fn desk(num_layers: usize) -> Self {
        Self {
            conv_stack: [5, 4, 4, 2, 2]
                .into_iter()
                .map(|s| ConvStage {
                    channels: 64,
                    width: s,
                    stride: s,
                })
                .collect(),
            hidden_dim: 64,
            num_layers,
            num_heads: 4,
            ffn_dim: 128,
            max_frames: 256,
        }
    }

    pub fn teacher() -> Self {
        Self::desk(6)
    }

    pub fn student() -> Self {
        Self::desk(2)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.conv_stack.is_empty() {
            return Err(Error::config(format!("{path}.conv_stack"), "needs at least one stage"));
        }
        let product: usize = self.conv_stack.iter().map(|s| s.stride).product();
        if product != FRAME_SAMPLES {
            return Err(Error::config(
                format!("{path}.conv_stack"),
                format!("stride product {product} must be {FRAME_SAMPLES} (one frame per 20 ms)"),
            ));
        }
        if let Some(s) = self.conv_stack.iter().find(|s| s.stride == 0 || s.width == 0 || s.channels == 0) {
            return Err(Error::config(format!("{path}.conv_stack"), format!("degenerate stage {s:?}")));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                format!("{path}.num_heads"),
                format!("hidden_dim {} is not divisible by {} heads", self.hidden_dim, self.num_heads),
            ));
        }
        if self.ffn_dim == 0 || self.max_frames == 0 {
            return Err(Error::config(path, "ffn_dim and max_frames must be positive"));
        }
        Ok(())
    }

    /// Frames produced for `samples` input samples (0 if too short).
    pub fn frames(&self, samples: usize) -> usize {
        let mut t = samples;
        for s in &self.conv_stack {
            if t < s.width {
                return 0;
            }
            t = (t - s.width) / s.stride + 1;
        }
        t
    }

    /// Samples actually consumed to produce `frames` frames.
    pub fn trimmed_len(&self, samples: usize) -> usize {
        self.frames(samples) * FRAME_SAMPLES
    }
}

/// Parameter names are `{prefix}.{part}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub prefix: String,
}

pub struct EncoderOutput {
    /// `hiddens[0]` is the projected conv output with positions added;
    /// `hiddens[l]` is the output of transformer layer `l`.
    pub hiddens: Vec<Var>,
    pub frames: usize,
}

impl EncoderOutput {
    pub fn last(&self) -> Var {
        *self.hiddens.last().expect("at least the input projection")
    }
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, prefix: impl Into<String>) -> Self {
        Self {
            cfg,
            prefix: prefix.into(),
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let c = &self.cfg;
        let mut cin = 1;
        for (i, s) in c.conv_stack.iter().enumerate() {
            store.init_uniform(seed, &self.name(&format!("conv{i}.weight")), &[s.channels, cin, s.width], cin * s.width);
            store.init_uniform(seed, &self.name(&format!("conv{i}.bias")), &[s.channels], cin * s.width);
            cin = s.channels;
        }
        let d = c.hidden_dim;
        store.init_const(&self.name("feat_norm.gamma"), &[cin], 1.0);
        store.init_const(&self.name("feat_norm.beta"), &[cin], 0.0);
        store.init_uniform(seed, &self.name("proj.weight"), &[d, cin], cin);
        store.init_uniform(seed, &self.name("proj.bias"), &[d], cin);
        store.init_uniform(seed, &self.name("pos"), &[c.max_frames, d], d);
        for l in 0..c.num_layers {
            init_layer(store, seed, &self.name(&format!("layer{l}")), d, c.ffn_dim);
        }
    }

    /// Encodes `samples`, trimmed to a whole number of 20 ms frames.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, samples: &[f64]) -> Result<EncoderOutput> {
        let t = self.cfg.frames(samples.len());
        if t == 0 || samples.len() < 400 {
            return Err(Error::shape(format!(
                "clip of {} samples is too short to encode (need at least 400)",
                samples.len()
            )));
        }
        if t > self.cfg.max_frames {
            return Err(Error::shape(format!(
                "clip yields {t} frames, more than the {} learned positions",
                self.cfg.max_frames
            )));
        }
        let len = t * FRAME_SAMPLES;
        let mut x = g.constant(&[1, len], samples[..len].to_vec())?;
        for (i, s) in self.cfg.conv_stack.iter().enumerate() {
            let w = g.param(store, &self.name(&format!("conv{i}.weight")))?;
            let b = g.param(store, &self.name(&format!("conv{i}.bias")))?;
            x = g.conv1d(x, w, Some(b), s.stride, 0)?;
            x = g.gelu(x)?;
        }
        let x = g.transpose(x)?;
        let gamma = g.param(store, &self.name("feat_norm.gamma"))?;
        let beta = g.param(store, &self.name("feat_norm.beta"))?;
        let x = g.layer_norm(x, gamma, beta)?;
        let w = g.param(store, &self.name("proj.weight"))?;
        let b = g.param(store, &self.name("proj.bias"))?;
        let x = g.affine(x, w, b)?;
        let pos = g.param(store, &self.name("pos"))?;
        let pos = g.slice_rows(pos, 0, t)?;
        let mut h = g.add(x, pos)?;
        let mut hiddens = vec![h];
        for l in 0..self.cfg.num_layers {
            h = transformer_layer(g, store, &self.name(&format!("layer{l}")), h, self.cfg.num_heads)?;
            hiddens.push(h);
        }
        Ok(EncoderOutput { hiddens, frames: t })
    }
}

pub fn init_layer(store: &mut ParamStore, seed: u64, prefix: &str, d: usize, ffn: usize) {
    for p in ["q", "k", "v", "o"] {
        store.init_uniform(seed, &format!("{prefix}.attn.{p}.weight"), &[d, d], d);
        store.init_uniform(seed, &format!("{prefix}.attn.{p}.bias"), &[d], d);
    }
    store.init_const(&format!("{prefix}.norm1.gamma"), &[d], 1.0);
    store.init_const(&format!("{prefix}.norm1.beta"), &[d], 0.0);
    store.init_uniform(seed, &format!("{prefix}.ffn.in.weight"), &[ffn, d], d);
    store.init_uniform(seed, &format!("{prefix}.ffn.in.bias"), &[ffn], d);
    store.init_uniform(seed, &format!("{prefix}.ffn.out.weight"), &[d, ffn], ffn);
    store.init_uniform(seed, &format!("{prefix}.ffn.out.bias"), &[d], ffn);
    store.init_const(&format!("{prefix}.norm2.gamma"), &[d], 1.0);
    store.init_const(&format!("{prefix}.norm2.beta"), &[d], 0.0);
}

fn affine_named(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    g.affine(x, w, b)
}

/// Multi-head self-attention over `x: [T×D]`. Also returns the attention
/// weights of each head.
pub fn self_attention(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let (_, d) = g.value(x).dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(
            format!("{prefix}.num_heads"),
            format!("hidden size {d} is not divisible by {heads} heads"),
        ));
    }
    let dh = d / heads;
    let q = affine_named(g, store, &format!("{prefix}.q"), x)?;
    let k = affine_named(g, store, &format!("{prefix}.k"), x)?;
    let v = affine_named(g, store, &format!("{prefix}.v"), x)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, a, b)?;
        let kh = g.slice_cols(k, a, b)?;
        let vh = g.slice_cols(v, a, b)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, scale)?;
        let p = g.softmax(s)?;
        outs.push(g.matmul(p, vh)?);
        weights.push(p);
    }
    let cat = g.concat_cols(&outs)?;
    Ok((affine_named(g, store, &format!("{prefix}.o"), cat)?, weights))
}

/// Post-norm layer: `LN(x + MHA(x))`, then `LN(h + FFN(h))`.
pub fn transformer_layer(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let (a, _) = self_attention(g, store, &format!("{prefix}.attn"), x, heads)?;
    let h = g.add(x, a)?;
    let gm = g.param(store, &format!("{prefix}.norm1.gamma"))?;
    let bt = g.param(store, &format!("{prefix}.norm1.beta"))?;
    let h = g.layer_norm(h, gm, bt)?;
    let f = affine_named(g, store, &format!("{prefix}.ffn.in"), h)?;
    let f = g.gelu(f)?;
    let f = affine_named(g, store, &format!("{prefix}.ffn.out"), f)?;
    let o = g.add(h, f)?;
    let gm = g.param(store, &format!("{prefix}.norm2.gamma"))?;
    let bt = g.param(store, &format!("{prefix}.norm2.beta"))?;
    g.layer_norm(o, gm, bt)
}

/// Copies every tensor under `from` into `to` with the prefix rewritten.
pub fn copy_prefixed(src: &ParamStore, from: &str, dst: &mut ParamStore, to: &str) {
    for (name, t) in src.iter() {
        if let Some(rest) = name.strip_prefix(from) {
            let t: Tensor = t.clone();
            dst.insert(format!("{to}{rest}"), t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_is_floor_of_320() {
        let c = EncoderConfig::student();
        assert_eq!(c.frames(16000), 50);
        assert_eq!(c.frames(16319), 50);
        assert_eq!(c.frames(640), 2);
        assert_eq!(c.frames(300), 0);
    }

    #[test]
    fn bad_stride_product_is_rejected() {
        let mut c = EncoderConfig::student();
        c.conv_stack[0].stride = 4;
        assert!(matches!(c.validate("student"), Err(Error::Config { .. })));
        let mut c = EncoderConfig::student();
        c.num_heads = 3;
        assert!(matches!(c.validate("student"), Err(Error::Config { .. })));
    }

    #[test]
    fn forward_shapes() {
        let enc = Encoder::new(EncoderConfig::student(), "encoder");
        let mut store = ParamStore::new();
        enc.init(&mut store, 1);
        let x: Vec<f64> = (0..1700).map(|i| (i as f64 * 0.01).sin() * 0.3).collect();
        let mut g = Graph::new();
        let out = enc.forward(&mut g, &store, &x).unwrap();
        assert_eq!(out.frames, 5);
        assert_eq!(out.hiddens.len(), 3);
        assert_eq!(g.shape(out.last()), &[5, 64]);
    }
}
