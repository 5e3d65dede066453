//! Teacher and student encoders, prediction heads, enhancement heads and
//! the checkpoint container.

pub mod checkpoint;
pub mod encoder;
pub mod heads;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use encoder::{ConvStage, Encoder, EncoderConfig, EncoderOutput};
pub use heads::{EnhancementHead, EnhancementKind, MaskHeadConfig, WaveformHeadConfig};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const ENCODER_PREFIX: &str = "encoder";
pub const HEADS_PREFIX: &str = "heads";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    /// Every head reads the student's final layer.
    #[default]
    Layerwise,
    /// Head `k` reads student layer `k + 1`.
    L2l,
}

/// Student encoder plus one affine prediction head per distilled teacher
/// layer. Parameters live under `encoder.*` and `heads.{k}.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub encoder: Encoder,
    pub num_targets: usize,
    pub target_dim: usize,
    pub mode: DistillMode,
}

pub struct StudentOutput {
    pub hiddens: Vec<Var>,
    /// One `[T×target_dim]` prediction per distilled layer.
    pub predictions: Vec<Var>,
    pub last: Var,
    pub frames: usize,
}

impl Student {
    pub fn new(cfg: EncoderConfig, num_targets: usize, target_dim: usize, mode: DistillMode) -> Result<Self> {
        cfg.validate("student")?;
        if num_targets == 0 {
            return Err(Error::config("distill.layers", "needs at least one teacher layer"));
        }
        if mode == DistillMode::L2l && cfg.num_layers != num_targets {
            return Err(Error::config(
                "student.num_layers",
                format!(
                    "l2l mode needs one student layer per distilled layer ({} vs {num_targets})",
                    cfg.num_layers
                ),
            ));
        }
        Ok(Self {
            encoder: Encoder::new(cfg, ENCODER_PREFIX),
            num_targets,
            target_dim,
            mode,
        })
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.encoder.init(store, seed);
        let d = self.encoder.cfg.hidden_dim;
        for k in 0..self.num_targets {
            store.init_uniform(seed, &format!("{HEADS_PREFIX}.{k}.weight"), &[self.target_dim, d], d);
            store.init_uniform(seed, &format!("{HEADS_PREFIX}.{k}.bias"), &[self.target_dim], d);
        }
    }

    /// Overwrites the student encoder with the teacher's conv stack,
    /// projection, positions and first transformer layers.
    pub fn init_from_teacher(&self, store: &mut ParamStore, teacher: &Teacher) -> Result<()> {
        let t = &teacher.encoder.cfg;
        let s = &self.encoder.cfg;
        if t.conv_stack != s.conv_stack || t.hidden_dim != s.hidden_dim || t.ffn_dim != s.ffn_dim || t.max_frames != s.max_frames {
            return Err(Error::config(
                "student.init_from_teacher",
                "student and teacher encoders differ in shape",
            ));
        }
        for (name, tensor) in teacher.params.iter() {
            let Some(rest) = name.strip_prefix(&format!("{}.", teacher.encoder.prefix)) else {
                continue;
            };
            let keep = match rest.strip_prefix("layer") {
                Some(r) => r
                    .split('.')
                    .next()
                    .and_then(|n| n.parse::<usize>().ok())
                    .is_some_and(|l| l < s.num_layers),
                None => true,
            };
            if keep {
                store.insert(format!("{ENCODER_PREFIX}.{rest}"), tensor.clone());
            }
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, samples: &[f64]) -> Result<StudentOutput> {
        let out = self.encoder.forward(g, store, samples)?;
        let last = out.last();
        let mut predictions = Vec::with_capacity(self.num_targets);
        for k in 0..self.num_targets {
            let src = match self.mode {
                DistillMode::Layerwise => last,
                DistillMode::L2l => out.hiddens[k + 1],
            };
            let w = g.param(store, &format!("{HEADS_PREFIX}.{k}.weight"))?;
            let b = g.param(store, &format!("{HEADS_PREFIX}.{k}.bias"))?;
            predictions.push(g.affine(src, w, b)?);
        }
        Ok(StudentOutput {
            hiddens: out.hiddens,
            predictions,
            last,
            frames: out.frames,
        })
    }
}

/// Frozen-able teacher encoder with its own parameter store under
/// `encoder.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub encoder: Encoder,
    pub params: ParamStore,
}

impl Teacher {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate("teacher")?;
        let encoder = Encoder::new(cfg, ENCODER_PREFIX);
        let mut params = ParamStore::new();
        encoder.init(&mut params, seed);
        Ok(Self { encoder, params })
    }

    pub fn from_params(cfg: EncoderConfig, params: ParamStore) -> Result<Self> {
        cfg.validate("teacher")?;
        let encoder = Encoder::new(cfg, ENCODER_PREFIX);
        let mut check = ParamStore::new();
        encoder.init(&mut check, 0);
        for (name, t) in check.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::data(
                        "teacher checkpoint",
                        format!("`{name}` has shape {:?}, expected {:?}", p.shape(), t.shape()),
                    ))
                }
                None => return Err(Error::data("teacher checkpoint", format!("missing `{name}`"))),
            }
        }
        Ok(Self {
            encoder,
            params: params.subset(&format!("{ENCODER_PREFIX}.")),
        })
    }

    pub fn freeze(&mut self) {
        self.params.set_trainable(false);
    }

    pub fn is_frozen(&self) -> bool {
        !self.params.any_trainable()
    }

    pub fn num_layers(&self) -> usize {
        self.encoder.cfg.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.cfg.hidden_dim
    }

    /// Per-layer hidden states of a clean clip, `[T×D]` each; index 0 is the
    /// transformer input.
    pub fn hiddens(&self, samples: &[f64]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let out = self.encoder.forward(&mut g, &self.params, samples)?;
        Ok(out.hiddens.iter().map(|v| g.value(*v).clone().with_requires_grad(false)).collect())
    }

    /// CRC32 over the f64 checkpoint encoding of the parameters.
    pub fn fingerprint(&self) -> Result<u32> {
        let bytes = checkpoint::encode(self.params.iter().map(|(k, v)| (k.as_str(), v)), checkpoint::DType::F64)?;
        Ok(crc32fast::hash(&bytes))
    }
}

/// Scalar counts grouped by the first two components of each name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub trainable: BTreeMap<String, usize>,
    pub frozen: BTreeMap<String, usize>,
    pub total_trainable: usize,
    pub total_frozen: usize,
}

fn group_of(name: &str) -> String {
    name.splitn(3, '.').take(2).collect::<Vec<_>>().join(".")
}

/// Counts parameters of `store`, splitting on `requires_grad`.
pub fn param_count(store: &ParamStore) -> ParamReport {
    let mut r = ParamReport::default();
    for (name, t) in store.iter() {
        let (map, total) = if t.requires_grad() {
            (&mut r.trainable, &mut r.total_trainable)
        } else {
            (&mut r.frozen, &mut r.total_frozen)
        };
        *map.entry(group_of(name)).or_insert(0) += t.len();
        *total += t.len();
    }
    r
}
