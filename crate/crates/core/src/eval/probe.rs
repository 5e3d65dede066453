//! Frozen upstream encoders and the downstream probes read from them.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::heads::ENH_PREFIX;
use crate::models::{checkpoint, Encoder, EncoderConfig, EnhancementHead, MaskHeadConfig, WaveformHeadConfig, ENCODER_PREFIX};
use crate::rng;
use crate::tensor::{AdamW, AdamWState, GradMap, Graph, ParamStore, Tensor};

/// A frozen encoder plus the enhancement head it was trained with, if any.
#[derive(Debug, Clone)]
pub struct Upstream {
    pub name: String,
    pub encoder: Encoder,
    pub params: ParamStore,
    pub head: Option<EnhancementHead>,
}

/// Mean-pooled final hidden state and, with a head, the enhanced waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub pooled: Vec<f64>,
    pub enhanced: Option<Vec<f64>>,
}

impl Upstream {
    /// Takes `encoder.*` and, when present, `enh.*` from `store`. The head
    /// kind is read from the parameter names.
    pub fn from_store(
        name: impl Into<String>,
        cfg: EncoderConfig,
        store: &ParamStore,
        mask: &MaskHeadConfig,
        waveform: &WaveformHeadConfig,
    ) -> Result<Self> {
        let encoder = Encoder::new(cfg, ENCODER_PREFIX);
        let mut params = store.subset(&format!("{ENCODER_PREFIX}."));
        let mut check = ParamStore::new();
        encoder.init(&mut check, 0);
        for (n, t) in check.iter() {
            match params.get(n) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::data("upstream checkpoint", format!("missing or misshapen `{n}`"))),
            }
        }
        let head = if store.contains(&format!("{ENH_PREFIX}.out.weight")) {
            Some(EnhancementHead::Mask(mask.clone()))
        } else if store.contains(&format!("{ENH_PREFIX}.up0.weight")) {
            Some(EnhancementHead::Waveform(waveform.clone()))
        } else {
            None
        };
        if head.is_some() {
            params.extend(store.subset(&format!("{ENH_PREFIX}.")));
        }
        params.set_trainable(false);
        Ok(Self {
            name: name.into(),
            encoder,
            params,
            head,
        })
    }

    pub fn load(
        path: &Path,
        name: impl Into<String>,
        cfg: EncoderConfig,
        mask: &MaskHeadConfig,
        waveform: &WaveformHeadConfig,
    ) -> Result<Self> {
        Self::from_store(name, cfg, &checkpoint::load_store(path)?, mask, waveform)
    }

    pub fn analyze(&self, samples: &[f64], enhance: bool) -> Result<Analysis> {
        let mut g = Graph::new();
        let out = self.encoder.forward(&mut g, &self.params, samples)?;
        let pooled = g.mean_rows(out.last())?;
        let pooled = g.values(pooled).to_vec();
        let enhanced = match (&self.head, enhance) {
            (Some(h), true) => {
                let y = h.forward(&mut g, &self.params, out.last(), samples)?;
                Some(g.values(y).to_vec())
            }
            _ => None,
        };
        Ok(Analysis { pooled, enhanced })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 1e-2,
            seed: 5,
        }
    }
}

/// Affine layer plus softmax over pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weight: Tensor,
    pub bias: Tensor,
    pub num_classes: usize,
    pub train_accuracy: f64,
}

fn check_labels(source: &str, features: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<usize> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::data(source, format!("{} feature rows against {} labels", features.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| **l >= num_classes) {
        return Err(Error::data(source, format!("label {l} is outside the {num_classes} known classes")));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::data(source, "feature rows differ in width"));
    }
    Ok(d)
}

impl LinearProbe {
    /// Full-batch AdamW on cross-entropy; deterministic given the seed.
    pub fn train(features: &[Vec<f64>], labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let d = check_labels("probe training set", features, labels, num_classes)?;
        let flat: Vec<f64> = features.iter().flatten().copied().collect();
        let mut store = ParamStore::new();
        store.init_uniform(cfg.seed, "probe.weight", &[num_classes, d], d);
        store.init_uniform(cfg.seed, "probe.bias", &[num_classes], d);
        let opt = AdamW::with_weight_decay(0.0);
        let mut state = AdamWState::new();
        for _ in 0..cfg.steps {
            let mut g = Graph::new();
            let x = g.constant(&[features.len(), d], flat.clone())?;
            let w = g.param(&store, "probe.weight")?;
            let b = g.param(&store, "probe.bias")?;
            let logits = g.affine(x, w, b)?;
            let loss = g.cross_entropy(logits, labels)?;
            g.backward(loss)?;
            let grads: GradMap = g.param_grads().into_iter().collect();
            opt.step(&mut store, &grads, &mut state, cfg.lr)?;
        }
        let mut probe = Self {
            weight: store.get("probe.weight").expect("initialised").clone(),
            bias: store.get("probe.bias").expect("initialised").clone(),
            num_classes,
            train_accuracy: 0.0,
        };
        probe.train_accuracy = super::accuracy(&probe.predict(features)?, labels)?;
        Ok(probe)
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        let d = self.weight.shape()[1];
        features
            .iter()
            .map(|f| {
                if f.len() != d {
                    return Err(Error::shape(format!("probe expects {d} features, got {}", f.len())));
                }
                let score = |k: usize| {
                    self.bias.values()[k] + self.weight.row(k).iter().zip(f).map(|(w, x)| w * x).sum::<f64>()
                };
                Ok((0..self.num_classes).fold(0, |a, k| if score(k) > score(a) { k } else { a }))
            })
            .collect()
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        check_labels("probe evaluation set", features, labels, self.num_classes)?;
        super::accuracy(&self.predict(features)?, labels)
    }
}

/// Index pairs for verification: every same-speaker pair and as many
/// seeded cross-speaker pairs.
pub fn asv_pairs(speakers: &[usize], seed: u64) -> Result<Vec<(usize, usize, bool)>> {
    let n = speakers.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if speakers[i] == speakers[j] {
                out.push((i, j, true));
            }
        }
    }
    let same = out.len();
    if same == 0 || speakers.iter().all(|s| *s == speakers[0]) {
        return Err(Error::metric("verification needs repeated speakers and at least two of them"));
    }
    let mut r = rng::stream(seed, "asv-pairs");
    while out.len() < 2 * same {
        let (i, j) = (r.random_range(0..n), r.random_range(0..n));
        if speakers[i] != speakers[j] {
            out.push((i.min(j), i.max(j), false));
        }
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

pub fn asv_trials(pooled: &[Vec<f64>], pairs: &[(usize, usize, bool)]) -> Vec<(f64, bool)> {
    pairs.iter().map(|&(i, j, same)| (cosine(&pooled[i], &pooled[j]), same)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_features_give_majority_rate() {
        let feats = vec![vec![0.3, -0.2]; 10];
        let labels = vec![0, 1, 1, 1, 2, 1, 0, 1, 2, 1];
        let p = LinearProbe::train(&feats, &labels, 3, &ProbeConfig::default()).unwrap();
        assert_eq!(p.train_accuracy, 0.6);
    }

    #[test]
    fn label_out_of_range() {
        let err = LinearProbe::train(&[vec![1.0]], &[4], 3, &ProbeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
    }

    #[test]
    fn pairs_are_balanced() {
        let p = asv_pairs(&[0, 0, 0, 1, 1, 2], 1).unwrap();
        let same = p.iter().filter(|t| t.2).count();
        assert_eq!(same, 4);
        assert_eq!(p.len(), 8);
    }
}
