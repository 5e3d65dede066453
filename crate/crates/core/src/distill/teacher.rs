//! Desk-scale teacher: the encoder trained as a frame classifier on clean
//! synthetic speech, then frozen with the classifier dropped.

use serde::{Deserialize, Serialize};

use super::batch_items;
use crate::data::Item;
use crate::error::{Error, Result};
use crate::models::{EncoderConfig, Teacher};
use crate::par::{try_map_indexed_with, Parallelism};
use crate::tensor::{accumulate, clip_global_norm, lr_schedule, AdamW, AdamWState, GradMap, Graph, ParamStore};

const CLS_PREFIX: &str = "cls";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub encoder: EncoderConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::teacher(),
            steps: 600,
            batch_size: 8,
            peak_lr: 1e-3,
            warmup_steps: 50,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    pub num_classes: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
}

fn labels_for(item: &Item, t: usize) -> Result<&[usize]> {
    item.frame_labels.get(..t).ok_or_else(|| {
        Error::data(
            &item.id,
            format!("{} frame labels for {t} encoder frames", item.frame_labels.len()),
        )
    })
}

fn frame_accuracy(encoder: &crate::models::Encoder, store: &ParamStore, items: &[Item], mode: Parallelism) -> Result<f64> {
    let counts = try_map_indexed_with(mode, items.len(), |i| {
        let mut g = Graph::new();
        let out = encoder.forward(&mut g, store, items[i].clip.samples())?;
        let w = g.param(store, &format!("{CLS_PREFIX}.weight"))?;
        let b = g.param(store, &format!("{CLS_PREFIX}.bias"))?;
        let logits = g.affine(out.last(), w, b)?;
        let labels = labels_for(&items[i], out.frames)?;
        let (t, c) = g.value(logits).dims2()?;
        let lv = g.values(logits);
        let hits = (0..t)
            .filter(|&r| {
                let row = &lv[r * c..(r + 1) * c];
                let arg = (0..c).fold(0, |a, k| if row[k] > row[a] { k } else { a });
                arg == labels[r]
            })
            .count();
        Ok((hits, t))
    })?;
    let (h, n) = counts.iter().fold((0, 0), |(h, n), (a, b)| (h + a, n + b));
    if n == 0 {
        return Err(Error::metric("no frames to score"));
    }
    Ok(h as f64 / n as f64)
}

/// Trains a teacher on per-frame labels of `train` and reports accuracy on
/// `heldout`. The returned teacher is frozen and carries no classifier.
pub fn pretrain_teacher(
    cfg: &TeacherSection,
    train: &[Item],
    heldout: &[Item],
    mode: Parallelism,
) -> Result<(Teacher, PretrainReport)> {
    if train.is_empty() {
        return Err(Error::config("teacher", "empty training set"));
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(Error::config("teacher", "batch_size and steps must be positive"));
    }
    let mut classes: Vec<usize> = train.iter().flat_map(|i| i.frame_labels.iter().copied()).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::config(
            "teacher",
            format!("frame labels span {} class(es); classification needs at least 2", classes.len()),
        ));
    }
    let num_classes = classes.last().copied().unwrap_or(0) + 1;

    let mut teacher = Teacher::new(cfg.encoder.clone(), cfg.seed)?;
    let mut store = teacher.params.clone();
    let d = cfg.encoder.hidden_dim;
    store.init_uniform(cfg.seed, &format!("{CLS_PREFIX}.weight"), &[num_classes, d], d);
    store.init_uniform(cfg.seed, &format!("{CLS_PREFIX}.bias"), &[num_classes], d);

    let opt = AdamW::default();
    let mut state = AdamWState::new();
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let batch = batch_items(cfg.seed, train.len(), cfg.batch_size, step);
        let results = try_map_indexed_with(mode, batch.len(), |i| {
            let item = &train[batch[i].1];
            let mut g = Graph::new();
            let out = teacher.encoder.forward(&mut g, &store, item.clip.samples())?;
            let w = g.param(&store, &format!("{CLS_PREFIX}.weight"))?;
            let b = g.param(&store, &format!("{CLS_PREFIX}.bias"))?;
            let logits = g.affine(out.last(), w, b)?;
            let loss = g.cross_entropy(logits, labels_for(item, out.frames)?)?;
            let value = g.scalar(loss);
            g.backward(loss)?;
            Ok((g.param_grads(), value))
        })?;
        let mut grads = GradMap::new();
        let mut loss = 0.0;
        for (gr, v) in results {
            accumulate(&mut grads, gr);
            loss += v;
        }
        let inv = 1.0 / batch.len() as f64;
        grads.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
        final_loss = loss * inv;
        clip_global_norm(&mut grads, 5.0);
        let lr = lr_schedule(step, cfg.peak_lr, cfg.warmup_steps.min(cfg.steps - 1), cfg.steps)?;
        opt.step(&mut store, &grads, &mut state, lr)?;
        if step % 100 == 0 || step + 1 == cfg.steps {
            log::info!("teacher step {step}: frame loss {final_loss:.4}, lr {lr:.2e}");
        }
    }

    let train_accuracy = frame_accuracy(&teacher.encoder, &store, train, mode)?;
    let heldout_accuracy = if heldout.is_empty() {
        f64::NAN
    } else {
        frame_accuracy(&teacher.encoder, &store, heldout, mode)?
    };
    teacher.params = store.subset(&format!("{}.", teacher.encoder.prefix));
    teacher.freeze();
    Ok((
        teacher,
        PretrainReport {
            steps: cfg.steps,
            num_classes,
            final_loss,
            train_accuracy,
            heldout_accuracy,
        },
    ))
}
