//! The training loop: one graph per batch item, summed gradients, clipped
//! AdamW updates, JSON-lines logging and resumable checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{batch_items, distill_loss, enhancement_loss, DistillConfig, StudentSection};
use crate::error::{Error, Result};
use crate::models::heads::ENH_PREFIX;
use crate::models::{checkpoint, EnhancementHead, Student, Teacher, ENCODER_PREFIX, HEADS_PREFIX};
use crate::par::{try_map_indexed_with, Parallelism};
use crate::rng;
use crate::signal::{contaminate, AudioClip, NoiseSource, Rir, TrainSpec};
use crate::tensor::{
    accumulate, clip_global_norm, lr_schedule_with, AdamW, AdamWState, GradMap, Graph, ParamStore, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub distill: f64,
    pub enh: f64,
    pub total: f64,
    pub wall_ms: f64,
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("step-{step:06}.rdkd"))
    }

    /// Full training state after the last step, f64.
    pub fn state_path(&self) -> PathBuf {
        self.dir.join("state.rdkd")
    }

    /// Student encoder and prediction heads for downstream use, f32.
    pub fn student_path(&self) -> PathBuf {
        self.dir.join("student.rdkd")
    }

    /// Enhancement head, kept apart from the student, f32.
    pub fn head_path(&self) -> PathBuf {
        self.dir.join("enh_head.rdkd")
    }
}

struct ItemResult {
    grads: Vec<(String, Vec<f64>)>,
    distill: f64,
    enh: f64,
}

pub struct Trainer {
    pub cfg: DistillConfig,
    pub student: Student,
    pub head: Option<EnhancementHead>,
    pub params: ParamStore,
    pub opt_state: AdamWState,
    clips: Vec<AudioClip>,
    targets: Vec<Vec<Tensor>>,
    spec: Option<TrainSpec>,
    teacher_fingerprint: u32,
    opt: AdamW,
    pub parallelism: Parallelism,
    last_good: Option<PathBuf>,
}

impl Trainer {
    /// Builds the student (initialised from `teacher` when asked) and caches
    /// the teacher's clean features for every training clip.
    pub fn new(
        cfg: DistillConfig,
        student_cfg: &StudentSection,
        teacher: &Teacher,
        clips: Vec<AudioClip>,
        noises: Vec<NoiseSource>,
        rirs: Vec<Rir>,
        parallelism: Parallelism,
    ) -> Result<Self> {
        if !teacher.is_frozen() {
            return Err(Error::State("the teacher must be frozen before distillation".into()));
        }
        cfg.validate(teacher.num_layers())?;
        if clips.is_empty() {
            return Err(Error::config("data", "no training clips"));
        }
        let student = Student::new(
            student_cfg.encoder.clone(),
            cfg.distill.layers.len(),
            teacher.hidden_dim(),
            cfg.distill.mode,
        )?;
        let seed = cfg.train.seed;
        let mut params = ParamStore::new();
        student.init(&mut params, rng::derive_named(seed, "student"));
        if student_cfg.init_from_teacher {
            student.init_from_teacher(&mut params, teacher)?;
        }
        let head = cfg.enhancement.head();
        if let Some(h) = &head {
            h.init(&mut params, rng::derive_named(seed, "enhancement"), student_cfg.encoder.hidden_dim);
        }
        let spec = if cfg.distill.contaminate {
            let s = TrainSpec {
                noises,
                rirs,
                snr_range_db: (cfg.distill.snr_range_db[0], cfg.distill.snr_range_db[1]),
                actions: cfg.distill.actions.clone(),
            };
            s.validate()?;
            Some(s)
        } else {
            None
        };
        let layers = cfg.distill.layers.clone();
        let targets = try_map_indexed_with(parallelism, clips.len(), |i| {
            let h = teacher.hiddens(clips[i].samples())?;
            Ok(layers.iter().map(|&l| h[l].clone()).collect::<Vec<_>>())
        })?;
        Ok(Self {
            opt: AdamW::with_weight_decay(cfg.train.weight_decay),
            cfg,
            student,
            head,
            params,
            opt_state: AdamWState::new(),
            clips,
            targets,
            spec,
            teacher_fingerprint: teacher.fingerprint()?,
            parallelism,
            last_good: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.opt_state.step
    }

    /// Student input for item `item` in `epoch`, plus the reconstruction
    /// target on the same scale.
    fn view(&self, epoch: u64, item: usize) -> Result<(AudioClip, Vec<f64>)> {
        let clean = &self.clips[item];
        match &self.spec {
            None => Ok((clean.clone(), clean.samples().to_vec())),
            Some(spec) => {
                let v = contaminate(clean, spec, rng::derive(self.cfg.train.seed, &[epoch, item as u64]))?;
                let target = clean.samples().iter().map(|s| s * v.renorm_scale).collect();
                Ok((v.clip, target))
            }
        }
    }

    fn item_pass(&self, epoch: u64, item: usize) -> Result<ItemResult> {
        let (input, target) = self.view(epoch, item)?;
        let lambda = self.cfg.distill.lambda_cos;
        let beta = self.cfg.enhancement.beta;
        let mut g = Graph::new();
        let out = self.student.forward(&mut g, &self.params, input.samples())?;
        let mut distill = None;
        for (k, pred) in out.predictions.iter().enumerate() {
            let t = &self.targets[item][k];
            let tv = g.constant(t.shape(), t.values().to_vec())?;
            let l = distill_loss(&mut g, tv, *pred, lambda)?;
            distill = Some(match distill {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let distill = distill.expect("at least one distilled layer");
        let mut loss = distill;
        let mut enh = 0.0;
        if let Some(head) = &self.head {
            let est = head.forward(&mut g, &self.params, out.last, input.samples())?;
            let n = g.value(est).len().min(target.len());
            let re = g.constant(&[n], target[..n].to_vec())?;
            let e = enhancement_loss(&mut g, est, re, self.cfg.enhancement.loss)?;
            enh = g.scalar(e);
            // With β = 0 the head stays out of the differentiated graph.
            if beta > 0.0 {
                let w = g.scale(e, beta)?;
                loss = g.add(distill, w)?;
            }
        }
        let distill_value = g.scalar(distill);
        g.backward(loss)?;
        Ok(ItemResult {
            grads: g.param_grads(),
            distill: distill_value,
            enh,
        })
    }

    fn fail(&self, detail: String) -> Error {
        Error::Training {
            detail: format!("step {}: {detail}", self.step()),
            last_good: self.last_good.clone(),
        }
    }

    /// One optimizer update over a batch.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let t = &self.cfg.train;
        if self.step() >= t.total_steps {
            return Err(Error::State(format!("run already finished at step {}", t.total_steps)));
        }
        let started = Instant::now();
        let step = self.step();
        let batch = batch_items(t.seed, self.clips.len(), t.batch_size, step);
        let results = try_map_indexed_with(self.parallelism, batch.len(), |i| self.item_pass(batch[i].0, batch[i].1));
        let results = match results {
            Ok(r) => r,
            Err(Error::NonFinite { op }) => return Err(self.fail(format!("non-finite value in {op}"))),
            Err(e) => return Err(e),
        };
        let m = batch.len() as f64;
        let mut grads = GradMap::new();
        let (mut distill, mut enh) = (0.0, 0.0);
        for r in results {
            accumulate(&mut grads, r.grads);
            distill += r.distill;
            enh += r.enh;
        }
        distill /= m;
        enh /= m;
        let beta = if self.head.is_some() { self.cfg.enhancement.beta } else { 0.0 };
        let total = distill + beta * enh;
        if !total.is_finite() {
            return Err(self.fail(format!("loss is {total}")));
        }
        grads.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v /= m));
        clip_global_norm(&mut grads, t.clip_norm);
        let lr = lr_schedule_with(t.schedule, step, t.peak_lr, t.warmup(), t.total_steps)?;
        if let Err(e) = self.opt.step(&mut self.params, &grads, &mut self.opt_state, lr) {
            return Err(match e {
                Error::Training { detail, .. } => self.fail(detail),
                other => other,
            });
        }
        Ok(StepRecord {
            step: step + 1,
            lr,
            distill,
            enh,
            total,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Encoder and prediction-head parameters without the enhancement head.
    pub fn student_params(&self) -> ParamStore {
        let mut s = self.params.subset(&format!("{ENCODER_PREFIX}."));
        s.extend(self.params.subset(&format!("{HEADS_PREFIX}.")));
        s
    }

    /// Encodes parameters, optimizer moments and counters as f64 records.
    pub fn state_bytes(&self) -> Result<Vec<u8>> {
        let mut records: Vec<(String, Tensor)> = Vec::new();
        for (name, t) in self.params.iter() {
            records.push((format!("param/{name}"), t.clone()));
        }
        for (name, m) in &self.opt_state.first_moment {
            records.push((format!("adam.m/{name}"), Tensor::new(&[m.len()], m.clone())?));
        }
        for (name, v) in &self.opt_state.second_moment {
            records.push((format!("adam.v/{name}"), Tensor::new(&[v.len()], v.clone())?));
        }
        records.push(("meta/step".into(), Tensor::scalar(self.step() as f64)));
        records.push(("meta/teacher_crc".into(), Tensor::scalar(f64::from(self.teacher_fingerprint))));
        checkpoint::encode(records.iter().map(|(k, v)| (k.as_str(), v)), checkpoint::DType::F64)
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.state_bytes()?)
    }

    /// Restores a state written by [`Trainer::save_state`] for the same
    /// configuration and teacher.
    pub fn load_state(&mut self, path: &Path) -> Result<()> {
        let src = path.display().to_string();
        let mut params = self.params.clone();
        let mut opt = AdamWState::new();
        let (mut step, mut crc) = (None, None);
        let mut seen = 0;
        for (name, t) in checkpoint::read(path)? {
            if let Some(p) = name.strip_prefix("param/") {
                let cur = params
                    .get(p)
                    .ok_or_else(|| Error::data(&src, format!("unknown parameter `{p}`")))?;
                if cur.shape() != t.shape() {
                    return Err(Error::data(&src, format!("`{p}` has shape {:?}, expected {:?}", t.shape(), cur.shape())));
                }
                params.set_values(p, t.into_values())?;
                seen += 1;
            } else if let Some(p) = name.strip_prefix("adam.m/") {
                opt.first_moment.insert(p.to_string(), t.into_values());
            } else if let Some(p) = name.strip_prefix("adam.v/") {
                opt.second_moment.insert(p.to_string(), t.into_values());
            } else if name == "meta/step" {
                step = Some(t.values()[0] as u64);
            } else if name == "meta/teacher_crc" {
                crc = Some(t.values()[0] as u32);
            } else {
                return Err(Error::data(&src, format!("unexpected record `{name}`")));
            }
        }
        if seen != params.len() {
            return Err(Error::data(&src, format!("holds {seen} of {} parameters", params.len())));
        }
        if crc != Some(self.teacher_fingerprint) {
            return Err(Error::data(&src, "written against a different teacher"));
        }
        opt.step = step.ok_or_else(|| Error::data(&src, "missing `meta/step`"))?;
        if opt.step > self.cfg.train.total_steps {
            return Err(Error::data(&src, format!("step {} is past total_steps", opt.step)));
        }
        self.params = params;
        self.opt_state = opt;
        self.last_good = Some(path.to_path_buf());
        Ok(())
    }

    /// Runs the remaining steps, streaming the log and writing checkpoints.
    /// A resumed run keeps the log lines up to its starting step.
    pub fn run(&mut self, out: &TrainOutput) -> Result<Vec<StepRecord>> {
        fs::create_dir_all(out.dir.join("checkpoints")).map_err(|e| Error::io(&out.dir, e))?;
        let log_path = out.log_path();
        let start = self.step();
        let mut kept = String::new();
        if start > 0 {
            if let Ok(text) = fs::read_to_string(&log_path) {
                for line in text.lines() {
                    if let Ok(r) = serde_json::from_str::<StepRecord>(line) {
                        if r.step <= start {
                            kept.push_str(line);
                            kept.push('\n');
                        }
                    }
                }
            }
        }
        crate::io::write_atomic(&log_path, kept.as_bytes())?;
        let mut log = fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let every = self.cfg.train.checkpoint_every;
        let mut records = Vec::new();
        while self.step() < self.cfg.train.total_steps {
            let rec = self.train_step()?;
            let line = serde_json::to_string(&rec).expect("plain record serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            if rec.step % 100 == 0 {
                log::info!(
                    "step {}: distill {:.4} enh {:.4} total {:.4} lr {:.2e}",
                    rec.step,
                    rec.distill,
                    rec.enh,
                    rec.total,
                    rec.lr
                );
            }
            if every > 0 && rec.step % every == 0 {
                let p = out.checkpoint_path(rec.step);
                self.save_state(&p)?;
                self.last_good = Some(p);
            }
            records.push(rec);
        }
        self.save_state(&out.state_path())?;
        checkpoint::save_store(&out.student_path(), &self.student_params(), checkpoint::DType::F32)?;
        if self.head.is_some() {
            checkpoint::save_store(&out.head_path(), &self.params.subset(&format!("{ENH_PREFIX}.")), checkpoint::DType::F32)?;
        }
        Ok(records)
    }
}
