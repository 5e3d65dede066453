//! End-to-end runs over one configuration: corpus, teacher, students,
//! evaluation and the enhancement-head ablation sweep.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Task};
use crate::data::{noise_pool, rir_pool, Corpus, Item, Split};
use crate::distill::{pretrain_teacher, DistillConfig, EnhLoss, PretrainReport, TrainOutput, Trainer};
use crate::error::{Error, Result};
use crate::eval::{
    disentanglement_probe, evaluate_scenarios, fit_probes, Disentanglement, RobustnessReport, ScenarioSpec, TestSet, Upstream,
};
use crate::models::{EncoderConfig, EnhancementKind, Teacher};
use crate::par::Parallelism;
use crate::signal::Action;
use crate::tensor::ParamStore;

/// A configuration with its train and test items.
pub struct Bench {
    pub cfg: RunConfig,
    pub train: Vec<Item>,
    pub test: Vec<Item>,
    pub mode: Parallelism,
    utterances: OnceLock<Vec<Item>>,
}

impl Bench {
    /// Renders both splits from `cfg.data`.
    pub fn synthesize(cfg: RunConfig, mode: Parallelism) -> Result<Self> {
        cfg.validate()?;
        let train = Corpus::generate(&cfg.data, Split::Train, mode)?.items;
        let test = Corpus::generate(&cfg.data, Split::Test, mode)?.items;
        Ok(Self::from_items(cfg, train, test, mode))
    }

    pub fn from_items(cfg: RunConfig, train: Vec<Item>, test: Vec<Item>, mode: Parallelism) -> Self {
        Self {
            cfg,
            train,
            test,
            mode,
            utterances: OnceLock::new(),
        }
    }

    pub fn pretrain_teacher(&self) -> Result<(Teacher, PretrainReport)> {
        pretrain_teacher(&self.cfg.teacher, &self.train, &self.test, self.mode)
    }

    /// The configured distillation run.
    pub fn distill_config(&self) -> DistillConfig {
        self.cfg.distill_config()
    }

    pub fn trainer(&self, cfg: DistillConfig, teacher: &Teacher) -> Result<Trainer> {
        Trainer::new(
            cfg,
            &self.cfg.student,
            teacher,
            self.train.iter().map(|i| i.clip.clone()).collect(),
            noise_pool(&self.cfg.data, Split::Train)?,
            rir_pool(&self.cfg.data, Split::Train)?,
            self.mode,
        )
    }

    pub fn upstream(&self, name: &str, encoder: EncoderConfig, store: &ParamStore) -> Result<Upstream> {
        let e = &self.cfg.enhancement;
        Upstream::from_store(name, encoder, store, &e.mask, &e.waveform)
    }

    pub fn teacher_upstream(&self, teacher: &Teacher) -> Result<Upstream> {
        self.upstream("teacher", teacher.encoder.cfg.clone(), &teacher.params)
    }

    pub fn student_upstream(&self, name: &str, trainer: &Trainer) -> Result<Upstream> {
        self.upstream(name, self.cfg.student.encoder.clone(), &trainer.params)
    }

    pub fn test_set<'a>(&self, items: &'a [Item]) -> Result<TestSet<'a>> {
        Ok(TestSet {
            items,
            noises: noise_pool(&self.cfg.data, Split::Test)?,
            rirs: rir_pool(&self.cfg.data, Split::Test)?,
            seed: self.cfg.eval.seed,
        })
    }

    /// Configured tasks; se is dropped with a warning when `up` has no head.
    pub fn tasks_for(&self, up: &Upstream) -> Vec<Task> {
        let mut tasks = self.cfg.eval.tasks.clone();
        if up.head.is_none() && tasks.contains(&Task::Se) {
            log::warn!("`{}` has no enhancement head; skipping se", up.name);
            tasks.retain(|t| *t != Task::Se);
        }
        tasks
    }

    /// Probes fitted on clean train items, then every configured scenario.
    pub fn evaluate(&self, up: &Upstream) -> Result<RobustnessReport> {
        self.evaluate_on(up, &self.tasks_for(up), &self.cfg.eval.scenarios)
    }

    pub fn evaluate_on(&self, up: &Upstream, tasks: &[Task], scenarios: &[ScenarioSpec]) -> Result<RobustnessReport> {
        let probes = fit_probes(up, &self.train, tasks, &self.cfg.eval.probe, self.mode)?;
        evaluate_scenarios(up, &probes, &self.test_set(&self.test)?, scenarios, self.mode)
    }

    /// Multi-keyword utterances from the test-side noise and rooms.
    pub fn utterances(&self) -> Result<&[Item]> {
        if let Some(u) = self.utterances.get() {
            return Ok(u);
        }
        let items = Corpus::utterances(&self.cfg.data, self.cfg.eval.utterances_per_speaker, self.mode)?.items;
        Ok(self.utterances.get_or_init(|| items))
    }

    pub fn disentanglement(&self, up: &Upstream, spec: &ScenarioSpec) -> Result<Disentanglement> {
        disentanglement_probe(up, &self.test_set(self.utterances()?)?, spec, self.mode)
    }
}

/// The scenario the ablation compares on.
pub fn ablation_scenario() -> ScenarioSpec {
    ScenarioSpec::new(Action::Noise, ScenarioSpec::TEST_SNR_DB)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRun {
    pub head: EnhancementKind,
    pub loss: EnhLoss,
    pub final_distill: f64,
    pub final_enh: f64,
    pub si_sdr: f64,
    pub si_sdr_noisy: f64,
    pub si_sdr_delta: f64,
    pub kws_accuracy: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationReport {
    pub steps: u64,
    pub scenario: String,
    pub runs: Vec<AblationRun>,
    /// Configuration with the largest mean SI-SDR gain.
    pub best: (EnhancementKind, EnhLoss),
    /// The configuration the comparison is read against: mask head with L1.
    pub reference: (EnhancementKind, EnhLoss),
}

impl AblationReport {
    /// Every head and loss pair exactly once with finite metrics.
    pub fn validate(&self) -> Result<()> {
        for head in [EnhancementKind::Waveform, EnhancementKind::Mask] {
            for loss in EnhLoss::ALL {
                let n = self.runs.iter().filter(|r| r.head == head && r.loss == loss).count();
                if n != 1 {
                    return Err(Error::metric(format!("ablation has {n} runs for {head:?}/{}", loss.as_str())));
                }
            }
        }
        if self.runs.len() != 6 {
            return Err(Error::metric(format!("ablation has {} runs, expected 6", self.runs.len())));
        }
        let finite = self.runs.iter().all(|r| {
            [r.final_distill, r.final_enh, r.si_sdr, r.si_sdr_noisy, r.si_sdr_delta, r.kws_accuracy]
                .iter()
                .all(|v| v.is_finite())
        });
        if !finite {
            return Err(Error::metric("ablation report holds non-finite metrics"));
        }
        Ok(())
    }
}

fn metric(r: &RobustnessReport, tag: &str, task: &str, name: &str) -> Result<f64> {
    r.scenarios
        .get(tag)
        .and_then(|t| t.get(task))
        .and_then(|m| m.get(name))
        .copied()
        .ok_or_else(|| Error::metric(format!("report lacks {tag}/{task}/{name}")))
}

/// Trains `{waveform, mask} × {l1, l2, mr_stft}` students for `steps` steps
/// each from the configured robust run and compares them on noisy test
/// clips. Each run writes its artefacts under `out/{head}-{loss}/`.
pub fn ablation(bench: &Bench, teacher: &Teacher, steps: u64, out: &Path) -> Result<AblationReport> {
    let scenario = ablation_scenario();
    let mut runs = Vec::new();
    for head in [EnhancementKind::Waveform, EnhancementKind::Mask] {
        for loss in EnhLoss::ALL {
            let mut cfg = bench.distill_config();
            cfg.distill.contaminate = true;
            cfg.enhancement.kind = head;
            cfg.enhancement.loss = loss;
            cfg.train.total_steps = steps;
            cfg.train.warmup_steps = None;
            cfg.train.checkpoint_every = 0;
            let name = format!("{}-{}", if head == EnhancementKind::Mask { "mask" } else { "waveform" }, loss.as_str());
            log::info!("ablation run {name}");
            let t0 = Instant::now();
            let mut trainer = bench.trainer(cfg, teacher)?;
            let records = trainer.run(&TrainOutput::new(out.join(&name)))?;
            let wall_s = t0.elapsed().as_secs_f64();
            let last = records.last().ok_or_else(|| Error::training(format!("ablation run {name} took no steps")))?;
            let up = bench.student_upstream(&name, &trainer)?;
            let report = bench.evaluate_on(&up, &[Task::Kws, Task::Se], &[scenario])?;
            let tag = scenario.tag();
            runs.push(AblationRun {
                head,
                loss,
                final_distill: last.distill,
                final_enh: last.enh,
                si_sdr: metric(&report, tag, "se", "si_sdr")?,
                si_sdr_noisy: metric(&report, tag, "se", "si_sdr_noisy")?,
                si_sdr_delta: metric(&report, tag, "se", "si_sdr_delta")?,
                kws_accuracy: metric(&report, tag, "kws", "accuracy")?,
                wall_s,
            });
        }
    }
    let best = runs
        .iter()
        .fold(None::<&AblationRun>, |b, r| match b {
            Some(b) if b.si_sdr_delta >= r.si_sdr_delta => Some(b),
            _ => Some(r),
        })
        .map(|r| (r.head, r.loss))
        .expect("six runs");
    let report = AblationReport {
        steps,
        scenario: scenario.tag().to_string(),
        runs,
        best,
        reference: (EnhancementKind::Mask, EnhLoss::L1),
    };
    report.validate()?;
    crate::io::write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}
