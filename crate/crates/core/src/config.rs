//! The run configuration: one JSON document with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::distill::{DistillConfig, DistillSection, EnhancementSection, StudentSection, TeacherSection, TrainSection};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, ScenarioSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Kws,
    Sid,
    Asv,
    Se,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Kws, Task::Sid, Task::Asv, Task::Se];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Kws => "kws",
            Task::Sid => "sid",
            Task::Asv => "asv",
            Task::Se => "se",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub tasks: Vec<Task>,
    pub scenarios: Vec<ScenarioSpec>,
    /// Fixed seed of the test-set deterioration.
    pub seed: u64,
    pub probe: ProbeConfig,
    /// Multi-keyword utterances per speaker for the speaker-separation probe.
    pub utterances_per_speaker: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tasks: Task::ALL.to_vec(),
            scenarios: ScenarioSpec::standard(),
            seed: 2024,
            probe: ProbeConfig::default(),
            utterances_per_speaker: 12,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every section seed with one derived from it.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub teacher: TeacherSection,
    pub student: StudentSection,
    pub distill: DistillSection,
    pub enhancement: EnhancementSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses JSON, naming the offending path on failure.
    pub fn from_json(source: &str, text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() {
                Error::format(source, inner.to_string())
            } else {
                Error::config(if path == "." { source.to_string() } else { path }, inner.to_string())
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&path.display().to_string(), &text)
    }

    /// Applies the global seed to every section and clears it.
    pub fn with_global_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.data.seed = rng::derive_named(s, "data");
            self.data.speaker_seed = rng::derive_named(s, "speakers");
            self.teacher.seed = rng::derive_named(s, "teacher");
            self.train.seed = rng::derive_named(s, "train");
            self.eval.seed = rng::derive_named(s, "eval");
            self.eval.probe.seed = rng::derive_named(s, "probe");
        }
        self.seed = None;
        self
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            distill: self.distill.clone(),
            enhancement: self.enhancement.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.teacher.encoder.validate("teacher.encoder")?;
        self.student.encoder.validate("student.encoder")?;
        self.distill_config().validate(self.teacher.encoder.num_layers)?;
        if self.eval.tasks.is_empty() {
            return Err(Error::config("eval.tasks", "no tasks"));
        }
        if self.eval.scenarios.is_empty() {
            return Err(Error::config("eval.scenarios", "no scenarios"));
        }
        for (i, s) in self.eval.scenarios.iter().enumerate() {
            let [lo, hi] = s.snr_range_db;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("eval.scenarios[{i}].snr_range_db"), format!("[{lo}, {hi}] is not a range")));
            }
        }
        Ok(())
    }

    /// Every default written out; feeding it back reproduces the run.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train = self.distill_config().resolved().train;
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
