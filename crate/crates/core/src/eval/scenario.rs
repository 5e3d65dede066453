//! Scenario sweeps over a fixed test set and the robustness report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::probe::{asv_pairs, asv_trials, LinearProbe, Upstream};
use super::score::{score, Anchor, ScoreRow, ScoreTable};
use super::{cluster, eer};
use crate::data::Item;
use crate::error::{Error, Result};
use crate::par::{try_map_indexed_with, Parallelism};
use crate::rng;
use crate::signal::{contaminate, si_sdr, Action, NoiseKind, NoiseSource, NoisyView, Rir, RoomClass, TrainSpec};

/// One evaluation condition and its SNR range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub condition: Action,
    pub snr_range_db: [f64; 2],
}

impl ScenarioSpec {
    pub const TEST_SNR_DB: [f64; 2] = [-5.0, 20.0];

    pub fn new(condition: Action, snr_range_db: [f64; 2]) -> Self {
        Self {
            condition,
            snr_range_db,
        }
    }

    /// c, n, r and n+r with test SNRs in [−5, 20] dB.
    pub fn standard() -> Vec<Self> {
        Action::ALL.into_iter().map(|a| Self::new(a, Self::TEST_SNR_DB)).collect()
    }

    pub fn tag(&self) -> &'static str {
        self.condition.scenario_tag()
    }
}

/// Test items plus the unseen noise and RIR pools and the fixed seed that
/// deteriorates them.
#[derive(Debug, Clone)]
pub struct TestSet<'a> {
    pub items: &'a [Item],
    pub noises: Vec<NoiseSource>,
    pub rirs: Vec<Rir>,
    pub seed: u64,
}

impl TestSet<'_> {
    pub fn spec_for(&self, scenario: &ScenarioSpec) -> Result<TrainSpec> {
        let [lo, hi] = scenario.snr_range_db;
        let spec = TrainSpec::scenario(scenario.condition, self.noises.clone(), self.rirs.clone(), (lo, hi));
        spec.validate()?;
        Ok(spec)
    }

    /// Item `i` deteriorated under `spec`, as every evaluation sees it.
    pub fn view(&self, spec: &TrainSpec, i: usize) -> Result<NoisyView> {
        contaminate(&self.items[i].clip, spec, rng::derive(self.seed, &[i as u64]))
    }
}

/// Trained probes; tasks without a probe are skipped.
#[derive(Debug, Clone, Default)]
pub struct Probes {
    pub kws: Option<LinearProbe>,
    pub sid: Option<LinearProbe>,
    pub asv: bool,
    pub se: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemEval {
    pub pooled: Vec<f64>,
    pub noise_kind: Option<NoiseKind>,
    pub room_class: Option<RoomClass>,
    /// SI-SDR of the enhanced and of the degraded input against the clean clip.
    pub si_sdr: Option<(f64, f64)>,
}

/// Every test item under one condition. Item `i` uses the seed
/// `derive(seed, [i])` in every scenario, so conditions share their draws.
pub fn run_scenario(upstream: &Upstream, test: &TestSet<'_>, spec: &ScenarioSpec, enhance: bool, mode: Parallelism) -> Result<Vec<ItemEval>> {
    let tspec = test.spec_for(spec)?;
    let enhance = enhance && spec.condition != Action::None;
    try_map_indexed_with(mode, test.items.len(), |i| {
        let clean = &test.items[i].clip;
        let view = test.view(&tspec, i)?;
        let a = upstream.analyze(view.clip.samples(), enhance)?;
        let si = match a.enhanced {
            Some(est) => {
                let n = est.len();
                let reference: Vec<f64> = clean.samples()[..n].iter().map(|s| s * view.renorm_scale).collect();
                Some((si_sdr(&est, &reference)?, si_sdr(&view.clip.samples()[..n], &reference)?))
            }
            None => None,
        };
        Ok(ItemEval {
            pooled: a.pooled,
            noise_kind: view.noise_kind,
            room_class: view.room_class,
            si_sdr: si,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub scenario: String,
    pub group: String,
    pub count: usize,
    pub kws_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdowns {
    pub noise_type: Vec<BreakdownRow>,
    pub room_class: Vec<BreakdownRow>,
}

pub type MetricMap = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model: String,
    /// scenario tag → task → metric → value.
    pub scenarios: BTreeMap<String, MetricMap>,
    pub breakdowns: Breakdowns,
    pub score_per_group: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Anchors: chance and perfect accuracy, EER 0.5 and 0, SI-SDR 0 and 20 dB.
fn anchors(num_keywords: usize, num_speakers: usize) -> Vec<Anchor> {
    let a = |task: &str, metric: &str, base: f64, sota: f64| Anchor {
        task: task.into(),
        metric: metric.into(),
        base,
        sota,
    };
    vec![
        a("kws", "accuracy", 1.0 / num_keywords as f64, 1.0),
        a("sid", "accuracy", 1.0 / num_speakers as f64, 1.0),
        a("asv", "eer", 0.5, 0.0),
        a("se", "si_sdr", 0.0, 20.0),
    ]
}

fn group_rows<K: Ord + Copy>(
    tag: &str,
    evals: &[ItemEval],
    preds: &[usize],
    labels: &[usize],
    key: impl Fn(&ItemEval) -> Option<K>,
    name: impl Fn(K) -> String,
) -> Result<Vec<BreakdownRow>> {
    let mut groups: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for (i, e) in evals.iter().enumerate() {
        let k = key(e).ok_or_else(|| Error::State(format!("item {i} of scenario {tag} lacks its breakdown tag")))?;
        let g = groups.entry(k).or_default();
        g.0 += 1;
        g.1 += usize::from(preds[i] == labels[i]);
    }
    Ok(groups
        .into_iter()
        .map(|(k, (count, hits))| BreakdownRow {
            scenario: tag.to_string(),
            group: name(k),
            count,
            kws_accuracy: hits as f64 / count as f64,
        })
        .collect())
}

/// Metrics for every scenario, breakdowns by noise family and room class,
/// and the score per scenario.
pub fn evaluate_scenarios(
    upstream: &Upstream,
    probes: &Probes,
    test: &TestSet<'_>,
    scenarios: &[ScenarioSpec],
    mode: Parallelism,
) -> Result<RobustnessReport> {
    if probes.kws.is_none() && probes.sid.is_none() && !probes.asv && !probes.se {
        return Err(Error::config("eval.tasks", "no probe to evaluate"));
    }
    if probes.se && upstream.head.is_none() {
        return Err(Error::config("eval.tasks", format!("`{}` has no enhancement head for se", upstream.name)));
    }
    if scenarios.is_empty() {
        return Err(Error::config("eval.scenarios", "no scenarios"));
    }
    let kws_labels: Vec<usize> = test.items.iter().map(|i| i.keyword).collect();
    let spk_labels: Vec<usize> = test.items.iter().map(|i| i.speaker).collect();
    let pairs = if probes.asv { Some(asv_pairs(&spk_labels, rng::derive_named(test.seed, "asv"))?) } else { None };
    let num_speakers = spk_labels.iter().max().map_or(1, |m| m + 1);
    let anchor_list = anchors(crate::signal::synth::NUM_KEYWORDS, num_speakers);

    let mut report = RobustnessReport {
        model: upstream.name.clone(),
        scenarios: BTreeMap::new(),
        breakdowns: Breakdowns::default(),
        score_per_group: BTreeMap::new(),
        flags: Vec::new(),
    };
    for spec in scenarios {
        let tag = spec.tag();
        if report.scenarios.contains_key(tag) {
            return Err(Error::config("eval.scenarios", format!("scenario {tag} listed twice")));
        }
        let evals = run_scenario(upstream, test, spec, probes.se, mode)?;
        let pooled: Vec<Vec<f64>> = evals.iter().map(|e| e.pooled.clone()).collect();
        let mut tasks: MetricMap = BTreeMap::new();
        let mut rows = Vec::new();
        let push = |tasks: &mut MetricMap, task: &str, metric: &str, v: f64| {
            tasks.entry(task.into()).or_default().insert(metric.into(), v);
        };
        if let Some(p) = &probes.kws {
            let preds = p.predict(&pooled)?;
            let acc = super::accuracy(&preds, &kws_labels)?;
            push(&mut tasks, "kws", "accuracy", acc);
            rows.push(("kws", "accuracy", acc, true));
            if spec.condition.has_noise() {
                let r = group_rows(tag, &evals, &preds, &kws_labels, |e| e.noise_kind, |k| k.as_str().to_string())?;
                report.breakdowns.noise_type.extend(r);
            }
            if spec.condition.has_reverb() {
                let r = group_rows(tag, &evals, &preds, &kws_labels, |e| e.room_class, |k| k.as_str().to_string())?;
                report.breakdowns.room_class.extend(r);
            }
        }
        if let Some(p) = &probes.sid {
            let acc = p.accuracy(&pooled, &spk_labels)?;
            push(&mut tasks, "sid", "accuracy", acc);
            rows.push(("sid", "accuracy", acc, true));
        }
        if let Some(pairs) = &pairs {
            let e = eer(&asv_trials(&pooled, pairs))?;
            push(&mut tasks, "asv", "eer", e);
            rows.push(("asv", "eer", e, false));
        }
        if probes.se && spec.condition != Action::None {
            let si: Vec<(f64, f64)> = evals.iter().filter_map(|e| e.si_sdr).collect();
            let n = si.len() as f64;
            let est = si.iter().map(|s| s.0).sum::<f64>() / n;
            let noisy = si.iter().map(|s| s.1).sum::<f64>() / n;
            let mut delta: Vec<f64> = si.iter().map(|s| s.0 - s.1).collect();
            delta.sort_by(f64::total_cmp);
            push(&mut tasks, "se", "si_sdr", est);
            push(&mut tasks, "se", "si_sdr_noisy", noisy);
            push(&mut tasks, "se", "si_sdr_delta", delta.iter().sum::<f64>() / n);
            push(&mut tasks, "se", "si_sdr_delta_p10", quantile(&delta, 0.1));
            push(&mut tasks, "se", "si_sdr_delta_p50", quantile(&delta, 0.5));
            push(&mut tasks, "se", "si_sdr_delta_p90", quantile(&delta, 0.9));
            rows.push(("se", "si_sdr", est, true));
            if spec.condition.has_reverb() {
                report
                    .flags
                    .push(format!("{tag}: enhancement is scored against the dry clip, so dereverberation is included"));
            }
        }
        let table = ScoreTable::new(
            rows.into_iter()
                .map(|(task, metric, value, hib)| ScoreRow {
                    model: upstream.name.clone(),
                    task: task.into(),
                    metric: metric.into(),
                    value,
                    higher_is_better: hib,
                })
                .collect(),
            anchor_list.clone(),
        );
        let s = score(&table, &upstream.name)?;
        if s.out_of_range {
            report.flags.push(format!("{tag}: score {:.1} lies outside [0, 1000]", s.value));
        }
        report.score_per_group.insert(tag.to_string(), s.value);
        report.scenarios.insert(tag.to_string(), tasks);
    }
    Ok(report)
}

impl RobustnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows `model,task,metric,scenario,value`; breakdown rows use the
    /// scenario `{tag}:{group}`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::format("report csv", e.to_string());
        w.write_record(["model", "task", "metric", "scenario", "value"]).map_err(err)?;
        for (tag, tasks) in &self.scenarios {
            for (task, metrics) in tasks {
                for (metric, v) in metrics {
                    w.write_record([&self.model, task, metric, tag, &v.to_string()]).map_err(err)?;
                }
            }
        }
        for r in self.breakdowns.noise_type.iter().chain(&self.breakdowns.room_class) {
            let scen = format!("{}:{}", r.scenario, r.group);
            w.write_record([self.model.as_str(), "kws", "accuracy", &scen, &r.kws_accuracy.to_string()]).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("report csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    pub fn write(&self, json: &Path, csv: Option<&Path>) -> Result<()> {
        crate::io::write_atomic(json, self.to_json().as_bytes())?;
        if let Some(p) = csv {
            crate::io::write_atomic(p, self.to_csv()?.as_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }
}

/// Speaker separation of pooled embeddings under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disentanglement {
    pub model: String,
    pub scenario: String,
    pub silhouette: f64,
    pub projection: Vec<[f64; 2]>,
    pub speakers: Vec<usize>,
}

pub fn disentanglement_probe(upstream: &Upstream, test: &TestSet<'_>, spec: &ScenarioSpec, mode: Parallelism) -> Result<Disentanglement> {
    let speakers: Vec<usize> = test.items.iter().map(|i| i.speaker).collect();
    let mut counts = BTreeMap::new();
    speakers.iter().for_each(|s| *counts.entry(*s).or_insert(0usize) += 1);
    if counts.len() < 2 {
        return Err(Error::metric("disentanglement needs at least two speakers"));
    }
    if counts.len() < 4 || counts.values().any(|c| *c < 10) {
        log::warn!("disentanglement on {} speakers; at least 4 with 10 clips each is recommended", counts.len());
    }
    let evals = run_scenario(upstream, test, spec, false, mode)?;
    let pooled: Vec<Vec<f64>> = evals.into_iter().map(|e| e.pooled).collect();
    Ok(Disentanglement {
        model: upstream.name.clone(),
        scenario: format!("{}@{:?}", spec.tag(), spec.snr_range_db),
        silhouette: cluster::silhouette(&pooled, &speakers)?,
        projection: cluster::pca_2d(&pooled)?,
        speakers,
    })
}
