//! Scenario evaluation, downstream probes, the benchmark score and the
//! speaker-separation analysis.

pub mod cluster;
pub mod metrics;
pub mod probe;
pub mod scenario;
pub mod score;

pub use cluster::{pca_2d, silhouette};
pub use metrics::{accuracy, eer};
pub use probe::{asv_pairs, asv_trials, LinearProbe, ProbeConfig, Upstream};
pub use scenario::{
    disentanglement_probe, evaluate_scenarios, run_scenario, Breakdowns, Disentanglement, Probes, RobustnessReport,
    ScenarioSpec, TestSet,
};
pub use score::{score, Anchor, Score, ScoreRow, ScoreTable};

use crate::config::Task;
use crate::data::Item;
use crate::error::{Error, Result};
use crate::par::{try_map_indexed_with, Parallelism};

/// Mean-pooled final hidden state of every clean item.
pub fn pooled_features(upstream: &Upstream, items: &[Item], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
    try_map_indexed_with(mode, items.len(), |i| Ok(upstream.analyze(items[i].clip.samples(), false)?.pooled))
}

/// Trains the requested probes on clean `train` items.
pub fn fit_probes(upstream: &Upstream, train: &[Item], tasks: &[Task], cfg: &ProbeConfig, mode: Parallelism) -> Result<Probes> {
    let mut probes = Probes::default();
    let needs_features = tasks.iter().any(|t| matches!(t, Task::Kws | Task::Sid));
    let feats = if needs_features { pooled_features(upstream, train, mode)? } else { Vec::new() };
    for task in tasks {
        match task {
            Task::Kws => {
                let labels: Vec<usize> = train.iter().map(|i| i.keyword).collect();
                probes.kws = Some(LinearProbe::train(&feats, &labels, crate::signal::synth::NUM_KEYWORDS, cfg)?);
            }
            Task::Sid => {
                let labels: Vec<usize> = train.iter().map(|i| i.speaker).collect();
                let classes = labels.iter().max().map_or(0, |m| m + 1);
                probes.sid = Some(LinearProbe::train(&feats, &labels, classes, cfg)?);
            }
            Task::Asv => probes.asv = true,
            Task::Se => {
                if upstream.head.is_none() {
                    return Err(Error::config(
                        "eval.tasks",
                        format!("se needs an enhancement head and `{}` has none", upstream.name),
                    ));
                }
                probes.se = true;
            }
        }
    }
    Ok(probes)
}
