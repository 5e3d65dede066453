//! The benchmark score: per-metric min-max normalisation against base and
//! SOTA anchors, averaged per task, then across tasks, times 1000.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub task: String,
    pub metric: String,
    pub base: f64,
    pub sota: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub anchors: BTreeMap<(String, String), (f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    /// The score left [0, 1000]: the model beat SOTA or trailed base.
    pub out_of_range: bool,
}

impl ScoreTable {
    pub fn new(rows: Vec<ScoreRow>, anchors: Vec<Anchor>) -> Self {
        Self {
            rows,
            anchors: anchors.into_iter().map(|a| ((a.task, a.metric), (a.base, a.sota))).collect(),
        }
    }

    pub fn from_csv(table: &Path, anchors: &Path) -> Result<Self> {
        Ok(Self::new(read_csv(table)?, read_csv(anchors)?))
    }

    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.model.clone()).collect();
        m.sort();
        m.dedup();
        m
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let src = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(&src, e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::data(&src, format!("row {}: {e}", i + 1))))
        .collect()
}

/// Score of `upstream`. Lower-is-better metrics are negated together with
/// their anchors before normalising.
pub fn score(table: &ScoreTable, upstream: &str) -> Result<Score> {
    let mut tasks: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r.model == upstream) {
        let &(base, sota) = table
            .anchors
            .get(&(r.task.clone(), r.metric.clone()))
            .ok_or_else(|| Error::metric(format!("no anchors for {}/{}", r.task, r.metric)))?;
        if base == sota {
            return Err(Error::metric(format!(
                "degenerate anchors for {}/{}: base equals SOTA ({base})",
                r.task, r.metric
            )));
        }
        let sign = if r.higher_is_better { 1.0 } else { -1.0 };
        let (v, b, s) = (sign * r.value, sign * base, sign * sota);
        tasks.entry(r.task.as_str()).or_default().push((v - b) / (s - b));
    }
    if tasks.is_empty() {
        return Err(Error::metric(format!("no rows for upstream `{upstream}`")));
    }
    let per_task: f64 = tasks.values().map(|f| f.iter().sum::<f64>() / f.len() as f64).sum();
    let value = 1000.0 * (per_task / tasks.len() as f64);
    Ok(Score {
        value,
        out_of_range: !(0.0..=1000.0).contains(&value),
    })
}
