//! Synthetic corpora, noise and RIR pools, and the CSV manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{try_map_indexed_with, Parallelism};
use crate::rng;
use crate::signal::contaminate::NoiseSource;
use crate::signal::synth::{NUM_FRAME_CLASSES, NUM_KEYWORDS};
use crate::signal::{synth_noise, synth_rir, synth_speech, wav, AudioClip, NoiseKind, Rir, SpeakerSpec, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_speakers: usize,
    pub train_clips_per_speaker: usize,
    pub test_clips_per_speaker: usize,
    pub duration_s: f64,
    /// Seed for speaker identities, shared by every split.
    pub speaker_seed: u64,
    /// Seed for clip rendering and for the noise and RIR pools.
    pub seed: u64,
    pub noises_per_kind: usize,
    pub noise_len_s: f64,
    pub train_rirs: usize,
    pub test_rirs: usize,
    pub rt60_range_s: [f64; 2],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_speakers: 8,
            train_clips_per_speaker: 32,
            test_clips_per_speaker: 16,
            duration_s: 0.5,
            speaker_seed: 11,
            seed: 23,
            noises_per_kind: 4,
            noise_len_s: 2.0,
            train_rirs: 12,
            test_rirs: 9,
            rt60_range_s: [0.1, 1.5],
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 {
            return Err(Error::config("data.num_speakers", "needs at least two speakers"));
        }
        if self.train_clips_per_speaker == 0 || self.test_clips_per_speaker == 0 {
            return Err(Error::config("data", "clip counts must be positive"));
        }
        if !(self.duration_s >= 0.2 && self.duration_s <= 5.0) {
            return Err(Error::config("data.duration_s", format!("{} s is outside [0.2, 5]", self.duration_s)));
        }
        let [lo, hi] = self.rt60_range_s;
        if !(0.05 <= lo && lo <= hi && hi <= 2.0) {
            return Err(Error::config("data.rt60_range_s", format!("[{lo}, {hi}] is outside [0.05, 2.0]")));
        }
        if self.noises_per_kind == 0 || self.noise_len_s <= 0.0 || self.train_rirs == 0 || self.test_rirs == 0 {
            return Err(Error::config("data", "noise and RIR pools must be non-empty"));
        }
        Ok(())
    }
}

const UTTERANCE_CODE: u64 = 3;
const LABELS_FILE: &str = "frame_labels.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub clip: AudioClip,
    pub frame_labels: Vec<usize>,
    pub speaker: usize,
    pub keyword: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerSpec>,
    pub items: Vec<Item>,
}

/// Speaker `i` of the population drawn from `seed`.
pub fn speakers(n: usize, seed: u64) -> Vec<SpeakerSpec> {
    (0..n)
        .map(|i| {
            let mut r = rng::from_seed(rng::derive(seed, &[0x5bea, i as u64]));
            let f0_hz = r.random_range(90.0..240.0);
            let scale = r.random_range(0.85..1.2);
            let jitter = |r: &mut rng::StreamRng| r.random_range(0.95..1.05);
            SpeakerSpec {
                f0_hz,
                formants: [
                    500.0 * scale * jitter(&mut r),
                    1500.0 * scale * jitter(&mut r),
                    2500.0 * scale * jitter(&mut r),
                ],
            }
        })
        .collect()
}

impl Corpus {
    pub fn generate(cfg: &DataConfig, split: Split, mode: Parallelism) -> Result<Self> {
        cfg.validate()?;
        let spk = speakers(cfg.num_speakers, cfg.speaker_seed);
        let per = match split {
            Split::Train => cfg.train_clips_per_speaker,
            Split::Test => cfg.test_clips_per_speaker,
        };
        let n = cfg.num_speakers * per;
        let items = try_map_indexed_with(mode, n, |idx| {
            let (s, j) = (idx / per, idx % per);
            let keyword = (j + s) % NUM_KEYWORDS;
            let seed = rng::derive(cfg.seed, &[split.code(), s as u64, j as u64]);
            let (clip, frame_labels) = synth_speech(&spk[s], keyword, cfg.duration_s, seed)?;
            Ok(Item {
                id: format!("{}-s{s:02}-{j:03}", split.as_str()),
                clip,
                frame_labels,
                speaker: s,
                keyword,
            })
        })?;
        Ok(Self { speakers: spk, items })
    }

    /// Longer clips for speaker analysis: each concatenates every keyword
    /// once in a seeded order, so pooled content is alike across clips and
    /// speaker traits dominate.
    pub fn utterances(cfg: &DataConfig, clips_per_speaker: usize, mode: Parallelism) -> Result<Self> {
        cfg.validate()?;
        let spk = speakers(cfg.num_speakers, cfg.speaker_seed);
        let n = cfg.num_speakers * clips_per_speaker;
        let items = try_map_indexed_with(mode, n, |idx| {
            let (s, j) = (idx / clips_per_speaker, idx % clips_per_speaker);
            let seed = rng::derive(cfg.seed, &[UTTERANCE_CODE, s as u64, j as u64]);
            let mut order: Vec<usize> = (0..NUM_KEYWORDS).collect();
            order.shuffle(&mut rng::stream(seed, "keyword-order"));
            let mut samples = Vec::new();
            let mut frame_labels = Vec::new();
            for (k, &kw) in order.iter().enumerate() {
                let (clip, labels) = synth_speech(&spk[s], kw, cfg.duration_s, rng::derive(seed, &[k as u64]))?;
                samples.extend_from_slice(clip.samples());
                frame_labels.extend(labels);
            }
            Ok(Item {
                id: format!("utt-s{s:02}-{j:03}"),
                clip: AudioClip::new(samples, DEFAULT_SAMPLE_RATE)?,
                frame_labels,
                speaker: s,
                keyword: order[0],
            })
        })?;
        Ok(Self { speakers: spk, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clips(&self) -> Vec<AudioClip> {
        self.items.iter().map(|i| i.clip.clone()).collect()
    }

    pub fn num_frame_classes(&self) -> usize {
        NUM_FRAME_CLASSES
    }
}

/// Noise pool for one split: `noises_per_kind` clips of every family.
pub fn noise_pool(cfg: &DataConfig, split: Split) -> Result<Vec<NoiseSource>> {
    let len = (cfg.noise_len_s * f64::from(DEFAULT_SAMPLE_RATE)) as usize;
    let mut out = Vec::new();
    for (k, kind) in NoiseKind::ALL.into_iter().enumerate() {
        for j in 0..cfg.noises_per_kind {
            let seed = rng::derive(cfg.seed, &[0x401e, split.code(), k as u64, j as u64]);
            out.push(NoiseSource {
                id: format!("{}-{}-{j}", split.as_str(), kind.as_str()),
                kind,
                clip: synth_noise(kind, len, seed)?,
            });
        }
    }
    Ok(out)
}

/// RIRs with rt60 evenly spaced over the configured range.
pub fn rir_pool(cfg: &DataConfig, split: Split) -> Result<Vec<Rir>> {
    let n = match split {
        Split::Train => cfg.train_rirs,
        Split::Test => cfg.test_rirs,
    };
    let [lo, hi] = cfg.rt60_range_s;
    (0..n)
        .map(|i| {
            let rt60 = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            synth_rir(rt60, DEFAULT_SAMPLE_RATE, rng::derive(cfg.seed, &[0x0411, split.code(), i as u64]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub speaker_id: usize,
    pub keyword_id: usize,
    pub duration_s: f64,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::data(path.display().to_string(), format!("row {}: {e}", i + 1))))
        .collect()
}

/// Writes every clip of `corpus` as WAV under `dir` plus `manifest.csv`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    let mut rows = Vec::with_capacity(corpus.len());
    for item in &corpus.items {
        let rel = format!("{}.wav", item.id);
        wav::write(&dir.join(&rel), &item.clip)?;
        rows.push(ManifestRow {
            path: rel,
            speaker_id: item.speaker,
            keyword_id: item.keyword,
            duration_s: item.clip.duration_s(),
        });
    }
    let labels: BTreeMap<&str, &[usize]> = corpus.items.iter().map(|i| (i.id.as_str(), i.frame_labels.as_slice())).collect();
    crate::io::write_json(&dir.join(LABELS_FILE), &labels)?;
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Loads the clips named by a manifest; paths are relative to its folder.
/// Frame labels come from the sibling labels file when there is one and
/// are empty otherwise.
pub fn load_manifest_items(manifest: &Path) -> Result<Vec<Item>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let labels_path = base.join(LABELS_FILE);
    let mut labels: BTreeMap<String, Vec<usize>> = if labels_path.exists() {
        let text = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(labels_path.display().to_string(), e.to_string()))?
    } else {
        BTreeMap::new()
    };
    read_manifest(manifest)?
        .into_iter()
        .map(|row| {
            if row.keyword_id >= NUM_KEYWORDS {
                return Err(Error::data(
                    manifest.display().to_string(),
                    format!("{}: keyword {} is not a known keyword", row.path, row.keyword_id),
                ));
            }
            let id = row.path.trim_end_matches(".wav").to_string();
            Ok(Item {
                frame_labels: labels.remove(&id).unwrap_or_default(),
                id,
                clip: wav::read(&base.join(&row.path))?,
                speaker: row.speaker_id,
                keyword: row.keyword_id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            num_speakers: 2,
            train_clips_per_speaker: 3,
            test_clips_per_speaker: 2,
            duration_s: 0.3,
            ..DataConfig::default()
        }
    }

    #[test]
    fn splits_share_speakers_but_not_clips() {
        let a = Corpus::generate(&small(), Split::Train, Parallelism::Sequential).unwrap();
        let b = Corpus::generate(&small(), Split::Test, Parallelism::Sequential).unwrap();
        assert_eq!(a.speakers, b.speakers);
        assert_eq!(a.len(), 6);
        assert_ne!(a.items[0].clip, b.items[0].clip);
    }

    #[test]
    fn pools_cover_every_family_and_room() {
        let cfg = DataConfig::default();
        let noises = noise_pool(&cfg, Split::Test).unwrap();
        assert_eq!(noises.len(), 12);
        let rirs = rir_pool(&cfg, Split::Test).unwrap();
        for class in crate::signal::RoomClass::ALL {
            assert!(rirs.iter().any(|r| r.room_class == class));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::generate(&small(), Split::Test, Parallelism::Sequential).unwrap();
        let m = write_corpus(dir.path(), &c).unwrap();
        let items = load_manifest_items(&m).unwrap();
        assert_eq!(items.len(), c.len());
        assert_eq!(items[1].speaker, c.items[1].speaker);
        assert_eq!(items[1].keyword, c.items[1].keyword);
        assert_eq!(items[1].frame_labels, c.items[1].frame_labels);
    }
}
