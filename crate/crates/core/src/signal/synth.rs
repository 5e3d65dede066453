//! Synthetic vowel-sequence "keywords" spoken by parametric speakers.
//!
//! A clip is a leading silence, three vowels and a trailing silence. Voiced
//! segments are a sum of harmonics of the speaker's f0 with a −12 dB/octave
//! tilt, shaped by resonances at the vowel's formants (the speaker's neutral
//! formants times per-vowel ratios). The keyword fixes the vowel sequence and
//! an f0 contour.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng;

/// Samples per 20 ms frame at 16 kHz.
pub const FRAME_SAMPLES: usize = 320;

pub const NUM_VOWELS: usize = 5;
pub const NUM_KEYWORDS: usize = 8;
/// Silence plus one class per vowel.
pub const NUM_FRAME_CLASSES: usize = NUM_VOWELS + 1;

const PEAK: f64 = 0.5;
const ASPIRATION: f64 = 0.004;

/// Formant ratios relative to a neutral (500, 1500, 2500) Hz tract, for
/// a, e, i, o, u.
const VOWEL_RATIOS: [[f64; 3]; NUM_VOWELS] = [
    [1.46, 0.73, 0.98],
    [1.06, 1.23, 0.99],
    [0.54, 1.53, 1.20],
    [1.14, 0.56, 0.96],
    [0.60, 0.58, 0.90],
];
const FORMANT_GAIN: [f64; 3] = [6.0, 4.0, 2.0];
const FORMANT_BW: [f64; 3] = [90.0, 120.0, 160.0];

/// Vowel sequence per keyword. No two keywords share a vowel multiset.
const KEYWORD_VOWELS: [[usize; 3]; NUM_KEYWORDS] = [
    [0, 2, 4],
    [1, 3, 0],
    [2, 2, 1],
    [4, 3, 3],
    [0, 0, 1],
    [3, 2, 4],
    [1, 4, 4],
    [0, 3, 2],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub f0_hz: f64,
    /// Neutral-vowel formants F1..F3 in Hz.
    pub formants: [f64; 3],
}

impl SpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(70.0..=300.0).contains(&self.f0_hz) {
            return Err(Error::config("speaker.f0_hz", format!("{} Hz is outside [70, 300]", self.f0_hz)));
        }
        let [a, b, c] = self.formants;
        if !(a > 0.0 && a < b && b < c && c < 7000.0) {
            return Err(Error::config(
                "speaker.formants",
                format!("{:?} must be increasing and below 7 kHz", self.formants),
            ));
        }
        Ok(())
    }
}

/// f0 multiplier at normalized time `tau` in [0, 1].
fn contour(keyword: usize, tau: f64) -> f64 {
    match keyword {
        0 => 1.0,
        1 => 0.9 + 0.2 * tau,
        2 => 1.1 - 0.2 * tau,
        3 => 1.0 + 0.12 * (PI * tau).sin(),
        4 => 1.0 - 0.12 * (PI * tau).sin(),
        5 => 0.85 + 0.3 * tau,
        6 => 1.15 - 0.3 * tau,
        _ => 1.0 + 0.08 * (4.0 * PI * tau).sin(),
    }
}

/// Relative loudness of each vowel slot.
fn energy(keyword: usize, slot: usize) -> f64 {
    const E: [[f64; 3]; NUM_KEYWORDS] = [
        [1.0, 1.0, 1.0],
        [1.0, 0.7, 0.9],
        [0.8, 1.0, 0.7],
        [0.7, 0.9, 1.0],
        [1.0, 0.8, 0.6],
        [0.6, 1.0, 0.8],
        [0.9, 0.6, 1.0],
        [1.0, 0.9, 0.7],
    ];
    E[keyword][slot]
}

fn envelope(freq: f64, formants: &[f64; 3]) -> f64 {
    1.0 + (0..3)
        .map(|k| FORMANT_GAIN[k] / (1.0 + ((freq - formants[k]) / FORMANT_BW[k]).powi(2)))
        .sum::<f64>()
}

/// Renders keyword `keyword` spoken by `speaker`, with one class label per
/// 20 ms frame (0 silence, `1 + v` for vowel `v`).
pub fn synth_speech(speaker: &SpeakerSpec, keyword: usize, duration_s: f64, seed: u64) -> Result<(AudioClip, Vec<usize>)> {
    speaker.validate()?;
    if !(duration_s >= 0.2 && duration_s.is_finite()) {
        return Err(Error::config("synth.duration_s", format!("{duration_s} s is below 0.2 s")));
    }
    if keyword >= NUM_KEYWORDS {
        return Err(Error::config(
            "synth.keyword",
            format!("keyword {keyword} is outside 0..{NUM_KEYWORDS}"),
        ));
    }
    let fs = f64::from(DEFAULT_SAMPLE_RATE);
    let n = (duration_s * fs).round() as usize;
    let mut r = rng::stream(seed, "synth_speech");

    // Segment boundaries: 10% silence at each end, three equal vowels,
    // each boundary jittered by up to 3% of the clip.
    let mut bounds = [0.10, 0.10 + 0.8 / 3.0, 0.10 + 1.6 / 3.0, 0.90];
    for b in bounds.iter_mut() {
        *b += r.random_range(-0.03..0.03);
    }
    let bounds: Vec<usize> = bounds.iter().map(|b| (b * n as f64) as usize).collect();
    let vowels = KEYWORD_VOWELS[keyword];
    let ramp = (0.01 * fs) as usize;

    let mut x = vec![0.0; n];
    let mut phase = 0.0;
    let max_h = ((0.49 * fs) / (speaker.f0_hz * 1.2)).floor() as usize;
    let mut amps = vec![0.0; max_h + 1];
    for (i, xi) in x.iter_mut().enumerate() {
        let f0 = speaker.f0_hz * contour(keyword, i as f64 / n as f64);
        phase += 2.0 * PI * f0 / fs;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let Some(slot) = (0..3).find(|&s| i >= bounds[s] && i < bounds[s + 1]) else {
            continue;
        };
        let (start, end) = (bounds[slot], bounds[slot + 1]);
        let gate = ((i - start) as f64 / ramp as f64).min((end - i) as f64 / ramp as f64).min(1.0);
        let gate = 0.5 - 0.5 * (PI * gate).cos();
        let ratios = VOWEL_RATIOS[vowels[slot]];
        let formants = [
            speaker.formants[0] * ratios[0],
            speaker.formants[1] * ratios[1],
            speaker.formants[2] * ratios[2],
        ];
        for (h, a) in amps.iter_mut().enumerate().skip(1) {
            let fh = h as f64 * f0;
            *a = if fh < 0.49 * fs {
                envelope(fh, &formants) / (h * h) as f64
            } else {
                0.0
            };
        }
        // cos(hφ) by the Chebyshev recurrence.
        let c1 = phase.cos();
        let (mut prev, mut cur) = (1.0, c1);
        let mut acc = amps[1] * c1;
        for a in amps.iter().skip(2) {
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
            acc += a * cur;
        }
        *xi = gate * energy(keyword, slot) * acc;
    }
    let voiced_peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for xi in x.iter_mut() {
        *xi = *xi / voiced_peak + ASPIRATION * r.random_range(-1.0..1.0);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    x.iter_mut().for_each(|v| *v *= PEAK / peak);

    let frames = n / FRAME_SAMPLES;
    let labels = (0..frames)
        .map(|f| {
            let c = f * FRAME_SAMPLES + FRAME_SAMPLES / 2;
            (0..3)
                .find(|&s| c >= bounds[s] && c < bounds[s + 1])
                .map_or(0, |s| 1 + vowels[s])
        })
        .collect();
    Ok((AudioClip::new(x, DEFAULT_SAMPLE_RATE)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPK: SpeakerSpec = SpeakerSpec {
        f0_hz: 120.0,
        formants: [500.0, 1500.0, 2500.0],
    };

    #[test]
    fn one_second_has_fifty_frames() {
        let (c, l) = synth_speech(&SPK, 3, 1.0, 1).unwrap();
        assert_eq!(c.len(), 16000);
        assert_eq!(l.len(), 50);
        assert!((c.peak() - 0.5).abs() < 1e-12);
        assert_eq!(l[0], 0);
        assert_eq!(l[49], 0);
        assert!(l.iter().any(|&v| v > 0));
    }

    #[test]
    fn invalid_inputs_are_config_errors() {
        let low = SpeakerSpec { f0_hz: 50.0, ..SPK };
        assert!(matches!(synth_speech(&low, 0, 1.0, 0), Err(Error::Config { .. })));
        assert!(matches!(synth_speech(&SPK, 0, 0.1, 0), Err(Error::Config { .. })));
        assert!(matches!(synth_speech(&SPK, 8, 1.0, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn keyword_multisets_are_distinct() {
        let mut sets: Vec<[usize; 3]> = KEYWORD_VOWELS
            .iter()
            .map(|v| {
                let mut s = *v;
                s.sort();
                s
            })
            .collect();
        sets.sort();
        sets.dedup();
        assert_eq!(sets.len(), NUM_KEYWORDS);
    }
}
