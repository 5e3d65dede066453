mod common;

use std::f64::consts::PI;

use common::{rng, uniform};
use proptest::prelude::*;
use rdkd::signal::contaminate::draw_plan;
use rdkd::signal::fft::rfft;
use rdkd::signal::rir::RoomClass;
use rdkd::signal::{
    apply_rir, contaminate, istft, mix_at_snr, mr_stft_loss_value, si_sdr, stft, synth_noise, synth_rir, synth_speech, Action,
    AudioClip, NoiseKind, NoiseSource, Rir, SpeakerSpec, StftConfig, TrainSpec, MRSTFT_RESOLUTIONS,
};

const FS: u32 = 16_000;

fn clip(v: Vec<f64>) -> AudioClip {
    AudioClip::new(v, FS).unwrap()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mix_hits_the_target_snr(seed in any::<u64>(), snr in -10.0f64..40.0, len in 64usize..2000) {
        let mut r = rng(seed);
        let s = uniform(&mut r, len, -0.3, 0.3);
        let n = uniform(&mut r, len, -0.3, 0.3);
        let m = mix_at_snr(&clip(s.clone()), &clip(n.clone()), snr).unwrap();
        let scaled: Vec<f64> = n.iter().map(|v| v * m.alpha).collect();
        let achieved = 10.0 * (power(&s) / power(&scaled)).log10();
        prop_assert!((achieved - snr).abs() < 1e-9, "{achieved} vs {snr}");
        for i in 0..len {
            let pre = s[i] + scaled[i];
            prop_assert!((m.clip.samples()[i] - pre * m.renorm_scale).abs() < 1e-12);
        }
        prop_assert!(m.clip.peak() <= 1.0 + 1e-12);
    }

    #[test]
    fn si_sdr_ignores_gain_and_drops_with_noise(seed in any::<u64>(), gain in 0.01f64..100.0) {
        let mut r = rng(seed);
        let reference = uniform(&mut r, 512, -1.0, 1.0);
        let est: Vec<f64> = reference.iter().zip(uniform(&mut r, 512, -0.1, 0.1)).map(|(a, b)| a + b).collect();
        let base = si_sdr(&est, &reference).unwrap();
        let scaled: Vec<f64> = est.iter().map(|v| v * gain).collect();
        prop_assert!((si_sdr(&scaled, &reference).unwrap() - base).abs() < 1e-9);
        let noisier: Vec<f64> = est.iter().zip(uniform(&mut r, 512, -0.2, 0.2)).map(|(a, b)| a + b).collect();
        prop_assert!(si_sdr(&noisier, &reference).unwrap() < base);
    }

    #[test]
    fn convolution_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut r = rng(seed);
        let rir = Rir::from_taps("k", uniform(&mut r, 200, -0.05, 0.05), FS).unwrap();
        let x = uniform(&mut r, 600, -0.1, 0.1);
        let y = uniform(&mut r, 600, -0.1, 0.1);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (lhs, s1) = apply_rir(&clip(mixed), &rir).unwrap();
        let (cx, s2) = apply_rir(&clip(x), &rir).unwrap();
        let (cy, s3) = apply_rir(&clip(y), &rir).unwrap();
        prop_assert_eq!((s1, s2, s3), (1.0, 1.0, 1.0));
        for i in 0..600 {
            let rhs = a * cx.samples()[i] + b * cy.samples()[i];
            prop_assert!((lhs.samples()[i] - rhs).abs() < 1e-10);
        }
    }
}

#[test]
fn sixty_db_mix_is_nearly_the_speech() {
    let mut r = rng(3);
    let s = uniform(&mut r, 4000, -0.5, 0.5);
    let rms = power(&s).sqrt();
    // Alternating ±1 noise has peak equal to rms, so the bound applies directly.
    let flat: Vec<f64> = (0..4000).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
    let rough = uniform(&mut r, 4000, -0.5, 0.5);
    for (noise, crest) in [(flat, 1.0), (rough.clone(), rough.iter().fold(0.0f64, |m, v| m.max(v.abs())) / power(&rough).sqrt())] {
        let m = mix_at_snr(&clip(s.clone()), &clip(noise), 60.0).unwrap();
        assert_eq!(m.renorm_scale, 1.0);
        let dev = s.iter().zip(m.clip.samples()).fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
        assert!(dev <= 1e-3 * rms * crest * (1.0 + 1e-9), "{dev} vs {}", 1e-3 * rms * crest);
    }
}

#[test]
fn stft_round_trip_for_every_resolution() {
    let mut r = rng(5);
    let x = uniform(&mut r, 16_000, -0.5, 0.5);
    let c = clip(x.clone());
    for cfg in std::iter::once(StftConfig::MASK).chain(MRSTFT_RESOLUTIONS) {
        let y = istft(&stft(&c, cfg).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        let (num, den) = x
            .iter()
            .zip(y.samples())
            .fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + a * a));
        assert!((num / den).sqrt() < 1e-6, "{cfg:?}");
    }
}

#[test]
fn tone_gives_one_ridge_at_its_bin() {
    let x: Vec<f64> = (0..16_000).map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin() * 0.5).collect();
    let s = stft(&clip(x), StftConfig::MASK).unwrap();
    let expected = (1000.0 * 512.0 / 16_000.0) as usize;
    for k in 2..s.frames - 2 {
        let best = (0..s.bins()).max_by(|&a, &b| s.magnitude_at(a, k).total_cmp(&s.magnitude_at(b, k))).unwrap();
        assert_eq!(best, expected);
    }
}

#[test]
fn speech_spectrum_peaks_at_the_speaker_f0() {
    for f0 in [100.0, 200.0] {
        let spk = SpeakerSpec {
            f0_hz: f0,
            formants: [500.0, 1500.0, 2500.0],
        };
        // Keyword 0 holds f0 flat; one second gives 1 Hz bins.
        let (c, _) = synth_speech(&spk, 0, 1.0, 4).unwrap();
        let spec = rfft(c.samples());
        let hz_per_bin = f64::from(FS) / c.len() as f64;
        let peak = (1..spec.len()).max_by(|&a, &b| spec[a].norm().total_cmp(&spec[b].norm())).unwrap();
        let expected = f0 / hz_per_bin;
        assert!((peak as f64 - expected).abs() <= 1.0, "f0 {f0}: peak bin {peak}, expected {expected}");
    }
}

#[test]
fn room_class_thresholds() {
    assert_eq!(RoomClass::from_rt60(0.15), RoomClass::Small);
    assert_eq!(RoomClass::from_rt60(0.5), RoomClass::Medium);
    assert_eq!(RoomClass::from_rt60(1.0), RoomClass::Large);
}

#[test]
fn longer_rooms_carry_more_energy() {
    let dry = clip(uniform(&mut rng(7), 8000, -0.2, 0.2));
    let energy = |rt60| {
        let rir = synth_rir(rt60, FS, 1).unwrap();
        let (wet, s) = apply_rir(&dry, &rir).unwrap();
        power(wet.samples()) / (s * s)
    };
    assert!(energy(1.0) > energy(0.1));
}

#[test]
fn unit_impulse_is_the_identity() {
    let x = uniform(&mut rng(8), 500, -0.9, 0.9);
    let (y, s) = apply_rir(&clip(x.clone()), &Rir::from_taps("delta", vec![1.0], FS).unwrap()).unwrap();
    assert_eq!(s, 1.0);
    assert_eq!(y.samples(), &x[..]);
}

fn pools() -> (Vec<NoiseSource>, Vec<Rir>) {
    let noises = NoiseKind::ALL
        .iter()
        .enumerate()
        .map(|(i, k)| NoiseSource {
            id: format!("n{i}"),
            kind: *k,
            clip: synth_noise(*k, 8000, i as u64).unwrap(),
        })
        .collect();
    let rirs = [0.2, 0.7, 1.2].iter().enumerate().map(|(i, t)| synth_rir(*t, FS, i as u64).unwrap()).collect();
    (noises, rirs)
}

#[test]
fn actions_are_drawn_uniformly() {
    let (noises, rirs) = pools();
    let spec = TrainSpec::uniform(noises, rirs);
    let mut counts = [0usize; 4];
    for s in 0..100_000u64 {
        let a = draw_plan(&spec, s).action;
        counts[Action::ALL.iter().position(|x| *x == a).unwrap()] += 1;
    }
    for c in counts {
        let f = c as f64 / 100_000.0;
        assert!((0.24..=0.26).contains(&f), "{counts:?}");
    }
}

#[test]
fn contamination_replays_bit_exactly() {
    let (noises, rirs) = pools();
    let spec = TrainSpec::uniform(noises, rirs);
    let (c, _) = synth_speech(&SpeakerSpec { f0_hz: 150.0, formants: [500.0, 1500.0, 2500.0] }, 3, 0.5, 1).unwrap();
    for seed in 0..16 {
        let a = contaminate(&c, &spec, seed).unwrap();
        let b = contaminate(&c, &spec, seed).unwrap();
        assert_eq!(a, b);
        if a.action == Action::None {
            assert_eq!(a.clip, c);
            assert!(a.snr_db.is_none() && a.rir_id.is_none());
        }
    }
}

/// Straight-line STFT by direct DFT sums, with the analysis framing spelled
/// out: frame `k` reads sample `k·hop + j − (window − hop)/2` under a
/// periodic Hann tap `j`, zero outside the signal.
fn direct_mag(x: &[f64], fft: usize, hop: usize, win: usize) -> Vec<Vec<f64>> {
    let pad = (win - hop) / 2;
    let frames = x.len().div_ceil(hop);
    (0..frames)
        .map(|k| {
            (0..=fft / 2)
                .map(|b| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for j in 0..win {
                        let Some(s) = (k * hop + j).checked_sub(pad) else { continue };
                        if s >= x.len() {
                            continue;
                        }
                        let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / win as f64).cos();
                        let ang = -2.0 * PI * (b * j) as f64 / fft as f64;
                        re += w * x[s] * ang.cos();
                        im += w * x[s] * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        })
        .collect()
}

#[test]
fn mr_stft_matches_direct_summation() {
    let reference: Vec<f64> = (0..1024).map(|i| (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin()).collect();
    let estimate: Vec<f64> = reference.iter().map(|v| 0.5 * v).collect();
    let mut oracle = 0.0;
    for (fft, hop, win) in [(512, 50, 240), (1024, 120, 600), (2048, 240, 1200)] {
        let sr = direct_mag(&reference, fft, hop, win);
        let se = direct_mag(&estimate, fft, hop, win);
        let (mut num, mut den, mut logs, mut n) = (0.0, 0.0, 0.0, 0.0);
        for (rr, ee) in sr.iter().zip(&se) {
            for (a, b) in rr.iter().zip(ee) {
                num += (a - b) * (a - b);
                den += a * a;
                logs += (a.max(1e-7).ln() - b.max(1e-7).ln()).abs();
                n += 1.0;
            }
        }
        oracle += (num / den).sqrt() + logs / n;
    }
    let got = mr_stft_loss_value(&estimate, &reference).unwrap();
    assert!(((got - oracle) / oracle).abs() < 1e-8, "{got} vs {oracle}");
}
