//! Independent reference computations shared by the tests and the
//! acceptance harness.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rdkd::signal::{istft, mix_at_snr, stft, AudioClip, StftConfig};
use rdkd::tensor::Graph;

use super::uniform;

/// Sweeps every candidate threshold (each score, plus one above them all)
/// with direct counts and interpolates FAR − FRR through zero.
pub fn brute_force_eer(trials: &[(f64, bool)]) -> f64 {
    let mut thresholds: Vec<f64> = trials.iter().map(|t| t.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let pos = trials.iter().filter(|t| t.1).count() as f64;
    let neg = trials.len() as f64 - pos;
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let fa = trials.iter().filter(|t| !t.1 && t.0 >= th).count() as f64 / neg;
            let fr = trials.iter().filter(|t| t.1 && t.0 < th).count() as f64 / pos;
            (fa, fr)
        })
        .collect();
    for (k, &(fa, fr)) in rates.iter().enumerate() {
        if fa == fr {
            return fa;
        }
        if fa < fr {
            let (pa, pr) = rates[k - 1];
            let t = (pa - pr) / ((pa - pr) - (fa - fr));
            return pa + t * (fa - pa);
        }
    }
    unreachable!("the top threshold rejects everything")
}

/// Random trial set with both classes and frequent ties.
pub fn random_trials(r: &mut ChaCha8Rng, max_len: usize) -> Vec<(f64, bool)> {
    let n = r.random_range(2..=max_len);
    let levels: u32 = r.random_range(2..60);
    let mut trials: Vec<(f64, bool)> = (0..n)
        .map(|_| (f64::from(r.random_range(0..levels)) / f64::from(levels), r.random_bool(0.5)))
        .collect();
    trials[0].1 = true;
    trials[1].1 = false;
    trials
}

/// Achieved SNR in dB minus the target, from the returned noise gain.
pub fn mix_snr_error(r: &mut ChaCha8Rng) -> f64 {
    let len = r.random_range(64..4000);
    let snr = r.random_range(-10.0..40.0);
    let s = uniform(r, len, -0.3, 0.3);
    let n = uniform(r, len, -0.3, 0.3);
    let m = mix_at_snr(&AudioClip::new(s.clone(), 16_000).unwrap(), &AudioClip::new(n.clone(), 16_000).unwrap(), snr).unwrap();
    let ps = s.iter().map(|v| v * v).sum::<f64>();
    let pn = n.iter().map(|v| (v * m.alpha).powi(2)).sum::<f64>();
    (10.0 * (ps / pn).log10() - snr).abs()
}

/// ‖x − istft(stft(x))‖ / ‖x‖ over the whole clip.
pub fn stft_round_trip_error(x: &[f64], cfg: StftConfig) -> f64 {
    let c = AudioClip::new(x.to_vec(), 16_000).unwrap();
    let y = istft(&stft(&c, cfg).unwrap()).unwrap();
    assert_eq!(y.len(), x.len());
    let (num, den) = x
        .iter()
        .zip(y.samples())
        .fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + a * a));
    (num / den).sqrt()
}

/// Relative gap of ⟨conv1d(x, k), y⟩ against ⟨x, conv_transpose1d(y, k)⟩ on
/// one random case.
pub fn conv_adjoint_gap(r: &mut ChaCha8Rng) -> f64 {
    let (cin, cout, w, s) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
    let len = r.random_range(w..w + 12);
    let mut g = Graph::new();
    let x = g.constant(&[cin, len], uniform(r, cin * len, -1.0, 1.0)).unwrap();
    let kc = g.constant(&[cout, cin, w], uniform(r, cout * cin * w, -1.0, 1.0)).unwrap();
    let y = g.conv1d(x, kc, None, s, 0).unwrap();
    let out_len = g.shape(y)[1];
    let yv = uniform(r, cout * out_len, -1.0, 1.0);
    let yc = g.constant(&[cout, out_len], yv.clone()).unwrap();
    // [C_out×C_in×W] read as a transposed kernel maps C_out back to C_in.
    let back = g.conv_transpose1d(yc, kc, None, s, 0).unwrap();
    let lhs: f64 = g.values(y).iter().zip(&yv).map(|(a, b)| a * b).sum();
    let xv = g.values(x);
    let bv = g.values(back);
    // The transposed output may extend past the last input sample that the
    // strided conv consumed; only the overlap pairs with x.
    let blen = g.shape(back)[1];
    let rhs: f64 = (0..cin)
        .map(|c| (0..len.min(blen)).map(|t| xv[c * len + t] * bv[c * blen + t]).sum::<f64>())
        .sum();
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}
