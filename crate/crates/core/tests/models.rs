mod common;

use common::{rng, uniform};
use proptest::prelude::*;
use rdkd::models::encoder::self_attention;
use rdkd::models::heads::ENH_PREFIX;
use rdkd::models::{param_count, DistillMode, EncoderConfig, EnhancementHead, MaskHeadConfig, Student, Teacher, WaveformHeadConfig};
use rdkd::signal::{istft, stft, AudioClip, StftConfig, FRAME_SAMPLES};
use rdkd::tensor::{Graph, ParamStore, Tensor};
use rdkd::Error;

fn student(layers_distilled: usize, mode: DistillMode) -> (Student, ParamStore) {
    let s = Student::new(EncoderConfig::student(), layers_distilled, 64, mode).unwrap();
    let mut store = ParamStore::new();
    s.init(&mut store, 11);
    (s, store)
}

fn zero(store: &mut ParamStore, name: &str) {
    let shape = store.get(name).unwrap().shape().to_vec();
    store.insert(name, Tensor::zeros(&shape));
}

fn fill(store: &mut ParamStore, name: &str, v: f64) {
    let n = store.get(name).unwrap().len();
    store.set_values(name, vec![v; n]).unwrap();
}

#[test]
fn teacher_and_student_frames_agree_for_every_length() {
    let teacher = Teacher::new(EncoderConfig::teacher(), 2).unwrap();
    let (s, store) = student(3, DistillMode::Layerwise);
    let mut r = rng(1);
    for len in [3200, 3201, 3519, 8000, 16_000, 23_999, 48_000] {
        let x = uniform(&mut r, len, -0.5, 0.5);
        let th = teacher.hiddens(&x).unwrap();
        let mut g = Graph::new();
        let out = s.forward(&mut g, &store, &x).unwrap();
        assert_eq!(out.frames, len / FRAME_SAMPLES);
        assert_eq!(th.len(), 7);
        for h in th {
            assert_eq!(h.shape(), [out.frames, 64]);
        }
        for p in &out.predictions {
            assert_eq!(g.shape(*p), [out.frames, 64]);
        }
    }
}

#[test]
fn short_clips_are_shape_errors() {
    let (s, store) = student(3, DistillMode::Layerwise);
    let mut g = Graph::new();
    assert!(matches!(s.forward(&mut g, &store, &[0.1; 399]), Err(Error::Shape(_))));
}

#[test]
fn teacher_hiddens_are_deterministic() {
    let teacher = Teacher::new(EncoderConfig::teacher(), 4).unwrap();
    let x = uniform(&mut rng(2), 4800, -0.5, 0.5);
    assert_eq!(teacher.hiddens(&x).unwrap(), teacher.hiddens(&x).unwrap());
}

/// Hand-summed parameter table for the desk encoders.
#[test]
fn desk_param_counts_match_the_hand_table() {
    let conv = (64 * 5 + 64) + (64 * 64 * 4 + 64) * 2 + (64 * 64 * 2 + 64) * 2;
    assert_eq!(conv, 49_792);
    let front = 64 + 64 + (64 * 64 + 64) + 256 * 64;
    let attn = 4 * (64 * 64 + 64);
    let ffn = (128 * 64 + 128) + (64 * 128 + 64);
    let norms = 4 * 64;
    let layer = attn + ffn + norms;
    assert_eq!(layer, 33_472);
    let heads = 3 * (64 * 64 + 64);

    let (_, store) = student(3, DistillMode::Layerwise);
    let r = param_count(&store);
    assert_eq!(r.total_trainable, conv + front + 2 * layer + heads);
    assert_eq!(r.total_trainable, 149_888);
    assert_eq!(r.total_frozen, 0);
    assert_eq!(r.trainable["heads.0"], 64 * 64 + 64);
    assert_eq!(r.trainable["encoder.layer1"], layer);

    let mut t = Teacher::new(EncoderConfig::teacher(), 0).unwrap();
    t.freeze();
    let r = param_count(&t.params);
    assert_eq!(r.total_frozen, conv + front + 6 * layer);
    assert_eq!(r.total_frozen, 271_296);
    assert_eq!(r.total_trainable, 0);
}

#[test]
fn zero_heads_predict_zero() {
    let (s, mut store) = student(3, DistillMode::Layerwise);
    for k in 0..3 {
        zero(&mut store, &format!("heads.{k}.weight"));
        zero(&mut store, &format!("heads.{k}.bias"));
    }
    let mut g = Graph::new();
    let out = s.forward(&mut g, &store, &uniform(&mut rng(3), 6400, -1.0, 1.0)).unwrap();
    for p in out.predictions {
        assert!(g.values(p).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn l2l_and_layerwise_predictions_have_one_shape() {
    let x = uniform(&mut rng(4), 8000, -0.5, 0.5);
    let (a, sa) = student(2, DistillMode::Layerwise);
    let (b, sb) = student(2, DistillMode::L2l);
    let mut g = Graph::new();
    let oa = a.forward(&mut g, &sa, &x).unwrap();
    let ob = b.forward(&mut g, &sb, &x).unwrap();
    assert_eq!(oa.predictions.len(), ob.predictions.len());
    for (p, q) in oa.predictions.iter().zip(&ob.predictions) {
        assert_eq!(g.shape(*p), g.shape(*q));
    }
    // l2l head 0 reads layer 1, layerwise heads all read the last layer.
    assert_ne!(g.values(ob.predictions[0]), g.values(oa.predictions[0]));
    assert!(matches!(
        Student::new(EncoderConfig::student(), 3, 64, DistillMode::L2l),
        Err(Error::Config { .. })
    ));
}

#[test]
fn attention_rows_are_distributions() {
    let mut store = ParamStore::new();
    rdkd::models::encoder::init_layer(&mut store, 5, "l", 16, 32);
    let mut g = Graph::new();
    let x = g.constant(&[7, 16], uniform(&mut rng(5), 7 * 16, -2.0, 2.0)).unwrap();
    let (_, weights) = self_attention(&mut g, &store, "l.attn", x, 4).unwrap();
    assert_eq!(weights.len(), 4);
    for w in weights {
        for row in g.values(w).chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| *p > 0.0));
        }
    }
}

#[test]
fn zero_values_leave_only_the_output_bias() {
    let mut store = ParamStore::new();
    rdkd::models::encoder::init_layer(&mut store, 6, "l", 8, 16);
    zero(&mut store, "l.attn.v.weight");
    zero(&mut store, "l.attn.v.bias");
    let mut g = Graph::new();
    let x = g.constant(&[5, 8], uniform(&mut rng(6), 40, -1.0, 1.0)).unwrap();
    let (y, _) = self_attention(&mut g, &store, "l.attn", x, 2).unwrap();
    let bias = store.get("l.attn.o.bias").unwrap().values().to_vec();
    for row in g.values(y).chunks(8) {
        assert_eq!(row, &bias[..]);
    }
}

fn mask_head(hidden: usize) -> (EnhancementHead, ParamStore) {
    let head = EnhancementHead::Mask(MaskHeadConfig {
        hidden,
        layers: 1,
        ..MaskHeadConfig::default()
    });
    let mut store = ParamStore::new();
    head.init(&mut store, 7, 16);
    (head, store)
}

#[test]
fn forced_unit_mask_is_the_stft_round_trip() {
    let (head, mut store) = mask_head(4);
    zero(&mut store, &format!("{ENH_PREFIX}.out.weight"));
    fill(&mut store, &format!("{ENH_PREFIX}.out.bias"), 60.0);
    let noisy = uniform(&mut rng(8), 6400 + 77, -0.5, 0.5);
    let t = 20;
    let mut g = Graph::new();
    let h = g.constant(&[t, 16], uniform(&mut rng(9), t * 16, -1.0, 1.0)).unwrap();
    let y = head.forward(&mut g, &store, h, &noisy).unwrap();
    let trimmed = AudioClip::new(noisy[..t * FRAME_SAMPLES].to_vec(), 16_000).unwrap();
    let expected = istft(&stft(&trimmed, StftConfig::MASK).unwrap()).unwrap();
    let got = g.values(y);
    let num = got.iter().zip(expected.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den = expected.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num / den < 1e-6, "{}", num / den);
}

#[test]
fn half_mask_halves_every_bin() {
    let (head, mut store) = mask_head(4);
    zero(&mut store, &format!("{ENH_PREFIX}.out.weight"));
    zero(&mut store, &format!("{ENH_PREFIX}.out.bias"));
    let mut g = Graph::new();
    let h = g.constant(&[6, 16], uniform(&mut rng(10), 96, -1.0, 1.0)).unwrap();
    let m = head.mask(&mut g, &store, h).unwrap();
    assert_eq!(g.shape(m), [6, 257]);
    assert!(g.values(m).iter().all(|v| *v == 0.5));
}

#[test]
fn zero_final_stage_gives_silence_of_the_right_length() {
    let cfg = WaveformHeadConfig::default();
    let last = cfg.stages.len() - 1;
    let head = EnhancementHead::Waveform(cfg);
    let mut store = ParamStore::new();
    head.init(&mut store, 3, 16);
    zero(&mut store, &format!("{ENH_PREFIX}.up{last}.weight"));
    zero(&mut store, &format!("{ENH_PREFIX}.up{last}.bias"));
    let mut g = Graph::new();
    let h = g.constant(&[9, 16], uniform(&mut rng(11), 144, -1.0, 1.0)).unwrap();
    let y = head.forward(&mut g, &store, h, &[0.0; 9 * 320]).unwrap();
    assert_eq!(g.values(y).len(), 9 * 320);
    assert!(g.values(y).iter().all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn waveform_head_returns_the_trimmed_length(len in 400usize..=48_000, seed in any::<u64>()) {
        let enc = EncoderConfig::student();
        let t = enc.frames(len);
        let head = EnhancementHead::Waveform(WaveformHeadConfig::default());
        let mut store = ParamStore::new();
        head.init(&mut store, seed, 8);
        let mut g = Graph::new();
        let h = g.constant(&[t, 8], uniform(&mut rng(seed), t * 8, -1.0, 1.0)).unwrap();
        let noisy = vec![0.0; len];
        let y = head.forward(&mut g, &store, h, &noisy).unwrap();
        prop_assert_eq!(g.values(y).len(), enc.trimmed_len(len));
        prop_assert_eq!(g.values(y).len(), (len / FRAME_SAMPLES) * FRAME_SAMPLES);
    }

    #[test]
    fn mask_values_stay_strictly_inside_the_unit_interval(seed in any::<u64>(), t in 1usize..12, spread in 0.1f64..20.0) {
        let (head, store) = mask_head(3);
        let mut g = Graph::new();
        let h = g.constant(&[t, 16], uniform(&mut rng(seed), t * 16, -spread, spread)).unwrap();
        let m = head.mask(&mut g, &store, h).unwrap();
        prop_assert!(g.values(m).iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
