mod common;

use common::cases::micro_student;
use common::{rng, uniform};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rdkd::distill::{distill_loss, feature_denoising_objective, DistillConfig, EnhLoss, StudentSection, TrainOutput, Trainer};
use rdkd::models::{DistillMode, EncoderConfig, EnhancementKind, MaskHeadConfig, Teacher};
use rdkd::par::Parallelism;
use rdkd::signal::{synth_noise, synth_rir, synth_speech, NoiseKind, NoiseSource, SpeakerSpec};
use rdkd::tensor::{Graph, ParamStore};
use rdkd::Error;

const LOG_SIGMOID_ONE: f64 = 0.313_261_687_518_222_8;

fn loss_of(a: &[f64], b: &[f64], shape: [usize; 2], lambda: f64) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(&shape, a.to_vec()).unwrap();
    let y = g.constant(&shape, b.to_vec()).unwrap();
    let l = distill_loss(&mut g, x, y, lambda).unwrap();
    g.scalar(l)
}

#[test]
fn identical_features_cost_minus_log_sigmoid_one() {
    let a = uniform(&mut rng(1), 5 * 8, -2.0, 2.0);
    assert!((loss_of(&a, &a, [5, 8], 1.0) - LOG_SIGMOID_ONE).abs() < 1e-12);
    assert!((LOG_SIGMOID_ONE - 0.313262).abs() < 1e-6);
    assert_eq!(loss_of(&a, &a, [5, 8], 0.0), 0.0);
    assert!((loss_of(&a, &a, [5, 8], 2.5) - 2.5 * LOG_SIGMOID_ONE).abs() < 1e-12);
}

#[test]
fn orthogonal_unit_features() {
    let a = [1.0, 0.0, 1.0, 0.0];
    let b = [0.0, 1.0, 0.0, 1.0];
    let l = loss_of(&a, &b, [2, 2], 1.0);
    assert!((l - (1.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    assert!((l - 1.693147).abs() < 1e-6);
}

#[test]
fn zero_frames_stay_finite() {
    let l = loss_of(&[0.0; 6], &[0.0; 6], [2, 3], 1.0);
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut g = Graph::new();
    let x = g.constant(&[2, 3], vec![1.0; 6]).unwrap();
    let y = g.constant(&[3, 2], vec![1.0; 6]).unwrap();
    assert!(matches!(distill_loss(&mut g, x, y, 1.0), Err(Error::Shape(_))));
}

#[test]
fn rigged_heads_reproduce_the_teacher() {
    let (student, mut store) = micro_student(DistillMode::Layerwise);
    let rows: Vec<Vec<f64>> = (0..2).map(|k| uniform(&mut rng(10 + k), 8, -1.0, 1.0)).collect();
    for (k, row) in rows.iter().enumerate() {
        store.set_values(&format!("heads.{k}.weight"), vec![0.0; 64]).unwrap();
        store.set_values(&format!("heads.{k}.bias"), row.clone()).unwrap();
    }
    let mut g = Graph::new();
    let out = student.forward(&mut g, &store, &uniform(&mut rng(3), 1280, -0.5, 0.5)).unwrap();
    let t = out.frames;
    let teacher: Vec<_> = rows
        .iter()
        .map(|r| g.constant(&[t, 8], r.iter().copied().cycle().take(t * 8).collect()).unwrap())
        .collect();
    let l = feature_denoising_objective(&mut g, &[teacher], &[out.predictions], 1.0).unwrap();
    assert!((g.scalar(l) - 2.0 * LOG_SIGMOID_ONE).abs() < 1e-12);
}

#[test]
fn duplicated_batch_keeps_the_objective() {
    let mut g = Graph::new();
    let mut r = rng(4);
    let mut v = |g: &mut Graph| g.constant(&[3, 4], uniform(&mut r, 12, -1.0, 1.0)).unwrap();
    let t = vec![vec![v(&mut g)], vec![v(&mut g)]];
    let s = vec![vec![v(&mut g)], vec![v(&mut g)]];
    let once = feature_denoising_objective(&mut g, &t, &s, 1.0).unwrap();
    let (t2, s2) = ([t.clone(), t].concat(), [s.clone(), s].concat());
    let twice = feature_denoising_objective(&mut g, &t2, &s2, 1.0).unwrap();
    assert!((g.scalar(once) - g.scalar(twice)).abs() < 1e-12);
    assert!(matches!(feature_denoising_objective(&mut g, &[], &[], 1.0), Err(Error::Config { .. })));
}

proptest! {
    #[test]
    fn loss_ignores_a_shared_feature_permutation(seed in any::<u64>(), t in 1usize..6, d in 1usize..10, lambda in 0.0f64..3.0) {
        let mut r = rng(seed);
        let a = uniform(&mut r, t * d, -2.0, 2.0);
        let b = uniform(&mut r, t * d, -2.0, 2.0);
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut r);
        let permute = |x: &[f64]| -> Vec<f64> { x.chunks(d).flat_map(|row| perm.iter().map(|&j| row[j])).collect() };
        let base = loss_of(&a, &b, [t, d], lambda);
        let moved = loss_of(&permute(&a), &permute(&b), [t, d], lambda);
        prop_assert!((base - moved).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

fn micro_encoder(layers: usize) -> EncoderConfig {
    let mut cfg = EncoderConfig::student();
    for s in &mut cfg.conv_stack {
        s.channels = 4;
    }
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_frames = 8;
    cfg.num_layers = layers;
    cfg
}

fn micro_teacher() -> Teacher {
    let mut t = Teacher::new(micro_encoder(2), 9).unwrap();
    t.freeze();
    t
}

fn micro_config(steps: u64) -> DistillConfig {
    let mut cfg = DistillConfig::default();
    cfg.distill.layers = vec![1, 2];
    cfg.enhancement.mask = MaskHeadConfig {
        hidden: 4,
        layers: 1,
        ..MaskHeadConfig::default()
    };
    cfg.train.batch_size = 3;
    cfg.train.total_steps = steps;
    cfg.train.warmup_steps = Some(2);
    cfg.train.peak_lr = 1e-3;
    cfg.train.checkpoint_every = 0;
    cfg.train.seed = 5;
    cfg
}

fn micro_trainer(cfg: DistillConfig, teacher: &Teacher, mode: Parallelism) -> Trainer {
    let spk = SpeakerSpec {
        f0_hz: 140.0,
        formants: [500.0, 1500.0, 2500.0],
    };
    let clips = (0..6).map(|i| synth_speech(&spk, i % 4, 0.2, i as u64).unwrap().0.truncated(1280).unwrap()).collect();
    let noises = NoiseKind::ALL
        .iter()
        .enumerate()
        .map(|(i, k)| NoiseSource {
            id: format!("n{i}"),
            kind: *k,
            clip: synth_noise(*k, 4000, i as u64).unwrap(),
        })
        .collect();
    let rirs = vec![synth_rir(0.2, 16_000, 1).unwrap(), synth_rir(0.9, 16_000, 2).unwrap()];
    let student = StudentSection {
        encoder: micro_encoder(1),
        init_from_teacher: true,
    };
    Trainer::new(cfg, &student, teacher, clips, noises, rirs, mode).unwrap()
}

fn same_store(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.iter().all(|(n, t)| {
            b.get(n)
                .is_some_and(|u| t.values().iter().zip(u.values()).all(|(x, y)| x.to_bits() == y.to_bits()))
        })
}

#[test]
fn unfrozen_teacher_is_a_state_error() {
    let t = Teacher::new(micro_encoder(2), 9).unwrap();
    let r = Trainer::new(
        micro_config(4),
        &StudentSection {
            encoder: micro_encoder(1),
            init_from_teacher: false,
        },
        &t,
        vec![synth_speech(&SpeakerSpec { f0_hz: 120.0, formants: [500.0, 1500.0, 2500.0] }, 0, 0.2, 0).unwrap().0],
        vec![],
        vec![],
        Parallelism::Sequential,
    );
    assert!(matches!(r, Err(Error::State(_))));
}

#[test]
fn replay_is_bit_identical_across_runs_and_thread_modes() {
    let teacher = micro_teacher();
    let mut a = micro_trainer(micro_config(12), &teacher, Parallelism::Rayon);
    let mut b = micro_trainer(micro_config(12), &teacher, Parallelism::Sequential);
    for _ in 0..12 {
        let (ra, rb) = (a.train_step().unwrap(), b.train_step().unwrap());
        assert_eq!(ra.total.to_bits(), rb.total.to_bits());
    }
    assert!(same_store(&a.params, &b.params));
    assert_eq!(a.state_bytes().unwrap(), b.state_bytes().unwrap());
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let teacher = micro_teacher();
    let dir = tempfile::tempdir().unwrap();
    let full = TrainOutput::new(dir.path().join("full"));
    let mut straight = micro_trainer(micro_config(10), &teacher, Parallelism::Rayon);
    let records = straight.run(&full).unwrap();
    assert_eq!(records.len(), 10);

    let half = TrainOutput::new(dir.path().join("half"));
    let mut cfg = micro_config(10);
    cfg.train.checkpoint_every = 5;
    let mut first = micro_trainer(cfg.clone(), &teacher, Parallelism::Rayon);
    for _ in 0..5 {
        first.train_step().unwrap();
    }
    first.save_state(&half.checkpoint_path(5)).unwrap();
    drop(first);
    let mut resumed = micro_trainer(cfg, &teacher, Parallelism::Rayon);
    resumed.load_state(&half.checkpoint_path(5)).unwrap();
    assert_eq!(resumed.step(), 5);
    let rest = resumed.run(&half).unwrap();
    assert_eq!(rest.len(), 5);
    assert!(same_store(&straight.params, &resumed.params));
    assert_eq!(
        std::fs::read(full.student_path()).unwrap(),
        std::fs::read(half.student_path()).unwrap()
    );
    // The log of a resumed run only holds the steps it took, never duplicates.
    let lines = std::fs::read_to_string(half.log_path()).unwrap().lines().count();
    assert_eq!(lines, 5);
}

#[test]
fn run_logs_one_line_per_step_with_the_decomposition() {
    let teacher = micro_teacher();
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutput::new(dir.path());
    let mut cfg = micro_config(7);
    cfg.enhancement.beta = 0.7;
    let mut t = micro_trainer(cfg, &teacher, Parallelism::Rayon);
    t.run(&out).unwrap();
    let text = std::fs::read_to_string(out.log_path()).unwrap();
    assert_eq!(text.lines().count(), 7);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["step"].as_u64(), Some(i as u64 + 1));
        let (d, e, total) = (v["distill"].as_f64().unwrap(), v["enh"].as_f64().unwrap(), v["total"].as_f64().unwrap());
        assert!((total - (d + 0.7 * e)).abs() <= 1e-12, "{total} vs {d} + 0.7·{e}");
        assert!(e > 0.0);
    }
}

#[test]
fn saved_student_excludes_the_enhancement_head() {
    let teacher = micro_teacher();
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutput::new(dir.path());
    let mut t = micro_trainer(micro_config(3), &teacher, Parallelism::Rayon);
    t.run(&out).unwrap();
    let student = rdkd::models::checkpoint::load_store(&out.student_path()).unwrap();
    assert!(student.names().all(|n| n.starts_with("encoder.") || n.starts_with("heads.")));
    let head = rdkd::models::checkpoint::load_store(&out.head_path()).unwrap();
    assert!(!head.is_empty() && head.names().all(|n| n.starts_with("enh.")));
}

#[test]
fn zero_beta_matches_the_pure_distillation_update() {
    let teacher = micro_teacher();
    let mut cfg = micro_config(6);
    cfg.enhancement.beta = 0.0;
    let mut with_head = micro_trainer(cfg.clone(), &teacher, Parallelism::Rayon);
    cfg.enhancement.kind = EnhancementKind::None;
    let mut without = micro_trainer(cfg, &teacher, Parallelism::Rayon);
    assert!(without.head.is_none());
    for _ in 0..6 {
        let (a, b) = (with_head.train_step().unwrap(), without.train_step().unwrap());
        assert_eq!(a.distill.to_bits(), b.distill.to_bits());
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }
    assert!(same_store(&with_head.student_params(), &without.params));
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let teacher = micro_teacher();
    let mut t = micro_trainer(micro_config(4), &teacher, Parallelism::Rayon);
    let before = t.params.clone();
    let r = t.train_step().unwrap();
    assert_eq!(r.lr, 0.0);
    assert!(same_store(&before, &t.params));
    t.train_step().unwrap();
    assert!(!same_store(&before, &t.params));
}

#[test]
fn teacher_flags_do_not_change_student_gradients() {
    let (student, store) = micro_student(DistillMode::Layerwise);
    let x = uniform(&mut rng(6), 1280, -0.5, 0.5);
    let target = uniform(&mut rng(7), 4 * 8, -1.0, 1.0);
    let grads = |tracked: bool| {
        let mut g = Graph::new();
        let out = student.forward(&mut g, &store, &x).unwrap();
        let t = if tracked {
            g.variable(&[4, 8], target.clone()).unwrap()
        } else {
            g.constant(&[4, 8], target.clone()).unwrap()
        };
        let l = feature_denoising_objective(&mut g, &[vec![t, t]], &[out.predictions], 1.0).unwrap();
        g.backward(l).unwrap();
        g.param_grads()
    };
    assert_eq!(grads(true), grads(false));
}

#[test]
fn distillation_leaves_the_teacher_untouched() {
    let teacher = micro_teacher();
    let before = teacher.fingerprint().unwrap();
    let mut t = micro_trainer(micro_config(3), &teacher, Parallelism::Rayon);
    for _ in 0..3 {
        t.train_step().unwrap();
    }
    assert_eq!(teacher.fingerprint().unwrap(), before);
    assert!(teacher.is_frozen());
}

#[test]
fn finished_runs_refuse_more_steps() {
    let teacher = micro_teacher();
    let mut t = micro_trainer(micro_config(3), &teacher, Parallelism::Rayon);
    for _ in 0..3 {
        t.train_step().unwrap();
    }
    assert!(matches!(t.train_step(), Err(Error::State(_))));
}

#[test]
fn micro_run_loss_goes_down() {
    let teacher = micro_teacher();
    let mut cfg = micro_config(200);
    cfg.train.warmup_steps = Some(10);
    cfg.enhancement.loss = EnhLoss::L1;
    let mut t = micro_trainer(cfg, &teacher, Parallelism::Rayon);
    let totals: Vec<f64> = (0..200).map(|_| t.train_step().unwrap().total).collect();
    let smooth = |end: usize| totals[end - 10..end].iter().sum::<f64>() / 10.0;
    assert!(smooth(200) < smooth(20), "{} vs {}", smooth(200), smooth(20));
}
