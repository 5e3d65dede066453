//! One finite-difference check per differentiable op and composite loss.

use rand::Rng;
use rdkd::distill::{distill_loss, enhancement_loss, feature_denoising_objective, EnhLoss};
use rdkd::models::encoder::{init_layer, transformer_layer};
use rdkd::models::heads::init_bilstm;
use rdkd::models::{DistillMode, EncoderConfig, EnhancementHead, MaskHeadConfig, Student};
use rdkd::signal::{mr_stft_loss, StftConfig};
use rdkd::tensor::{Graph, ParamStore, Var};
use rdkd::Result;

use super::{check_store, check_vars, probe_sum, rng, uniform};

pub struct Case {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn unary(name: &'static str, lo: f64, hi: f64, op: fn(&mut Graph, Var) -> Result<Var>) -> (&'static str, Vec<Vec<usize>>, f64, f64, Build) {
    (name, vec![vec![3, 4]], lo, hi, Box::new(move |g, v| {
        let y = op(g, v[0])?;
        probe_sum(g, y, 1)
    }))
}

fn var_cases(seed: u64) -> Vec<(&'static str, Vec<Vec<usize>>, f64, f64, Build)> {
    let mut r = rng(seed);
    let (m, n) = (r.random_range(2..5), r.random_range(2..5));
    let k = r.random_range(2..5);
    vec![
        ("add (broadcast)", vec![vec![m, n], vec![n]], -1.0, 1.0, Box::new(|g, v| { let y = g.add(v[0], v[1])?; probe_sum(g, y, 2) })),
        ("sub (broadcast)", vec![vec![m, n], vec![m, 1]], -1.0, 1.0, Box::new(|g, v| { let y = g.sub(v[0], v[1])?; probe_sum(g, y, 3) })),
        ("mul (broadcast)", vec![vec![m, n], vec![n]], -1.0, 1.0, Box::new(|g, v| { let y = g.mul(v[0], v[1])?; probe_sum(g, y, 4) })),
        ("div", vec![vec![m, n], vec![m, n]], 0.5, 2.0, Box::new(|g, v| { let y = g.div(v[0], v[1])?; probe_sum(g, y, 5) })),
        unary("neg", -1.0, 1.0, |g, x| g.neg(x)),
        unary("abs", 0.1, 1.0, |g, x| g.abs(x)),
        unary("log", 0.2, 2.0, |g, x| g.log(x)),
        unary("exp", -1.0, 1.0, |g, x| g.exp(x)),
        unary("gelu", -2.0, 2.0, |g, x| g.gelu(x)),
        unary("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x)),
        unary("tanh", -2.0, 2.0, |g, x| g.tanh(x)),
        unary("sqrt", 0.2, 2.0, |g, x| g.sqrt(x)),
        unary("square", -1.0, 1.0, |g, x| g.square(x)),
        unary("log_sigmoid", -4.0, 4.0, |g, x| g.log_sigmoid(x)),
        unary("scale", -1.0, 1.0, |g, x| g.scale(x, -1.7)),
        unary("add_scalar", -1.0, 1.0, |g, x| g.add_scalar(x, 0.3)),
        unary("clamp_min", 0.2, 1.0, |g, x| g.clamp_min(x, 0.1)),
        unary("sum_last", -1.0, 1.0, |g, x| g.sum_last(x)),
        unary("mean_rows", -1.0, 1.0, |g, x| g.mean_rows(x)),
        unary("softmax", -2.0, 2.0, |g, x| g.softmax(x)),
        unary("transpose", -1.0, 1.0, |g, x| g.transpose(x)),
        unary("reshape", -1.0, 1.0, |g, x| g.reshape(x, &[2, 6])),
        unary("slice_cols", -1.0, 1.0, |g, x| g.slice_cols(x, 1, 3)),
        unary("slice_rows", -1.0, 1.0, |g, x| g.slice_rows(x, 1, 3)),
        ("sum", vec![vec![m, n]], -1.0, 1.0, Box::new(|g, v| { let s = g.sum(v[0])?; g.square(s) })),
        ("mean", vec![vec![m, n]], -1.0, 1.0, Box::new(|g, v| { let s = g.mean(v[0])?; g.square(s) })),
        ("norm", vec![vec![m, n]], -1.0, 1.0, Box::new(|g, v| g.norm(v[0]))),
        ("cross_entropy", vec![vec![4, 3]], -2.0, 2.0, Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]))),
        ("layer_norm", vec![vec![m, 5], vec![5], vec![5]], -1.0, 1.0, Box::new(|g, v| { let y = g.layer_norm(v[0], v[1], v[2])?; probe_sum(g, y, 6) })),
        ("concat_cols", vec![vec![m, 2], vec![m, 3]], -1.0, 1.0, Box::new(|g, v| { let y = g.concat_cols(&[v[0], v[1]])?; probe_sum(g, y, 7) })),
        ("concat_rows", vec![vec![2, n], vec![3, n]], -1.0, 1.0, Box::new(|g, v| { let y = g.concat_rows(&[v[0], v[1]])?; probe_sum(g, y, 8) })),
        ("matmul", vec![vec![3, 4], vec![4, 2]], -1.0, 1.0, Box::new(|g, v| { let y = g.matmul(v[0], v[1])?; g.sum(y) })),
        ("affine", vec![vec![m, k], vec![n, k], vec![n]], -1.0, 1.0, Box::new(|g, v| { let y = g.affine(v[0], v[1], v[2])?; probe_sum(g, y, 9) })),
        ("conv1d", vec![vec![2, 11], vec![3, 2, 3], vec![3]], -1.0, 1.0, Box::new(|g, v| { let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 1)?; probe_sum(g, y, 10) })),
        ("conv_transpose1d", vec![vec![3, 5], vec![3, 2, 4], vec![2]], -1.0, 1.0, Box::new(|g, v| { let y = g.conv_transpose1d(v[0], v[1], Some(v[2]), 2, 1)?; probe_sum(g, y, 11) })),
        ("lstm", vec![vec![3, 2], vec![8, 2], vec![8, 2], vec![8]], -1.0, 1.0, Box::new(|g, v| { let y = g.lstm(v[0], v[1], v[2], v[3], false)?; probe_sum(g, y, 12) })),
        ("lstm (reverse)", vec![vec![3, 2], vec![8, 2], vec![8, 2], vec![8]], -1.0, 1.0, Box::new(|g, v| { let y = g.lstm(v[0], v[1], v[2], v[3], true)?; probe_sum(g, y, 13) })),
        ("stft_mag", vec![vec![96]], -1.0, 1.0, Box::new(|g, v| { let y = g.stft_mag(v[0], StftConfig::new(32, 8, 24).unwrap())?; probe_sum(g, y, 14) })),
        ("synthesis", vec![vec![6, 17]], 0.1, 1.0, Box::new(|g, v| {
            let phase = uniform(&mut rng(15), 6 * 17, -3.0, 3.0);
            let y = g.synthesis(v[0], phase, StftConfig::new(32, 8, 32).unwrap(), 48)?;
            probe_sum(g, y, 16)
        })),
        ("mr_stft_loss", vec![vec![256], vec![256]], -1.0, 1.0, Box::new(|g, v| mr_stft_loss(g, v[0], v[1]))),
        ("distill_loss", vec![vec![4, 8], vec![4, 8]], -1.0, 1.0, Box::new(|g, v| distill_loss(g, v[0], v[1], 1.0))),
        ("enhancement l1", vec![vec![40], vec![40]], -1.0, 1.0, Box::new(|g, v| enhancement_loss(g, v[0], v[1], EnhLoss::L1))),
        ("enhancement l2", vec![vec![40], vec![40]], -1.0, 1.0, Box::new(|g, v| enhancement_loss(g, v[0], v[1], EnhLoss::L2))),
    ]
}

fn store_case(name: &'static str, store: ParamStore, per: usize, f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> Case {
    let names: Vec<String> = store.names().cloned().collect();
    Case {
        name,
        error: check_store(&store, &names, per, 17, f),
        tolerance: 1e-4,
    }
}

/// Student with a tiny conv stack, `D = 8`, two layers and two heads.
pub fn micro_student(mode: DistillMode) -> (Student, ParamStore) {
    let mut cfg = EncoderConfig::student();
    for s in &mut cfg.conv_stack {
        s.channels = 4;
    }
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_frames = 8;
    let student = Student::new(cfg, 2, 8, mode).unwrap();
    let mut store = ParamStore::new();
    student.init(&mut store, 21);
    (student, store)
}

pub fn all(seed: u64) -> Vec<Case> {
    let mut out = Vec::new();
    let mut r = rng(seed);
    for (name, shapes, lo, hi, f) in var_cases(seed) {
        let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
            .into_iter()
            .map(|s| {
                let n = s.iter().product();
                (s, uniform(&mut r, n, lo, hi))
            })
            .collect();
        out.push(Case {
            name,
            error: check_vars(&inputs, f),
            tolerance: 1e-4,
        });
    }

    let mut layer = ParamStore::new();
    init_layer(&mut layer, 3, "t", 8, 16);
    let x = uniform(&mut r, 4 * 8, -1.0, 1.0);
    out.push(store_case("transformer layer", layer, 1000, move |g, s| {
        let xv = g.constant(&[4, 8], x.clone())?;
        let y = transformer_layer(g, s, "t", xv, 2)?;
        probe_sum(g, y, 18)
    }));

    let mut bl = ParamStore::new();
    init_bilstm(&mut bl, 4, "b", 3, 2, 2);
    let x = uniform(&mut r, 4 * 3, -1.0, 1.0);
    out.push(store_case("bilstm stack", bl, 1000, move |g, s| {
        let xv = g.constant(&[4, 3], x.clone())?;
        let y = rdkd::models::heads::bilstm(g, s, "b", xv, 2)?;
        probe_sum(g, y, 19)
    }));

    let head = EnhancementHead::Mask(MaskHeadConfig {
        hidden: 2,
        layers: 1,
        ..MaskHeadConfig::default()
    });
    let mut hs = ParamStore::new();
    head.init(&mut hs, 5, 4);
    let hidden = uniform(&mut r, 2 * 4, -1.0, 1.0);
    let noisy = uniform(&mut r, 640, -0.5, 0.5);
    out.push(store_case("mask head", hs, 30, move |g, s| {
        let h = g.constant(&[2, 4], hidden.clone())?;
        let y = head.forward(g, s, h, &noisy)?;
        probe_sum(g, y, 20)
    }));

    // Conv-stack weights through the student on a 1600-sample clip.
    let (student, store) = micro_student(DistillMode::Layerwise);
    let clip = uniform(&mut r, 1600, -0.5, 0.5);
    let conv: Vec<String> = store.names().filter(|n| n.contains("conv")).cloned().collect();
    let s2 = student.clone();
    out.push(Case {
        name: "student conv stack",
        error: check_store(&store, &conv, 6, 22, move |g, s| {
            let o = s2.forward(g, s, &clip)?;
            let cat = g.concat_cols(&o.predictions)?;
            probe_sum(g, cat, 23)
        }),
        tolerance: 1e-4,
    });

    // The objective over a two-item batch on the micro config (T = 4).
    let clips: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut r, 1280, -0.5, 0.5)).collect();
    let targets: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..2).map(|_| uniform(&mut r, 32, -1.0, 1.0)).collect()).collect();
    out.push(store_case("feature denoising objective", store, 8, move |g, s| {
        let mut tv = Vec::new();
        let mut sv = Vec::new();
        for (clip, tgt) in clips.iter().zip(&targets) {
            let o = student.forward(g, s, clip)?;
            sv.push(o.predictions);
            tv.push(tgt.iter().map(|t| g.constant(&[4, 8], t.clone())).collect::<Result<Vec<_>>>()?);
        }
        feature_denoising_objective(g, &tv, &sv, 1.0)
    }));
    out
}
