//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdkd::tensor::{Graph, ParamStore, Var};
use rdkd::Result;

pub mod cases;
pub mod oracles;

pub const H: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), with an absolute floor for vanishing gradients.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Sum of `y` weighted elementwise by a fixed random tensor, so every output
/// coordinate reaches the scalar with a distinct weight.
pub fn probe_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n = g.values(y).len();
    let w = uniform(&mut rng(seed), n, -1.0, 1.0);
    let c = g.constant(&shape, w)?;
    let p = g.mul(y, c)?;
    g.sum(p)
}

/// Largest relative error between backprop and central differences over
/// every input of `f`.
pub fn check_vars<F>(inputs: &[(Vec<usize>, Vec<f64>)], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|((s, _), v)| g.constant(s, v.clone()).unwrap())
            .collect();
        let y = f(&mut g, &vars).unwrap();
        g.scalar(y)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|(s, v)| g.variable(s, v.clone()).unwrap()).collect();
    let y = f(&mut g, &vars).unwrap();
    g.backward(y).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|a| a.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].1.len()]);
        let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
        let numeric: Vec<f64> = (0..vals[k].len())
            .map(|i| {
                let x0 = vals[k][i];
                vals[k][i] = x0 + H;
                let up = eval(&vals);
                vals[k][i] = x0 - H;
                let down = eval(&vals);
                vals[k][i] = x0;
                (up - down) / (2.0 * H)
            })
            .collect();
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Like `check_vars` for named parameters in a store. At most `per_tensor`
/// coordinates of each tensor are checked, chosen by `seed`.
pub fn check_store<F>(store: &ParamStore, names: &[String], per_tensor: usize, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let y = f(&mut g, store).unwrap();
    g.backward(y).unwrap();
    let grads: std::collections::BTreeMap<String, Vec<f64>> = g.param_grads().into_iter().collect();
    let mut r = rng(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = store.clone();
    for name in names {
        let n = store.get(name).expect("named parameter").len();
        let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { (0..per_tensor).map(|_| r.random_range(0..n)).collect() };
        for i in coords {
            analytic.push(grads.get(name).map_or(0.0, |gv| gv[i]));
            let x0 = store.get(name).unwrap().values()[i];
            let mut at = |x: f64| {
                work.get_mut(name).unwrap().values_mut()[i] = x;
                let mut g = Graph::new();
                let y = f(&mut g, &work).unwrap();
                g.scalar(y)
            };
            let d = (at(x0 + H) - at(x0 - H)) / (2.0 * H);
            at(x0);
            numeric.push(d);
        }
    }
    rel_error(&analytic, &numeric)
}
