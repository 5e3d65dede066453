//! Silhouette score of labelled embeddings and a 2-D PCA projection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient with Euclidean distances. Points alone in
/// their cluster score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::metric(format!("{} points against {} labels", points.len(), labels.len())));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::metric("silhouette needs at least two clusters"));
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = classes.binary_search(&labels[j]).expect("collected above");
            sums[c] += dist(&points[i], &points[j]);
            counts[c] += 1;
        }
        let own = classes.binary_search(&labels[i]).expect("collected above");
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Projection of mean-centred `points` onto their two leading principal
/// axes. Each axis is signed so its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if n < 2 || d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::metric("PCA needs at least two points of equal dimension ≥ 2"));
    }
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, k| points[i][k] - mean[k]);
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::metric("SVD did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut axes = Vec::with_capacity(2);
    for &r in order.iter().take(2) {
        let mut v: Vec<f64> = vt.row(r).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    Ok((0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}
