//! Multi-resolution STFT loss: spectral convergence plus log-magnitude L1,
//! summed over three resolutions.

use super::stft::StftConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// (fft_size, hop, window_length) per resolution.
pub const MRSTFT_RESOLUTIONS: [StftConfig; 3] = [
    StftConfig {
        fft_size: 512,
        hop: 50,
        window_length: 240,
    },
    StftConfig {
        fft_size: 1024,
        hop: 120,
        window_length: 600,
    },
    StftConfig {
        fft_size: 2048,
        hop: 240,
        window_length: 1200,
    },
];

/// Magnitude floor inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-7;

/// Differentiable loss between `estimate` and `reference` (same length,
/// any shape, read flat).
pub fn mr_stft_loss(g: &mut Graph, estimate: Var, reference: Var) -> Result<Var> {
    mr_stft_loss_with(g, estimate, reference, &MRSTFT_RESOLUTIONS)
}

pub fn mr_stft_loss_with(g: &mut Graph, estimate: Var, reference: Var, resolutions: &[StftConfig]) -> Result<Var> {
    let (ne, nr) = (g.value(estimate).len(), g.value(reference).len());
    if ne != nr {
        return Err(Error::shape(format!(
            "mr_stft_loss lengths differ: estimate {ne}, reference {nr}"
        )));
    }
    let mut total: Option<Var> = None;
    for cfg in resolutions {
        let se = g.stft_mag(estimate, *cfg)?;
        let sr = g.stft_mag(reference, *cfg)?;
        let diff = g.sub(sr, se)?;
        let num = g.norm(diff)?;
        let den = g.norm(sr)?;
        if g.scalar(den) == 0.0 {
            return Err(Error::Domain {
                op: "mr_stft_loss",
                detail: "reference spectrum is all zero".into(),
            });
        }
        let sc = g.div(num, den)?;
        let le = g.clamp_min(se, LOG_FLOOR)?;
        let le = g.log(le)?;
        let lr = g.clamp_min(sr, LOG_FLOOR)?;
        let lr = g.log(lr)?;
        let d = g.sub(lr, le)?;
        let d = g.abs(d)?;
        let mag = g.mean(d)?;
        let term = g.add(sc, mag)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::config("mr_stft.resolutions", "no resolutions"))
}

/// Loss value for plain sample slices.
pub fn mr_stft_loss_value(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let e = g.constant(&[estimate.len()], estimate.to_vec())?;
    let r = g.constant(&[reference.len()], reference.to_vec())?;
    let l = mr_stft_loss(&mut g, e, r)?;
    Ok(g.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_signals_give_zero() {
        let x: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(mr_stft_loss_value(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_a_shape_error() {
        assert!(matches!(mr_stft_loss_value(&[0.1; 10], &[0.1; 11]), Err(Error::Shape(_))));
    }
}
