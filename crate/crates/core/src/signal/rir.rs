//! Exponentially decaying noise-tail room impulse responses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tail level relative to the unit direct path.
const TAIL_GAIN: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomClass {
    Small,
    Medium,
    Large,
}

impl RoomClass {
    pub const ALL: [RoomClass; 3] = [RoomClass::Small, RoomClass::Medium, RoomClass::Large];

    /// Below 0.3 s small, up to 0.7 s medium, above that large.
    pub fn from_rt60(rt60_s: f64) -> Self {
        if rt60_s < 0.3 {
            RoomClass::Small
        } else if rt60_s <= 0.7 {
            RoomClass::Medium
        } else {
            RoomClass::Large
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoomClass::Small => "small",
            RoomClass::Medium => "medium",
            RoomClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub id: String,
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub rt60_s: f64,
    pub room_class: RoomClass,
}

impl Rir {
    /// Wraps hand-written taps, e.g. identity or scaling kernels.
    pub fn from_taps(id: impl Into<String>, taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.is_empty() || taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("rir.taps", "taps must be non-empty and finite"));
        }
        Ok(Self {
            id: id.into(),
            taps,
            sample_rate,
            rt60_s: 0.0,
            room_class: RoomClass::Small,
        })
    }

    /// Decay envelope amplitude at `t` seconds.
    pub fn envelope(&self, t: f64) -> f64 {
        (-t * 3.0 * std::f64::consts::LN_10 / self.rt60_s).exp()
    }
}

/// Unit direct tap followed by uniform white noise under an envelope that
/// falls exactly 60 dB by `rt60_s`.
pub fn synth_rir(rt60_s: f64, sample_rate: u32, seed: u64) -> Result<Rir> {
    if !(0.05..=2.0).contains(&rt60_s) {
        return Err(Error::config("rir.rt60_s", format!("{rt60_s} s is outside [0.05, 2.0]")));
    }
    if sample_rate == 0 {
        return Err(Error::config("rir.sample_rate", "must be positive"));
    }
    let fs = f64::from(sample_rate);
    let n = (rt60_s * fs).ceil() as usize + 1;
    let mut r = rng::stream(seed, "rir");
    let decay = 3.0 * std::f64::consts::LN_10 / rt60_s;
    let mut taps = Vec::with_capacity(n);
    taps.push(1.0);
    for i in 1..n {
        let t = i as f64 / fs;
        taps.push(TAIL_GAIN * r.random_range(-1.0..1.0) * (-t * decay).exp());
    }
    Ok(Rir {
        id: format!("rir-{seed:016x}-{:04}ms", (rt60_s * 1000.0).round() as u64),
        taps,
        sample_rate,
        rt60_s,
        room_class: RoomClass::from_rt60(rt60_s),
    })
}
