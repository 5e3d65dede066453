//! Noise-invariant teacher-to-student distillation for speech encoders.

pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod models;
pub mod par;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
