//! Thread-local FFT planning so repeated transforms of one size reuse a plan.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub type C64 = Complex<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized forward DFT.
pub fn forward(buf: &mut [C64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// In-place unnormalized inverse DFT.
pub fn inverse(buf: &mut [C64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
}

/// Forward DFT of a real sequence, keeping bins `0..=n/2`.
pub fn rfft(x: &[f64]) -> Vec<C64> {
    let mut buf: Vec<C64> = x.iter().map(|v| C64::new(*v, 0.0)).collect();
    forward(&mut buf);
    buf.truncate(x.len() / 2 + 1);
    buf
}
