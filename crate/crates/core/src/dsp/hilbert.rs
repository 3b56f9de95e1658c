//! Discrete Hilbert transform through the one-sided spectrum.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{DspError, SignalWindow};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward DFT of a real sequence.
pub(crate) fn real_dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(&mut buf));
    buf
}

/// Imaginary part of the analytic signal of `x`.
///
/// Forward DFT, keep DC (and Nyquist for even lengths), double the positive
/// frequencies, zero the negative ones, inverse DFT, take the imaginary part.
pub fn hilbert_imag(x: &SignalWindow) -> Result<SignalWindow, DspError> {
    let n = x.len();
    if n < 4 {
        return Err(DspError::Parameter(format!("Hilbert transform needs >= 4 samples, got {n}")));
    }
    let mut spec = real_dft(x.samples());
    let half = n / 2;
    for (k, c) in spec.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= gain;
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut spec));
    let scale = 1.0 / n as f64;
    Ok(SignalWindow::new_unchecked(x.fs(), spec.iter().map(|c| c.im * scale).collect()))
}
