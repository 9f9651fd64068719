//! Shared FFT and window helpers.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// In-place forward complex FFT (unnormalized).
pub fn fft_in_place(data: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(data.len()).process(data));
}

/// In-place inverse complex FFT (unnormalized).
pub fn ifft_in_place(data: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(data.len()).process(data));
}

/// Forward transform of a real frame, returning the `n/2 + 1` non-negative
/// frequency bins.
pub fn rfft(frame: &[f64]) -> Vec<Complex64> {
    let n = frame.len();
    let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`rfft`] for an even length `n`, normalized by `1/n`.
pub fn irfft(bins: &[Complex64], n: usize) -> Vec<f64> {
    debug_assert_eq!(bins.len(), n / 2 + 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..bins.len()].copy_from_slice(bins);
    for k in 1..(n - n / 2) {
        buf[n - k] = bins[k].conj();
    }
    buf[0].im = 0.0;
    if n.is_multiple_of(2) {
        buf[n / 2].im = 0.0;
    }
    ifft_in_place(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Wraps a phase to `[-pi, pi)`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    x - two_pi * ((x + PI) / two_pi).floor()
}
