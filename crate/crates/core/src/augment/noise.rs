//! White, pink and brown noise by spectral shaping of Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_in_place, ifft_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
}

impl NoiseColor {
    pub const ALL: [NoiseColor; 3] = [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown];

    /// Exponent `a` of the power spectral density `1 / f^a`.
    fn psd_exponent(self) -> f64 {
        match self {
            NoiseColor::White => 0.0,
            NoiseColor::Pink => 1.0,
            NoiseColor::Brown => 2.0,
        }
    }
}

/// Draws `len` samples of noise with the requested spectral color.
/// Colored noise has its DC bin removed; the overall scale is arbitrary.
pub fn colored_noise<R: Rng + ?Sized>(len: usize, color: NoiseColor, rng: &mut R) -> Vec<f64> {
    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    if color == NoiseColor::White || len < 2 {
        return white;
    }
    let mut spectrum: Vec<Complex64> = white.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut spectrum);
    let amp_exponent = color.psd_exponent() / 2.0;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        // Symmetric frequency index keeps the spectrum Hermitian.
        let f = k.min(len - k);
        if f == 0 {
            *bin = Complex64::new(0.0, 0.0);
        } else {
            *bin /= (f as f64).powf(amp_exponent);
        }
    }
    ifft_in_place(&mut spectrum);
    spectrum.iter().map(|c| c.re / len as f64).collect()
}
