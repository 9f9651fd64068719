//! Phase-vocoder time-scale modification.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::dsp::{hann, irfft, rfft, wrap_phase};

pub(crate) const VOCODER_FFT: usize = 1024;
pub(crate) const VOCODER_HOP: usize = 256;

/// Time-scales `input` by `rate` (> 1 shortens, < 1 lengthens) while keeping
/// the pitch. The result holds `round(len / rate)` samples.
pub(crate) fn stretch(input: &[f64], rate: f64) -> Vec<f64> {
    let out_len = (input.len() as f64 / rate).round() as usize;
    let window = hann(VOCODER_FFT);
    let frames = analyze(input, &window);
    let stretched = phase_vocoder(&frames, rate);
    synthesize(&stretched, &window, out_len)
}

/// Centered STFT: the signal is zero-padded by half a window on each side.
fn analyze(input: &[f64], window: &[f64]) -> Vec<Vec<Complex64>> {
    let pad = VOCODER_FFT / 2;
    let mut padded = vec![0.0; input.len() + 2 * pad];
    padded[pad..pad + input.len()].copy_from_slice(input);
    let n_frames = 1 + (padded.len() - VOCODER_FFT) / VOCODER_HOP;
    let mut frame = vec![0.0; VOCODER_FFT];
    (0..n_frames)
        .map(|t| {
            let start = t * VOCODER_HOP;
            for (i, f) in frame.iter_mut().enumerate() {
                *f = padded[start + i] * window[i];
            }
            rfft(&frame)
        })
        .collect()
}

fn phase_vocoder(frames: &[Vec<Complex64>], rate: f64) -> Vec<Vec<Complex64>> {
    let bins = VOCODER_FFT / 2 + 1;
    let n_frames = frames.len();
    let magnitude: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| f.iter().map(|c| c.norm()).collect())
        .chain(std::iter::repeat_n(vec![0.0; bins], 2))
        .collect();
    let phase: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| f.iter().map(|c| c.im.atan2(c.re)).collect())
        .chain(std::iter::repeat_n(vec![0.0; bins], 2))
        .collect();
    // Expected phase advance of each bin over one hop.
    let advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * k as f64 * VOCODER_HOP as f64 / VOCODER_FFT as f64)
        .collect();

    let mut acc: Vec<f64> = phase[0].clone();
    let mut out = Vec::new();
    let mut step = 0usize;
    loop {
        let t = step as f64 * rate;
        if t >= n_frames as f64 {
            break;
        }
        let lo = t.floor() as usize;
        let alpha = t - lo as f64;
        let frame: Vec<Complex64> = (0..bins)
            .map(|k| {
                let mag = (1.0 - alpha) * magnitude[lo][k] + alpha * magnitude[lo + 1][k];
                Complex64::from_polar(mag, acc[k])
            })
            .collect();
        out.push(frame);
        for k in 0..bins {
            let dphase = wrap_phase(phase[lo + 1][k] - phase[lo][k] - advance[k]);
            acc[k] += advance[k] + dphase;
        }
        step += 1;
    }
    out
}

fn synthesize(frames: &[Vec<Complex64>], window: &[f64], out_len: usize) -> Vec<f64> {
    let pad = VOCODER_FFT / 2;
    let total = VOCODER_FFT + VOCODER_HOP * frames.len().saturating_sub(1);
    let mut signal = vec![0.0; total];
    let mut norm = vec![0.0; total];
    for (t, frame) in frames.iter().enumerate() {
        let start = t * VOCODER_HOP;
        let time = irfft(frame, VOCODER_FFT);
        for i in 0..VOCODER_FFT {
            signal[start + i] += time[i] * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    (0..out_len)
        .map(|i| {
            let j = i + pad;
            if j < total && norm[j] > 1e-8 {
                signal[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_rate_reconstructs() {
        let x: Vec<f64> = (0..5000)
            .map(|i| (2.0 * PI * 440.0 * i as f64 / 16000.0).sin() * 0.5)
            .collect();
        let y = stretch(&x, 1.0);
        assert_eq!(y.len(), x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max err {err}");
    }

    #[test]
    fn output_length_follows_rate() {
        let x = vec![0.1; 4000];
        assert_eq!(stretch(&x, 2.0).len(), 2000);
        assert_eq!(stretch(&x, 0.5).len(), 8000);
        assert_eq!(stretch(&x[..10], 1.3).len(), 8);
    }
}
