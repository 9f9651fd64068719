#![allow(dead_code)]

pub mod grad;

use std::f64::consts::PI;

use clarion::audio::AudioBuffer;

pub const SR: u32 = 16000;

pub fn tone(freq: f64, len: usize, amp: f64) -> AudioBuffer {
    let s: Vec<f64> = (0..len)
        .map(|n| amp * (2.0 * PI * freq * n as f64 / SR as f64).sin())
        .collect();
    AudioBuffer::from_f64(&s, SR).unwrap()
}

/// Direct O(n^2) DFT of a real sequence, bins `0..=n/2`.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

/// Frequency of the largest DFT magnitude and the bin width, both in Hz.
pub fn peak_hz(x: &[f64]) -> (f64, f64) {
    let spec = naive_dft(x);
    let k = spec
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| (a.1 .0.hypot(a.1 .1)).total_cmp(&b.1 .0.hypot(b.1 .1)))
        .map(|(k, _)| k)
        .unwrap();
    let bin = SR as f64 / x.len() as f64;
    (k as f64 * bin, bin)
}

/// Energy in `[lo, hi)` Hz from the naive DFT.
pub fn band_power(x: &[f64], lo: f64, hi: f64) -> f64 {
    let bin = SR as f64 / x.len() as f64;
    naive_dft(x)
        .iter()
        .enumerate()
        .filter(|(k, _)| (lo..hi).contains(&(*k as f64 * bin)))
        .map(|(_, (re, im))| re * re + im * im)
        .sum()
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Plain-loop NT-Xent over `2N` rows laid out as `[view 1, view 2]`.
pub fn brute_nt_xent(rows: &[Vec<f64>], tau: f64) -> f64 {
    let m = rows.len();
    let n = m / 2;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b));
    let mut total = 0.0;
    for i in 0..m {
        let j = (i + n) % m;
        let num = (sim(&rows[i], &rows[j]) / tau).exp();
        let mut den = 0.0;
        for k in 0..m {
            if k != i {
                den += (sim(&rows[i], &rows[k]) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / m as f64
}
