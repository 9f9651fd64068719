//! Time-frequency features: STFT magnitude and phase, a triangular mel
//! projection, log-power scaling and the stacked `3 x F x T` spectrogram.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::dsp::{hann, rfft};

/// Number of mel bands, and therefore the `F` of every stacked spectrogram.
pub const N_MELS: usize = 128;
/// Floor applied before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than one window ({win_len})")]
    SignalTooShort { len: usize, win_len: usize },
    #[error("invalid stft config: {0}")]
    InvalidConfig(String),
    #[error("malformed feature file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 16 ms windows with an 8 ms stride at 16 kHz.
    fn default() -> Self {
        Self {
            win_len: 256,
            hop: 128,
            fft_size: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.win_len == 0 || self.hop == 0 {
            return bad("win_len and hop must be positive");
        }
        if self.hop > self.win_len {
            return bad("hop must not exceed win_len");
        }
        if self.fft_size < self.win_len || !self.fft_size.is_power_of_two() {
            return bad("fft_size must be a power of two no smaller than win_len");
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `floor((len - win_len) / hop) + 1`, or `None` when too short.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.win_len).then(|| (len - self.win_len) / self.hop + 1)
    }
}

/// STFT coefficients stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    bins: usize,
    frames: usize,
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.values[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Uncentered STFT: frame `t` starts at sample `t * hop`, no padding.
pub fn stft(buf: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrum, FeatureError> {
    cfg.validate()?;
    let frames = cfg.frame_count(buf.len()).ok_or(FeatureError::SignalTooShort {
        len: buf.len(),
        win_len: cfg.win_len,
    })?;
    let window = hann(cfg.win_len);
    let x = buf.samples();
    let mut frame = vec![0.0; cfg.fft_size];
    let mut values = Vec::with_capacity(frames * cfg.bins());
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, f) in frame.iter_mut().take(cfg.win_len).enumerate() {
            *f = window[i] * x[start + i] as f64;
        }
        values.extend(rfft(&frame));
    }
    Ok(ComplexSpectrum {
        bins: cfg.bins(),
        frames,
        values,
    })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale between
/// 0 Hz and Nyquist; each triangle peaks at weight one.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    bins: usize,
    weights: Vec<f64>,
    /// Nonzero column range of each row.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn weight(&self, mel: usize, bin: usize) -> f64 {
        self.weights[mel * self.bins + bin]
    }

    pub fn row(&self, mel: usize) -> &[f64] {
        &self.weights[mel * self.bins..(mel + 1) * self.bins]
    }

    /// `weights . spectrum` for one frame.
    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        debug_assert_eq!(spectrum.len(), self.bins);
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let (lo, hi) = self.support[m];
            let row = self.row(m);
            *o = (lo..hi).map(|k| row[k] * spectrum[k]).sum();
        }
    }
}

pub fn mel_filterbank(n_mels: usize, bins: usize, sample_rate: u32) -> MelFilterbank {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| {
        if bins > 1 {
            k as f64 * nyquist / (bins - 1) as f64
        } else {
            0.0
        }
    };
    let mut weights = vec![0.0; n_mels * bins];
    let mut support = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lower, center, upper) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut lo = bins;
        let mut hi = 0;
        for k in 0..bins {
            let f = bin_hz(k);
            let w = if f > lower && f <= center {
                (f - lower) / (center - lower)
            } else if f > center && f < upper {
                (upper - f) / (upper - center)
            } else {
                0.0
            };
            if w > 0.0 {
                weights[m * bins + k] = w;
                lo = lo.min(k);
                hi = k + 1;
            }
        }
        support.push(if lo < hi { (lo, hi) } else { (0, 0) });
    }
    MelFilterbank {
        n_mels,
        bins,
        weights,
        support,
    }
}

/// `10 * log10(max(s, floor)^2)`.
pub fn log_power_value(s: f64) -> f64 {
    let s = s.max(LOG_FLOOR);
    10.0 * (s * s).log10()
}

pub fn log_power(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&s| log_power_value(s)).collect()
}

/// Stacked `3 x F x T` features: log-power STFT magnitude, log-power mel
/// spectrogram and phase (radians in `(-pi, pi]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    freq_bins: usize,
    frames: usize,
    data: Vec<f64>,
}

impl Spectrogram {
    pub const CHANNELS: usize = 3;

    pub fn shape(&self) -> [usize; 3] {
        [Self::CHANNELS, self.freq_bins, self.frames]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Row-major `[channel][freq][frame]` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, channel: usize, freq: usize, frame: usize) -> f64 {
        self.data[(channel * self.freq_bins + freq) * self.frames + frame]
    }

    /// Little-endian header of three `u32` dimensions followed by row-major
    /// `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        for d in self.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend((v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let bad = |m: &str| FeatureError::Malformed(m.to_string());
        if bytes.len() < 12 {
            return Err(bad("truncated header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (c, f, t) = (dim(0), dim(1), dim(2));
        if c != Self::CHANNELS {
            return Err(bad("channel count must be 3"));
        }
        let n = c * f * t;
        if bytes.len() != 12 + 4 * n {
            return Err(bad("payload size does not match header"));
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            freq_bins: f,
            frames: t,
            data,
        })
    }
}

/// Reusable featurizer holding the window-independent mel projection.
#[derive(Debug, Clone)]
pub struct Featurizer {
    cfg: StftConfig,
    filterbank: MelFilterbank,
}

impl Featurizer {
    pub fn new(cfg: StftConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        cfg.validate()?;
        if cfg.bins() < N_MELS + 1 {
            return Err(FeatureError::InvalidConfig(format!(
                "fft_size {} yields {} bins; at least {} are needed",
                cfg.fft_size,
                cfg.bins(),
                N_MELS + 1
            )));
        }
        Ok(Self {
            cfg,
            filterbank: mel_filterbank(N_MELS, cfg.bins(), sample_rate),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Output frame count for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        self.cfg.frame_count(len)
    }

    pub fn featurize(&self, buf: &AudioBuffer) -> Result<Spectrogram, FeatureError> {
        let spec = stft(buf, &self.cfg)?;
        let frames = spec.frames();
        let bins = spec.bins();
        let f = N_MELS;
        let mut data = vec![0.0; 3 * f * frames];
        let mut mag = vec![0.0; bins];
        let mut mel = vec![0.0; f];
        for t in 0..frames {
            let frame = spec.frame(t);
            for (m, c) in mag.iter_mut().zip(frame) {
                *m = c.norm();
            }
            self.filterbank.apply(&mag, &mut mel);
            // The Nyquist bin (and any beyond F) is dropped to align with the mel channel.
            for k in 0..f {
                data[k * frames + t] = log_power_value(mag[k]);
                data[(f + k) * frames + t] = log_power_value(mel[k]);
                data[(2 * f + k) * frames + t] = phase_angle(frame[k]);
            }
        }
        Ok(Spectrogram {
            freq_bins: f,
            frames,
            data,
        })
    }
}

/// Phase in `(-pi, pi]`, with `atan2(0, 0) = 0`.
fn phase_angle(c: Complex64) -> f64 {
    let a = c.im.atan2(c.re);
    if a <= -PI {
        PI
    } else if a == 0.0 {
        0.0
    } else {
        a
    }
}

/// One-shot featurization with a fresh filterbank.
pub fn featurize(buf: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram, FeatureError> {
    Featurizer::new(*cfg, buf.sample_rate())?.featurize(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_power_examples() {
        assert_eq!(log_power_value(1.0), 0.0);
        assert_eq!(log_power_value(10.0), 20.0);
        assert_eq!(log_power_value(0.0), -200.0);
        assert_eq!(log_power(&[1.0, 10.0]), vec![0.0, 20.0]);
    }

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_covers_interior_bins() {
        let fb = mel_filterbank(N_MELS, 129, 16000);
        for k in 1..128 {
            assert!((0..N_MELS).any(|m| fb.weight(m, k) > 0.0), "bin {k} uncovered");
        }
        for m in 0..N_MELS {
            assert!(fb.row(m).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn frame_count_and_errors() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frame_count(16000), Some(124));
        assert_eq!(cfg.frame_count(255), None);
        let short = AudioBuffer::new(vec![0.0; 100], 16000).unwrap();
        assert_eq!(
            stft(&short, &cfg),
            Err(FeatureError::SignalTooShort { len: 100, win_len: 256 })
        );
        let bad = StftConfig { hop: 300, ..cfg };
        assert!(bad.validate().is_err());
        let bad = StftConfig {
            fft_size: 300,
            win_len: 300,
            hop: 100,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_signal_features() {
        let b = AudioBuffer::new(vec![0.0; 1000], 16000).unwrap();
        let s = featurize(&b, &StftConfig::default()).unwrap();
        assert_eq!(s.shape(), [3, 128, 6]);
        for f in 0..128 {
            for t in 0..6 {
                assert_eq!(s.at(0, f, t), -200.0);
                assert_eq!(s.at(1, f, t), -200.0);
                assert_eq!(s.at(2, f, t), 0.0);
            }
        }
    }

    #[test]
    fn bytes_round_trip() {
        let x: Vec<f32> = (0..600).map(|i| (i as f32 * 0.3).sin()).collect();
        let s = featurize(&AudioBuffer::new(x, 16000).unwrap(), &StftConfig::default()).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        let back = Spectrogram::from_bytes(&bytes).unwrap();
        assert_eq!(back.shape(), s.shape());
        assert!(Spectrogram::from_bytes(&bytes[..20]).is_err());
    }
}
