//! Mono audio buffers, PCM16 WAV I/O, band-limited resampling and length
//! normalization.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

/// PCM16 full-scale divisor.
pub const PCM16_SCALE: f64 = 32768.0;

/// Zero crossings of the sinc kernel on each side of the interpolation point.
const SINC_HALF_WIDTH: usize = 32;
const KAISER_BETA: f64 = 8.6;
const KAISER_TABLE_LEN: usize = 8192;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid sample rate {0}")]
    InvalidRate(i64),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A single-channel sequence of amplitudes with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate(0));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(Self { samples, sample_rate })
    }

    /// Builds a buffer from f64 samples, narrowing to f32 storage.
    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(samples.iter().map(|&s| s as f32).collect(), sample_rate)
    }

    /// Internal constructor for outputs of operations that already preserve
    /// the invariants.
    pub(crate) fn from_parts(samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples, sample_rate }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavHeaderInfo {
    pub source_rate: u32,
    pub bit_depth: u16,
    pub channel_count: u16,
}

/// Reads a PCM16 RIFF/WAVE file, averaging channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<(AudioBuffer, WavHeaderInfo), AudioError> {
    let reader = hound::WavReader::open(path.as_ref()).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{:?} {}-bit, only PCM16 is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels == 0 {
        return Err(AudioError::MalformedWav("zero channels".into()));
    }
    let info = WavHeaderInfo {
        source_rate: spec.sample_rate,
        bit_depth: spec.bits_per_sample,
        channel_count: spec.channels,
    };
    let channels = spec.channels as usize;
    let raw = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<i16>, _>>()
        .map_err(map_hound)?;
    let samples: Vec<f32> = if channels == 1 {
        raw.iter().map(|&v| (v as f64 / PCM16_SCALE) as f32).collect()
    } else {
        raw.chunks_exact(channels)
            .map(|frame| {
                let sum: f64 = frame.iter().map(|&v| v as f64).sum();
                (sum / channels as f64 / PCM16_SCALE) as f32
            })
            .collect()
    };
    let buf = AudioBuffer::new(samples, spec.sample_rate).map_err(|e| AudioError::MalformedWav(e.to_string()))?;
    Ok((buf, info))
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported wav encoding".into()),
        other => AudioError::MalformedWav(other.to_string()),
    }
}

/// Quantizes one amplitude to a PCM16 code, clamping out-of-range values.
pub fn to_pcm16(sample: f32) -> i16 {
    let scaled = (sample as f64 * PCM16_SCALE).round();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a mono PCM16 file.
pub fn save_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in &buf.samples {
        writer.write_sample(to_pcm16(s)).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

/// Right-pads with zeros or right-clips to exactly `target_len` samples.
pub fn fix_length(buf: &AudioBuffer, target_len: usize) -> AudioBuffer {
    let mut samples = buf.samples.clone();
    samples.resize(target_len, 0.0);
    AudioBuffer::from_parts(samples, buf.sample_rate)
}

pub fn rms(buf: &AudioBuffer) -> Result<f64, AudioError> {
    rms_of(&buf.samples).ok_or(AudioError::EmptyBuffer)
}

pub(crate) fn rms_of(samples: &[f32]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    Some((sum / samples.len() as f64).sqrt())
}

/// Converts `buf` to `target_rate` with a Kaiser-windowed sinc interpolator.
pub fn resample(buf: &AudioBuffer, target_rate: i64) -> Result<AudioBuffer, AudioError> {
    if target_rate <= 0 || target_rate > u32::MAX as i64 {
        return Err(AudioError::InvalidRate(target_rate));
    }
    let target_rate = target_rate as u32;
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let ratio = target_rate as f64 / buf.sample_rate as f64;
    let out = resample_by_ratio(&buf.to_f64(), ratio);
    Ok(AudioBuffer::from_parts(
        out.into_iter().map(|s| s as f32).collect(),
        target_rate,
    ))
}

/// Resamples a raw sequence so that the output holds `round(len * ratio)`
/// samples. Output sample `j` interpolates the input at position `j / ratio`.
pub(crate) fn resample_by_ratio(input: &[f64], ratio: f64) -> Vec<f64> {
    let out_len = (input.len() as f64 * ratio).round() as usize;
    if (ratio - 1.0).abs() < f64::EPSILON {
        let mut out = input.to_vec();
        out.resize(out_len, 0.0);
        return out;
    }
    let table = kaiser_table();
    let cutoff = ratio.min(1.0);
    // Half-width in input samples; widened when downsampling so the kernel
    // keeps the same number of zero crossings at the lower cutoff.
    let half = SINC_HALF_WIDTH as f64 / cutoff;
    let n = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let t = j as f64 / ratio;
        let lo = (t - half).ceil() as isize;
        let hi = (t + half).floor() as isize;
        // Weights are normalized over the full kernel support so DC gain is
        // exactly one; taps outside the signal contribute zeros.
        let mut acc = 0.0;
        let mut weight_sum = 0.0;
        for i in lo..=hi {
            let d = t - i as f64;
            let w = sinc(cutoff * d) * kaiser_lookup(table, d / half);
            weight_sum += w;
            if (0..n).contains(&i) {
                acc += w * input[i as usize];
            }
        }
        out.push(if weight_sum.abs() > 1e-12 {
            acc / weight_sum
        } else {
            0.0
        });
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

fn kaiser_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let denom = bessel_i0(KAISER_BETA);
        (0..=KAISER_TABLE_LEN)
            .map(|k| {
                let u = k as f64 / KAISER_TABLE_LEN as f64;
                bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / denom
            })
            .collect()
    })
}

fn kaiser_lookup(table: &[f64], u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        return 0.0;
    }
    let pos = u * KAISER_TABLE_LEN as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    table[k] * (1.0 - frac) + table[k + 1] * frac
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
