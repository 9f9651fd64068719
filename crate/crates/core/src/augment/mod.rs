//! Signal-level augmentations and their sequential composition.
//!
//! Six transformations are available (noise injection comes in a white-only
//! and a mixed-color flavor, giving seven [`AugmentKind`]s). Every
//! augmentation preserves the buffer length. Random parameters are drawn from
//! a [`RandomSource`] keyed by `(seed, sample, epoch, view, stage)` so a run
//! can be replayed exactly.

mod noise;
mod vocoder;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::audio::{fix_length, resample_by_ratio, rms_of, AudioBuffer};
use crate::random::{RandomKey, RandomSource};

pub use noise::{colored_noise, NoiseColor};

pub const MAX_SEMITONES: f64 = 15.0;
pub const MIN_STRETCH_RATE: f64 = 0.5;
pub const MAX_STRETCH_RATE: f64 = 1.5;
/// Range of the randomly drawn signal-to-noise ratio, dB.
pub const SNR_RANGE_DB: (f64, f64) = (3.0, 30.0);

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("{what} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("fade length {len} exceeds half the signal ({max})")]
    FadeTooLong { len: usize, max: usize },
    #[error("signal has zero RMS; SNR is undefined")]
    SilentSignal,
    #[error("mask length {len} exceeds 1/8 of the signal ({max})")]
    MaskTooLong { len: usize, max: usize },
    #[error("mask [{start}, {start}+{len}) exceeds signal length {signal_len}")]
    MaskOutOfBounds {
        start: usize,
        len: usize,
        signal_len: usize,
    },
    #[error("shift {shift} exceeds half the signal ({max})")]
    ShiftTooLarge { shift: i64, max: usize },
    #[error("unknown augmentation code {0:?}")]
    UnknownCode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentKind {
    #[serde(rename = "ps")]
    PitchShift,
    #[serde(rename = "fd")]
    Fade,
    #[serde(rename = "wn")]
    NoiseInjectWhite,
    #[serde(rename = "mn")]
    NoiseInjectMixed,
    #[serde(rename = "tm")]
    TimeMask,
    #[serde(rename = "ts")]
    TimeShift,
    #[serde(rename = "tst")]
    TimeStretch,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 7] = [
        AugmentKind::PitchShift,
        AugmentKind::Fade,
        AugmentKind::NoiseInjectWhite,
        AugmentKind::NoiseInjectMixed,
        AugmentKind::TimeMask,
        AugmentKind::TimeShift,
        AugmentKind::TimeStretch,
    ];

    pub fn code(self) -> &'static str {
        match self {
            AugmentKind::PitchShift => "ps",
            AugmentKind::Fade => "fd",
            AugmentKind::NoiseInjectWhite => "wn",
            AugmentKind::NoiseInjectMixed => "mn",
            AugmentKind::TimeMask => "tm",
            AugmentKind::TimeShift => "ts",
            AugmentKind::TimeStretch => "tst",
        }
    }

    pub fn from_code(code: &str) -> Result<Self, AugmentError> {
        Self::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or_else(|| AugmentError::UnknownCode(code.to_string()))
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadeShape {
    Linear,
    Logarithmic,
    Exponential,
}

impl FadeShape {
    /// Envelope value at `x` in `[0, 1]`; zero at 0, one at 1, nondecreasing.
    pub fn envelope(self, x: f64) -> f64 {
        match self {
            FadeShape::Linear => x,
            FadeShape::Logarithmic => (1.0 + 9.0 * x).log10(),
            FadeShape::Exponential => (10f64.powf(x) - 1.0) / 9.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    GaussianNoise,
    Constant,
}

/// Fully resolved parameters for one augmentation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentParams {
    PitchShift {
        semitones: f64,
    },
    Fade {
        shape: FadeShape,
        fade_in_len: usize,
        fade_out_len: usize,
    },
    Noise {
        color: NoiseColor,
        snr_db: f64,
    },
    TimeMask {
        start: usize,
        len: usize,
        fill: MaskFill,
    },
    TimeShift {
        shift: i64,
    },
    TimeStretch {
        rate: f64,
    },
}

impl AugmentParams {
    /// Applies the transformation; `rng` supplies noise for the stochastic
    /// stages (noise injection, Gaussian mask fill).
    pub fn apply(&self, buf: &AudioBuffer, rng: &mut RandomSource) -> Result<AudioBuffer, AugmentError> {
        match *self {
            AugmentParams::PitchShift { semitones } => pitch_shift(buf, semitones),
            AugmentParams::Fade {
                shape,
                fade_in_len,
                fade_out_len,
            } => fade(buf, shape, fade_in_len, fade_out_len),
            AugmentParams::Noise { color, snr_db } => noise_inject(buf, color, snr_db, rng),
            AugmentParams::TimeMask { start, len, fill } => time_mask(buf, start, len, fill, rng),
            AugmentParams::TimeShift { shift } => time_shift(buf, shift),
            AugmentParams::TimeStretch { rate } => time_stretch(buf, rate),
        }
    }
}

fn check_range(what: &'static str, value: f64, min: f64, max: f64) -> Result<(), AugmentError> {
    if value.is_finite() && (min..=max).contains(&value) {
        Ok(())
    } else {
        Err(AugmentError::OutOfRange { what, value, min, max })
    }
}

fn to_buffer(samples: Vec<f64>, sample_rate: u32) -> AudioBuffer {
    AudioBuffer::from_parts(samples.into_iter().map(|s| s as f32).collect(), sample_rate)
}

/// Raises or lowers the pitch by `semitones` while keeping the duration:
/// phase-vocoder stretch followed by resampling back to the original length.
pub fn pitch_shift(buf: &AudioBuffer, semitones: f64) -> Result<AudioBuffer, AugmentError> {
    check_range("semitones", semitones, -MAX_SEMITONES, MAX_SEMITONES)?;
    let len = buf.len();
    let rate = 2f64.powf(-semitones / 12.0);
    let stretched = vocoder::stretch(&buf.to_f64(), rate);
    let mut shifted = resample_by_ratio(&stretched, rate);
    shifted.resize(len, 0.0);
    Ok(to_buffer(shifted, buf.sample_rate()))
}

/// Multiplies the first `fade_in_len` samples by a rising envelope and the
/// last `fade_out_len` samples by its mirror image.
pub fn fade(
    buf: &AudioBuffer,
    shape: FadeShape,
    fade_in_len: usize,
    fade_out_len: usize,
) -> Result<AudioBuffer, AugmentError> {
    let len = buf.len();
    let max = len / 2;
    for l in [fade_in_len, fade_out_len] {
        if l > max {
            return Err(AugmentError::FadeTooLong { len: l, max });
        }
    }
    let mut out = buf.samples().to_vec();
    for (k, s) in out.iter_mut().take(fade_in_len).enumerate() {
        *s = (*s as f64 * shape.envelope(k as f64 / fade_in_len as f64)) as f32;
    }
    for k in 0..fade_out_len {
        let s = &mut out[len - 1 - k];
        *s = (*s as f64 * shape.envelope(k as f64 / fade_out_len as f64)) as f32;
    }
    Ok(AudioBuffer::from_parts(out, buf.sample_rate()))
}

/// Adds noise of the given color scaled to realize `snr_db` exactly.
pub fn noise_inject(
    buf: &AudioBuffer,
    color: NoiseColor,
    snr_db: f64,
    rng: &mut RandomSource,
) -> Result<AudioBuffer, AugmentError> {
    if !snr_db.is_finite() {
        return Err(AugmentError::OutOfRange {
            what: "snr_db",
            value: snr_db,
            min: f64::MIN,
            max: f64::MAX,
        });
    }
    let signal_rms = rms_of(buf.samples()).unwrap_or(0.0);
    if signal_rms == 0.0 {
        return Err(AugmentError::SilentSignal);
    }
    let noise = colored_noise(buf.len(), color, rng.rng());
    let noise_rms = (noise.iter().map(|x| x * x).sum::<f64>() / noise.len() as f64).sqrt();
    if noise_rms == 0.0 {
        return Ok(buf.clone());
    }
    let gain = signal_rms / 10f64.powf(snr_db / 20.0) / noise_rms;
    let out = buf
        .samples()
        .iter()
        .zip(&noise)
        .map(|(&s, &n)| s as f64 + gain * n)
        .collect();
    Ok(to_buffer(out, buf.sample_rate()))
}

/// Replaces `[start, start + len)` with zeros or zero-mean Gaussian noise
/// whose standard deviation is the input RMS.
pub fn time_mask(
    buf: &AudioBuffer,
    start: usize,
    len: usize,
    fill: MaskFill,
    rng: &mut RandomSource,
) -> Result<AudioBuffer, AugmentError> {
    let signal_len = buf.len();
    let max = signal_len / 8;
    if len > max {
        return Err(AugmentError::MaskTooLong { len, max });
    }
    if start.checked_add(len).is_none_or(|end| end > signal_len) {
        return Err(AugmentError::MaskOutOfBounds { start, len, signal_len });
    }
    let mut out = buf.samples().to_vec();
    let region = &mut out[start..start + len];
    match fill {
        MaskFill::Constant => region.fill(0.0),
        MaskFill::GaussianNoise => {
            let sigma = rms_of(buf.samples()).unwrap_or(0.0);
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                for s in region.iter_mut() {
                    *s = normal.sample(rng.rng()) as f32;
                }
            } else {
                region.fill(0.0);
            }
        }
    }
    Ok(AudioBuffer::from_parts(out, buf.sample_rate()))
}

/// Circular rotation: `out[(i + shift) mod L] = in[i]`.
pub fn time_shift(buf: &AudioBuffer, shift: i64) -> Result<AudioBuffer, AugmentError> {
    let len = buf.len();
    let max = len / 2;
    if shift.unsigned_abs() > max as u64 {
        return Err(AugmentError::ShiftTooLarge { shift, max });
    }
    let mut out = buf.samples().to_vec();
    if len > 0 {
        let k = shift.rem_euclid(len as i64) as usize;
        out.rotate_right(k);
    }
    Ok(AudioBuffer::from_parts(out, buf.sample_rate()))
}

/// Speeds up (`rate > 1`) or slows down (`rate < 1`) without changing pitch,
/// then pads or crops back to the input length.
pub fn time_stretch(buf: &AudioBuffer, rate: f64) -> Result<AudioBuffer, AugmentError> {
    check_range("rate", rate, MIN_STRETCH_RATE, MAX_STRETCH_RATE)?;
    let stretched = vocoder::stretch(&buf.to_f64(), rate);
    let out = to_buffer(stretched, buf.sample_rate());
    Ok(fix_length(&out, buf.len()))
}

/// Draws the random parameters of one stage for a signal of `length`
/// samples. Real-valued sample counts are floored.
pub fn sample_params(kind: AugmentKind, length: usize, rng: &mut RandomSource) -> AugmentParams {
    let r = rng.rng();
    match kind {
        AugmentKind::PitchShift => AugmentParams::PitchShift {
            semitones: r.random_range(-MAX_SEMITONES..=MAX_SEMITONES),
        },
        AugmentKind::Fade => {
            let shape = match r.random_range(0..3) {
                0 => FadeShape::Linear,
                1 => FadeShape::Logarithmic,
                _ => FadeShape::Exponential,
            };
            let max = length / 2;
            AugmentParams::Fade {
                shape,
                fade_in_len: r.random_range(0..=max),
                fade_out_len: r.random_range(0..=max),
            }
        }
        AugmentKind::NoiseInjectWhite | AugmentKind::NoiseInjectMixed => {
            let color = if kind == AugmentKind::NoiseInjectWhite {
                NoiseColor::White
            } else {
                NoiseColor::ALL[r.random_range(0..3)]
            };
            AugmentParams::Noise {
                color,
                snr_db: r.random_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1),
            }
        }
        AugmentKind::TimeMask => {
            let len = r.random_range(0..=length / 8);
            let start = r.random_range(0..=length - len);
            let fill = if r.random_bool(0.5) {
                MaskFill::GaussianNoise
            } else {
                MaskFill::Constant
            };
            AugmentParams::TimeMask { start, len, fill }
        }
        AugmentKind::TimeShift => {
            let max = (length / 2) as i64;
            AugmentParams::TimeShift {
                shift: r.random_range(-max..=max),
            }
        }
        AugmentKind::TimeStretch => AugmentParams::TimeStretch {
            rate: r.random_range(MIN_STRETCH_RATE..=MAX_STRETCH_RATE),
        },
    }
}

/// Ordered list of augmentation stages plus the experiment seed that keys
/// their random draws.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AugmentChain {
    pub stages: Vec<AugmentKind>,
    pub seed: u64,
}

impl AugmentChain {
    pub fn new(stages: Vec<AugmentKind>, seed: u64) -> Self {
        Self { stages, seed }
    }

    /// Parses a `+`-separated code string such as `"fd+tm"`. The empty
    /// string is the empty chain.
    pub fn parse(spec: &str, seed: u64) -> Result<Self, AugmentError> {
        let spec = spec.trim();
        let stages = if spec.is_empty() {
            Vec::new()
        } else {
            spec.split('+')
                .map(|c| AugmentKind::from_code(c.trim()))
                .collect::<Result<_, _>>()?
        };
        Ok(Self { stages, seed })
    }

    pub fn code(&self) -> String {
        self.stages.iter().map(|k| k.code()).collect::<Vec<_>>().join("+")
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

impl fmt::Display for AugmentChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// Serde representation used in configs: just the code string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChainSpec(pub Vec<AugmentKind>);

impl ChainSpec {
    pub fn parse(spec: &str) -> Result<Self, AugmentError> {
        AugmentChain::parse(spec, 0).map(|c| Self(c.stages))
    }

    pub fn with_seed(&self, seed: u64) -> AugmentChain {
        AugmentChain::new(self.0.clone(), seed)
    }

    pub fn code(&self) -> String {
        self.with_seed(0).code()
    }
}

impl Serialize for ChainSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for ChainSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ChainSpec::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Identifies one augmented view of one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ViewKey {
    pub sample_index: u64,
    pub epoch: u64,
    pub view: u64,
}

fn stage_source(chain: &AugmentChain, key: ViewKey, stage: usize) -> RandomSource {
    RandomSource::new(RandomKey {
        seed: chain.seed,
        sample_index: key.sample_index,
        epoch: key.epoch,
        view: key.view,
        stage: stage as u64,
    })
}

/// Applies every stage in order, each with freshly drawn parameters.
pub fn apply_chain(buf: &AudioBuffer, chain: &AugmentChain, key: ViewKey) -> Result<AudioBuffer, AugmentError> {
    let mut current = buf.clone();
    for (stage, &kind) in chain.stages.iter().enumerate() {
        let mut src = stage_source(chain, key, stage);
        let params = sample_params(kind, current.len(), &mut src);
        current = params.apply(&current, &mut src)?;
    }
    Ok(current)
}

/// Parameters `apply_chain` would draw for each stage of `key`.
pub fn chain_params(chain: &AugmentChain, key: ViewKey, length: usize) -> Vec<AugmentParams> {
    chain
        .stages
        .iter()
        .enumerate()
        .map(|(stage, &kind)| sample_params(kind, length, &mut stage_source(chain, key, stage)))
        .collect()
}

/// Two independently augmented views of the same item.
pub fn make_views(
    buf: &AudioBuffer,
    chain: &AugmentChain,
    sample_index: u64,
    epoch: u64,
) -> Result<(AudioBuffer, AudioBuffer), AugmentError> {
    let key = |view| ViewKey {
        sample_index,
        epoch,
        view,
    };
    Ok((apply_chain(buf, chain, key(0))?, apply_chain(buf, chain, key(1))?))
}
