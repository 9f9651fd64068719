use serde::{Deserialize, Serialize};

use crate::augment::ChainSpec;
use crate::features::StftConfig;
use crate::losses::CeReduction;
use crate::nn::{EncoderConfig, EncoderVariant};
use crate::optim::LarsConfig;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Cross-entropy on one augmented view of each labeled item.
    Supervised,
    /// NT-Xent on two augmented views of every item.
    Selfsup,
    /// NT-Xent plus cross-entropy on the labeled items of each batch.
    Clar,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Supervised, Mode::Selfsup, Mode::Clar];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::Selfsup => "selfsup",
            Mode::Clar => "clar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Waveform `(B, 1, L)`, paired with the conv1d encoder.
    Raw1d,
    /// Stacked spectrogram `(B, 3, 128, T)`, paired with the conv2d encoder.
    Spectrogram2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSampling {
    #[default]
    Random,
    Stratified,
}

/// Evaluation-head training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: LarsConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            optimizer: LarsConfig {
                base_lr: 0.1,
                ..LarsConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub encoder: EncoderConfig,
    pub chain: ChainSpec,
    pub input_kind: InputKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_fraction: f64,
    pub label_sampling: LabelSampling,
    pub optimizer: LarsConfig,
    pub warmup_epochs: usize,
    pub temperature: f64,
    pub ce_reduction: CeReduction,
    pub stft: StftConfig,
    pub seed: u64,
    /// Probe cadence in epochs; the final epoch is always probed. 0 probes
    /// only the final epoch.
    pub probe_every: usize,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Clar,
            encoder: EncoderConfig::default(),
            chain: ChainSpec::parse("fd+tm").expect("valid codes"),
            input_kind: InputKind::Spectrogram2d,
            epochs: 200,
            batch_size: 32,
            label_fraction: 1.0,
            label_sampling: LabelSampling::Random,
            optimizer: LarsConfig::default(),
            warmup_epochs: 10,
            temperature: 0.5,
            ce_reduction: CeReduction::Mean,
            stft: StftConfig::default(),
            seed: 0,
            probe_every: 10,
            probe: ProbeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.encoder.validate()?;
        self.optimizer.validate()?;
        self.probe.optimizer.validate()?;
        self.stft.validate()?;
        match (self.input_kind, self.encoder.variant) {
            (InputKind::Raw1d, EncoderVariant::Conv1d) | (InputKind::Spectrogram2d, EncoderVariant::Conv2d) => {}
            (k, v) => {
                return bad(format!(
                    "input kind {k:?} needs the matching encoder variant, got {v:?}"
                ))
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return bad(format!("label_fraction {} outside [0, 1]", self.label_fraction));
        }
        if self.mode == Mode::Supervised && self.label_fraction == 0.0 {
            return bad("supervised mode needs label_fraction > 0".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.probe.epochs == 0 || self.probe.batch_size == 0 {
            return bad("probe epochs and batch_size must be positive".into());
        }
        Ok(())
    }

    /// Canonical JSON, the form hashed into checkpoints.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, TrainError> {
        serde_json::from_str(json).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn probes_at(&self, epoch: usize) -> bool {
        epoch == self.epochs || (self.probe_every > 0 && epoch.is_multiple_of(self.probe_every))
    }
}
