//! Datasets: manifests, the synthetic tone corpus, label masking and
//! deterministic mini-batching.
//!
//! A manifest is a tab-separated text file. Header lines start with `#` and
//! carry `key=value` metadata; every other line is `source<TAB>label<TAB>split`
//! where `label` is a class index or `-` and `source` is a WAV path
//! (relative to the manifest) or a synthetic id `synth://<hash>/<index>`.
//!
//! ```text
//! # classes=c0,c1
//! # target_len=16000
//! # target_rate=16000
//! audio/00000.wav  0  train
//! audio/00001.wav  -  train
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{fix_length, load_wav, resample, save_wav, AudioBuffer, AudioError};
use crate::random::{keyed_rng, label_key};

pub const SYNTH_SCHEME: &str = "synth://";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("synthetic source {0} does not match the manifest's generator")]
    UnknownSynthetic(String),
    #[error("{path}: {source}")]
    Audio { path: String, source: AudioError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Path(PathBuf),
    Synthetic { hash: String, index: usize },
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Path(p) => write!(f, "{}", p.display()),
            Source::Synthetic { hash, index } => write!(f, "{SYNTH_SCHEME}{hash}/{index}"),
        }
    }
}

impl Source {
    fn parse(s: &str) -> Result<Self, String> {
        match s.strip_prefix(SYNTH_SCHEME) {
            Some(rest) => {
                let (hash, index) = rest.split_once('/').ok_or("synthetic id needs <hash>/<index>")?;
                let index = index.parse().map_err(|_| format!("bad synthetic index {index:?}"))?;
                Ok(Source::Synthetic {
                    hash: hash.to_string(),
                    index,
                })
            }
            None if s.is_empty() => Err("empty source".into()),
            None => Ok(Source::Path(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub source: Source,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    pub class_names: Vec<String>,
    pub target_len: usize,
    pub target_rate: u32,
    /// Generator of `synth://` entries, when present.
    pub synthetic: Option<(SyntheticSpec, u64)>,
}

impl Manifest {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.target_len == 0 || self.target_rate == 0 {
            return Err(DataError::Invalid("target_len and target_rate must be positive".into()));
        }
        let k = self.class_names.len();
        if let Some((i, e)) = self
            .entries
            .iter()
            .enumerate()
            .find(|(_, e)| e.label.is_some_and(|l| l >= k))
        {
            return Err(DataError::Invalid(format!(
                "entry {i} has label {} outside {k} classes",
                e.label.unwrap()
            )));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == split)
            .collect()
    }

    /// Training entries that carry a label.
    pub fn labeled_train(&self) -> Vec<usize> {
        self.indices(Split::Train)
            .into_iter()
            .filter(|&i| self.entries[i].label.is_some())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# classes={}\n", self.class_names.join(",")));
        out.push_str(&format!("# target_len={}\n", self.target_len));
        out.push_str(&format!("# target_rate={}\n", self.target_rate));
        if let Some((spec, seed)) = &self.synthetic {
            out.push_str(&format!(
                "# synthetic={}\n",
                serde_json::to_string(spec).expect("plain struct")
            ));
            out.push_str(&format!("# synthetic_seed={seed}\n"));
        }
        for e in &self.entries {
            let label = e.label.map_or("-".to_string(), |l| l.to_string());
            out.push_str(&format!("{}\t{}\t{}\n", e.source, label, e.split));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut m = Manifest {
            entries: Vec::new(),
            class_names: Vec::new(),
            target_len: 0,
            target_rate: 0,
            synthetic: None,
        };
        let mut synth_spec = None;
        let mut synth_seed = None;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |msg: String| DataError::Parse { line: line_no, msg };
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let Some((key, value)) = header.trim().split_once('=') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "classes" => m.class_names = value.split(',').filter(|s| !s.is_empty()).map(String::from).collect(),
                    "target_len" => {
                        m.target_len = value.parse().map_err(|_| err(format!("bad target_len {value:?}")))?
                    }
                    "target_rate" => {
                        m.target_rate = value.parse().map_err(|_| err(format!("bad target_rate {value:?}")))?
                    }
                    "synthetic" => {
                        synth_spec =
                            Some(serde_json::from_str(value).map_err(|e| err(format!("bad synthetic spec: {e}")))?)
                    }
                    "synthetic_seed" => {
                        synth_seed = Some(value.parse().map_err(|_| err(format!("bad seed {value:?}")))?)
                    }
                    other => return Err(err(format!("unknown header key {other:?}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let source = Source::parse(fields[0]).map_err(err)?;
            let label = match fields[1] {
                "-" | "" => None,
                l => Some(l.parse().map_err(|_| err(format!("bad label {l:?}")))?),
            };
            let split = fields[2].parse().map_err(err)?;
            m.entries.push(Entry { source, label, split });
        }
        m.synthetic = match (synth_spec, synth_seed) {
            (Some(spec), Some(seed)) => Some((spec, seed)),
            (None, None) => None,
            _ => {
                return Err(DataError::Invalid(
                    "synthetic and synthetic_seed must appear together".into(),
                ))
            }
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Deterministic tone corpus: class `c` is a tone near `300 * 1.25^c` Hz with
/// amplitude modulation at `3 + 2c` Hz, plus white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub length: usize,
    pub sample_rate: u32,
}

pub const SYNTH_BASE_HZ: f64 = 300.0;
pub const SYNTH_RATIO: f64 = 1.25;
pub const SYNTH_JITTER: f64 = 0.03;
pub const SYNTH_SNR_DB: f64 = 25.0;
const SYNTH_AMPLITUDE: f64 = 0.5;
const SYNTH_AM_DEPTH: f64 = 0.5;

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            per_class: 100,
            length: 16000,
            sample_rate: 16000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_classes < 2 {
            return Err(DataError::Invalid(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.per_class == 0 || self.length == 0 || self.sample_rate == 0 {
            return Err(DataError::Invalid(
                "per_class, length and sample_rate must be positive".into(),
            ));
        }
        let top = self.base_frequency(self.n_classes - 1) * (1.0 + SYNTH_JITTER);
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(DataError::Invalid(format!(
                "{} classes put a {top:.0} Hz tone above the Nyquist frequency",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn base_frequency(&self, class: usize) -> f64 {
        SYNTH_BASE_HZ * SYNTH_RATIO.powi(class as i32)
    }

    pub fn am_rate(&self, class: usize) -> f64 {
        3.0 + 2.0 * class as f64
    }

    /// Short identifier of `(spec, seed)` used in `synth://` ids.
    pub fn hash(&self, seed: u64) -> String {
        let json = serde_json::to_string(self).expect("plain struct");
        let digest = Sha256::new()
            .chain_update(json)
            .chain_update(seed.to_le_bytes())
            .finalize();
        hex::encode(&digest[..8])
    }

    fn split_of(&self, j: usize) -> Split {
        let n_train = self.per_class * 8 / 10;
        let n_valid = self.per_class / 10;
        if j < n_train {
            Split::Train
        } else if j < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        }
    }

    /// Item `index` (class `index / per_class`) of the corpus.
    pub fn render(&self, seed: u64, index: usize) -> AudioBuffer {
        let class = index / self.per_class;
        let mut rng = keyed_rng(&[seed, label_key("synthetic"), index as u64]);
        let f = self.base_frequency(class) * (1.0 + rng.random_range(-SYNTH_JITTER..=SYNTH_JITTER));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let am_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let sr = self.sample_rate as f64;
        let am = self.am_rate(class);
        let clean: Vec<f64> = (0..self.length)
            .map(|n| {
                let t = n as f64 / sr;
                let env =
                    (1.0 + SYNTH_AM_DEPTH * (std::f64::consts::TAU * am * t + am_phase).sin()) / (1.0 + SYNTH_AM_DEPTH);
                SYNTH_AMPLITUDE * env * (std::f64::consts::TAU * f * t + phase).sin()
            })
            .collect();
        let noise: Vec<f64> = (0..self.length)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let p_sig = clean.iter().map(|v| v * v).sum::<f64>();
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>();
        let scale = if p_noise > 0.0 {
            (p_sig / (p_noise * 10f64.powf(SYNTH_SNR_DB / 10.0))).sqrt()
        } else {
            0.0
        };
        let samples: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + scale * n).collect();
        AudioBuffer::from_f64(&samples, self.sample_rate).expect("finite by construction")
    }
}

/// Manifest plus decoded audio, resampled and length-fixed per the manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    audio: Vec<AudioBuffer>,
}

/// Generates the synthetic corpus with a per-class 80/10/10 split.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DataError> {
    spec.validate()?;
    let hash = spec.hash(seed);
    let total = spec.n_classes * spec.per_class;
    let entries = (0..total)
        .map(|index| Entry {
            source: Source::Synthetic {
                hash: hash.clone(),
                index,
            },
            label: Some(index / spec.per_class),
            split: spec.split_of(index % spec.per_class),
        })
        .collect();
    let manifest = Manifest {
        entries,
        class_names: (0..spec.n_classes).map(|c| format!("tone{c}")).collect(),
        target_len: spec.length,
        target_rate: spec.sample_rate,
        synthetic: Some((spec.clone(), seed)),
    };
    let audio = (0..total).map(|i| spec.render(seed, i)).collect();
    Ok(Dataset { manifest, audio })
}

impl Dataset {
    /// Builds a dataset from already prepared buffers.
    pub fn from_parts(manifest: Manifest, audio: Vec<AudioBuffer>) -> Result<Self, DataError> {
        manifest.validate()?;
        if audio.len() != manifest.entries.len() {
            return Err(DataError::Invalid(format!(
                "{} buffers for {} entries",
                audio.len(),
                manifest.entries.len()
            )));
        }
        let audio = audio.iter().map(|b| fix_length(b, manifest.target_len)).collect();
        Ok(Self { manifest, audio })
    }

    /// Loads a manifest and every item it references. WAV paths are
    /// relative to the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let manifest = Manifest::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::resolve(manifest, base)
    }

    pub fn resolve(manifest: Manifest, base: &Path) -> Result<Self, DataError> {
        let mut audio = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let buf = match &e.source {
                Source::Path(p) => {
                    let full = base.join(p);
                    let (buf, _) = load_wav(&full).map_err(|source| DataError::Audio {
                        path: full.display().to_string(),
                        source,
                    })?;
                    buf
                }
                Source::Synthetic { hash, index } => match &manifest.synthetic {
                    Some((spec, seed)) if spec.hash(*seed) == *hash && *index < spec.n_classes * spec.per_class => {
                        spec.render(*seed, *index)
                    }
                    _ => return Err(DataError::UnknownSynthetic(e.source.to_string())),
                },
            };
            let buf = resample(&buf, manifest.target_rate as i64).map_err(|source| DataError::Audio {
                path: e.source.to_string(),
                source,
            })?;
            audio.push(fix_length(&buf, manifest.target_len));
        }
        Ok(Self { manifest, audio })
    }

    /// Writes every item as `audio/NNNNN.wav` under `dir` plus
    /// `dir/manifest.tsv` referencing them.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<PathBuf, DataError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("audio"))?;
        let mut manifest = self.manifest.clone();
        manifest.synthetic = None;
        for (i, (entry, buf)) in manifest.entries.iter_mut().zip(&self.audio).enumerate() {
            let rel = PathBuf::from(format!("audio/{i:05}.wav"));
            save_wav(buf, dir.join(&rel)).map_err(|source| DataError::Audio {
                path: rel.display().to_string(),
                source,
            })?;
            entry.source = Source::Path(rel);
        }
        let path = dir.join("manifest.tsv");
        manifest.save(&path)?;
        Ok(path)
    }

    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }

    pub fn audio(&self, index: usize) -> &AudioBuffer {
        &self.audio[index]
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.manifest.entries[index].label
    }

    /// Same audio with a masked manifest.
    pub fn with_label_mask(&self, mask: &LabelMask) -> Self {
        Self {
            manifest: apply_label_mask(&self.manifest, mask),
            audio: self.audio.clone(),
        }
    }
}

/// Training entries that keep their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub fraction: f64,
    pub seed: u64,
    pub kept: BTreeSet<usize>,
}

impl LabelMask {
    fn check_fraction(fraction: f64) -> Result<(), DataError> {
        if (0.0..=1.0).contains(&fraction) {
            Ok(())
        } else {
            Err(DataError::Invalid(format!("label fraction {fraction} outside [0, 1]")))
        }
    }

    fn target(fraction: f64, n: usize) -> usize {
        ((fraction * n as f64).floor() as usize).min(n)
    }

    /// Keeps `floor(fraction * n_train)` training entries chosen uniformly.
    pub fn random(manifest: &Manifest, fraction: f64, seed: u64) -> Result<Self, DataError> {
        Self::check_fraction(fraction)?;
        let mut train = manifest.indices(Split::Train);
        let keep = Self::target(fraction, train.len());
        train.shuffle(&mut keyed_rng(&[seed, label_key("label-mask")]));
        Ok(Self {
            fraction,
            seed,
            kept: train.into_iter().take(keep).collect(),
        })
    }

    /// Like [`LabelMask::random`] but keeps every class within one item of
    /// its proportional share. Unlabeled training entries are never kept.
    pub fn stratified(manifest: &Manifest, fraction: f64, seed: u64) -> Result<Self, DataError> {
        Self::check_fraction(fraction)?;
        let train = manifest.indices(Split::Train);
        let keep = Self::target(fraction, train.len());
        let mut by_class = vec![Vec::new(); manifest.classes()];
        for &i in &train {
            if let Some(l) = manifest.entries[i].label {
                by_class[l].push(i);
            }
        }
        let exact: Vec<f64> = by_class.iter().map(|v| fraction * v.len() as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let mut remaining = keep.saturating_sub(quota.iter().sum());
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        let mut kept = BTreeSet::new();
        for (c, mut items) in by_class.into_iter().enumerate() {
            items.shuffle(&mut keyed_rng(&[seed, label_key("label-mask-stratified"), c as u64]));
            kept.extend(items.into_iter().take(quota[c]));
        }
        Ok(Self { fraction, seed, kept })
    }
}

/// Drops the labels of training entries outside `mask.kept`.
pub fn apply_label_mask(manifest: &Manifest, mask: &LabelMask) -> Manifest {
    let mut out = manifest.clone();
    for (i, e) in out.entries.iter_mut().enumerate() {
        if e.split == Split::Train && !mask.kept.contains(&i) {
            e.label = None;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub audio: AudioBuffer,
    pub label: Option<usize>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Shuffled order of `pool` for one epoch, keyed by `(seed, epoch)`.
pub fn epoch_order(pool: &[usize], epoch: u64, seed: u64) -> Vec<usize> {
    let mut order = pool.to_vec();
    order.shuffle(&mut keyed_rng(&[seed, label_key("batches"), epoch]));
    order
}

/// Full batches over the training split; the incomplete tail is dropped.
pub fn make_batches(dataset: &Dataset, batch_size: usize, epoch: u64, seed: u64) -> Result<Vec<Batch>, DataError> {
    make_batches_from(
        dataset,
        &dataset.manifest.indices(Split::Train),
        batch_size,
        epoch,
        seed,
    )
}

/// Full batches over an explicit pool of entry indices.
pub fn make_batches_from(
    dataset: &Dataset,
    pool: &[usize],
    batch_size: usize,
    epoch: u64,
    seed: u64,
) -> Result<Vec<Batch>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchTooSmall(batch_size));
    }
    let order = epoch_order(pool, epoch, seed);
    Ok(order
        .chunks_exact(batch_size)
        .map(|chunk| Batch {
            items: chunk
                .iter()
                .map(|&i| BatchItem {
                    audio: dataset.audio(i).clone(),
                    label: dataset.label(i),
                    index: i,
                })
                .collect(),
        })
        .collect())
}
