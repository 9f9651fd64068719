//! Training modes, the frozen-encoder probe and the experiment drivers.

mod config;
mod experiments;
mod metrics;

pub use config::{InputKind, LabelSampling, Mode, ProbeConfig, TrainConfig};
pub use experiments::{compare_modes, grid_chain, grid_experiment, CompareReport, GridResult, RunSummary};
pub use metrics::{EpochRecord, MetricsLog, StepRecord};

use std::time::Instant;

use crate::audio::AudioBuffer;
use crate::augment::{apply_chain, AugmentChain, AugmentError, ViewKey};
use crate::data::{epoch_order, make_batches_from, Batch, DataError, Dataset, LabelMask, Split};
use crate::features::{FeatureError, Featurizer, N_MELS};
use crate::losses::{LossError, NtXentConfig};
use crate::nn::{Checkpoint, Encoder, EvaluationHead, Graph, NnError, ParamStore, Phase, ProjectionHead, Tensor};
use crate::optim::{lars_step, lr_at, LarsState, OptimError, Schedule};
use crate::random::{label_key, mix_seed};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("not enough data: {0}")]
    EmptyData(String),
    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encoder plus projection head, all parameters in one store. The head ends
/// in 128 dimensions (self-supervised), 128 dimensions plus a classifier
/// (CLAR), or class logits (supervised).
#[derive(Debug, Clone)]
pub struct ClarModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: ProjectionHead,
}

impl ClarModel {
    pub fn new(cfg: &TrainConfig, classes: usize) -> Result<Self, TrainError> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&cfg.encoder, &mut store, "encoder", cfg.seed)?;
        let d = encoder.out_dim();
        let head = match cfg.mode {
            Mode::Supervised => ProjectionHead::supervised(&mut store, "head", d, classes, cfg.seed),
            Mode::Selfsup => ProjectionHead::new(&mut store, "head", d, None, cfg.seed),
            Mode::Clar => ProjectionHead::new(&mut store, "head", d, Some(classes), cfg.seed),
        };
        Ok(Self { store, encoder, head })
    }

    /// Rebuilds the model described by a checkpoint and loads its values.
    pub fn from_checkpoint(ckpt: &Checkpoint, classes: usize) -> Result<(Self, TrainConfig), TrainError> {
        let cfg = TrainConfig::from_json(&ckpt.config_json)?;
        let mut model = Self::new(&cfg, classes)?;
        if ckpt.params.len() != model.store.len() {
            return Err(NnError::Checkpoint(format!(
                "{} parameters stored, model has {}",
                ckpt.params.len(),
                model.store.len()
            ))
            .into());
        }
        ckpt.restore(&mut model.store)?;
        Ok((model, cfg))
    }
}

/// Turns audio buffers into encoder input tensors.
#[derive(Debug, Clone)]
pub struct InputBuilder {
    featurizer: Option<Featurizer>,
}

impl InputBuilder {
    pub fn new(cfg: &TrainConfig, sample_rate: u32) -> Result<Self, TrainError> {
        let featurizer = match cfg.input_kind {
            InputKind::Raw1d => None,
            InputKind::Spectrogram2d => Some(Featurizer::new(cfg.stft, sample_rate)?),
        };
        Ok(Self { featurizer })
    }

    pub fn tensor(&self, bufs: &[&AudioBuffer]) -> Result<Tensor, TrainError> {
        let len = bufs.first().map_or(0, |b| b.len());
        if bufs.iter().any(|b| b.len() != len) {
            return Err(TrainError::EmptyData("buffers in a batch differ in length".into()));
        }
        match &self.featurizer {
            None => {
                let data = bufs
                    .iter()
                    .flat_map(|b| b.samples().iter().map(|&s| s as f64))
                    .collect();
                Ok(Tensor::new(vec![bufs.len(), 1, len], data)?)
            }
            Some(f) => {
                let frames = f.frames_for(len).ok_or(FeatureError::SignalTooShort {
                    len,
                    win_len: f.config().win_len,
                })?;
                let mut data = Vec::with_capacity(bufs.len() * 3 * N_MELS * frames);
                for b in bufs {
                    data.extend_from_slice(f.featurize(b)?.data());
                }
                Ok(Tensor::new(vec![bufs.len(), 3, N_MELS, frames], data)?)
            }
        }
    }
}

pub struct TrainOutput {
    pub model: ClarModel,
    pub checkpoint: Checkpoint,
    pub metrics: MetricsLog,
}

pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput, TrainError> {
    train_with(cfg, dataset, |_| {})
}

/// Label mask the config applies to the training split.
pub fn label_mask(cfg: &TrainConfig, dataset: &Dataset) -> Result<LabelMask, TrainError> {
    let fraction = if cfg.mode == Mode::Selfsup {
        0.0
    } else {
        cfg.label_fraction
    };
    Ok(match cfg.label_sampling {
        config::LabelSampling::Random => LabelMask::random(&dataset.manifest, fraction, cfg.seed)?,
        config::LabelSampling::Stratified => LabelMask::stratified(&dataset.manifest, fraction, cfg.seed)?,
    })
}

/// Trains per `cfg`, calling `on_epoch` after every epoch. `dataset` carries
/// the full labels; the config's label fraction is applied here, while the
/// probe always sees every training label.
pub fn train_with(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let classes = dataset.manifest.classes();
    if classes < 2 {
        return Err(TrainError::EmptyData(format!("need at least 2 classes, got {classes}")));
    }
    let masked = dataset.with_label_mask(&label_mask(cfg, dataset)?);
    let (pool, batch_size) = match cfg.mode {
        Mode::Supervised => {
            let labeled = masked.manifest.labeled_train();
            let b = cfg.batch_size.min(labeled.len());
            (labeled, b)
        }
        Mode::Selfsup | Mode::Clar => (masked.manifest.indices(Split::Train), cfg.batch_size),
    };
    if batch_size < 2 || pool.len() < batch_size {
        return Err(TrainError::EmptyData(format!(
            "{} training items cannot fill a batch of {}",
            pool.len(),
            cfg.batch_size
        )));
    }
    let sched = Schedule {
        warmup_epochs: cfg.warmup_epochs,
        total_epochs: cfg.epochs,
        steps_per_epoch: pool.len() / batch_size,
    };
    let mut run = Run {
        cfg,
        model: ClarModel::new(cfg, classes)?,
        inputs: InputBuilder::new(cfg, dataset.manifest.target_rate)?,
        chain: cfg.chain.with_seed(cfg.seed),
        ntx: NtXentConfig {
            temperature: cfg.temperature,
        },
        state: LarsState::new(),
    };
    let mut metrics = MetricsLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let batches = make_batches_from(&masked, &pool, batch_size, epoch as u64, cfg.seed)?;
        let mut sums = [0.0; 3];
        let mut lr = 0.0;
        for batch in &batches {
            lr = lr_at(&sched, cfg.optimizer.base_lr, step)?;
            let (total, nt, ce) = run.step(batch, epoch, step, lr)?;
            metrics.steps.push(StepRecord {
                step,
                lr,
                total,
                nt_xent: nt,
                ce,
            });
            for (s, v) in sums.iter_mut().zip([total, nt, ce]) {
                *s += v;
            }
            step += 1;
        }
        let n = batches.len() as f64;
        let is_last = epoch + 1 == cfg.epochs;
        if is_last {
            // Round to the checkpoint precision so a reloaded checkpoint
            // probes identically.
            let snapshot = Checkpoint::from_store(String::new(), 0, &run.model.store, Vec::new());
            snapshot.restore(&mut run.model.store)?;
        }
        let probe_top1 = if cfg.probes_at(epoch + 1) {
            Some(probe(&run.model, cfg, dataset)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            total: sums[0] / n,
            nt_xent: sums[1] / n,
            ce: sums[2] / n,
            lr,
            probe_top1,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        metrics.epochs.push(record);
    }
    let checkpoint = Checkpoint::from_store(
        cfg.to_json(),
        cfg.epochs as u32,
        &run.model.store,
        run.state.to_named(&run.model.store),
    );
    Ok(TrainOutput {
        model: run.model,
        checkpoint,
        metrics,
    })
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    model: ClarModel,
    inputs: InputBuilder,
    chain: AugmentChain,
    ntx: NtXentConfig,
    state: LarsState,
}

impl Run<'_> {
    fn view(&self, buf: &AudioBuffer, index: usize, epoch: usize, view: u64) -> Result<AudioBuffer, TrainError> {
        let key = ViewKey {
            sample_index: index as u64,
            epoch: epoch as u64,
            view,
        };
        Ok(apply_chain(buf, &self.chain, key)?)
    }

    /// One optimizer step; returns `(total, nt_xent, ce)`.
    fn step(&mut self, batch: &Batch, epoch: usize, step: usize, lr: f64) -> Result<(f64, f64, f64), TrainError> {
        let labels: Vec<Option<usize>> = batch.items.iter().map(|it| it.label).collect();
        let views_per_item = if self.cfg.mode == Mode::Supervised { 1 } else { 2 };
        let mut views = Vec::with_capacity(views_per_item * batch.len());
        for view in 0..views_per_item {
            for it in &batch.items {
                views.push(self.view(&it.audio, it.index, epoch, view as u64)?);
            }
        }
        let x = self.inputs.tensor(&views.iter().collect::<Vec<_>>())?;
        let model = &self.model;
        let mut g = Graph::new();
        let x = g.input(x);
        let rep = model.encoder.forward(&mut g, &model.store, x, Phase::Train)?;
        let out = model.head.forward(&mut g, &model.store, rep)?;
        let logits = out.logits;
        let (loss, nt, ce) = match self.cfg.mode {
            Mode::Supervised => {
                let ce = g.cross_entropy(logits.expect("classifier"), &labels, self.cfg.ce_reduction)?;
                (ce, None, Some(ce))
            }
            Mode::Selfsup | Mode::Clar => {
                let nt = g.nt_xent(out.z, &self.ntx)?;
                match logits {
                    Some(logits) if labels.iter().any(Option::is_some) => {
                        let both: Vec<_> = labels.iter().chain(&labels).copied().collect();
                        let ce = g.cross_entropy(logits, &both, self.cfg.ce_reduction)?;
                        (g.add(nt, ce)?, Some(nt), Some(ce))
                    }
                    _ => (nt, Some(nt), None),
                }
            }
        };
        let value = |v: Option<_>| v.map_or(0.0, |v| g.value(v).item());
        let (total, nt, ce) = (g.value(loss).item(), value(nt), value(ce));
        if !total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: epoch + 1,
                step,
                value: total,
            });
        }
        let grads = g.backward(loss)?;
        for (id, t) in g.take_buffer_updates() {
            self.model.store.set_buffer(id, t);
        }
        lars_step(&mut self.model.store, &grads, &mut self.state, &self.cfg.optimizer, lr)?;
        Ok((total, nt, ce))
    }
}

const REPRESENT_CHUNK: usize = 64;

/// Eval-phase encoder outputs for clean (unaugmented) items.
pub fn represent(
    model: &ClarModel,
    inputs: &InputBuilder,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut reps = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(REPRESENT_CHUNK) {
        let bufs: Vec<&AudioBuffer> = chunk.iter().map(|&i| dataset.audio(i)).collect();
        let mut g = Graph::new();
        g.freeze_prefix("");
        let x = g.input(inputs.tensor(&bufs)?);
        let rep = model.encoder.forward(&mut g, &model.store, x, Phase::Eval)?;
        let d = model.encoder.out_dim();
        reps.extend(g.value(rep).data().chunks_exact(d).map(<[f64]>::to_vec));
    }
    Ok(reps)
}

/// Trains a fresh evaluation head on the frozen encoder's representations of
/// every labeled training item and returns top-1 accuracy on the test split.
pub fn probe(model: &ClarModel, cfg: &TrainConfig, dataset: &Dataset) -> Result<f64, TrainError> {
    let train_idx = dataset.manifest.labeled_train();
    let test_idx: Vec<usize> = dataset
        .manifest
        .indices(Split::Test)
        .into_iter()
        .filter(|&i| dataset.label(i).is_some())
        .collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(TrainError::EmptyData("probe needs labeled train and test items".into()));
    }
    let inputs = InputBuilder::new(cfg, dataset.manifest.target_rate)?;
    let train_reps = represent(model, &inputs, dataset, &train_idx)?;
    let test_reps = represent(model, &inputs, dataset, &test_idx)?;
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| dataset.label(i).expect("labeled")).collect();
    let d = model.encoder.out_dim();
    let classes = dataset.manifest.classes();
    let seed = mix_seed(&[cfg.seed, label_key("probe")]);

    let mut store = ParamStore::new();
    let head = EvaluationHead::new(&mut store, "eval", d, classes, seed);
    let mut state = LarsState::new();
    let positions: Vec<usize> = (0..train_idx.len()).collect();
    let stack = |rows: &[usize], reps: &[Vec<f64>]| {
        let data = rows.iter().flat_map(|&r| reps[r].iter().copied()).collect();
        Tensor::new(vec![rows.len(), d], data).expect("row width")
    };
    for epoch in 0..cfg.probe.epochs {
        for rows in epoch_order(&positions, epoch as u64, seed).chunks(cfg.probe.batch_size) {
            let mut g = Graph::new();
            let x = g.input(stack(rows, &train_reps));
            let logits = head.forward(&mut g, &store, x)?;
            let labels: Vec<Option<usize>> = rows.iter().map(|&r| Some(train_labels[r])).collect();
            let loss = g.cross_entropy(logits, &labels, crate::losses::CeReduction::Mean)?;
            let grads = g.backward(loss)?;
            lars_step(
                &mut store,
                &grads,
                &mut state,
                &cfg.probe.optimizer,
                cfg.probe.optimizer.base_lr,
            )?;
        }
    }
    let all: Vec<usize> = (0..test_idx.len()).collect();
    let mut g = Graph::new();
    let x = g.input(stack(&all, &test_reps));
    let logits = head.forward(&mut g, &store, x)?;
    let correct = g
        .value(logits)
        .data()
        .chunks_exact(classes)
        .zip(&test_idx)
        .filter(|(row, &i)| argmax(row) == dataset.label(i).expect("labeled"))
        .count();
    Ok(correct as f64 / test_idx.len() as f64)
}

/// Probe accuracy of a saved model on `dataset`.
pub fn probe_checkpoint(ckpt: &Checkpoint, dataset: &Dataset) -> Result<f64, TrainError> {
    let (model, cfg) = ClarModel::from_checkpoint(ckpt, dataset.manifest.classes())?;
    probe(&model, &cfg, dataset)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}
