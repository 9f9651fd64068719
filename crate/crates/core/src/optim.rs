//! LARS with a linear-warmup, cosine-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("shape mismatch for {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LarsConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coefficient: f64,
    /// Parameters whose name contains any of these substrings skip the
    /// trust ratio and weight decay.
    pub exclude: Vec<String>,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            base_lr: 1.0,
            weight_decay: 1e-4,
            momentum: 0.9,
            trust_coefficient: 0.001,
            exclude: vec![".bias".into(), ".bn.".into()],
        }
    }
}

impl LarsConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.base_lr > 0.0
            && self.base_lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.trust_coefficient > 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::InvalidConfig(format!("{self:?}")))
        }
    }

    pub fn is_excluded(&self, name: &str) -> bool {
        self.exclude.iter().any(|p| name.contains(p.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl Schedule {
    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }
}

/// Learning rate at a zero-based global step.
pub fn lr_at(sched: &Schedule, base_lr: f64, step: usize) -> Result<f64, OptimError> {
    let total = sched.total_steps();
    if step >= total {
        return Err(OptimError::StepOutOfRange { step, total });
    }
    let warmup = sched.warmup_steps().min(total);
    if step < warmup {
        return Ok(base_lr * ((step + 1) as f64 / warmup as f64));
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Per-parameter momentum buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LarsState {
    momentum: Vec<Option<Tensor>>,
}

impl LarsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn momentum(&self, id: ParamId) -> Option<&Tensor> {
        self.momentum.get(id.index()).and_then(Option::as_ref)
    }

    /// Momentum buffers named `<param>.momentum`, for checkpoints.
    pub fn to_named(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        store
            .ids()
            .filter_map(|id| {
                self.momentum(id)
                    .map(|m| (format!("{}.momentum", store.name(id)), m.clone()))
            })
            .collect()
    }

    pub fn from_named(store: &ParamStore, named: &[(String, Tensor)]) -> Result<Self, OptimError> {
        let mut state = Self::new();
        for (name, t) in named {
            let param = name
                .strip_suffix(".momentum")
                .and_then(|p| store.find(p))
                .ok_or_else(|| OptimError::ShapeMismatch(format!("unknown optimizer entry {name}")))?;
            if store.get(param).shape() != t.shape() {
                return Err(OptimError::ShapeMismatch(name.clone()));
            }
            state.slot(param).replace(t.clone());
        }
        Ok(state)
    }

    fn slot(&mut self, id: ParamId) -> &mut Option<Tensor> {
        if self.momentum.len() <= id.index() {
            self.momentum.resize(id.index() + 1, None);
        }
        &mut self.momentum[id.index()]
    }
}

/// One LARS update. Parameters without a gradient are left untouched.
/// Nothing is modified when any gradient is invalid.
pub fn lars_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut LarsState,
    cfg: &LarsConfig,
    lr: f64,
) -> Result<(), OptimError> {
    for (id, g) in grads.iter() {
        let name = store.name(id);
        if store.get(id).shape() != g.shape() {
            return Err(OptimError::ShapeMismatch(name.to_string()));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient(name.to_string()));
        }
    }
    for (id, g) in grads.iter() {
        let excluded = cfg.is_excluded(store.name(id));
        let w = store.get(id);
        let wd = if excluded { 0.0 } else { cfg.weight_decay };
        let adapted: Vec<f64> = g.data().iter().zip(w.data()).map(|(g, w)| g + wd * w).collect();
        let w_norm = w.l2_norm();
        let g_norm = adapted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ratio = if excluded || w_norm == 0.0 || g_norm == 0.0 {
            1.0
        } else {
            cfg.trust_coefficient * w_norm / g_norm
        };
        let scale = ratio * lr;
        let shape = w.shape().to_vec();
        let m = state.slot(id).get_or_insert_with(|| Tensor::zeros(&shape));
        for (mi, gi) in m.data_mut().iter_mut().zip(&adapted) {
            *mi = cfg.momentum * *mi + scale * gi;
        }
        let w = store.get_mut(id);
        for (wi, mi) in w.data_mut().iter_mut().zip(m.data()) {
            *wi -= mi;
        }
    }
    Ok(())
}
