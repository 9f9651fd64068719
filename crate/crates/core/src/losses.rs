//! NT-Xent contrastive loss, cross-entropy over the labeled subset of a batch,
//! and their unweighted sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("label {label} of row {row} is outside 0..{classes}")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
}

/// `2N x d` embeddings laid out as `[view 1 of items 1..N, view 2 of items
/// 1..N]`; row `i` pairs with row `(i + N) mod 2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    z: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl EmbeddingBatch {
    pub fn new(z: Vec<f64>, rows: usize, dim: usize) -> Result<Self, LossError> {
        if rows == 0 || !rows.is_multiple_of(2) {
            return Err(LossError::InvalidBatch(format!(
                "row count must be positive and even, got {rows}"
            )));
        }
        if dim < 2 {
            return Err(LossError::InvalidBatch(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        if z.len() != rows * dim {
            return Err(LossError::InvalidBatch(format!(
                "{} values do not form a {rows}x{dim} matrix",
                z.len()
            )));
        }
        Ok(Self { z, rows, dim })
    }

    /// Stacks two equally sized view matrices.
    pub fn from_views(view1: &[Vec<f64>], view2: &[Vec<f64>]) -> Result<Self, LossError> {
        if view1.len() != view2.len() {
            return Err(LossError::InvalidBatch("views differ in item count".into()));
        }
        let dim = view1.first().map_or(0, Vec::len);
        let z: Vec<f64> = view1.iter().chain(view2).flatten().copied().collect();
        Self::new(z, 2 * view1.len(), dim)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn partner(&self, i: usize) -> usize {
        (i + self.rows / 2) % self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtXentConfig {
    pub temperature: f64,
}

impl Default for NtXentConfig {
    fn default() -> Self {
        Self { temperature: 0.5 }
    }
}

/// Row-wise class scores with an optional label per row; unlabeled rows
/// contribute nothing to the cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLogits {
    logits: Vec<f64>,
    rows: usize,
    classes: usize,
    labels: Vec<Option<usize>>,
}

impl LabeledLogits {
    pub fn new(logits: Vec<f64>, classes: usize, labels: Vec<Option<usize>>) -> Result<Self, LossError> {
        let rows = labels.len();
        if classes == 0 || logits.len() != rows * classes {
            return Err(LossError::InvalidBatch(format!(
                "{} logits do not form a {rows}x{classes} matrix",
                logits.len()
            )));
        }
        for (row, label) in labels.iter().enumerate() {
            if let Some(label) = *label {
                if label >= classes {
                    return Err(LossError::LabelOutOfRange { row, label, classes });
                }
            }
        }
        Ok(Self {
            logits,
            rows,
            classes,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// How the per-row cross-entropy terms are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CeReduction {
    #[default]
    Mean,
    Sum,
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, LossError> {
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 {
        return Err(LossError::ZeroNorm { row: 0 });
    }
    if nv == 0.0 {
        return Err(LossError::ZeroNorm { row: 1 });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn nt_xent(batch: &EmbeddingBatch, cfg: &NtXentConfig) -> Result<f64, LossError> {
    nt_xent_with_grad(batch, cfg).map(|(loss, _)| loss)
}

/// NT-Xent averaged over all `2N` ordered positive pairs, together with its
/// gradient with respect to the raw embeddings.
pub fn nt_xent_with_grad(batch: &EmbeddingBatch, cfg: &NtXentConfig) -> Result<(f64, Vec<f64>), LossError> {
    let tau = cfg.temperature;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::InvalidTemperature(tau));
    }
    let (rows, dim) = (batch.rows, batch.dim);
    let mut norms = Vec::with_capacity(rows);
    let mut unit = vec![0.0; rows * dim];
    for i in 0..rows {
        let n = norm(batch.row(i));
        if n == 0.0 || !n.is_finite() {
            return Err(LossError::ZeroNorm { row: i });
        }
        norms.push(n);
        for (u, z) in unit[i * dim..(i + 1) * dim].iter_mut().zip(batch.row(i)) {
            *u = z / n;
        }
    }
    let u_row = |i: usize| &unit[i * dim..(i + 1) * dim];

    // Scaled similarity logits.
    let mut sim = vec![0.0; rows * rows];
    for i in 0..rows {
        for k in i..rows {
            let s: f64 = u_row(i).iter().zip(u_row(k)).map(|(a, b)| a * b).sum::<f64>() / tau;
            sim[i * rows + k] = s;
            sim[k * rows + i] = s;
        }
    }

    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    // coef[i][k] = dL/dsim[i][k]
    let mut coef = vec![0.0; rows * rows];
    for i in 0..rows {
        let p = batch.partner(i);
        let row = &sim[i * rows..(i + 1) * rows];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| (s - max).exp())
            .sum();
        let lse = max + denom.ln();
        loss += lse - row[p];
        for k in 0..rows {
            if k == i {
                continue;
            }
            let softmax = (row[k] - max).exp() / denom;
            let target = if k == p { 1.0 } else { 0.0 };
            coef[i * rows + k] = scale * (softmax - target);
        }
    }
    loss *= scale;

    let mut grad = vec![0.0; rows * dim];
    for i in 0..rows {
        // dL/du_i = sum_k (coef[i][k] + coef[k][i]) u_k / tau
        let mut du = vec![0.0; dim];
        for k in 0..rows {
            let c = (coef[i * rows + k] + coef[k * rows + i]) / tau;
            if c != 0.0 {
                for (d, u) in du.iter_mut().zip(u_row(k)) {
                    *d += c * u;
                }
            }
        }
        // Project out the radial component of the normalization.
        let ui = u_row(i);
        let radial: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
        for ((g, d), u) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&du).zip(ui) {
            *g = (d - radial * u) / norms[i];
        }
    }
    Ok((loss, grad))
}

pub fn cross_entropy(ll: &LabeledLogits, reduction: CeReduction) -> f64 {
    cross_entropy_with_grad(ll, reduction).0
}

/// Cross-entropy over labeled rows; exactly zero (with zero gradient) when
/// no row carries a label.
pub fn cross_entropy_with_grad(ll: &LabeledLogits, reduction: CeReduction) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; ll.logits.len()];
    let labeled = ll.labeled_count();
    if labeled == 0 {
        return (0.0, grad);
    }
    let scale = match reduction {
        CeReduction::Mean => 1.0 / labeled as f64,
        CeReduction::Sum => 1.0,
    };
    let mut loss = 0.0;
    for (r, label) in ll.labels.iter().enumerate() {
        let Some(label) = *label else { continue };
        let row = ll.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        loss += max + denom.ln() - row[label];
        let g = &mut grad[r * ll.classes..(r + 1) * ll.classes];
        for (c, gc) in g.iter_mut().enumerate() {
            let p = (row[c] - max).exp() / denom;
            *gc = scale * (p - if c == label { 1.0 } else { 0.0 });
        }
    }
    (loss * scale, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClarLoss {
    pub total: f64,
    pub nt_xent: f64,
    pub ce: f64,
}

/// NT-Xent plus masked cross-entropy with no weighting between the terms.
pub fn clar_loss(
    batch: &EmbeddingBatch,
    cfg: &NtXentConfig,
    ll: &LabeledLogits,
    reduction: CeReduction,
) -> Result<ClarLoss, LossError> {
    let nt = nt_xent(batch, cfg)?;
    let ce = cross_entropy(ll, reduction);
    Ok(ClarLoss {
        total: nt + ce,
        nt_xent: nt,
        ce,
    })
}
