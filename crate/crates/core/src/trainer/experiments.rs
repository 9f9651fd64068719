use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentKind, ChainSpec};
use crate::data::Dataset;

use super::{train, Mode, TrainConfig, TrainError};

/// Outcome of one training run inside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub label_fraction: f64,
    pub chain: String,
    pub final_top1: f64,
    /// `(epoch, top1)` at every probed epoch.
    pub curve: Vec<(usize, f64)>,
}

fn run(cfg: &TrainConfig, dataset: &Dataset) -> Result<RunSummary, TrainError> {
    let out = train(cfg, dataset)?;
    Ok(RunSummary {
        mode: cfg.mode,
        label_fraction: cfg.label_fraction,
        chain: cfg.chain.code(),
        final_top1: out.metrics.final_probe().expect("final epoch is probed"),
        curve: out.metrics.probe_curve(),
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Probe accuracies of self-supervised runs over ordered augmentation pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub kinds: Vec<AugmentKind>,
    /// `matrix[i][j]`: chain `kinds[i]` then `kinds[j]`; the diagonal is the
    /// single augmentation.
    pub matrix: Vec<Vec<f64>>,
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
    pub grand_mean: f64,
}

impl GridResult {
    pub fn from_matrix(kinds: Vec<AugmentKind>, matrix: Vec<Vec<f64>>) -> Self {
        let n = kinds.len();
        let row_means = matrix.iter().map(|r| mean(r.iter().copied())).collect();
        let col_means = (0..n).map(|j| mean(matrix.iter().map(|r| r[j]))).collect();
        let grand_mean = mean(matrix.iter().flatten().copied());
        Self {
            kinds,
            matrix,
            row_means,
            col_means,
            grand_mean,
        }
    }

    /// Matrix with a trailing mean column and a trailing mean row.
    pub fn to_csv(&self) -> String {
        let codes: Vec<&str> = self.kinds.iter().map(|k| k.code()).collect();
        let mut out = format!("first\\second,{},mean\n", codes.join(","));
        for (i, row) in self.matrix.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{},{},{}", codes[i], cells.join(","), self.row_means[i]);
        }
        let cols: Vec<String> = self.col_means.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "mean,{},{}", cols.join(","), self.grand_mean);
        out
    }
}

/// Chain for one grid cell: `[a]` on the diagonal, `[a, b]` elsewhere.
pub fn grid_chain(a: AugmentKind, b: AugmentKind) -> ChainSpec {
    if a == b {
        ChainSpec(vec![a])
    } else {
        ChainSpec(vec![a, b])
    }
}

/// Trains one self-supervised run per ordered pair of `kinds` and probes it.
pub fn grid_experiment(base: &TrainConfig, kinds: &[AugmentKind], dataset: &Dataset) -> Result<GridResult, TrainError> {
    if kinds.is_empty() {
        return Err(TrainError::Config("grid needs at least one augmentation kind".into()));
    }
    let mut matrix = Vec::with_capacity(kinds.len());
    for &a in kinds {
        let mut row = Vec::with_capacity(kinds.len());
        for &b in kinds {
            let cfg = TrainConfig {
                mode: Mode::Selfsup,
                chain: grid_chain(a, b),
                ..base.clone()
            };
            row.push(run(&cfg, dataset)?.final_top1);
        }
        matrix.push(row);
    }
    Ok(GridResult::from_matrix(kinds.to_vec(), matrix))
}

/// Supervised and CLAR runs per label fraction plus one self-supervised run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub fractions: Vec<f64>,
    pub supervised: Vec<RunSummary>,
    pub clar: Vec<RunSummary>,
    pub selfsup: RunSummary,
}

impl CompareReport {
    /// Rows `supervised`, `selfsup`, `clar`; one column per fraction of
    /// final probe accuracy. The self-supervised run never sees labels, so
    /// its row repeats one value.
    pub fn table_csv(&self) -> String {
        let header: Vec<String> = self.fractions.iter().map(f64::to_string).collect();
        let mut out = format!("mode,{}\n", header.join(","));
        let row = |runs: Vec<f64>| runs.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            out,
            "supervised,{}",
            row(self.supervised.iter().map(|r| r.final_top1).collect())
        );
        let _ = writeln!(
            out,
            "selfsup,{}",
            row(vec![self.selfsup.final_top1; self.fractions.len()])
        );
        let _ = writeln!(out, "clar,{}", row(self.clar.iter().map(|r| r.final_top1).collect()));
        out
    }

    /// Long-format probe curves: `run,label_fraction,epoch,top1`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("run,label_fraction,epoch,top1\n");
        for r in self
            .supervised
            .iter()
            .chain(std::iter::once(&self.selfsup))
            .chain(&self.clar)
        {
            for (epoch, top1) in &r.curve {
                let _ = writeln!(out, "{},{},{},{}", r.mode.name(), r.label_fraction, epoch, top1);
            }
        }
        out
    }
}

pub fn compare_modes(
    template: &TrainConfig,
    fractions: &[f64],
    dataset: &Dataset,
) -> Result<CompareReport, TrainError> {
    if fractions.is_empty() || fractions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(TrainError::Config(format!(
            "label fractions must lie in (0, 1], got {fractions:?}"
        )));
    }
    let with = |mode, label_fraction| TrainConfig {
        mode,
        label_fraction,
        ..template.clone()
    };
    let mut supervised = Vec::new();
    let mut clar = Vec::new();
    for &p in fractions {
        supervised.push(run(&with(Mode::Supervised, p), dataset)?);
        clar.push(run(&with(Mode::Clar, p), dataset)?);
    }
    let selfsup = run(&with(Mode::Selfsup, 0.0), dataset)?;
    Ok(CompareReport {
        fractions: fractions.to_vec(),
        supervised,
        clar,
        selfsup,
    })
}
