use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Means over the steps of one epoch. `epoch` counts from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub nt_xent: f64,
    pub ce: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub probe_top1: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based global step.
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub nt_xent: f64,
    pub ce: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsLog {
    /// One row per epoch. Wall time is left out so reruns are byte-identical.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,total,nt_xent_part,ce_part,lr,probe_top1\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.total,
                r.nt_xent,
                r.ce,
                r.lr,
                opt(r.probe_top1)
            );
        }
        out
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,lr,total,nt_xent_part,ce_part\n");
        for r in &self.steps {
            let _ = writeln!(out, "{},{},{},{},{}", r.step, r.lr, r.total, r.nt_xent, r.ce);
        }
        out
    }

    /// `(epoch, top1)` at every probed epoch.
    pub fn probe_curve(&self) -> Vec<(usize, f64)> {
        self.epochs
            .iter()
            .filter_map(|r| r.probe_top1.map(|a| (r.epoch, a)))
            .collect()
    }

    pub fn final_probe(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.probe_top1)
    }

    /// First probed epoch whose accuracy reaches `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.probe_curve()
            .into_iter()
            .find(|&(_, a)| a >= target)
            .map(|(e, _)| e)
    }

    pub fn wall_seconds(&self) -> f64 {
        self.epochs.iter().map(|r| r.wall_seconds).sum()
    }
}
