//! Throughput of the augmentation and featurization hot paths.

use std::fmt::Write as _;
use std::time::Instant;

use crate::audio::AudioBuffer;
use crate::augment::{apply_chain, AugmentChain, AugmentError, ViewKey};
use crate::features::{stft, FeatureError, Featurizer, StftConfig};

/// Benchmarks run on the calling thread only.
pub const BENCH_THREADS: usize = 1;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub buffers: usize,
    pub seconds: f64,
}

impl StageTiming {
    pub fn buffers_per_sec(&self) -> f64 {
        if self.seconds > 0.0 {
            self.buffers as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub threads: usize,
    pub stages: Vec<StageTiming>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,buffers,seconds,buffers_per_sec,threads\n");
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.3},{}",
                s.stage,
                s.buffers,
                s.seconds,
                s.buffers_per_sec(),
                self.threads
            );
        }
        out
    }
}

/// Times `augment` (the chain), `stft` alone and the full `featurize` over
/// every buffer. An empty corpus gives an empty report.
pub fn bench_featurize(
    corpus: &[AudioBuffer],
    chain: &AugmentChain,
    cfg: &StftConfig,
) -> Result<BenchReport, BenchError> {
    let mut report = BenchReport {
        threads: BENCH_THREADS,
        stages: Vec::new(),
    };
    if corpus.is_empty() {
        return Ok(report);
    }
    let featurizer = Featurizer::new(*cfg, corpus[0].sample_rate())?;
    let n = corpus.len();

    let started = Instant::now();
    let mut augmented = Vec::with_capacity(n);
    for (i, buf) in corpus.iter().enumerate() {
        let key = ViewKey {
            sample_index: i as u64,
            epoch: 0,
            view: 0,
        };
        augmented.push(apply_chain(buf, chain, key)?);
    }
    report.stages.push(StageTiming {
        stage: "augment",
        buffers: n,
        seconds: started.elapsed().as_secs_f64(),
    });

    let started = Instant::now();
    for buf in &augmented {
        std::hint::black_box(stft(buf, cfg)?);
    }
    report.stages.push(StageTiming {
        stage: "stft",
        buffers: n,
        seconds: started.elapsed().as_secs_f64(),
    });

    let started = Instant::now();
    for buf in &augmented {
        std::hint::black_box(featurizer.featurize(buf)?);
    }
    report.stages.push(StageTiming {
        stage: "featurize",
        buffers: n,
        seconds: started.elapsed().as_secs_f64(),
    });
    Ok(report)
}
