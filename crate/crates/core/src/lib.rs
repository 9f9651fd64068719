//! Contrastive learning of auditory representations at desk scale.
//!
//! The crate covers the whole pipeline: mono audio I/O and resampling
//! ([`audio`]), signal-level augmentations ([`augment`]), time-frequency
//! features ([`features`]), a small reverse-mode autodiff engine with the
//! encoder and head architectures ([`nn`]), the contrastive and masked
//! cross-entropy objectives ([`losses`]), LARS with a warmup-cosine schedule
//! ([`optim`]), datasets ([`data`]) and the training/probing experiments
//! ([`trainer`]).

pub mod audio;
pub mod augment;
pub mod bench;
pub mod data;
mod dsp;
pub mod features;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod random;
pub mod trainer;
