//! `clarion` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use clarion::audio::{load_wav, save_wav};
use clarion::augment::{apply_chain, AugmentChain, AugmentError, AugmentKind, ViewKey};
use clarion::bench::bench_featurize;
use clarion::data::{gen_synthetic, Dataset, SyntheticSpec};
use clarion::features::{featurize, StftConfig};
use clarion::nn::Checkpoint;
use clarion::trainer::{compare_modes, grid_experiment, probe_checkpoint, train_with};

use overrides::{ResolvedConfig, UsageError};

const SEED_ENV: &str = "CLARION_SEED";

#[derive(Parser)]
#[command(
    name = "clarion",
    version,
    about = "Contrastive learning of auditory representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic tone corpus as WAV files plus manifest.tsv.
    GenData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 16000)]
        length: usize,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an augmentation chain such as "fd+tm" to a WAV file.
    Augment {
        input: PathBuf,
        #[arg(long, default_value = "")]
        chain: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 3 x 128 x T feature stack of a WAV file.
    Featurize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        win_len: usize,
        #[arg(long, default_value_t = 128)]
        hop: usize,
        #[arg(long, default_value_t = 256)]
        fft_size: usize,
    },
    /// Train a model. Takes `--manifest`, `--out`, optional `--config FILE`
    /// and `--key value` overrides for any config field.
    #[command(disable_help_flag = true)]
    Train {
        #[arg(allow_hyphen_values = true, num_args = 0.., trailing_var_arg = true)]
        args: Vec<String>,
    },
    /// Probe a checkpoint on a manifest and print its test top-1.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Self-supervised runs over ordered augmentation pairs (`--kinds fd,tm,ts`).
    #[command(disable_help_flag = true)]
    Grid {
        #[arg(allow_hyphen_values = true, num_args = 0.., trailing_var_arg = true)]
        args: Vec<String>,
    },
    /// Supervised, self-supervised and CLAR runs per label fraction
    /// (`--fractions 1,0.1`).
    #[command(disable_help_flag = true)]
    Compare {
        #[arg(allow_hyphen_values = true, num_args = 0.., trailing_var_arg = true)]
        args: Vec<String>,
    },
    /// Time augmentation and featurization over a synthetic corpus.
    Bench {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 16000)]
        length: usize,
        #[arg(long, default_value = "fd+tm")]
        chain: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Seed from the flag, else the environment, else 0.
fn default_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData {
            classes,
            per_class,
            length,
            sample_rate,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                n_classes: classes,
                per_class,
                length,
                sample_rate,
            };
            spec.validate().map_err(usage)?;
            let seed = default_seed(seed)?;
            let ds = gen_synthetic(&spec, seed).map_err(usage)?;
            let manifest = ds.write_to_dir(&out).context("writing dataset")?;
            println!("wrote {} items to {}", ds.len(), manifest.display());
        }
        Command::Augment {
            input,
            chain,
            seed,
            out,
        } => {
            let chain = AugmentChain::parse(&chain, default_seed(seed)?).map_err(usage)?;
            let (buf, _) = load_wav(&input).with_context(|| format!("reading {}", input.display()))?;
            let key = ViewKey {
                sample_index: 0,
                epoch: 0,
                view: 0,
            };
            let augmented = apply_chain(&buf, &chain, key).map_err(|e| match e {
                AugmentError::UnknownCode(_) => usage(e),
                other => Failure::Runtime(other.into()),
            })?;
            save_wav(&augmented, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Featurize {
            input,
            out,
            win_len,
            hop,
            fft_size,
        } => {
            let cfg = StftConfig {
                win_len,
                hop,
                fft_size,
                ..StftConfig::default()
            };
            cfg.validate().map_err(usage)?;
            let (buf, _) = load_wav(&input).with_context(|| format!("reading {}", input.display()))?;
            let spec = featurize(&buf, &cfg).context("featurizing")?;
            std::fs::write(&out, spec.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
            let [c, f, t] = spec.shape();
            println!("shape={c}x{f}x{t}");
        }
        Command::Train { args } => cmd_train(&args)?,
        Command::Probe { checkpoint, manifest } => {
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let ds = Dataset::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
            let top1 = probe_checkpoint(&ckpt, &ds).context("probing")?;
            println!("top1={top1}");
        }
        Command::Grid { args } => cmd_grid(&args)?,
        Command::Compare { args } => cmd_compare(&args)?,
        Command::Bench {
            count,
            length,
            chain,
            seed,
            out,
        } => {
            let seed = default_seed(seed)?;
            let chain = AugmentChain::parse(&chain, seed).map_err(usage)?;
            let corpus: Vec<_> = if count == 0 {
                Vec::new()
            } else {
                let spec = SyntheticSpec {
                    n_classes: 10,
                    per_class: count.div_ceil(10),
                    length,
                    sample_rate: 16000,
                };
                let ds = gen_synthetic(&spec, seed).map_err(usage)?;
                (0..count).map(|i| ds.audio(i).clone()).collect()
            };
            let report = bench_featurize(&corpus, &chain, &StftConfig::default()).context("benchmark")?;
            let csv = report.to_csv();
            match out {
                Some(path) => std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn prepare(args: &[String], extra: &[(&str, serde_json::Value)]) -> Result<(ResolvedConfig, Dataset), Failure> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let resolved = overrides::resolve(args, env_seed.as_deref(), extra)?;
    let manifest = resolved.manifest.clone();
    std::fs::create_dir_all(&resolved.out).with_context(|| format!("creating {}", resolved.out.display()))?;
    write(&resolved.out.join("config.json"), &resolved.effective_json())?;
    let ds = Dataset::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
    Ok((resolved, ds))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_train(args: &[String]) -> Result<(), Failure> {
    let (resolved, ds) = prepare(args, &[])?;
    let cfg = &resolved.train;
    let out = train_with(cfg, &ds, |r| {
        let probe = r.probe_top1.map(|p| format!(" probe_top1={p}")).unwrap_or_default();
        eprintln!(
            "epoch {} total={:.5} nt_xent={:.5} ce={:.5} lr={:.5}{probe}",
            r.epoch, r.total, r.nt_xent, r.ce, r.lr
        );
    })
    .context("training")?;
    let dir = &resolved.out;
    out.checkpoint
        .save(dir.join("checkpoint.bin"))
        .context("writing checkpoint")?;
    write(&dir.join("metrics.csv"), &out.metrics.epochs_csv())?;
    write(&dir.join("steps.csv"), &out.metrics.steps_csv())?;
    let top1 = out.metrics.final_probe().expect("final epoch is probed");
    let summary = serde_json::json!({
        "mode": cfg.mode,
        "label_fraction": cfg.label_fraction,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "final_top1": top1,
        "probe_curve": out.metrics.probe_curve(),
        "wall_seconds": out.metrics.wall_seconds(),
    });
    write(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    println!("top1={top1}");
    Ok(())
}

fn cmd_grid(args: &[String]) -> Result<(), Failure> {
    let default_kinds = serde_json::json!(AugmentKind::ALL.iter().map(|k| k.code()).collect::<Vec<_>>());
    let (resolved, ds) = prepare(args, &[("kinds", default_kinds)])?;
    let kinds: Vec<AugmentKind> = resolved
        .extra_list("kinds")?
        .iter()
        .map(|c| AugmentKind::from_code(c).map_err(usage))
        .collect::<Result<_, _>>()?;
    let grid = grid_experiment(&resolved.train, &kinds, &ds).context("grid experiment")?;
    let csv = grid.to_csv();
    write(&resolved.out.join("grid.csv"), &csv)?;
    print!("{csv}");
    println!("top1={}", grid.grand_mean);
    Ok(())
}

fn cmd_compare(args: &[String]) -> Result<(), Failure> {
    let (resolved, ds) = prepare(args, &[("fractions", serde_json::json!(["1", "0.1"]))])?;
    let fractions: Vec<f64> = resolved
        .extra_list("fractions")?
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| usage(format!("bad fraction {f:?}"))))
        .collect::<Result<_, _>>()?;
    let report = compare_modes(&resolved.train, &fractions, &ds).map_err(|e| match e {
        clarion::trainer::TrainError::Config(m) => usage(m),
        other => Failure::Runtime(anyhow::Error::new(other).context("compare")),
    })?;
    let table = report.table_csv();
    write(&resolved.out.join("table.csv"), &table)?;
    write(&resolved.out.join("curves.csv"), &report.curves_csv())?;
    write(
        &resolved.out.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("json"),
    )?;
    print!("{table}");
    println!("top1={}", report.clar[0].final_top1);
    Ok(())
}
