//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clarion::audio::{load_wav, save_wav, AudioBuffer};
use clarion::augment::*;
use clarion::data::{gen_synthetic, Dataset, Split, SyntheticSpec};
use clarion::features::{featurize, log_power_value, stft, StftConfig};
use clarion::losses::{nt_xent, EmbeddingBatch, NtXentConfig};
use clarion::nn::{Checkpoint, EncoderConfig};
use clarion::optim::{lr_at, LarsConfig, Schedule};
use clarion::random::{keyed_rng, RandomSource};
use clarion::trainer::*;
use common::grad::{composite_configs, composite_error};
use common::{band_power, brute_nt_xent, naive_dft, peak_hz, rms, rms_diff, tone, SR};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(id: &str, name: &str, limit: Option<Duration>, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check));
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match outcome {
        Ok(v) => (v.pass, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(limit) = limit {
        detail.push_str(&format!("; {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()));
        pass &= elapsed < limit;
    } else {
        detail.push_str(&format!("; {:.1}s", elapsed.as_secs_f64()));
    }
    println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn synthetic(n_classes: usize, per_class: usize, length: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        n_classes,
        per_class,
        length,
        sample_rate: SR,
    };
    gen_synthetic(&spec, seed).unwrap()
}

fn small_config(mode: Mode, label_fraction: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        mode,
        label_fraction,
        epochs,
        warmup_epochs: 1,
        batch_size: 8,
        encoder: EncoderConfig {
            widths: vec![4, 6],
            ..EncoderConfig::default()
        },
        optimizer: LarsConfig {
            base_lr: 0.3,
            ..LarsConfig::default()
        },
        probe_every: 0,
        probe: ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn nt_xent_oracle() -> Verdict {
    const TOL: f64 = 1e-10;
    const TAUS: [f64; 3] = [0.05, 0.5, 1.0];
    let mut rng = keyed_rng(&[2024]);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let rows: Vec<Vec<f64>> = (0..2 * n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = EmbeddingBatch::new(rows.concat(), 2 * n, d).unwrap();
        let tau = TAUS[i % 3];
        let got = nt_xent(&batch, &NtXentConfig { temperature: tau }).unwrap();
        let want = brute_nt_xent(&rows, tau);
        worst = worst.max((got - want).abs() / want.abs());
    }
    let cfg = NtXentConfig { temperature: 0.5 };
    let single = EmbeddingBatch::new(vec![0.3, -1.0, 2.0, 0.1], 2, 2).unwrap();
    let mut closed = nt_xent(&single, &cfg).unwrap() == 0.0;
    for n in 2..=8usize {
        let same = EmbeddingBatch::new([1.5, -0.5, 2.0].repeat(2 * n), 2 * n, 3).unwrap();
        let want = ((2 * n - 1) as f64).ln();
        closed &= (nt_xent(&same, &cfg).unwrap() - want).abs() <= 4.0 * f64::EPSILON * want;
    }
    verdict(
        worst < TOL && closed,
        format!("200 batches max rel err {worst:.2e} (tol {TOL:e}); closed forms {closed}"),
    )
}

fn gradient_check() -> Verdict {
    const TOL: f64 = 1e-4;
    let errors: Vec<f64> = composite_configs()
        .into_iter()
        .map(|(seed, variant, widths, items, tau, reduction)| {
            composite_error(seed, variant, widths, items, tau, reduction)
        })
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    verdict(
        errors.len() >= 5 && worst < TOL,
        format!("{} configurations, max rel err {worst:.2e} (tol {TOL:e})", errors.len()),
    )
}

fn featurize_contract() -> Verdict {
    const TOL: f64 = 1e-6;
    let cfg = StftConfig::default();
    let mut state = 0x9e3779b97f4a7c15u64;
    let noise: Vec<f64> = (0..16000)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let buf = AudioBuffer::from_f64(&noise, SR).unwrap();
    let spec = stft(&buf, &cfg).unwrap();
    let x = buf.to_f64();
    let hann: Vec<f64> = (0..cfg.win_len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.win_len as f64).cos())
        .collect();
    let mut worst: f64 = 0.0;
    for t in [0, 1, 50, 123] {
        let mut frame = vec![0.0; cfg.fft_size];
        for i in 0..cfg.win_len {
            frame[i] = hann[i] * x[t * cfg.hop + i];
        }
        let want = naive_dft(&frame);
        let scale = want.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
        for (k, (re, im)) in want.iter().enumerate() {
            let got = spec.at(k, t);
            worst = worst.max((got.re - re).hypot(got.im - im) / scale);
        }
    }
    let mut shapes = true;
    for len in [256usize, 300, 4000, 16000] {
        let t = (len - 256) / 128 + 1;
        let s = featurize(&tone(440.0, len, 0.5), &cfg).unwrap();
        shapes &= s.shape() == [3, 128, t];
    }
    shapes &= featurize(&buf, &cfg).unwrap().shape() == [3, 128, 124];
    let logs = log_power_value(1.0) == 0.0 && log_power_value(10.0) == 20.0;
    verdict(
        worst < TOL && shapes && logs,
        format!("frame err {worst:.2e} (tol {TOL:e}); shape 3x128xT {shapes}; log_power(1)=0, log_power(10)=20 {logs}"),
    )
}

fn augmentation_suite() -> Verdict {
    let mut failures: Vec<String> = Vec::new();
    let mut fail = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };
    let t = tone(440.0, 16000, 0.5);
    for kind in AugmentKind::ALL {
        let chain = AugmentChain::parse(kind.code(), 3).unwrap();
        for sample_index in 0..5 {
            let key = ViewKey {
                sample_index,
                epoch: 1,
                view: 0,
            };
            let out = apply_chain(&t, &chain, key).unwrap();
            fail(out.len() == t.len(), format!("{} changed length", kind.code()));
        }
    }

    let b = AudioBuffer::new(vec![1.0, 2.0, 3.0, 4.0], SR).unwrap();
    for (k, want) in [
        (1i64, [4.0, 1.0, 2.0, 3.0]),
        (-1, [2.0, 3.0, 4.0, 1.0]),
        (2, [3.0, 4.0, 1.0, 2.0]),
    ] {
        let got = time_shift(&b, k).unwrap();
        fail(
            got.samples() == want,
            format!("time_shift {k} gave {:?}", got.samples()),
        );
        let mut sorted = got.samples().to_vec();
        sorted.sort_by(f32::total_cmp);
        fail(sorted == b.samples(), format!("time_shift {k} changed the multiset"));
    }

    let mut worst_snr: f64 = 0.0;
    for color in NoiseColor::ALL {
        for snr in [0.0, 10.0, 20.0, 30.0, 40.0] {
            let out = noise_inject(&t, color, snr, &mut RandomSource::from_seed(snr as u64))
                .unwrap()
                .to_f64();
            let noise: Vec<f64> = out.iter().zip(t.to_f64()).map(|(o, s)| o - s).collect();
            let realized = 20.0 * (rms(&t.to_f64()) / rms(&noise)).log10();
            worst_snr = worst_snr.max((realized - snr).abs());
        }
    }
    fail(worst_snr < 0.5, format!("snr off by {worst_snr:.3} dB"));

    let (mut lo, mut hi) = (0.0, 0.0);
    for seed in 0..20 {
        let n = colored_noise(4096, NoiseColor::Pink, &mut keyed_rng(&[seed]));
        lo += band_power(&n, 500.0, 1000.0);
        hi += band_power(&n, 1000.0, 2000.0);
    }
    let octave_db = 10.0 * (lo / hi).log10();
    fail(octave_db.abs() < 1.5, format!("pink octave ratio {octave_db:.2} dB"));

    for (st, want) in [(12.0, 880.0), (-12.0, 220.0)] {
        let (peak, bin) = peak_hz(&pitch_shift(&t, st).unwrap().to_f64()[..4000]);
        fail((peak - want).abs() <= bin, format!("pitch_shift {st}: peak {peak}"));
    }

    let (peak, bin) = peak_hz(&time_stretch(&t, 1.5).unwrap().to_f64()[..4000]);
    fail((peak - 440.0).abs() <= bin, format!("time_stretch peak {peak}"));
    let mut click = vec![0.0; 16000];
    click[12000] = 1.0;
    let click = AudioBuffer::from_f64(&click, SR).unwrap();
    for rate in [0.8, 1.5] {
        let out = time_stretch(&click, rate).unwrap().to_f64();
        let energy = |s: usize| out[s..s + 64].iter().map(|v| v * v).sum::<f64>();
        let onset = (0..out.len() - 64)
            .max_by(|&a, &b| energy(a).total_cmp(&energy(b)))
            .unwrap()
            + 32;
        let want = 12000.0 / rate;
        if want < 16000.0 {
            fail(
                (onset as f64 - want).abs() <= 256.0,
                format!("click at rate {rate}: {onset} vs {want}"),
            );
        }
    }
    fail(
        rms_diff(&time_stretch(&t, 1.0).unwrap().to_f64(), &t.to_f64()) < 1e-3,
        "time_stretch(1) not identity".into(),
    );

    for shape in [FadeShape::Linear, FadeShape::Logarithmic, FadeShape::Exponential] {
        let ends = shape.envelope(0.0) == 0.0 && shape.envelope(1.0) == 1.0;
        let monotone = (0..1000).all(|i| shape.envelope(i as f64 / 1000.0) <= shape.envelope((i + 1) as f64 / 1000.0));
        fail(ends && monotone, format!("{shape:?} envelope"));
    }

    let pass = failures.is_empty();
    let detail = if pass {
        format!("length, shift, snr (worst {worst_snr:.3} dB), pink ({octave_db:.2} dB), pitch, stretch, fade all hold")
    } else {
        failures.join("; ")
    };
    verdict(pass, detail)
}

fn mode_reduction() -> Verdict {
    let ds = synthetic(4, 10, 1024, 7);
    let epochs = 5;
    let a = train(&small_config(Mode::Selfsup, 0.0, epochs), &ds).unwrap();
    let b = train(&small_config(Mode::Clar, 0.0, epochs), &ds).unwrap();
    let bits = |m: &MetricsLog| m.steps.iter().map(|s| s.total.to_bits()).collect::<Vec<_>>();
    let (x, y) = (bits(&a.metrics), bits(&b.metrics));
    verdict(
        x.len() == 20 && x == y,
        format!("{} steps compared, bitwise equal {}", x.len(), x == y),
    )
}

/// Desk-scale comparison of the three training modes.
mod trends {
    use super::*;

    pub const SEEDS: [u64; 3] = [0, 1, 2];
    pub const DATA_SEED: u64 = 7;
    pub const PER_CLASS: usize = 20;
    pub const LENGTH: usize = 2048;
    pub const EPOCHS: usize = 200;
    pub const PROBE_EVERY: usize = 10;
    pub const BASE_LR: f64 = 0.1;
    pub const TRUST: f64 = 0.01;

    pub fn config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: EPOCHS,
            batch_size: 32,
            seed,
            probe_every: PROBE_EVERY,
            encoder: EncoderConfig {
                widths: vec![4, 8],
                ..EncoderConfig::default()
            },
            optimizer: LarsConfig {
                base_lr: BASE_LR,
                trust_coefficient: TRUST,
                ..LarsConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    /// First probed epoch reaching `target`.
    pub fn epochs_to(curve: &[(usize, f64)], target: f64) -> Option<usize> {
        curve.iter().find(|(_, acc)| *acc >= target).map(|(e, _)| *e)
    }
}

fn trend_reproduction() -> Verdict {
    use trends::*;
    let ds = synthetic(10, PER_CLASS, LENGTH, DATA_SEED);
    let (mut clar_full, mut clar_drop, mut sup_drop, mut ss) = (vec![], vec![], vec![], vec![]);
    let (mut clar_speed, mut ss_speed) = (vec![], vec![]);
    let mut lr_exact = true;
    let mut lr_checked = 0usize;
    for seed in SEEDS {
        let cfg = config(seed);
        let report = compare_modes(&cfg, &[1.0, 0.1], &ds).unwrap();
        clar_full.push(report.clar[0].final_top1);
        clar_drop.push(report.clar[0].final_top1 - report.clar[1].final_top1);
        sup_drop.push(report.supervised[0].final_top1 - report.supervised[1].final_top1);
        ss.push(report.selfsup.final_top1);
        let target = report.selfsup.final_top1;
        let never = (EPOCHS + PROBE_EVERY) as f64;
        clar_speed.push(epochs_to(&report.clar[0].curve, target).map_or(never, |e| e as f64));
        ss_speed.push(epochs_to(&report.selfsup.curve, target).map_or(never, |e| e as f64));
        println!(
            "     seed {seed}: clar {:.3}/{:.3} supervised {:.3}/{:.3} selfsup {:.3}; epochs to selfsup final: clar {} selfsup {}",
            report.clar[0].final_top1,
            report.clar[1].final_top1,
            report.supervised[0].final_top1,
            report.supervised[1].final_top1,
            target,
            clar_speed.last().unwrap(),
            ss_speed.last().unwrap(),
        );

        if seed == SEEDS[0] {
            let run_cfg = TrainConfig {
                mode: Mode::Supervised,
                probe_every: 0,
                ..cfg.clone()
            };
            let out = train(&run_cfg, &ds).unwrap();
            let sched = Schedule {
                warmup_epochs: run_cfg.warmup_epochs,
                total_epochs: run_cfg.epochs,
                steps_per_epoch: ds.manifest.indices(Split::Train).len() / run_cfg.batch_size,
            };
            for s in &out.metrics.steps {
                lr_checked += 1;
                lr_exact &= s.lr == lr_at(&sched, run_cfg.optimizer.base_lr, s.step).unwrap();
            }
            for e in &out.metrics.epochs {
                lr_exact &=
                    e.lr == lr_at(&sched, run_cfg.optimizer.base_lr, e.epoch * sched.steps_per_epoch - 1).unwrap();
            }
        }
    }
    let (cf, s) = (median(clar_full), median(ss));
    let (cs, ssp) = (median(clar_speed), median(ss_speed));
    let (cd, sd) = (median(clar_drop), median(sup_drop));
    let a = cf >= s;
    let b = cs < ssp;
    let c = cd < sd;
    let d = lr_exact && lr_checked > 0;
    verdict(
        a && b && c && d,
        format!(
            "(a) clar {cf:.3} >= selfsup {s:.3}: {a}; (b) clar {cs} < selfsup {ssp} epochs: {b}; \
             (c) clar drop {cd:.3} < supervised drop {sd:.3}: {c}; (d) {lr_checked} logged rates exact: {d}"
        ),
    )
}

fn grid_machinery() -> Verdict {
    let ds = synthetic(4, 10, 1024, 7);
    let base = small_config(Mode::Selfsup, 0.0, 50);
    let kinds = [AugmentKind::Fade, AugmentKind::TimeMask, AugmentKind::TimeShift];
    let grid = grid_experiment(&base, &kinds, &ds).unwrap();
    let mut mismatches = 0;
    for (i, &a) in kinds.iter().enumerate() {
        for (j, &b) in kinds.iter().enumerate() {
            let cfg = TrainConfig {
                chain: grid_chain(a, b),
                ..base.clone()
            };
            let single = train(&cfg, &ds).unwrap().metrics.final_probe().unwrap();
            if single != grid.matrix[i][j] {
                mismatches += 1;
            }
        }
    }
    let shape = grid.matrix.len() == 3 && grid.matrix.iter().all(|r| r.len() == 3);
    let margins = grid.row_means.len() == 3 && grid.col_means.len() == 3 && grid.to_csv().lines().count() == 5;
    verdict(
        shape && margins && mismatches == 0,
        format!("3x3 {shape}, margins {margins}, cells differing from independent runs: {mismatches}"),
    )
}

fn determinism() -> Verdict {
    let ds = synthetic(4, 10, 1024, 7);
    let mut same = true;
    for mode in Mode::ALL {
        let cfg = TrainConfig {
            probe_every: 1,
            ..small_config(mode, 0.5, 3)
        };
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        same &= a.metrics.epochs_csv() == b.metrics.epochs_csv() && a.metrics.steps_csv() == b.metrics.steps_csv();
    }
    verdict(
        same,
        format!("metrics CSVs identical across reruns for every mode: {same}"),
    )
}

fn io_contracts() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = keyed_rng(&[5]);
    let samples: Vec<f64> = (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let buf = AudioBuffer::from_f64(&samples, SR).unwrap();
    let path = dir.path().join("x.wav");
    save_wav(&buf, &path).unwrap();
    let (back, _) = load_wav(&path).unwrap();
    let wav_err = buf
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let wav_ok = back.len() == buf.len() && wav_err <= 1.0 / 32768.0;

    let ds = synthetic(4, 10, 1024, 7);
    let out = train(&small_config(Mode::Clar, 1.0, 3), &ds).unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    out.checkpoint.save(&ckpt_path).unwrap();
    let loaded = Checkpoint::load(&ckpt_path).unwrap();
    let trained = out.metrics.final_probe().unwrap();
    let reprobed = probe_checkpoint(&loaded, &ds).unwrap();
    let ckpt_ok = trained == reprobed;
    verdict(
        wav_ok && ckpt_ok,
        format!("wav max err {wav_err:.2e} (tol 1/32768); probe {trained} after reload {reprobed}"),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f == id);
    let secs = Duration::from_secs;
    type Criterion = (&'static str, &'static str, Option<Duration>, fn() -> Verdict);
    let criteria: Vec<Criterion> = vec![
        ("1", "nt-xent oracle", Some(secs(10)), nt_xent_oracle),
        ("2", "gradient check", Some(secs(120)), gradient_check),
        ("3", "stft and feature shape", None, featurize_contract),
        ("4", "augmentation invariants", Some(secs(60)), augmentation_suite),
        ("5", "clar without labels equals selfsup", None, mode_reduction),
        ("6", "desk-scale trends", None, trend_reproduction),
        ("7", "augmentation grid", None, grid_machinery),
        ("8", "determinism", None, determinism),
        ("9", "wav and checkpoint round trips", None, io_contracts),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, check) in criteria {
        if wanted(id) && !run(id, name, limit, check) {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
