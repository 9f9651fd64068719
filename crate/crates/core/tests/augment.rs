mod common;

use clarion::audio::AudioBuffer;
use clarion::augment::*;
use clarion::random::{keyed_rng, RandomKey, RandomSource};
use common::{band_power, peak_hz, rms, rms_diff, tone, SR};
use proptest::prelude::*;

fn src(seed: u64) -> RandomSource {
    RandomSource::from_seed(seed)
}

fn ramp(len: usize) -> AudioBuffer {
    AudioBuffer::from_f64(
        &(0..len)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 64.0)
            .collect::<Vec<_>>(),
        SR,
    )
    .unwrap()
}

#[test]
fn pitch_shift_round_trip_and_octaves() {
    let t = tone(440.0, 16000, 0.5);
    let same = pitch_shift(&t, 0.0).unwrap();
    let err = rms_diff(&same.to_f64(), &t.to_f64());
    assert!(err < 1e-3, "rms error {err}");
    for (st, want) in [(12.0, 880.0), (-12.0, 220.0)] {
        let out = pitch_shift(&t, st).unwrap();
        assert_eq!(out.len(), t.len());
        let (peak, bin) = peak_hz(&out.to_f64()[..4000]);
        assert!((peak - want).abs() <= bin, "{st}: peak {peak}");
    }
    assert!(pitch_shift(&t, 15.5).is_err());
}

#[test]
fn time_stretch_keeps_pitch_and_moves_events() {
    let t = tone(440.0, 16000, 0.5);
    let same = time_stretch(&t, 1.0).unwrap();
    assert!(rms_diff(&same.to_f64(), &t.to_f64()) < 1e-3);
    let fast = time_stretch(&t, 1.5).unwrap();
    assert_eq!(fast.len(), 16000);
    let (peak, bin) = peak_hz(&fast.to_f64()[..4000]);
    assert!((peak - 440.0).abs() <= bin, "peak {peak}");

    let mut click = vec![0.0; 16000];
    click[12000] = 1.0;
    let out = time_stretch(&AudioBuffer::from_f64(&click, SR).unwrap(), 1.5)
        .unwrap()
        .to_f64();
    let onset = (0..out.len() - 64)
        .max_by(|&a, &b| {
            let e = |s: usize| out[s..s + 64].iter().map(|v| v * v).sum::<f64>();
            e(a).total_cmp(&e(b))
        })
        .unwrap()
        + 32;
    assert!((onset as i64 - 8000).abs() <= 256, "onset {onset}");
    assert!(time_stretch(&t, 0.4).is_err());
    assert!(time_stretch(&t, 1.6).is_err());
}

#[test]
fn fade_examples_and_envelopes() {
    let ones = AudioBuffer::new(vec![1.0; 16], SR).unwrap();
    assert_eq!(fade(&ones, FadeShape::Linear, 0, 0).unwrap(), ones);
    let out = fade(&ones, FadeShape::Linear, 4, 0).unwrap();
    assert_eq!(&out.samples()[..5], &[0.0, 0.25, 0.5, 0.75, 1.0]);
    assert!(fade(&ones, FadeShape::Linear, 9, 0).is_err());
    for shape in [FadeShape::Linear, FadeShape::Logarithmic, FadeShape::Exponential] {
        assert_eq!(shape.envelope(0.0), 0.0);
        assert_eq!(shape.envelope(1.0), 1.0);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let e = shape.envelope(i as f64 / 1000.0);
            assert!(e >= prev, "{shape:?} not monotone at {i}");
            prev = e;
        }
    }
}

#[test]
fn noise_injection_realizes_the_target_snr() {
    let t = tone(440.0, 16000, 0.5);
    let quiet = noise_inject(&t, NoiseColor::White, 100.0, &mut src(1)).unwrap();
    assert!(rms_diff(&quiet.to_f64(), &t.to_f64()) < 1e-4);
    for color in NoiseColor::ALL {
        for snr in [0.0, 5.0, 10.0, 20.0, 30.0, 40.0] {
            let out = noise_inject(&t, color, snr, &mut src(snr as u64)).unwrap().to_f64();
            let noise: Vec<f64> = out.iter().zip(t.to_f64()).map(|(o, s)| o - s).collect();
            let realized = 20.0 * (rms(&t.to_f64()) / rms(&noise)).log10();
            assert!((realized - snr).abs() < 0.5, "{color:?} {snr}: {realized}");
        }
    }
    let silent = AudioBuffer::new(vec![0.0; 64], SR).unwrap();
    assert_eq!(
        noise_inject(&silent, NoiseColor::Pink, 10.0, &mut src(0)),
        Err(AugmentError::SilentSignal)
    );
}

#[test]
fn pink_noise_has_equal_octave_power() {
    let (mut lo, mut hi) = (0.0, 0.0);
    for seed in 0..20 {
        let n = colored_noise(4096, NoiseColor::Pink, &mut keyed_rng(&[seed]));
        lo += band_power(&n, 500.0, 1000.0);
        hi += band_power(&n, 1000.0, 2000.0);
    }
    let db = 10.0 * (lo / hi).log10();
    assert!(db.abs() < 1.5, "octave ratio {db} dB");
}

#[test]
fn time_mask_examples() {
    let ones = AudioBuffer::new(vec![1.0; 8], SR).unwrap();
    assert_eq!(time_mask(&ones, 3, 0, MaskFill::Constant, &mut src(0)).unwrap(), ones);
    let out = time_mask(&ones, 2, 1, MaskFill::Constant, &mut src(0)).unwrap();
    assert_eq!(out.samples(), &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let r = ramp(800);
    let noisy = time_mask(&r, 300, 100, MaskFill::GaussianNoise, &mut src(3)).unwrap();
    assert_eq!(&noisy.samples()[..300], &r.samples()[..300]);
    assert_eq!(&noisy.samples()[400..], &r.samples()[400..]);
    assert!(time_mask(&r, 0, 101, MaskFill::Constant, &mut src(0)).is_err());
    assert!(time_mask(&r, 750, 100, MaskFill::Constant, &mut src(0)).is_err());
}

#[test]
fn time_shift_examples() {
    let b = AudioBuffer::new(vec![1.0, 2.0, 3.0, 4.0], SR).unwrap();
    assert_eq!(time_shift(&b, 0).unwrap(), b);
    assert_eq!(time_shift(&b, 1).unwrap().samples(), &[4.0, 1.0, 2.0, 3.0]);
    assert_eq!(time_shift(&b, -2).unwrap().samples(), &[3.0, 4.0, 1.0, 2.0]);
    assert!(time_shift(&b, 3).is_err());
}

#[test]
fn parameter_draws_stay_in_range() {
    for seed in 0..500 {
        match sample_params(AugmentKind::PitchShift, 16000, &mut src(seed)) {
            AugmentParams::PitchShift { semitones } => assert!((-15.0..=15.0).contains(&semitones)),
            p => panic!("{p:?}"),
        }
        match sample_params(AugmentKind::TimeMask, 16000, &mut src(seed)) {
            AugmentParams::TimeMask { start, len, .. } => assert!(len <= 2000 && start + len <= 16000),
            p => panic!("{p:?}"),
        }
    }
    let key = RandomKey {
        seed: 4,
        sample_index: 9,
        epoch: 2,
        view: 1,
        stage: 0,
    };
    for kind in AugmentKind::ALL {
        assert_eq!(
            sample_params(kind, 16000, &mut RandomSource::new(key)),
            sample_params(kind, 16000, &mut RandomSource::new(key))
        );
    }
}

#[test]
fn chains_compose_stages() {
    let b = ramp(16000);
    let key = ViewKey {
        sample_index: 3,
        epoch: 1,
        view: 0,
    };
    let empty = AugmentChain::new(vec![], 5);
    assert_eq!(apply_chain(&b, &empty, key).unwrap(), b);
    assert_eq!(make_views(&b, &empty, 0, 0).unwrap(), (b.clone(), b.clone()));

    let shift = AugmentChain::new(vec![AugmentKind::TimeShift], 5);
    let AugmentParams::TimeShift { shift: s } = chain_params(&shift, key, b.len())[0] else {
        panic!()
    };
    assert_eq!(apply_chain(&b, &shift, key).unwrap(), time_shift(&b, s).unwrap());

    let fm = AugmentChain::parse("fd+tm", 5).unwrap();
    assert_eq!(apply_chain(&b, &fm, key).unwrap().len(), 16000);
    assert_eq!(make_views(&b, &fm, 3, 1).unwrap(), make_views(&b, &fm, 3, 1).unwrap());
    assert_eq!(
        AugmentChain::parse("fd+xx", 0),
        Err(AugmentError::UnknownCode("xx".into()))
    );
}

#[test]
fn shifted_views_differ() {
    let b = ramp(16000);
    let same = (0..100u64)
        .filter(|&seed| {
            let chain = AugmentChain::new(vec![AugmentKind::TimeShift], seed);
            let (v1, v2) = make_views(&b, &chain, 0, 0).unwrap();
            v1 == v2
        })
        .count();
    assert!(same <= 1, "{same} identical pairs");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_augmentation_preserves_length(len in 64usize..3000, seed in 0u64..1000) {
        let b = ramp(len);
        for kind in AugmentKind::ALL {
            let mut s = src(seed);
            let p = sample_params(kind, len, &mut s);
            prop_assert_eq!(p.apply(&b, &mut s).unwrap().len(), len, "{:?}", kind);
        }
    }

    #[test]
    fn time_shift_is_a_rotation(values in prop::collection::vec(-1.0f32..1.0, 2..100), k in 0usize..50) {
        let b = AudioBuffer::new(values.clone(), SR).unwrap();
        let k = (k % (values.len() / 2 + 1)) as i64;
        let out = time_shift(&b, k).unwrap();
        let mut a = values.clone();
        let mut o = out.samples().to_vec();
        a.sort_by(f32::total_cmp);
        o.sort_by(f32::total_cmp);
        prop_assert_eq!(a, o);
        prop_assert_eq!(time_shift(&out, -k).unwrap(), b);
    }
}
