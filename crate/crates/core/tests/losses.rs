mod common;

use clarion::losses::*;
use clarion::random::keyed_rng;
use common::brute_nt_xent;
use proptest::prelude::*;
use rand::Rng;

const TAUS: [f64; 3] = [0.05, 0.5, 1.0];

fn batch(rows: &[Vec<f64>]) -> EmbeddingBatch {
    let dim = rows[0].len();
    EmbeddingBatch::new(rows.concat(), rows.len(), dim).unwrap()
}

fn random_rows(rng: &mut impl Rng, m: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn nt_xent_matches_brute_force_on_random_batches() {
    let mut rng = keyed_rng(&[11]);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let tau = TAUS[i % 3];
        let rows = random_rows(&mut rng, 2 * n, d);
        let got = nt_xent(&batch(&rows), &NtXentConfig { temperature: tau }).unwrap();
        let want = brute_nt_xent(&rows, tau);
        worst = worst.max((got - want).abs() / want.abs());
    }
    assert!(worst < 1e-10, "relative error {worst}");
}

#[test]
fn nt_xent_closed_forms() {
    let cfg = NtXentConfig { temperature: 0.5 };
    let pair = batch(&[vec![0.3, -2.0], vec![1.0, 0.7]]);
    assert_eq!(nt_xent(&pair, &cfg).unwrap(), 0.0);
    let same = batch(&vec![vec![1.0, 2.0, 3.0]; 4]);
    assert!((nt_xent(&same, &cfg).unwrap() - 3f64.ln()).abs() < 1e-12);
    let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let got = nt_xent(&batch(&rows), &cfg).unwrap();
    assert!((got - brute_nt_xent(&rows, 0.5)).abs() < 1e-10);
    assert!(nt_xent(&same, &NtXentConfig { temperature: 0.0 }).is_err());
    let zero = batch(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
    assert!(nt_xent(&zero, &cfg).is_err());
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn cross_entropy_examples() {
    let ll = LabeledLogits::new(vec![0.0, 20.0], 2, vec![Some(1)]).unwrap();
    assert!(cross_entropy(&ll, CeReduction::Mean) < 1e-8);
    let mut peaked = vec![0.0; 10];
    peaked[3] = 20.0;
    let ll = LabeledLogits::new(peaked, 10, vec![Some(3)]).unwrap();
    let want = (1.0 + 9.0 * (-20f64).exp()).ln();
    assert!((cross_entropy(&ll, CeReduction::Mean) - want).abs() < 1e-6 * want);
    let uniform = LabeledLogits::new(vec![0.5; 20], 10, vec![Some(1), Some(9)]).unwrap();
    assert!((cross_entropy(&uniform, CeReduction::Mean) - 10f64.ln()).abs() < 1e-12);
    assert!((cross_entropy(&uniform, CeReduction::Sum) - 2.0 * 10f64.ln()).abs() < 1e-12);
    let none = LabeledLogits::new(vec![3.0; 20], 10, vec![None, None]).unwrap();
    assert_eq!(cross_entropy_with_grad(&none, CeReduction::Mean), (0.0, vec![0.0; 20]));
    assert!(LabeledLogits::new(vec![0.0; 4], 2, vec![Some(2), None]).is_err());
}

#[test]
fn clar_loss_reductions() {
    let cfg = NtXentConfig { temperature: 0.5 };
    let same = batch(&vec![vec![1.0, 2.0]; 4]);
    let unlabeled = LabeledLogits::new(vec![0.1; 40], 10, vec![None; 4]).unwrap();
    let l = clar_loss(&same, &cfg, &unlabeled, CeReduction::Mean).unwrap();
    assert_eq!(l.total, nt_xent(&same, &cfg).unwrap());
    assert_eq!(l.ce, 0.0);
    let labeled = LabeledLogits::new(vec![0.0; 40], 10, vec![Some(0), Some(1), Some(2), Some(3)]).unwrap();
    let l = clar_loss(&same, &cfg, &labeled, CeReduction::Mean).unwrap();
    assert!((l.total - (3f64.ln() + 10f64.ln())).abs() < 1e-12);

    let mut rng = keyed_rng(&[5]);
    for _ in 0..20 {
        let rows = random_rows(&mut rng, 8, 6);
        let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<Option<usize>> = (0..8).map(|i| (i % 3 != 0).then_some(i % 3)).collect();
        let ll = LabeledLogits::new(logits, 3, labels).unwrap();
        let l = clar_loss(&batch(&rows), &cfg, &ll, CeReduction::Mean).unwrap();
        let want = brute_nt_xent(&rows, 0.5) + cross_entropy(&ll, CeReduction::Mean);
        assert!((l.total - want).abs() < 1e-10 * want);
    }
}

#[test]
fn analytic_gradients_match_differences() {
    let mut rng = keyed_rng(&[9]);
    for tau in TAUS {
        let rows = random_rows(&mut rng, 6, 4);
        let b = batch(&rows);
        let cfg = NtXentConfig { temperature: tau };
        let (_, grad) = nt_xent_with_grad(&b, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..b.values().len() {
            let mut up = b.values().to_vec();
            up[i] += h;
            let mut down = b.values().to_vec();
            down[i] -= h;
            let f = |v: Vec<f64>| nt_xent(&EmbeddingBatch::new(v, 6, 4).unwrap(), &cfg).unwrap();
            let fd = (f(up) - f(down)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "tau {tau} index {i}: {fd} vs {}",
                grad[i]
            );
        }
    }
}

proptest! {
    #[test]
    fn nt_xent_is_scale_and_order_invariant(
        seed in 0u64..10_000,
        n in 2usize..6,
        scale in 0.1f64..10.0,
        tau_i in 0usize..3,
    ) {
        let mut rng = keyed_rng(&[seed]);
        let rows = random_rows(&mut rng, 2 * n, 5);
        let cfg = NtXentConfig { temperature: TAUS[tau_i] };
        let base = nt_xent(&batch(&rows), &cfg).unwrap();
        prop_assert!(base > 0.0);
        // Terms are O(1) before they cancel, so near-zero losses keep an absolute floor.
        let tol = 1e-12 + 1e-9 * base;
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        prop_assert!((nt_xent(&batch(&scaled), &cfg).unwrap() - base).abs() < tol);
        let mut swapped = rows[n..].to_vec();
        swapped.extend_from_slice(&rows[..n]);
        prop_assert!((nt_xent(&batch(&swapped), &cfg).unwrap() - base).abs() < tol);
        let mut rotated = rows.clone();
        rotated[..n].rotate_left(1);
        rotated[n..].rotate_left(1);
        prop_assert!((nt_xent(&batch(&rotated), &cfg).unwrap() - base).abs() < tol);
    }

    #[test]
    fn cross_entropy_is_shift_invariant(shift in -50.0f64..50.0, seed in 0u64..10_000) {
        let mut rng = keyed_rng(&[seed]);
        let logits: Vec<f64> = (0..12).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels = vec![Some(0), None, Some(3)];
        let a = cross_entropy(&LabeledLogits::new(logits.clone(), 4, labels.clone()).unwrap(), CeReduction::Mean);
        let shifted = logits.iter().map(|v| v + shift).collect();
        let b = cross_entropy(&LabeledLogits::new(shifted, 4, labels).unwrap(), CeReduction::Mean);
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() < 1e-9);
    }
}

