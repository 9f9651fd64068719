//! Gradient checks against central finite differences.

use clarion::losses::{CeReduction, NtXentConfig};
use clarion::nn::{Encoder, EncoderConfig, EncoderVariant, Graph, ParamStore, Phase, ProjectionHead, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error between analytic and numeric gradients over `coords`
/// sampled coordinates of every parameter, as `||a - n|| / max(||a||, ||n||)`.
pub fn check<F>(store: &mut ParamStore, coords: usize, seed: u64, loss: F) -> f64
where
    F: Fn(&ParamStore, &mut Graph) -> Var,
{
    let mut g = Graph::new();
    let l = loss(store, &mut g);
    let grads = g.backward(l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diff, mut an, mut nu) = (0.0, 0.0, 0.0);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let analytic = grads.get(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for _ in 0..coords.min(n) {
            let i = rng.random_range(0..n);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + H;
            let plus = {
                let mut g = Graph::new();
                let l = loss(store, &mut g);
                g.value(l).item()
            };
            store.get_mut(id).data_mut()[i] = orig - H;
            let minus = {
                let mut g = Graph::new();
                let l = loss(store, &mut g);
                g.value(l).item()
            };
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            diff += (analytic[i] - numeric).powi(2);
            an += analytic[i].powi(2);
            nu += numeric.powi(2);
        }
    }
    diff.sqrt() / an.sqrt().max(nu.sqrt()).max(1e-12)
}

pub struct Composite {
    pub encoder: Encoder,
    pub head: ProjectionHead,
    pub input: Tensor,
    pub labels: Vec<Option<usize>>,
}

pub fn composite(
    seed: u64,
    variant: EncoderVariant,
    widths: Vec<usize>,
    items: usize,
    store: &mut ParamStore,
) -> Composite {
    let cfg = EncoderConfig {
        variant,
        widths,
        kernel: 3,
        blocks: 2,
        ..EncoderConfig::default()
    };
    let encoder = Encoder::new(&cfg, store, "encoder", seed).unwrap();
    let head = ProjectionHead::new(store, "head", encoder.out_dim(), Some(3), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = match variant {
        EncoderVariant::Conv1d => vec![2 * items, 1, 40],
        EncoderVariant::Conv2d => vec![2 * items, 3, 8, 6],
    };
    let input = random_tensor(&mut rng, &shape);
    let labels = (0..2 * items)
        .map(|i| (i % items != 0).then(|| rng.random_range(0..3)))
        .collect();
    Composite {
        encoder,
        head,
        input,
        labels,
    }
}

/// Finite-difference error of NT-Xent plus masked CE through encoder and
/// projection head.
pub fn composite_error(
    seed: u64,
    variant: EncoderVariant,
    widths: Vec<usize>,
    items: usize,
    tau: f64,
    reduction: CeReduction,
) -> f64 {
    let mut store = ParamStore::new();
    let c = composite(seed, variant, widths, items, &mut store);
    let ntx = NtXentConfig { temperature: tau };
    check(&mut store, 12, seed, |s, g| {
        let x = g.input(c.input.clone());
        let rep = c.encoder.forward(g, s, x, Phase::Train).unwrap();
        let out = c.head.forward(g, s, rep).unwrap();
        let nt = g.nt_xent(out.z, &ntx).unwrap();
        let ce = g.cross_entropy(out.logits.unwrap(), &c.labels, reduction).unwrap();
        g.add(nt, ce).unwrap()
    })
}

/// The composite configurations exercised by the gradient checks.
pub fn composite_configs() -> Vec<(u64, EncoderVariant, Vec<usize>, usize, f64, CeReduction)> {
    vec![
        (11, EncoderVariant::Conv2d, vec![3, 4], 2, 0.5, CeReduction::Mean),
        (12, EncoderVariant::Conv2d, vec![2, 3], 3, 0.1, CeReduction::Mean),
        (13, EncoderVariant::Conv1d, vec![3, 4], 2, 0.5, CeReduction::Sum),
        (14, EncoderVariant::Conv2d, vec![4], 4, 1.0, CeReduction::Sum),
        (15, EncoderVariant::Conv1d, vec![2, 2, 3], 3, 0.5, CeReduction::Mean),
    ]
}
