//! Parameterized layers. Each layer registers its tensors in a
//! [`ParamStore`] under a name prefix and records its forward pass on a
//! [`Graph`].

use rand::Rng;

use super::{BnStats, Graph, NnError, ParamId, ParamStore, Phase, Tensor, Var, WindowGeom};
use crate::random::{keyed_rng, label_key};

/// Kaiming-uniform tensor: `U(-b, b)` with `b = sqrt(6 / fan_in)`. The draw
/// is keyed by `(seed, name)` so adding a layer never perturbs the others.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = keyed_rng(&[seed, label_key(name)]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: WindowGeom,
    pub out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: WindowGeom,
        bias: bool,
        seed: u64,
    ) -> Self {
        let [kh, kw] = geom.kernel;
        let wname = format!("{name}.weight");
        let shape = [out_channels, in_channels, kh, kw];
        let weight = store.add(&wname, kaiming_uniform(&shape, in_channels * kh * kw, seed, &wname));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self {
            weight,
            bias,
            geom,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.geom)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BnStats,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.weight"), Tensor::filled(&[channels], 1.0));
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[channels]));
        let mean = store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let var = store.add_buffer(format!("{name}.running_var"), Tensor::filled(&[channels], 1.0));
        Self {
            gamma,
            beta,
            stats: BnStats { mean, var },
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, phase: Phase) -> Result<Var, NnError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm(store, x, gamma, beta, self.stats, phase)
    }
}

/// Fully connected layer `x W^T + b`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let wname = format!("{name}.weight");
        let weight = store.add(&wname, kaiming_uniform(&[out_dim, in_dim], in_dim, seed, &wname));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}
