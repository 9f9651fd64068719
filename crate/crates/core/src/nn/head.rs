use super::layers::Affine;
use super::{Graph, NnError, ParamStore, Var};

/// Width of the two hidden layers of every head.
pub const HIDDEN_DIM: usize = 128;
/// Output width of the projection head, where the contrastive loss applies.
pub const PROJECTION_DIM: usize = 128;

/// Three affine layers with ReLU between them.
#[derive(Debug, Clone)]
struct Mlp {
    layers: [Affine; 3],
}

impl Mlp {
    fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let dims = [in_dim, HIDDEN_DIM, HIDDEN_DIM, out_dim];
        let layers =
            std::array::from_fn(|i| Affine::new(store, &format!("{prefix}.fc{i}"), dims[i], dims[i + 1], seed));
        Self { layers }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let in_dim = self.layers[0].in_dim;
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != in_dim {
            return Err(NnError::ShapeMismatch(format!(
                "head expects (B, {in_dim}), got {shape:?}"
            )));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = layer.forward(g, store, h)?;
        }
        Ok(h)
    }
}

pub struct HeadOutput {
    /// Output of the three-layer stack: `(B, 128)`, or `(B, C)` for a
    /// supervised head.
    pub z: Var,
    /// `(B, C)` class logits; absent for a pure projection head.
    pub logits: Option<Var>,
}

#[derive(Debug, Clone)]
enum Terminal {
    Projection,
    Classifier(Affine),
    Supervised(usize),
}

/// Projection head. The contrastive variant ends at 128 dimensions and may
/// carry an extra classifier on top; the supervised variant ends at `C`.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    mlp: Mlp,
    terminal: Terminal,
}

impl ProjectionHead {
    /// 128-dimensional output, plus a `128 -> classes` classifier when
    /// `classes` is given.
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, classes: Option<usize>, seed: u64) -> Self {
        let mlp = Mlp::new(store, prefix, in_dim, PROJECTION_DIM, seed);
        let terminal = match classes {
            Some(c) => Terminal::Classifier(Affine::new(
                store,
                &format!("{prefix}.classifier"),
                PROJECTION_DIM,
                c,
                seed,
            )),
            None => Terminal::Projection,
        };
        Self { mlp, terminal }
    }

    /// Three layers ending directly in `classes` logits.
    pub fn supervised(store: &mut ParamStore, prefix: &str, in_dim: usize, classes: usize, seed: u64) -> Self {
        Self {
            mlp: Mlp::new(store, prefix, in_dim, classes, seed),
            terminal: Terminal::Supervised(classes),
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.terminal {
            Terminal::Projection => None,
            Terminal::Classifier(c) => Some(c.out_dim),
            Terminal::Supervised(c) => Some(*c),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, rep: Var) -> Result<HeadOutput, NnError> {
        let z = self.mlp.forward(g, store, rep)?;
        let logits = match &self.terminal {
            Terminal::Projection => None,
            Terminal::Classifier(c) => Some(c.forward(g, store, z)?),
            Terminal::Supervised(_) => Some(z),
        };
        Ok(HeadOutput { z, logits })
    }
}

/// Same layout as the projection head with a terminal width of `C`.
#[derive(Debug, Clone)]
pub struct EvaluationHead {
    mlp: Mlp,
    classes: usize,
}

impl EvaluationHead {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, classes: usize, seed: u64) -> Self {
        Self {
            mlp: Mlp::new(store, prefix, in_dim, classes, seed),
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, rep: Var) -> Result<Var, NnError> {
        self.mlp.forward(g, store, rep)
    }
}
