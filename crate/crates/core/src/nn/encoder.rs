use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d};
use super::{Graph, NnError, ParamStore, Phase, Var, WindowGeom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    /// Raw waveform input `(B, 1, L)`.
    Conv1d,
    /// Spectrogram input `(B, 3, F, T)`.
    Conv2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderArch {
    /// Stages of `blocks` conv-batchnorm-relu layers, each stage closed by a
    /// max pool.
    Plain,
    /// ResNet18 layout: strided stem, max pool, stages of basic residual
    /// blocks with a stride-2 transition at every stage after the first.
    Resnet18,
}

/// Encoder layout. `kernel` and `pool` are 2D sizes; the 1D variant uses
/// their squares (and squared strides) along the time axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub arch: EncoderArch,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub blocks: usize,
    pub use_batchnorm: bool,
    pub pool: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::Conv2d,
            arch: EncoderArch::Plain,
            widths: vec![16, 32, 64, 128],
            kernel: 3,
            blocks: 1,
            use_batchnorm: true,
            pool: 2,
        }
    }
}

impl EncoderConfig {
    pub fn resnet18(variant: EncoderVariant) -> Self {
        Self {
            variant,
            arch: EncoderArch::Resnet18,
            widths: vec![64, 128, 256, 512],
            kernel: 3,
            blocks: 2,
            use_batchnorm: true,
            pool: 2,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be a nonempty list of positive sizes");
        }
        if self.kernel == 0 || self.blocks == 0 || self.pool == 0 {
            return bad("kernel, blocks and pool must be positive");
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self.variant {
            EncoderVariant::Conv1d => 1,
            EncoderVariant::Conv2d => 3,
        }
    }

    /// Kernel length along the convolution axis (`kernel²` for 1D).
    pub fn effective_kernel(&self) -> usize {
        match self.variant {
            EncoderVariant::Conv1d => self.kernel * self.kernel,
            EncoderVariant::Conv2d => self.kernel,
        }
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Window with "same"-style padding, mapped to the variant's geometry.
    fn conv_geom(&self, kernel: usize, stride: usize) -> WindowGeom {
        match self.variant {
            EncoderVariant::Conv2d => WindowGeom::new([kernel; 2], [stride; 2], [kernel / 2; 2]),
            EncoderVariant::Conv1d => {
                let k = kernel * kernel;
                WindowGeom::new([1, k], [1, stride * stride], [0, k / 2])
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: Option<BatchNorm>,
}

impl ConvBn {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        (cin, cout): (usize, usize),
        geom: WindowGeom,
        seed: u64,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            &format!("{name}.conv"),
            cin,
            cout,
            geom,
            !cfg.use_batchnorm,
            seed,
        );
        let bn = cfg
            .use_batchnorm
            .then(|| BatchNorm::new(store, &format!("{name}.bn"), cout));
        Self { conv, bn }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, phase: Phase) -> Result<Var, NnError> {
        let y = self.conv.forward(g, store, x)?;
        match &self.bn {
            Some(bn) => bn.forward(g, store, y, phase),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Layer {
    ConvBnRelu(ConvBn),
    /// Max pool; window axes longer than the input collapse to size 1.
    Pool(WindowGeom),
    Residual {
        first: ConvBn,
        second: ConvBn,
        shortcut: Option<ConvBn>,
    },
}

/// Convolutional encoder producing one representation vector per item.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: Vec<Layer>,
}

impl Encoder {
    /// Registers the encoder's parameters under `prefix` (e.g. `"encoder"`).
    pub fn new(cfg: &EncoderConfig, store: &mut ParamStore, prefix: &str, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let layers = match cfg.arch {
            EncoderArch::Plain => Self::plain(cfg, store, prefix, seed),
            EncoderArch::Resnet18 => Self::resnet(cfg, store, prefix, seed),
        };
        Ok(Self {
            cfg: cfg.clone(),
            layers,
        })
    }

    fn plain(cfg: &EncoderConfig, store: &mut ParamStore, prefix: &str, seed: u64) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut cin = cfg.in_channels();
        let pool = cfg.conv_geom(cfg.pool, cfg.pool);
        let pool = WindowGeom::new(pool.kernel, pool.stride, [0, 0]);
        for (s, &width) in cfg.widths.iter().enumerate() {
            for b in 0..cfg.blocks {
                let name = format!("{prefix}.s{s}.b{b}");
                let geom = cfg.conv_geom(cfg.kernel, 1);
                layers.push(Layer::ConvBnRelu(ConvBn::new(
                    store,
                    &name,
                    cfg,
                    (cin, width),
                    geom,
                    seed,
                )));
                cin = width;
            }
            layers.push(Layer::Pool(pool));
        }
        layers
    }

    fn resnet(cfg: &EncoderConfig, store: &mut ParamStore, prefix: &str, seed: u64) -> Vec<Layer> {
        let mut layers = Vec::new();
        let stem = cfg.conv_geom(7, 2);
        let w0 = cfg.widths[0];
        layers.push(Layer::ConvBnRelu(ConvBn::new(
            store,
            &format!("{prefix}.stem"),
            cfg,
            (cfg.in_channels(), w0),
            stem,
            seed,
        )));
        layers.push(Layer::Pool(cfg.conv_geom(3, 2)));
        let mut cin = w0;
        for (s, &width) in cfg.widths.iter().enumerate() {
            for b in 0..cfg.blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("{prefix}.s{s}.b{b}");
                let first = ConvBn::new(
                    store,
                    &format!("{name}.c1"),
                    cfg,
                    (cin, width),
                    cfg.conv_geom(cfg.kernel, stride),
                    seed,
                );
                let second = ConvBn::new(
                    store,
                    &format!("{name}.c2"),
                    cfg,
                    (width, width),
                    cfg.conv_geom(cfg.kernel, 1),
                    seed,
                );
                let shortcut = (stride != 1 || cin != width).then(|| {
                    let g = cfg.conv_geom(1, stride);
                    ConvBn::new(store, &format!("{name}.down"), cfg, (cin, width), g, seed)
                });
                layers.push(Layer::Residual {
                    first,
                    second,
                    shortcut,
                });
                cin = width;
            }
        }
        layers
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.out_dim()
    }

    /// `(B, 1, L)` or `(B, 3, F, T)` to `(B, D)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, phase: Phase) -> Result<Var, NnError> {
        let shape = g.shape(x).to_vec();
        let mut h = match (self.cfg.variant, shape.as_slice()) {
            (EncoderVariant::Conv1d, &[b, 1, l]) => g.reshape(x, &[b, 1, 1, l])?,
            (EncoderVariant::Conv2d, &[_, 3, _, _]) => x,
            (v, s) => {
                return Err(NnError::ShapeMismatch(format!("{v:?} encoder cannot take input {s:?}")));
            }
        };
        for layer in &self.layers {
            h = match layer {
                Layer::ConvBnRelu(cb) => {
                    let y = cb.forward(g, store, h, phase)?;
                    g.relu(y)
                }
                Layer::Pool(geom) => {
                    let s = g.shape(h);
                    let (hh, ww) = (s[2], s[3]);
                    let mut geom = *geom;
                    for (axis, dim) in [hh, ww].into_iter().enumerate() {
                        if dim + 2 * geom.padding[axis] < geom.kernel[axis] {
                            geom.kernel[axis] = 1;
                            geom.stride[axis] = 1;
                            geom.padding[axis] = 0;
                        }
                    }
                    g.max_pool(h, geom)?
                }
                Layer::Residual {
                    first,
                    second,
                    shortcut,
                } => {
                    let y = first.forward(g, store, h, phase)?;
                    let y = g.relu(y);
                    let y = second.forward(g, store, y, phase)?;
                    let skip = match shortcut {
                        Some(sc) => sc.forward(g, store, h, phase)?,
                        None => h,
                    };
                    let sum = g.add(y, skip)?;
                    g.relu(sum)
                }
            };
        }
        g.global_avg_pool(h)
    }
}
