//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass together with the
//! values it produced. [`Graph::backward`] walks the tape in reverse and
//! returns gradients for the parameters that entered the pass as trainable.

use super::{BufferId, Gradients, NnError, ParamId, ParamStore, Tensor};
use crate::losses::{self, CeReduction, EmbeddingBatch, LabeledLogits, NtXentConfig};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; items are processed independently.
    Eval,
}

/// Kernel, stride and zero padding of a 2D window over `(H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeom {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl WindowGeom {
    pub fn new(kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2]) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let dim = |n: usize, axis: usize| {
            let padded = n + 2 * self.padding[axis];
            (padded >= self.kernel[axis] && self.stride[axis] > 0)
                .then(|| (padded - self.kernel[axis]) / self.stride[axis] + 1)
        };
        Some((dim(h, 0)?, dim(w, 1)?))
    }
}

/// Running statistics of one batchnorm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnStats {
    pub mean: BufferId,
    pub var: BufferId,
}

enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: WindowGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        phase: Phase,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sum(Var),
    Reshape(Var),
    /// Scalar loss whose local gradient was computed during the forward pass.
    Loss {
        x: Var,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    frozen: Vec<String>,
    buffer_updates: Vec<(BufferId, Tensor)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameters whose name starts with `prefix` enter this graph as
    /// constants and never receive gradients.
    pub fn freeze_prefix(&mut self, prefix: impl Into<String>) {
        self.frozen.push(prefix.into());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Running-statistic updates produced by train-phase batchnorm layers.
    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let name = store.name(id);
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        self.push(store.get(id).clone(), Op::Param(id), trainable)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: WindowGeom) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2..] != geom.kernel {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d input {xs:?} with weight {ws:?} and kernel {:?}",
                geom.kernel
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(NnError::ShapeMismatch("conv2d bias".into()));
            }
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[0];
        let (ho, wo) = geom
            .out_dims(h, wd)
            .ok_or_else(|| NnError::ShapeMismatch(format!("conv2d kernel larger than input {xs:?}")))?;
        let ckk = cin * geom.kernel[0] * geom.kernel[1];
        let hw = ho * wo;
        let mut out = vec![0.0; batch * cout * hw];
        let mut cols = vec![0.0; ckk * hw];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let in_size = cin * h * wd;
        for n in 0..batch {
            im2col(
                &xv[n * in_size..(n + 1) * in_size],
                cin,
                h,
                wd,
                &geom,
                ho,
                wo,
                &mut cols,
            );
            let o = &mut out[n * cout * hw..(n + 1) * cout * hw];
            gemm(
                cout,
                ckk,
                hw,
                wv,
                ckk as isize,
                1,
                &cols,
                hw as isize,
                1,
                0.0,
                o,
                hw as isize,
                1,
            );
            if let Some(b) = b {
                for (c, &bias) in self.value(b).data().iter().enumerate() {
                    o[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![batch, cout, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Per-channel normalization over every axis except axis 1.
    pub fn batch_norm(
        &mut self,
        store: &ParamStore,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats,
        phase: Phase,
    ) -> Result<Var, NnError> {
        let running = (store.buffer(stats.mean).data(), store.buffer(stats.var).data());
        let out = batch_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
            phase,
        )?;
        if let Some((mean, var)) = out.running {
            self.buffer_updates.push((stats.mean, mean));
            self.buffer_updates.push((stats.var, var));
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out.y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                phase,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn max_pool(&mut self, x: Var, geom: WindowGeom) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(NnError::ShapeMismatch(format!("max_pool expects 4 dims, got {xs:?}")));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = geom
            .out_dims(h, w)
            .ok_or_else(|| NnError::ShapeMismatch(format!("pool window larger than input {xs:?}")))?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..geom.kernel[0] {
                        let iy = (oy * geom.stride[0] + ky) as isize - geom.padding[0] as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..geom.kernel[1] {
                            let ix = (ox * geom.stride[1] + kx) as isize - geom.padding[1] as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xv[idx] > best || best_idx == usize::MAX {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(if best_idx == usize::MAX { 0.0 } else { best });
                    argmax.push(best_idx);
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(vec![b, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// `(B, C, ...)` to `(B, C)` by averaging the trailing axes.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(NnError::ShapeMismatch(format!("global_avg_pool on {xs:?}")));
        }
        let (b, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        let xv = self.value(x).data();
        let out = (0..b * c)
            .map(|p| xv[p * spatial..(p + 1) * spatial].iter().sum::<f64>() / spatial as f64)
            .collect();
        let rg = self.rg(x);
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// `x W^T + b` for `x: (B, D)`, `W: (O, D)`, `b: (O)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(NnError::ShapeMismatch(format!(
                "linear input {xs:?} with weight {ws:?}"
            )));
        }
        let (batch, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; batch * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [dout] {
                return Err(NnError::ShapeMismatch("linear bias".into()));
            }
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(
            batch,
            din,
            dout,
            self.value(x).data(),
            din as isize,
            1,
            self.value(w).data(),
            1,
            din as isize,
            beta,
            &mut out,
            dout as isize,
            1,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![batch, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::ShapeMismatch(format!(
                "add {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// NT-Xent over the rows of a `(2N, d)` embedding matrix.
    pub fn nt_xent(&mut self, z: Var, cfg: &NtXentConfig) -> Result<Var, NnError> {
        let zs = self.shape(z).to_vec();
        if zs.len() != 2 {
            return Err(NnError::ShapeMismatch(format!("nt_xent expects (2N, d), got {zs:?}")));
        }
        let batch = EmbeddingBatch::new(self.value(z).data().to_vec(), zs[0], zs[1])?;
        let (loss, grad) = losses::nt_xent_with_grad(&batch, cfg)?;
        let rg = self.rg(z);
        Ok(self.push(Tensor::scalar(loss), Op::Loss { x: z, grad }, rg))
    }

    /// Cross-entropy over the labeled rows of `(R, C)` logits.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[Option<usize>],
        reduction: CeReduction,
    ) -> Result<Var, NnError> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cross_entropy logits {ls:?} with {} labels",
                labels.len()
            )));
        }
        let ll = LabeledLogits::new(self.value(logits).data().to_vec(), ls[1], labels.to_vec())?;
        let (loss, grad) = losses::cross_entropy_with_grad(&ll, reduction);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::Loss { x: logits, grad }, rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::NoGraph);
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NnError::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::with_len(0);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut Gradients) {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => out.accumulate(*id, node.value.shape(), g),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *a += gi;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Loss { x, grad } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(grad).for_each(|(a, b)| *a += g[0] * b);
                }
            }
            Op::GlobalAvgPool(x) => {
                let n = self.value(*x).numel();
                let planes = g.len();
                let spatial = n / planes;
                if let Some(gx) = self.acc(grads, *x) {
                    for (p, &gp) in g.iter().enumerate() {
                        let share = gp / spatial as f64;
                        gx[p * spatial..(p + 1) * spatial].iter_mut().for_each(|v| *v += share);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (&idx, &gi) in argmax.iter().zip(g) {
                        if idx != usize::MAX {
                            gx[idx] += gi;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (batch, din) = (xs[0], xs[1]);
                let dout = self.shape(*w)[0];
                if let Some(gx) = self.acc(grads, *x) {
                    // dx = g W
                    let wv = self.value(*w).data();
                    gemm(
                        batch,
                        dout,
                        din,
                        g,
                        dout as isize,
                        1,
                        wv,
                        din as isize,
                        1,
                        1.0,
                        gx,
                        din as isize,
                        1,
                    );
                }
                if let Some(gw) = self.acc(grads, *w) {
                    // dW = g^T x
                    let xv = self.value(*x).data();
                    gemm(
                        dout,
                        batch,
                        din,
                        g,
                        1,
                        dout as isize,
                        xv,
                        din as isize,
                        1,
                        1.0,
                        gw,
                        din as isize,
                        1,
                    );
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in g.chunks_exact(dout) {
                            gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                phase,
            } => {
                let xs = self.shape(*x);
                let (batch, c) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let count = (batch * spatial) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for n in 0..batch {
                    for ch in 0..c {
                        let base = (n * c + ch) * spatial;
                        for i in base..base + spatial {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for n in 0..batch {
                        for ch in 0..c {
                            let base = (n * c + ch) * spatial;
                            let k = gam[ch] * inv_std[ch];
                            match phase {
                                Phase::Eval => {
                                    for i in base..base + spatial {
                                        gx[i] += k * g[i];
                                    }
                                }
                                Phase::Train => {
                                    let mean_g = dbeta[ch] / count;
                                    let mean_gx = dgamma[ch] / count;
                                    for i in base..base + spatial {
                                        gx[i] += k * (g[i] - mean_g - xhat[i] * mean_gx);
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    gg.iter_mut().zip(&dgamma).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    gb.iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b);
                }
            }
            Op::Conv2d { x, w, b, geom } => self.conv2d_backward(*x, *w, *b, geom, g, grads),
        }
    }

    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &WindowGeom,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xs = self.shape(x);
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = self.shape(w)[0];
        let (ho, wo) = geom.out_dims(h, wd).expect("validated in forward");
        let hw = ho * wo;
        let ckk = cin * geom.kernel[0] * geom.kernel[1];
        let in_size = cin * h * wd;
        let xv = self.value(x).data();
        let wv = self.value(w).data();

        if let Some(b) = b {
            if let Some(gb) = self.acc(grads, b) {
                for n in 0..batch {
                    for (c, gbc) in gb.iter_mut().enumerate() {
                        let base = (n * cout + c) * hw;
                        *gbc += g[base..base + hw].iter().sum::<f64>();
                    }
                }
            }
        }
        let need_w = self.nodes[w.0].requires_grad;
        let need_x = self.nodes[x.0].requires_grad;
        let mut cols = vec![0.0; ckk * hw];
        let mut dw = if need_w { vec![0.0; cout * ckk] } else { Vec::new() };
        let mut dx = if need_x { vec![0.0; batch * in_size] } else { Vec::new() };
        for n in 0..batch {
            let gn = &g[n * cout * hw..(n + 1) * cout * hw];
            if need_w {
                im2col(&xv[n * in_size..(n + 1) * in_size], cin, h, wd, geom, ho, wo, &mut cols);
                // dW += g_n cols^T
                gemm(
                    cout,
                    hw,
                    ckk,
                    gn,
                    hw as isize,
                    1,
                    &cols,
                    1,
                    hw as isize,
                    1.0,
                    &mut dw,
                    ckk as isize,
                    1,
                );
            }
            if need_x {
                // dcols = W^T g_n
                gemm(
                    ckk,
                    cout,
                    hw,
                    wv,
                    1,
                    ckk as isize,
                    gn,
                    hw as isize,
                    1,
                    0.0,
                    &mut cols,
                    hw as isize,
                    1,
                );
                col2im(&cols, cin, h, wd, geom, ho, wo, &mut dx[n * in_size..(n + 1) * in_size]);
            }
        }
        if let Some(gw) = self.acc(grads, w) {
            gw.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        }
        if let Some(gx) = self.acc(grads, x) {
            gx.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
    }
}

/// Output of a batchnorm forward pass.
pub struct BatchNormOutput {
    pub y: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Updated `(mean, var)` running statistics in the train phase.
    pub running: Option<(Tensor, Tensor)>,
}

/// Batchnorm over axis 1 of `x`. Train phase normalizes with the biased
/// batch variance and blends the unbiased variance into the running
/// estimate with momentum [`BN_MOMENTUM`].
pub fn batch_norm_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: (&[f64], &[f64]),
    phase: Phase,
) -> Result<BatchNormOutput, NnError> {
    let xs = x.shape();
    if xs.len() < 2 || gamma.len() != xs[1] || beta.len() != xs[1] || running.0.len() != xs[1] {
        return Err(NnError::ShapeMismatch(format!(
            "batchnorm input {xs:?} with {} channels of parameters",
            gamma.len()
        )));
    }
    let (batch, c) = (xs[0], xs[1]);
    if phase == Phase::Train && batch < 2 {
        return Err(NnError::BatchTooSmall(batch));
    }
    let spatial: usize = xs[2..].iter().product();
    let xv = x.data();
    let channel_iter = |ch: usize| {
        (0..batch).flat_map(move |n| {
            let base = (n * c + ch) * spatial;
            base..base + spatial
        })
    };
    let count = (batch * spatial) as f64;
    let mut mean = vec![0.0; c];
    let mut inv_std = vec![0.0; c];
    let mut new_running = None;
    match phase {
        Phase::Train => {
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let m = channel_iter(ch).map(|i| xv[i]).sum::<f64>() / count;
                let v = channel_iter(ch).map(|i| (xv[i] - m).powi(2)).sum::<f64>() / count;
                mean[ch] = m;
                var[ch] = v;
                inv_std[ch] = 1.0 / (v + BN_EPS).sqrt();
            }
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = running
                .0
                .iter()
                .zip(&mean)
                .map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
                .collect();
            let rv = running
                .1
                .iter()
                .zip(&var)
                .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbias)
                .collect();
            new_running = Some((Tensor::new(vec![c], rm)?, Tensor::new(vec![c], rv)?));
        }
        Phase::Eval => {
            for ch in 0..c {
                mean[ch] = running.0[ch];
                inv_std[ch] = 1.0 / (running.1[ch] + BN_EPS).sqrt();
            }
        }
    }
    let mut xhat = vec![0.0; xv.len()];
    let mut y = vec![0.0; xv.len()];
    for ch in 0..c {
        for i in channel_iter(ch) {
            xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
            y[i] = gamma[ch] * xhat[i] + beta[ch];
        }
    }
    Ok(BatchNormOutput {
        y: Tensor::new(xs.to_vec(), y)?,
        xhat,
        inv_std,
        running: new_running,
    })
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, geom: &WindowGeom, ho: usize, wo: usize, cols: &mut [f64]) {
    let [kh, kw] = geom.kernel;
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let hw = ho * wo;
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, geom: &WindowGeom, ho: usize, wo: usize, x: &mut [f64]) {
    let [kh, kw] = geom.kernel;
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let hw = ho * wo;
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = c * h * w + iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            x[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C = A B + beta C` with explicit row/column strides; `A` is `m x k`, `B`
/// is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    let extent = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(a.len() >= extent(m, k, rsa, csa));
    assert!(b.len() >= extent(k, n, rsb, csb));
    assert!(c.len() >= extent(m, n, rsc, csc));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
