//! Dynamic tape. Every op appends one node; `backward` replays the nodes in
//! exact reverse recording order, so inputs always precede their consumers.

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    Linear { x: Var, w: Var, b: Var },
    ChannelLinear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, b: Var, k: usize },
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    GlobalAvgPool(Var),
    Concat(Var, Var),
    SliceChannels { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    SoftDice { logits: Var, targets: Vec<usize>, probs: Vec<f64>, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records one forward pass. Drop it after `backward` to free intermediates.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape matches value"))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            },
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            av.iter()
                .zip(bv)
                .map(|(x, y)| apply(kind, *x, *y))
                .collect()
        } else {
            let stra = kernels::broadcast_strides(sa, &out_shape);
            let strb = kernels::broadcast_strides(sb, &out_shape);
            let mut out = vec![0.0; out_shape.iter().product()];
            kernels::for_each_broadcast(&out_shape, &stra, &strb, |o, ia, ib| {
                out[o] = apply(kind, av[ia], bv[ib]);
            });
            out
        };
        let rg = self.any_grad(&[a, b]);
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, rg, Op::Binary(kind, a, b)))
    }

    /// Elementwise `a + b` with same-rank singleton broadcasting on either side.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = &self.nodes[a.0].value;
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * c).collect()).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, rg, Op::Scale(a, c))
    }

    /// Token projection `x[..., Cin] → [..., Cout]` with `w: [Cout, Cin]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (cout, cin) = match (ws, xs.last()) {
            ([co, ci], Some(&last)) if *ci == last && bs == [*co] => (*co, *ci),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    lhs: xs.to_vec(),
                    rhs: ws.to_vec(),
                })
            }
        };
        let rows = if cin == 0 { 0 } else { self.value(x).numel() / cin };
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = cout;
        let data = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            rows,
            cin,
            cout,
        );
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(Tensor::new(&shape, data)?, rg, Op::Linear { x, w, b }))
    }

    /// Per-position projection of an `N×Cin×H×W` map with `w: [Cout, Cin]`.
    pub fn channel_linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("channel_linear")?;
        let (ws, bs) = (self.shape(w), self.shape(b));
        let cout = match ws {
            [co, ci] if *ci == cin && bs == [*co] => *co,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "channel_linear",
                    lhs: self.shape(x).to_vec(),
                    rhs: ws.to_vec(),
                })
            }
        };
        let data = kernels::channel_linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            cin,
            cout,
            h * wd,
        );
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(Tensor::new(&[n, cout, h, wd], data)?, rg, Op::ChannelLinear { x, w, b }))
    }

    /// Zero-padded cross-correlation, `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("conv2d")?;
        let (cout, kh, kw) = match *self.shape(w) {
            [co, ci, kh, kw] if ci == cin && self.shape(b) == [co] => (co, kh, kw),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(w).to_vec(),
                })
            }
        };
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let geom = conv_geom("conv2d", (n, cin, h, wd), cout, (kh, kw), stride, padding)?;
        let data = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let rg = self.any_grad(&[x, w, b]);
        let t = Tensor::new(&[n, cout, geom.oh, geom.ow], data)?;
        Ok(self.push(t, rg, Op::Conv2d { x, w, b, geom }))
    }

    /// One `k×k` kernel per channel, `w: [C, 1, k, k]`, no bias.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("depthwise_conv2d")?;
        let (kh, kw) = match *self.shape(w) {
            [kc, 1, kh, kw] if kc == c => (kh, kw),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "depthwise_conv2d",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(w).to_vec(),
                })
            }
        };
        if stride == 0 {
            return Err(Error::Config("depthwise_conv2d stride must be >= 1".into()));
        }
        let geom = conv_geom("depthwise_conv2d", (n, c, h, wd), c, (kh, kw), stride, padding)?;
        let data = kernels::depthwise_forward(&geom, self.value(x).data(), self.value(w).data());
        let rg = self.any_grad(&[x, w]);
        let t = Tensor::new(&[n, c, geom.oh, geom.ow], data)?;
        Ok(self.push(t, rg, Op::Depthwise { x, w, geom }))
    }

    /// Transposed convolution restricted to `kernel == stride`, `w: [Cin, Cout, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("conv_transpose2d")?;
        let (cout, k) = match *self.shape(w) {
            [ci, co, kh, kw] if ci == cin && kh == kw && self.shape(b) == [co] => (co, kh),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv_transpose2d",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(w).to_vec(),
                })
            }
        };
        if k != stride || k == 0 {
            return Err(Error::Config(format!(
                "conv_transpose2d requires kernel == stride, got kernel {k} stride {stride}"
            )));
        }
        let data = kernels::conv_transpose_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            (n, cin, h, wd),
            cout,
            k,
        );
        let rg = self.any_grad(&[x, w, b]);
        let t = Tensor::new(&[n, cout, h * k, wd * k], data)?;
        Ok(self.push(t, rg, Op::ConvTranspose { x, w, b, k }))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| kernels::gelu(v)).collect()).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Gelu(x))
    }

    /// Normalizes over the channel axis at every spatial position of an `N×C×H×W` map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("layer_norm")?;
        if c < 1 {
            return Err(Error::InvalidTensor("layer_norm needs at least one channel".into()));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let planes = h * wd;
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; n * planes];
        let mut out = vec![0.0; xv.len()];
        let mut mean = vec![0.0; planes];
        let mut var = vec![0.0; planes];
        for ni in 0..n {
            let base = ni * c * planes;
            mean.fill(0.0);
            var.fill(0.0);
            for ci in 0..c {
                for (m, v) in mean.iter_mut().zip(&xv[base + ci * planes..][..planes]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= c as f64);
            for ci in 0..c {
                let xs = &xv[base + ci * planes..][..planes];
                for p in 0..planes {
                    let d = xs[p] - mean[p];
                    var[p] += d * d;
                }
            }
            let rs = &mut rstd[ni * planes..][..planes];
            for p in 0..planes {
                rs[p] = 1.0 / (var[p] / c as f64 + eps).sqrt();
            }
            for ci in 0..c {
                let off = base + ci * planes;
                for p in 0..planes {
                    let xh = (xv[off + p] - mean[p]) * rs[p];
                    xhat[off + p] = xh;
                    out[off + p] = xh * gv[ci] + bv[ci];
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let t = Tensor::new(&[n, c, h, wd], out)?;
        Ok(self.push(t, rg, Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    /// Spatial mean, `N×C×H×W → N×C×1×1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("global_avg_pool")?;
        let planes = h * wd;
        if planes == 0 {
            return Err(Error::InvalidTensor("global_avg_pool over an empty plane".into()));
        }
        let data = self
            .value(x)
            .data()
            .chunks(planes)
            .map(|p| p.iter().sum::<f64>() / planes as f64)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[n, c, 1, 1], data)?, rg, Op::GlobalAvgPool(x)))
    }

    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let planes = ha * wa;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for n in 0..na {
            data.extend_from_slice(&av[n * ca * planes..][..ca * planes]);
            data.extend_from_slice(&bv[n * cb * planes..][..cb * planes]);
        }
        let rg = self.any_grad(&[a, b]);
        let t = Tensor::new(&[na, ca + cb, ha, wa], data)?;
        Ok(self.push(t, rg, Op::Concat(a, b)))
    }

    /// Channels `[start, start + len)` of an `N×C×H×W` map.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("slice_channels")?;
        if start + len > c {
            return Err(Error::ShapeMismatch {
                op: "slice_channels",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, len],
            });
        }
        let planes = h * wd;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * planes);
        for ni in 0..n {
            data.extend_from_slice(&xv[(ni * c + start) * planes..][..len * planes]);
        }
        let rg = self.any_grad(&[x]);
        let t = Tensor::new(&[n, len, h, wd], data)?;
        Ok(self.push(t, rg, Op::SliceChannels { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    fn check_targets(&self, op: &'static str, logits: Var, targets: &[usize]) -> Result<(usize, usize, usize)> {
        let (n, k, h, wd) = self.value(logits).dims4(op)?;
        if targets.len() != n * h * wd {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::ClassOutOfRange { index: bad, classes: k });
        }
        Ok((n, k, h * wd))
    }

    /// Mean over all pixels of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k, planes) = self.check_targets("softmax_cross_entropy", logits, targets)?;
        let lv = self.value(logits).data();
        let mut total = 0.0;
        for ni in 0..n {
            let base = ni * k * planes;
            for p in 0..planes {
                let max = (0..k).map(|c| lv[base + c * planes + p]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..k).map(|c| (lv[base + c * planes + p] - max).exp()).sum::<f64>().ln();
                total += lse - lv[base + targets[ni * planes + p] * planes + p];
            }
        }
        let probs = kernels::softmax_classes(lv, n, k, planes);
        let loss = total / (n * planes) as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// `1 - mean_k (2Σp·g + eps) / (Σp + Σg + eps)` over softmax probabilities, pooled over the batch.
    pub fn soft_dice_loss(&mut self, logits: Var, targets: &[usize], eps: f64) -> Result<Var> {
        let (n, k, planes) = self.check_targets("soft_dice_loss", logits, targets)?;
        let probs = kernels::softmax_classes(self.value(logits).data(), n, k, planes);
        let stats = dice_stats(&probs, targets, n, k, planes);
        let mean_dice = stats
            .iter()
            .map(|&(i, s, g)| (2.0 * i + eps) / (s + g + eps))
            .sum::<f64>()
            / k as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(1.0 - mean_dice),
            rg,
            Op::SoftDice {
                logits,
                targets: targets.to_vec(),
                probs,
                eps,
            },
        ))
    }

    /// Populates the gradient of every `requires_grad` leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes[loss.0], &[1.0]);
        for i in (0..=loss.0).rev() {
            let node = &mut self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = node.grad.take() else {
                continue;
            };
            for (v, g) in self.input_grads(i, &gy) {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut self.nodes[v.0], &g);
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, gy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary(kind, a, b) => self.binary_grads(*kind, *a, *b, node.value.shape(), gy),
            Op::Scale(a, c) => vec![(*a, gy.iter().map(|g| g * c).collect())],
            Op::Linear { x, w, b } => {
                let (cout, cin) = (self.shape(*w)[0], self.shape(*w)[1]);
                let rows = if cin == 0 { 0 } else { val(*x).len() / cin };
                let (dx, dw, db) = kernels::linear_backward(val(*x), val(*w), gy, rows, cin, cout);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::ChannelLinear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, cin, planes) = (xs[0], xs[1], xs[2] * xs[3]);
                let cout = self.shape(*w)[0];
                let (dx, dw, db) = kernels::channel_linear_backward(val(*x), val(*w), gy, n, cin, cout, planes);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(geom, val(*x), val(*w), gy);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Depthwise { x, w, geom } => {
                let (dx, dw) = kernels::depthwise_backward(geom, val(*x), val(*w), gy);
                vec![(*x, dx), (*w, dw)]
            }
            Op::ConvTranspose { x, w, b, k } => {
                let xs = self.shape(*x);
                let cout = self.shape(*w)[1];
                let (dx, dw, db) =
                    kernels::conv_transpose_backward(val(*x), val(*w), gy, (xs[0], xs[1], xs[2], xs[3]), cout, *k);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Gelu(x) => {
                let dx = val(*x).iter().zip(gy).map(|(&v, g)| g * kernels::gelu_grad(v)).collect();
                vec![(*x, dx)]
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let xs = self.shape(*x);
                let (n, c, planes) = (xs[0], xs[1], xs[2] * xs[3]);
                let gv = val(*gamma);
                let mut dx = vec![0.0; gy.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut mean_d = vec![0.0; planes];
                let mut mean_dx = vec![0.0; planes];
                for ni in 0..n {
                    let base = ni * c * planes;
                    mean_d.fill(0.0);
                    mean_dx.fill(0.0);
                    for ci in 0..c {
                        let off = base + ci * planes;
                        for p in 0..planes {
                            let g = gy[off + p];
                            dgamma[ci] += g * xhat[off + p];
                            dbeta[ci] += g;
                            let d = g * gv[ci];
                            mean_d[p] += d;
                            mean_dx[p] += d * xhat[off + p];
                        }
                    }
                    let rs = &rstd[ni * planes..][..planes];
                    for ci in 0..c {
                        let off = base + ci * planes;
                        for p in 0..planes {
                            let d = gy[off + p] * gv[ci];
                            dx[off + p] = rs[p] * (d - mean_d[p] / c as f64 - xhat[off + p] * mean_dx[p] / c as f64);
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let planes = xs[2] * xs[3];
                let mut dx = vec![0.0; val(*x).len()];
                for (chunk, g) in dx.chunks_mut(planes).zip(gy) {
                    chunk.fill(g / planes as f64);
                }
                vec![(*x, dx)]
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, ca, cb, planes) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let mut da = Vec::with_capacity(n * ca * planes);
                let mut db = Vec::with_capacity(n * cb * planes);
                for ni in 0..n {
                    let base = ni * (ca + cb) * planes;
                    da.extend_from_slice(&gy[base..][..ca * planes]);
                    db.extend_from_slice(&gy[base + ca * planes..][..cb * planes]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(*x);
                let (n, c, planes) = (xs[0], xs[1], xs[2] * xs[3]);
                let len = node.value.shape()[1];
                let mut dx = vec![0.0; val(*x).len()];
                for ni in 0..n {
                    dx[(ni * c + start) * planes..][..len * planes]
                        .copy_from_slice(&gy[ni * len * planes..][..len * planes]);
                }
                vec![(*x, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![gy[0]; val(*x).len()])],
            Op::Mean(x) => {
                let len = val(*x).len();
                vec![(*x, vec![gy[0] / len.max(1) as f64; len])]
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let ls = self.shape(*logits);
                let (n, k, planes) = (ls[0], ls[1], ls[2] * ls[3]);
                let scale = gy[0] / (n * planes) as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for ni in 0..n {
                    for p in 0..planes {
                        let t = targets[ni * planes + p];
                        dl[(ni * k + t) * planes + p] -= scale;
                    }
                }
                vec![(*logits, dl)]
            }
            Op::SoftDice { logits, targets, probs, eps } => {
                let ls = self.shape(*logits);
                let (n, k, planes) = (ls[0], ls[1], ls[2] * ls[3]);
                let stats = dice_stats(probs, targets, n, k, planes);
                // dL/dp for each (class, onehot) pair
                let coef: Vec<[f64; 2]> = stats
                    .iter()
                    .map(|&(i, s, g)| {
                        let den = s + g + eps;
                        let num = 2.0 * i + eps;
                        let d = |onehot: f64| -gy[0] / k as f64 * (2.0 * onehot * den - num) / (den * den);
                        [d(0.0), d(1.0)]
                    })
                    .collect();
                let mut dl = vec![0.0; probs.len()];
                for ni in 0..n {
                    let base = ni * k * planes;
                    for p in 0..planes {
                        let t = targets[ni * planes + p];
                        let dp = |c: usize| coef[c][usize::from(c == t)];
                        let dot: f64 = (0..k).map(|c| probs[base + c * planes + p] * dp(c)).sum();
                        for c in 0..k {
                            let idx = base + c * planes + p;
                            dl[idx] = probs[idx] * (dp(c) - dot);
                        }
                    }
                }
                vec![(*logits, dl)]
            }
        }
    }

    fn binary_grads(&self, kind: Binary, a: Var, b: Var, out_shape: &[usize], gy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut da = vec![0.0; av.len()];
        let mut db = vec![0.0; bv.len()];
        let stra = kernels::broadcast_strides(self.shape(a), out_shape);
        let strb = kernels::broadcast_strides(self.shape(b), out_shape);
        kernels::for_each_broadcast(out_shape, &stra, &strb, |o, ia, ib| {
            let g = gy[o];
            match kind {
                Binary::Add => {
                    da[ia] += g;
                    db[ib] += g;
                }
                Binary::Sub => {
                    da[ia] += g;
                    db[ib] -= g;
                }
                Binary::Mul => {
                    da[ia] += g * bv[ib];
                    db[ib] += g * av[ia];
                }
            }
        });
        vec![(a, da), (b, db)]
    }
}

fn apply(kind: Binary, x: f64, y: f64) -> f64 {
    match kind {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
    }
}

fn accumulate(node: &mut Node, g: &[f64]) {
    match &mut node.grad {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => node.grad = Some(g.to_vec()),
    }
}

/// Same-rank singleton broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn conv_geom(
    op: &'static str,
    (n, cin, h, w): (usize, usize, usize, usize),
    cout: usize,
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let oh = ConvGeom::output_extent(h, kh, stride, pad);
    let ow = ConvGeom::output_extent(w, kw, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        }),
        _ => Err(Error::EmptyOutput {
            op,
            input: vec![n, cin, h, w],
            kernel: vec![kh, kw],
        }),
    }
}

/// Per class: `(Σ p·g, Σ p, Σ g)`.
fn dice_stats(probs: &[f64], targets: &[usize], n: usize, k: usize, planes: usize) -> Vec<(f64, f64, f64)> {
    let mut stats = vec![(0.0, 0.0, 0.0); k];
    for ni in 0..n {
        for (c, st) in stats.iter_mut().enumerate() {
            let row = &probs[(ni * k + c) * planes..][..planes];
            for (p, &pv) in row.iter().enumerate() {
                st.1 += pv;
                if targets[ni * planes + p] == c {
                    st.0 += pv;
                    st.2 += 1.0;
                }
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_componentwise() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut g = Graph::new();
        let x = t(&[2, 3], &[0.5, -1.0, 2.0, 3.5, 0.0, -7.25]);
        let a = g.constant(x.clone());
        let b = g.constant(Tensor::ones(&[2, 3]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c), &x);
    }

    #[test]
    fn unresolvable_broadcast_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        match g.mul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![1, 2, 3, 3]);
                assert_eq!(rhs, vec![1, 3, 3, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.constant(t(&[2], &[1.0, 1.0]));
        let w = g.constant(t(&[1, 2], &[2.0, 3.0]));
        let b = g.constant(t(&[1], &[1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);

        let w = g.constant(t(&[1, 3], &[2.0, 3.0, 1.0]));
        assert!(g.linear(x, w, b).is_err());
    }

    #[test]
    fn conv2d_sums_nine_ones() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv2d_unit_kernel_is_identity() {
        let mut g = Graph::new();
        let xv = Tensor::from_fn(&[1, 1, 4, 3], |i| i as f64 * 0.5 - 2.0);
        let x = g.constant(xv.clone());
        let w = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn conv2d_rejects_empty_output() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, w, b, 1, 0), Err(Error::EmptyOutput { .. })));
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let mut g = Graph::new();
        let xv = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64).sin());
        let mut kv = Tensor::zeros(&[2, 1, 3, 3]);
        kv.data_mut()[4] = 1.0;
        kv.data_mut()[13] = 1.0;
        let x = g.constant(xv.clone());
        let k = g.constant(kv);
        let y = g.depthwise_conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn depthwise_keeps_channels_separate() {
        let mut g = Graph::new();
        // channel 1 zeroed, channel 0 arbitrary
        let xv = Tensor::from_fn(&[1, 2, 3, 3], |i| if i < 9 { i as f64 + 1.0 } else { 0.0 });
        let x = g.constant(xv);
        let k = g.constant(Tensor::ones(&[2, 1, 3, 3]));
        let y = g.depthwise_conv2d(x, k, 1, 1).unwrap();
        assert!(g.value(y).data()[9..].iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::ones(&[3, 1, 3, 3]));
        assert!(g.depthwise_conv2d(x, bad, 1, 1).is_err());
    }

    #[test]
    fn transposed_conv_broadcasts_one_value() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 1], &[2.5]));
        let w = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv_transpose2d(x, w, b, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[2.5; 4]);

        let z = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let b = g.constant(t(&[1], &[0.75]));
        let y = g.conv_transpose2d(z, w, b, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.75));

        let w3 = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        assert!(matches!(g.conv_transpose2d(x, w3, b, 2), Err(Error::Config(_))));
    }

    #[test]
    fn gelu_reference_points() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 10.0, 1.0]));
        let y = g.gelu(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 10.0).abs() < 1e-9);
        assert!((v[2] - 0.841345).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let ones = g.constant(Tensor::ones(&[2]));
        let zeros = g.constant(Tensor::zeros(&[2]));
        let flat = g.constant(Tensor::full(&[1, 2, 1, 1], 3.0));
        let y = g.layer_norm(flat, ones, zeros, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);

        let x = g.constant(t(&[1, 2, 1, 1], &[1.0, 3.0]));
        let y = g.layer_norm(x, ones, zeros, 1e-14).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);

        let gamma0 = g.constant(Tensor::zeros(&[2]));
        let beta5 = g.constant(Tensor::full(&[2], 5.0));
        let y = g.layer_norm(x, gamma0, beta5, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 5.0]);

        let empty = g.constant(Tensor::zeros(&[1, 0, 2, 2]));
        let e = g.constant(Tensor::zeros(&[0]));
        assert!(g.layer_norm(empty, e, e, 1e-5).is_err());
    }

    #[test]
    fn global_avg_pool_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 2], -1.5));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[-1.5]);
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[2.5]);
    }

    #[test]
    fn concat_with_empty_and_slice_back() {
        let mut g = Graph::new();
        let av = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64);
        let bv = Tensor::from_fn(&[2, 2, 2, 2], |i| -(i as f64));
        let a = g.constant(av.clone());
        let b = g.constant(bv.clone());
        let empty = g.constant(Tensor::zeros(&[2, 0, 2, 2]));
        let same = g.concat_channels(a, empty).unwrap();
        assert_eq!(g.value(same), &av);
        let ab = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(ab)[1], 5);
        let a2 = g.slice_channels(ab, 0, 3).unwrap();
        let b2 = g.slice_channels(ab, 3, 2).unwrap();
        assert_eq!(g.value(a2), &av);
        assert_eq!(g.value(b2), &bv);
        let wrong = g.constant(Tensor::zeros(&[2, 1, 3, 2]));
        assert!(g.concat_channels(a, wrong).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
        let l = g.softmax_cross_entropy(logits, &[0, 1, 2, 3]).unwrap();
        assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);

        let mut sat = Tensor::zeros(&[1, 2, 1, 1]);
        sat.data_mut()[1] = 1000.0;
        let logits = g.constant(sat);
        let l = g.softmax_cross_entropy(logits, &[1]).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-12);
        assert!(matches!(
            g.softmax_cross_entropy(logits, &[2]),
            Err(Error::ClassOutOfRange { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_sum_and_accumulation() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 3]);

        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        let c = g.constant(Tensor::full(&[2], 3.0));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 3.0]);
    }
}
