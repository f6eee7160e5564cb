use super::kernels::{self, ConvGeom, ExpandGeom, PoolGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output extent is `input - kernel + 1`.
    Valid,
    /// Zero padding that preserves the extent. When the total pad is odd the
    /// extra zero goes on the high side.
    Same,
    /// Like [`Padding::Same`], but padded positions repeat the nearest edge
    /// value, so a constant input gives a constant output.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics for one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    ContractExpand {
        x: Var,
        c: Var,
        geom: ExpandGeom,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Tanh(Var),
    Gelu {
        x: Var,
        cdf: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    AvgPool {
        x: Var,
        geom: PoolGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        batch: usize,
        n_in: usize,
        n_out: usize,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Reshape(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::ContractExpand { x, c, .. } => vec![*x, *c],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => std::iter::once(*input)
                .chain(std::iter::once(*weight))
                .chain(*bias)
                .collect(),
            Op::Tanh(x) | Op::Reshape(x) | Op::Sum(x) | Op::Gelu { x, .. } => vec![*x],
            Op::Softmax { x, .. } | Op::AvgPool { x, .. } | Op::Scale { x, .. } => vec![*x],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Linear { x, w, b, .. } => [*x, *w].into_iter().chain(*b).collect(),
            Op::Mul { a, b } => vec![*a, *b],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// reverse order is a valid backward schedule.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
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

    /// Gradient accumulated by the last [`Tape::backward`]. `None` when the
    /// node does not influence the loss or does not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Ids of the inputs of node `v`, for inspecting the recorded graph.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        let inputs = op.inputs();
        if cfg!(debug_assertions) && inputs.iter().all(|i| self.nodes[i.0].value.is_finite()) {
            debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // -----------------------------------------------------------------------
    // Operations

    /// Depth expansion `out[b,h,ch,t] = sum_d x[b,d,ch,t] * c[h,d,ch]`.
    pub fn contract_expand(&mut self, x: Var, c: Var) -> Result<Var> {
        let xs = self.shape(x);
        let cs = self.shape(c);
        if xs.len() != 4 || cs.len() != 3 {
            return Err(Error::shape(format!(
                "contract_expand expects x[B,Din,C,T] and c[D,Din,C], got {xs:?} and {cs:?}"
            )));
        }
        if cs[2] != xs[2] {
            return Err(Error::shape(format!(
                "contract_expand channel mismatch: x has C={} but c has C={}",
                xs[2], cs[2]
            )));
        }
        if cs[1] != xs[1] {
            return Err(Error::shape(format!(
                "contract_expand depth mismatch: x has depth {} but c expects {}",
                xs[1], cs[1]
            )));
        }
        let geom = ExpandGeom {
            batch: xs[0],
            depth_in: xs[1],
            depth_out: cs[0],
            channels: xs[2],
            time: xs[3],
        };
        let out = kernels::contract_expand(self.value(x).data(), self.value(c).data(), geom);
        let shape = vec![geom.batch, geom.depth_out, geom.channels, geom.time];
        self.push(out, shape, Op::ContractExpand { x, c, geom })
    }

    /// 2-D cross-correlation (no kernel flip) over `[B,Din,H,W]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: Padding,
    ) -> Result<Var> {
        let is = self.shape(input);
        let ws = self.shape(weight);
        if is.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects input[B,Din,H,W] and weight[Dout,Din,Kh,Kw], got {is:?} and {ws:?}"
            )));
        }
        if is[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d input depth {} does not match kernel depth {}",
                is[1], ws[1]
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape(format!(
                    "conv2d bias shape {:?} does not match {} output depths",
                    self.shape(b),
                    ws[0]
                )));
            }
        }
        let (kh, kw) = (ws[2], ws[3]);
        let (pad_top, pad_left, out_h, out_w) = match padding {
            Padding::Valid => {
                if kh > is[2] || kw > is[3] {
                    return Err(Error::shape(format!(
                        "conv2d kernel {kh}x{kw} larger than input {}x{}",
                        is[2], is[3]
                    )));
                }
                (0, 0, is[2] - kh + 1, is[3] - kw + 1)
            }
            Padding::Same | Padding::Replicate => ((kh - 1) / 2, (kw - 1) / 2, is[2], is[3]),
        };
        let geom = ConvGeom {
            batch: is[0],
            in_depth: is[1],
            height: is[2],
            width: is[3],
            out_depth: ws[0],
            kernel_h: kh,
            kernel_w: kw,
            pad_top,
            pad_left,
            out_h,
            out_w,
            replicate: padding == Padding::Replicate,
        };
        let out = kernels::conv2d(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            geom,
        );
        self.push(
            out,
            vec![geom.batch, geom.out_depth, out_h, out_w],
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|a| a.tanh()).collect();
        let shape = v.shape().to_vec();
        self.push(out, shape, Op::Tanh(x))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let cdf: Vec<f64> = v.data().iter().map(|&a| kernels::normal_cdf(a)).collect();
        let out = v.data().iter().zip(&cdf).map(|(a, p)| a * p).collect();
        let shape = v.shape().to_vec();
        self.push(out, shape, Op::Gelu { x, cdf })
    }

    /// Softmax along `axis`, with per-slice max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(Error::shape(format!(
                "softmax axis {axis} out of range for rank {}",
                v.rank()
            )));
        }
        let out = kernels::softmax(v.data(), v.shape(), axis);
        let shape = v.shape().to_vec();
        self.push(out, shape, Op::Softmax { x, axis })
    }

    /// Per-depth-channel batch normalization over `(B,H,W)` of a `[B,D,H,W]` input.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "batch_norm expects [B,D,H,W], got {xs:?}"
            )));
        }
        let (batch, depth, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [depth] || self.shape(beta) != [depth] {
            return Err(Error::shape(format!(
                "batch_norm affine parameters must have shape [{depth}]"
            )));
        }
        if state.running_mean.len() != depth || state.running_var.len() != depth {
            return Err(Error::shape(format!(
                "batch_norm running stats hold {} channels, input has {depth}",
                state.running_mean.len()
            )));
        }
        let train = mode == Mode::Train;
        if train && batch < 2 {
            return Err(Error::invalid(format!(
                "batch_norm in train mode needs batch >= 2, got {batch}"
            )));
        }
        let xd = self.value(x).data();
        let n = (batch * plane) as f64;
        let mut mean = vec![0.0; depth];
        let mut var = vec![0.0; depth];
        if train {
            for b in 0..batch {
                for (d, m) in mean.iter_mut().enumerate() {
                    let o = (b * depth + d) * plane;
                    *m += xd[o..o + plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for b in 0..batch {
                for d in 0..depth {
                    let o = (b * depth + d) * plane;
                    var[d] += xd[o..o + plane]
                        .iter()
                        .map(|v| (v - mean[d]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let mom = state.momentum;
            for d in 0..depth {
                state.running_mean[d] = (1.0 - mom) * state.running_mean[d] + mom * mean[d];
                let unbiased = var[d] * n / (n - 1.0);
                state.running_var[d] = (1.0 - mom) * state.running_var[d] + mom * unbiased;
            }
        } else {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for d in 0..depth {
                let o = (b * depth + d) * plane;
                for k in o..o + plane {
                    xhat[k] = (xd[k] - mean[d]) * inv_std[d];
                    out[k] = g[d] * xhat[k] + bt[d];
                }
            }
        }
        self.push(
            out,
            xs,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        )
    }

    /// Non-overlapping mean pooling over the last two axes of `[B,D,H,W]`.
    /// Trailing partial windows are dropped.
    pub fn avg_pool(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "avg_pool expects [B,D,H,W], got {xs:?}"
            )));
        }
        let (wh, ww) = window;
        if wh == 0 || ww == 0 || wh > xs[2] || ww > xs[3] {
            return Err(Error::shape(format!(
                "avg_pool window {window:?} does not fit input extents ({}, {})",
                xs[2], xs[3]
            )));
        }
        let geom = PoolGeom {
            planes: xs[0] * xs[1],
            height: xs[2],
            width: xs[3],
            win_h: wh,
            win_w: ww,
        };
        let out = kernels::avg_pool(self.value(x).data(), geom);
        self.push(
            out,
            vec![xs[0], xs[1], geom.out_h(), geom.out_w()],
            Op::AvgPool { x, geom },
        )
    }

    /// `x W^T + b` applied along the last axis: `x[..., N]`, `W[M,N]`, `b[M]`
    /// give `[..., M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() < 2 || ws.len() != 2 || xs[xs.len() - 1] != ws[1] {
            return Err(Error::shape(format!(
                "linear expects x[..., N] and W[M,N], got {xs:?} and {ws:?}"
            )));
        }
        let mut out_shape = xs.to_vec();
        let n_in = out_shape.pop().expect("rank >= 2");
        let batch: usize = out_shape.iter().product();
        let n_out = ws[0];
        out_shape.push(n_out);
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(Error::shape(format!(
                    "linear bias shape {:?} does not match {n_out} outputs",
                    self.shape(b)
                )));
            }
        }
        let out = kernels::linear(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            batch,
            n_in,
            n_out,
        );
        self.push(
            out,
            out_shape,
            Op::Linear {
                x,
                w,
                b,
                batch,
                n_in,
                n_out,
            },
        )
    }

    /// Elementwise product. Operands must have equal rank; an extent of 1 on
    /// either side broadcasts against the other.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let sa = kernels::broadcast_strides(self.shape(a), &out_shape);
        let sb = kernels::broadcast_strides(self.shape(b), &out_shape);
        let out = kernels::broadcast_mul(
            self.value(a).data(),
            self.value(b).data(),
            &out_shape,
            &sa,
            &sb,
        );
        self.push(out, out_shape, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|a| a * factor).collect();
        let shape = v.shape().to_vec();
        self.push(out, shape, Op::Scale { x, factor })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                v.shape()
            )));
        }
        let data = v.data().to_vec();
        self.push(data, shape.to_vec(), Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(vec![s], vec![1], Op::Sum(x))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross_entropy expects logits[B,K] with B={} labels, got {ls:?}",
                labels.len()
            )));
        }
        let (batch, k) = (ls[0], ls[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let probs = kernels::softmax(self.value(logits).data(), &[batch, k], 1);
        let ld = self.value(logits).data();
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = &ld[b * k..(b + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= batch as f64;
        self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    // -----------------------------------------------------------------------
    // Reverse pass

    /// Back-propagates from a one-element `loss`, replacing any gradients from
    /// a previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contrib) in self.backward_node(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => kernels::axpy(1.0, &contrib, acc),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(())
    }

    /// Gradient contributions of one node to each of its inputs that needs one.
    fn backward_node(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let zeros = |v: Var| vec![0.0; self.nodes[v.0].value.numel()];
        let buf = |v: Var| want(v).then(|| zeros(v));
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::ContractExpand { x, c, geom } => {
                let (mut gx, mut gc) = (buf(*x), buf(*c));
                kernels::contract_expand_backward(
                    val(*x),
                    val(*c),
                    g,
                    *geom,
                    gx.as_deref_mut(),
                    gc.as_deref_mut(),
                );
                out.extend(gx.map(|b| (*x, b)));
                out.extend(gc.map(|b| (*c, b)));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (mut gi, mut gw) = (buf(*input), buf(*weight));
                let mut gb = bias.and_then(buf);
                kernels::conv2d_backward(
                    val(*input),
                    val(*weight),
                    g,
                    *geom,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                out.extend(gi.map(|b| (*input, b)));
                out.extend(gw.map(|b| (*weight, b)));
                if let (Some(bv), Some(b)) = (bias, gb) {
                    out.push((*bv, b));
                }
            }
            Op::Tanh(x) => {
                if want(*x) {
                    let y = node.value.data();
                    out.push((
                        *x,
                        g.iter()
                            .zip(y)
                            .map(|(gi, yi)| gi * (1.0 - yi * yi))
                            .collect(),
                    ));
                }
            }
            Op::Gelu { x, cdf } => {
                if want(*x) {
                    let xv = val(*x);
                    let gx = g
                        .iter()
                        .zip(xv)
                        .zip(cdf)
                        .map(|((gi, &xi), p)| gi * (p + xi * kernels::normal_pdf(xi)))
                        .collect();
                    out.push((*x, gx));
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(mut gx) = buf(*x) {
                    kernels::softmax_backward(
                        node.value.data(),
                        g,
                        node.value.shape(),
                        *axis,
                        &mut gx,
                    );
                    out.push((*x, gx));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = node.value.shape();
                let (batch, depth, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let gam = val(*gamma);
                let mut sum_g = vec![0.0; depth];
                let mut sum_gx = vec![0.0; depth];
                for b in 0..batch {
                    for d in 0..depth {
                        let o = (b * depth + d) * plane;
                        for k in o..o + plane {
                            sum_g[d] += g[k];
                            sum_gx[d] += g[k] * xhat[k];
                        }
                    }
                }
                if let Some(mut gx) = buf(*x) {
                    let n = (batch * plane) as f64;
                    for b in 0..batch {
                        for d in 0..depth {
                            let o = (b * depth + d) * plane;
                            let s = gam[d] * inv_std[d];
                            for k in o..o + plane {
                                gx[k] = if *train {
                                    s * (g[k] - sum_g[d] / n - xhat[k] * sum_gx[d] / n)
                                } else {
                                    s * g[k]
                                };
                            }
                        }
                    }
                    out.push((*x, gx));
                }
                if want(*gamma) {
                    out.push((*gamma, sum_gx));
                }
                if want(*beta) {
                    out.push((*beta, sum_g));
                }
            }
            Op::AvgPool { x, geom } => {
                if let Some(mut gx) = buf(*x) {
                    kernels::avg_pool_backward(g, *geom, &mut gx);
                    out.push((*x, gx));
                }
            }
            Op::Linear {
                x,
                w,
                b,
                batch,
                n_in,
                n_out,
            } => {
                let (mut gx, mut gw) = (buf(*x), buf(*w));
                let mut gb = b.and_then(buf);
                kernels::linear_backward(
                    val(*x),
                    val(*w),
                    g,
                    *batch,
                    *n_in,
                    *n_out,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                out.extend(gx.map(|v| (*x, v)));
                out.extend(gw.map(|v| (*w, v)));
                if let (Some(bv), Some(v)) = (b, gb) {
                    out.push((*bv, v));
                }
            }
            Op::Mul { a, b } => {
                let out_shape = node.value.shape();
                let sa = kernels::broadcast_strides(self.nodes[a.0].value.shape(), out_shape);
                let sb = kernels::broadcast_strides(self.nodes[b.0].value.shape(), out_shape);
                let (ad, bd) = (val(*a), val(*b));
                if let Some(mut ga) = buf(*a) {
                    kernels::broadcast_mul_grad(g, bd, out_shape, &sa, &sb, &mut ga);
                    out.push((*a, ga));
                }
                if let Some(mut gb) = buf(*b) {
                    kernels::broadcast_mul_grad(g, ad, out_shape, &sb, &sa, &mut gb);
                    out.push((*b, gb));
                }
            }
            Op::Scale { x, factor } => {
                if want(*x) {
                    out.push((*x, g.iter().map(|v| v * factor).collect()));
                }
            }
            Op::Reshape(x) => {
                if want(*x) {
                    out.push((*x, g.to_vec()));
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    out.push((*x, vec![g[0]; self.nodes[x.0].value.numel()]));
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if want(*logits) {
                    let batch = labels.len();
                    let k = probs.len() / batch;
                    let s = g[0] / batch as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| s * p).collect();
                    for (b, &y) in labels.iter().enumerate() {
                        gl[b * k + y] -= s;
                    }
                    out.push((*logits, gl));
                }
            }
        }
        out
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "hadamard operands differ in rank: {a:?} vs {b:?}"
        )));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(format!(
                "hadamard shapes {a:?} and {b:?} do not broadcast"
            ))),
        })
        .collect()
}
