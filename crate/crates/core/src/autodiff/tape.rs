//! Wengert-list tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower/upper clamp applied to scores inside [`Tape::bce_loss`].
pub const SCORE_CLAMP: f32 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    generation: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geometry: ConvGeometry,
    },
    Relu {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    AvgPool2d {
        input: usize,
        size: usize,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    Dense {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Reshape {
        input: usize,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    Mul {
        lhs: usize,
        rhs: usize,
    },
    Affine {
        input: usize,
        scale: f32,
    },
    Sum {
        input: usize,
    },
    Bce {
        scores: usize,
        labels: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations and replays them backward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    generation: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it required one.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.check(var)?].value)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.generation != self.generation || var.index >= self.nodes.len() {
            return Err(Error::StaleTape);
        }
        Ok(var.index)
    }

    fn node(&self, var: Var) -> Result<(usize, &Node)> {
        let i = self.check(var)?;
        Ok((i, &self.nodes[i]))
    }

    /// Cross-correlation of `input: [N,C,H,W]` with `kernel: [F,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let (ki, k) = self.node(kernel)?;
        let (xs, ks) = (x.value.shape(), k.value.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::shape("conv2d", xs, ks));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (ph, pw) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
        if ks[2] > ph || ks[3] > pw || (ph - ks[2]) % stride != 0 || (pw - ks[3]) % stride != 0 {
            return Err(Error::shape("conv2d", xs, ks));
        }
        let geometry = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            filters: ks[0],
            kernel_h: ks[2],
            kernel_w: ks[3],
            stride,
            padding,
            out_h: (ph - ks[2]) / stride + 1,
            out_w: (pw - ks[3]) / stride + 1,
        };
        let mut requires_grad = x.requires_grad || k.requires_grad;
        let bias_idx = match bias {
            Some(b) => {
                let (bi, bn) = self.node(b)?;
                if bn.value.shape() != [ks[0]] {
                    return Err(Error::shape("conv2d bias", bn.value.shape(), &[ks[0]]));
                }
                requires_grad |= bn.requires_grad;
                Some(bi)
            }
            None => None,
        };
        let out = kernels::conv2d_forward(
            &geometry,
            x.value.data(),
            k.value.data(),
            bias_idx.map(|b| self.nodes[b].value.data()),
        );
        let shape = vec![geometry.batch, geometry.filters, geometry.out_h, geometry.out_w];
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input: xi,
                kernel: ki,
                bias: bias_idx,
                geometry,
            },
            requires_grad,
        ))
    }

    /// `input: [N, I]`, `weight: [O, I]`, `bias: [O]` → `[N, O]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let (wi, w) = self.node(weight)?;
        let (xs, ws) = (x.value.shape(), w.value.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("dense", xs, ws));
        }
        let (batch, inputs, outputs) = (xs[0], xs[1], ws[0]);
        let mut requires_grad = x.requires_grad || w.requires_grad;
        let bias_idx = match bias {
            Some(b) => {
                let (bi, bn) = self.node(b)?;
                if bn.value.shape() != [outputs] {
                    return Err(Error::shape("dense bias", bn.value.shape(), &[outputs]));
                }
                requires_grad |= bn.requires_grad;
                Some(bi)
            }
            None => None,
        };
        let out = kernels::dense_forward(
            x.value.data(),
            w.value.data(),
            bias_idx.map(|b| self.nodes[b].value.data()),
            batch,
            inputs,
            outputs,
        );
        let value = Tensor::new(vec![batch, outputs], out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input: xi,
                weight: wi,
                bias: bias_idx,
            },
            requires_grad,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let data = x.value.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.value.shape().to_vec(), data)?;
        let rg = x.requires_grad;
        Ok(self.push(value, Op::Relu { input: xi }, rg))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let data = x
            .value
            .data()
            .iter()
            .map(|&v| sigmoid64(v as f64) as f32)
            .collect();
        let value = Tensor::new(x.value.shape().to_vec(), data)?;
        let rg = x.requires_grad;
        Ok(self.push(value, Op::Sigmoid { input: xi }, rg))
    }

    fn pool_dims(&self, x: &Tensor, size: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 4 || size == 0 || s[2] % size != 0 || s[3] % size != 0 {
            return Err(Error::shape(op, s, &[size, size]));
        }
        Ok((s[0] * s[1], s[2], s[3]))
    }

    /// Non-overlapping `size`×`size` average pooling; extents must divide evenly.
    pub fn avg_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let (planes, h, w) = self.pool_dims(&x.value, size, "avg_pool2d")?;
        let out = kernels::avg_pool_forward(x.value.data(), planes, h, w, size);
        let s = x.value.shape();
        let value = Tensor::new(vec![s[0], s[1], h / size, w / size], out)?;
        let rg = x.requires_grad;
        Ok(self.push(value, Op::AvgPool2d { input: xi, size }, rg))
    }

    pub fn max_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let (planes, h, w) = self.pool_dims(&x.value, size, "max_pool2d")?;
        let (out, argmax) = kernels::max_pool_forward(x.value.data(), planes, h, w, size);
        let s = x.value.shape();
        let value = Tensor::new(vec![s[0], s[1], h / size, w / size], out)?;
        let rg = x.requires_grad;
        Ok(self.push(value, Op::MaxPool2d { input: xi, argmax }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let value = x.value.clone().reshape(shape)?;
        let rg = x.requires_grad;
        Ok(self.push(value, Op::Reshape { input: xi }, rg))
    }

    /// Collapses all but the leading (batch) axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input)?.shape().to_vec();
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(input, vec![shape[0], rest])
    }

    fn binary(&mut self, lhs: Var, rhs: Var, op: &'static str) -> Result<(usize, usize, bool)> {
        let (li, l) = self.node(lhs)?;
        let (ri, r) = self.node(rhs)?;
        if l.value.shape() != r.value.shape() {
            return Err(Error::shape(op, l.value.shape(), r.value.shape()));
        }
        Ok((li, ri, l.requires_grad || r.requires_grad))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (li, ri, rg) = self.binary(lhs, rhs, "add")?;
        let (l, r) = (&self.nodes[li].value, &self.nodes[ri].value);
        let data = l.data().iter().zip(r.data()).map(|(a, b)| a + b).collect();
        let value = Tensor::new(l.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { lhs: li, rhs: ri }, rg))
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (li, ri, rg) = self.binary(lhs, rhs, "mul")?;
        let (l, r) = (&self.nodes[li].value, &self.nodes[ri].value);
        let data = l.data().iter().zip(r.data()).map(|(a, b)| a * b).collect();
        let value = Tensor::new(l.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { lhs: li, rhs: ri }, rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f32, shift: f32) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let data = x.value.data().iter().map(|&v| scale * v + shift).collect();
        let value = Tensor::new(x.value.shape().to_vec(), data)?;
        let rg = x.requires_grad;
        Ok(self.push(value, Op::Affine { input: xi, scale }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Result<Var> {
        self.affine(input, factor, 0.0)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let (xi, x) = self.node(input)?;
        let s: f64 = x.value.data().iter().map(|&v| v as f64).sum();
        let rg = x.requires_grad;
        Ok(self.push(Tensor::scalar(s as f32), Op::Sum { input: xi }, rg))
    }

    /// Mean binary cross-entropy of `scores` (probabilities) against 0/1 `labels`.
    ///
    /// Scores are clamped to `[1e-7, 1 - 1e-7]`; the gradient is evaluated at
    /// the clamped score and passed straight through the clamp.
    pub fn bce_loss(&mut self, scores: Var, labels: &[f32]) -> Result<Var> {
        let (si, s) = self.node(scores)?;
        if s.value.len() != labels.len() {
            return Err(Error::shape("bce_loss", s.value.shape(), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bce_loss label must be 0 or 1, got {bad}"
            )));
        }
        let n = labels.len() as f64;
        let total: f64 = s
            .value
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = clamp_score(p) as f64;
                -(y as f64 * p.ln() + (1.0 - y as f64) * (1.0 - p).ln())
            })
            .sum();
        let rg = s.requires_grad;
        Ok(self.push(
            Tensor::scalar((total / n) as f32),
            Op::Bce {
                scores: si,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the recorded graph: every
    /// [`Var`] issued so far becomes stale.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let li = self.check(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[li].requires_grad {
            grads[li] = Some(Tensor::filled(self.nodes[li].value.shape().to_vec(), 1.0));
        }

        for idx in (0..=li).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }

        let generation = self.generation;
        self.nodes.clear();
        self.generation += 1;
        Ok(Gradients { generation, grads })
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let want = (
                    self.wants(*input),
                    self.wants(*kernel),
                    bias.is_some_and(|b| self.wants(b)),
                );
                let out = kernels::conv2d_backward(
                    geometry,
                    self.nodes[*input].value.data(),
                    self.nodes[*kernel].value.data(),
                    g,
                    want,
                );
                self.accumulate(grads, *input, out.input)?;
                self.accumulate(grads, *kernel, out.kernel)?;
                if let Some(b) = bias {
                    self.accumulate(grads, *b, out.bias)?;
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let xs = self.nodes[*input].value.shape();
                let (batch, inputs) = (xs[0], xs[1]);
                let outputs = self.nodes[*weight].value.shape()[0];
                let want = (
                    self.wants(*input),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                );
                let out = kernels::dense_backward(
                    self.nodes[*input].value.data(),
                    self.nodes[*weight].value.data(),
                    g,
                    batch,
                    inputs,
                    outputs,
                    want,
                );
                self.accumulate(grads, *input, out.input)?;
                self.accumulate(grads, *weight, out.weight)?;
                if let Some(b) = bias {
                    self.accumulate(grads, *b, out.bias)?;
                }
            }
            Op::Relu { input } => {
                let x = self.nodes[*input].value.data();
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, Some(d))?;
            }
            Op::Sigmoid { input } => {
                // Derivative from the pre-activation in f64 so saturated
                // outputs still yield a (tiny) nonzero slope.
                let x = self.nodes[*input].value.data();
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| {
                        let v = v as f64;
                        (d as f64 * sigmoid64(v) * sigmoid64(-v)) as f32
                    })
                    .collect();
                self.accumulate(grads, *input, Some(d))?;
            }
            Op::AvgPool2d { input, size } => {
                let s = self.nodes[*input].value.shape();
                let d = kernels::avg_pool_backward(g, s[0] * s[1], s[2], s[3], *size);
                self.accumulate(grads, *input, Some(d))?;
            }
            Op::MaxPool2d { input, argmax } => {
                let mut d = vec![0.0f32; self.nodes[*input].value.len()];
                for (&src, &v) in argmax.iter().zip(g) {
                    d[src] += v;
                }
                self.accumulate(grads, *input, Some(d))?;
            }
            Op::Reshape { input } => {
                self.accumulate(grads, *input, Some(g.to_vec()))?;
            }
            Op::Add { lhs, rhs } => {
                self.accumulate(grads, *lhs, Some(g.to_vec()))?;
                self.accumulate(grads, *rhs, Some(g.to_vec()))?;
            }
            Op::Mul { lhs, rhs } => {
                let (l, r) = (self.nodes[*lhs].value.data(), self.nodes[*rhs].value.data());
                if self.wants(*lhs) {
                    let d = g.iter().zip(r).map(|(a, b)| a * b).collect();
                    self.accumulate(grads, *lhs, Some(d))?;
                }
                if self.wants(*rhs) {
                    let d = g.iter().zip(l).map(|(a, b)| a * b).collect();
                    self.accumulate(grads, *rhs, Some(d))?;
                }
            }
            Op::Affine { input, scale } => {
                let d = g.iter().map(|&v| v * scale).collect();
                self.accumulate(grads, *input, Some(d))?;
            }
            Op::Sum { input } => {
                let d = vec![g[0]; self.nodes[*input].value.len()];
                self.accumulate(grads, *input, Some(d))?;
            }
            Op::Bce { scores, labels } => {
                let n = labels.len() as f64;
                let s = self.nodes[*scores].value.data();
                let d = s
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        let p = clamp_score(p) as f64;
                        let y = y as f64;
                        (g[0] as f64 * (-y / p + (1.0 - y) / (1.0 - p)) / n) as f32
                    })
                    .collect();
                self.accumulate(grads, *scores, Some(d))?;
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        target: usize,
        partial: Option<Vec<f32>>,
    ) -> Result<()> {
        if !self.nodes[target].requires_grad {
            return Ok(());
        }
        let Some(partial) = partial else {
            return Ok(());
        };
        match &mut grads[target] {
            Some(existing) => {
                for (e, p) in existing.data_mut().iter_mut().zip(&partial) {
                    *e += p;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(
                    self.nodes[target].value.shape().to_vec(),
                    partial,
                )?);
            }
        }
        Ok(())
    }
}

fn clamp_score(p: f32) -> f32 {
    p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn sigmoid64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
