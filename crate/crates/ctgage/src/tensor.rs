//! Tape-based reverse-mode automatic differentiation over dense arrays.
//!
//! The operator set is exactly what a 1D residual/SE network and its
//! training losses need: conv1d, batchnorm1d, relu, sigmoid, max/avg
//! pooling, dense layers, channel scaling, elementwise arithmetic,
//! reductions, and a differentiable sort. Values are stored and
//! accumulated in f64 so gradient checks against central finite
//! differences stay tight.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] walks the
//! recorded nodes in exact reverse order and accumulates gradients.
//! Tapes are cheap and single-use: build one per forward/backward.

use crate::error::{Error, Result};

/// Dense array with explicit shape. Layout is row-major
/// (batch, channels, length) for 3D, (batch, features) for 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Symmetric zero padding so `l_out = ceil(l / stride)`; when the
    /// total pad is odd the extra sample goes on the right.
    Same,
}

enum Op {
    Leaf,
    Conv1d {
        input: VarId,
        weights: VarId,
        bias: VarId,
        stride: usize,
        pad_left: usize,
    },
    Dense {
        input: VarId,
        weights: VarId,
        bias: VarId,
    },
    BatchNorm {
        input: VarId,
        gamma: VarId,
        beta: VarId,
        // per-channel inverse std and normalized input, saved forward
        inv_std: Vec<f64>,
        x_hat: Vec<f64>,
        training: bool,
    },
    Relu {
        input: VarId,
    },
    Sigmoid {
        input: VarId,
    },
    MaxPool {
        input: VarId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: VarId,
    },
    ScaleChannels {
        input: VarId,
        scales: VarId,
    },
    AddT {
        a: VarId,
        b: VarId,
    },
    SubT {
        a: VarId,
        b: VarId,
    },
    MulT {
        a: VarId,
        b: VarId,
    },
    DivT {
        a: VarId,
        b: VarId,
    },
    Abs {
        input: VarId,
    },
    /// a*x + b with scalar constants.
    Affine {
        input: VarId,
        a: f64,
    },
    MeanAll {
        input: VarId,
    },
    SumAll {
        input: VarId,
    },
    Reshape {
        input: VarId,
    },
    SoftSort {
        input: VarId,
        temperature: f64,
        perm: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Records operations; replayed in reverse by [`Tape::backward`].
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "elementwise op on {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. this node.
    /// Zeros if backward has not reached it.
    pub fn grad(&self, id: VarId) -> Vec<f64> {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[id.0].value.len()],
        }
    }

    fn grad_mut(&mut self, id: VarId) -> &mut Vec<f64> {
        let n = self.nodes[id.0].value.len();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n])
    }

    // ---- operators ----

    pub fn conv1d(
        &mut self,
        input: VarId,
        weights: VarId,
        bias: VarId,
        stride: usize,
        padding: Padding,
    ) -> Result<VarId> {
        let x = self.value(input);
        let w = self.value(weights);
        let bv = self.value(bias);
        if x.shape.len() != 3 || w.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d expects 3D input/weights, got {:?} and {:?}",
                x.shape, w.shape
            )));
        }
        let (b, c_in, l) = (x.shape[0], x.shape[1], x.shape[2]);
        let (c_out, wc_in, k) = (w.shape[0], w.shape[1], w.shape[2]);
        if c_in != wc_in {
            return Err(Error::Shape(format!(
                "conv1d channel mismatch: input {:?} vs weights {:?}",
                x.shape, w.shape
            )));
        }
        if bv.shape != vec![c_out] {
            return Err(Error::Shape(format!(
                "conv1d bias shape {:?}, expected [{}]",
                bv.shape, c_out
            )));
        }
        let (pad_left, pad_total) = match padding {
            Padding::Valid => (0usize, 0usize),
            Padding::Same => {
                let l_out = l.div_ceil(stride);
                let total = ((l_out - 1) * stride + k).saturating_sub(l);
                (total / 2, total)
            }
        };
        if k > l + pad_total {
            return Err(Error::Shape(format!(
                "conv1d kernel {} longer than padded input {}",
                k,
                l + pad_total
            )));
        }
        let l_out = (l + pad_total - k) / stride + 1;
        let mut out = vec![0.0; b * c_out * l_out];
        for bi in 0..b {
            for co in 0..c_out {
                let o_base = (bi * c_out + co) * l_out;
                out[o_base..o_base + l_out].fill(bv.data[co]);
                for ci in 0..c_in {
                    let x_base = (bi * c_in + ci) * l;
                    let w_base = (co * c_in + ci) * k;
                    for kk in 0..k {
                        let wv = w.data[w_base + kk];
                        if wv == 0.0 {
                            continue;
                        }
                        // valid range of t where x index is in bounds
                        for t in 0..l_out {
                            let xi = t * stride + kk;
                            if xi < pad_left {
                                continue;
                            }
                            let xi = xi - pad_left;
                            if xi >= l {
                                break;
                            }
                            out[o_base + t] += wv * x.data[x_base + xi];
                        }
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![b, c_out, l_out],
            data: out,
        };
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weights,
                bias,
                stride,
                pad_left,
            },
        ))
    }

    pub fn dense(&mut self, input: VarId, weights: VarId, bias: VarId) -> Result<VarId> {
        let x = self.value(input);
        let w = self.value(weights);
        let bv = self.value(bias);
        if x.shape.len() != 2 || w.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "dense expects 2D input/weights, got {:?} and {:?}",
                x.shape, w.shape
            )));
        }
        let (b, f_in) = (x.shape[0], x.shape[1]);
        let (f_out, wf_in) = (w.shape[0], w.shape[1]);
        if f_in != wf_in || bv.shape != vec![f_out] {
            return Err(Error::Shape(format!(
                "dense shapes: input {:?}, weights {:?}, bias {:?}",
                x.shape, w.shape, bv.shape
            )));
        }
        let mut out = vec![0.0; b * f_out];
        for bi in 0..b {
            for fo in 0..f_out {
                let mut acc = bv.data[fo];
                let xb = bi * f_in;
                let wb = fo * f_in;
                for fi in 0..f_in {
                    acc += x.data[xb + fi] * w.data[wb + fi];
                }
                out[bi * f_out + fo] = acc;
            }
        }
        let value = Tensor {
            shape: vec![b, f_out],
            data: out,
        };
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
            },
        ))
    }

    /// Batch normalization over (batch, length) per channel.
    ///
    /// In training mode the batch statistics are used and returned so the
    /// caller can update running averages; in eval mode the provided
    /// running statistics are used and treated as constants.
    pub fn batchnorm1d(
        &mut self,
        input: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f64,
        training: bool,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<(VarId, Vec<f64>, Vec<f64>)> {
        if eps <= 0.0 {
            return Err(Error::Contract("batchnorm eps must be > 0".into()));
        }
        let x = self.value(input);
        if x.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "batchnorm1d expects 3D input, got {:?}",
                x.shape
            )));
        }
        let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
        let g = self.value(gamma);
        let be = self.value(beta);
        if g.shape != vec![c] || be.shape != vec![c] {
            return Err(Error::Shape(format!(
                "batchnorm1d gamma/beta shape {:?}/{:?}, expected [{}]",
                g.shape, be.shape, c
            )));
        }
        let n = (b * l) as f64;
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * l;
                    for t in 0..l {
                        s += x.data[base + t];
                    }
                }
                let m = s / n;
                let mut v = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * l;
                    for t in 0..l {
                        let d = x.data[base + t] - m;
                        v += d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = v / n;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut x_hat = vec![0.0; b * c * l];
        let mut out = vec![0.0; b * c * l];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                for t in 0..l {
                    let xh = (x.data[base + t] - mean[ci]) * inv_std[ci];
                    x_hat[base + t] = xh;
                    out[base + t] = g.data[ci] * xh + be.data[ci];
                }
            }
        }
        let value = Tensor {
            shape: vec![b, c, l],
            data: out,
        };
        let id = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                inv_std,
                x_hat,
                training,
            },
        );
        Ok((id, mean, var))
    }

    pub fn relu(&mut self, input: VarId) -> VarId {
        let out: Vec<f64> = self.value(input).data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(input).shape.clone();
        self.push(Tensor { shape, data: out }, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let out: Vec<f64> = self
            .value(input)
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.value(input).shape.clone();
        self.push(Tensor { shape, data: out }, Op::Sigmoid { input })
    }

    /// Max pooling, valid windows only. Ties route the gradient to the
    /// lowest index.
    pub fn max_pool1d(&mut self, input: VarId, k: usize, stride: usize) -> Result<VarId> {
        let x = self.value(input);
        if x.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "max_pool1d expects 3D input, got {:?}",
                x.shape
            )));
        }
        let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
        if k > l {
            return Err(Error::Shape(format!(
                "max_pool1d window {} exceeds length {}",
                k, l
            )));
        }
        let l_out = (l - k) / stride + 1;
        let mut out = vec![0.0; b * c * l_out];
        let mut argmax = vec![0usize; b * c * l_out];
        for bc in 0..b * c {
            let base = bc * l;
            for t in 0..l_out {
                let start = t * stride;
                let mut best = x.data[base + start];
                let mut best_i = base + start;
                for j in 1..k {
                    let v = x.data[base + start + j];
                    if v > best {
                        best = v;
                        best_i = base + start + j;
                    }
                }
                out[bc * l_out + t] = best;
                argmax[bc * l_out + t] = best_i;
            }
        }
        let value = Tensor {
            shape: vec![b, c, l_out],
            data: out,
        };
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    pub fn global_avg_pool(&mut self, input: VarId) -> Result<VarId> {
        let x = self.value(input);
        if x.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "global_avg_pool expects 3D input, got {:?}",
                x.shape
            )));
        }
        let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
        let mut out = vec![0.0; b * c];
        for bc in 0..b * c {
            let base = bc * l;
            out[bc] = x.data[base..base + l].iter().sum::<f64>() / l as f64;
        }
        let value = Tensor {
            shape: vec![b, c],
            data: out,
        };
        Ok(self.push(value, Op::GlobalAvgPool { input }))
    }

    /// Multiply each channel of `input` [b,c,l] by `scales` [b,c].
    pub fn scale_channels(&mut self, input: VarId, scales: VarId) -> Result<VarId> {
        let x = self.value(input);
        let s = self.value(scales);
        if x.shape.len() != 3 || s.shape.len() != 2 || x.shape[0] != s.shape[0] || x.shape[1] != s.shape[1]
        {
            return Err(Error::Shape(format!(
                "scale_channels: input {:?} vs scales {:?}",
                x.shape, s.shape
            )));
        }
        let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
        let mut out = vec![0.0; b * c * l];
        for bc in 0..b * c {
            let sv = s.data[bc];
            let base = bc * l;
            for t in 0..l {
                out[base + t] = x.data[base + t] * sv;
            }
        }
        let value = Tensor {
            shape: vec![b, c, l],
            data: out,
        };
        Ok(self.push(value, Op::ScaleChannels { input, scales }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self.value(a), self.value(b))?;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddT { a, b }))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self.value(a), self.value(b))?;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::SubT { a, b }))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self.value(a), self.value(b))?;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::MulT { a, b }))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self.value(a), self.value(b))?;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::DivT { a, b }))
    }

    pub fn abs(&mut self, input: VarId) -> VarId {
        let data: Vec<f64> = self.value(input).data.iter().map(|v| v.abs()).collect();
        let shape = self.value(input).shape.clone();
        self.push(Tensor { shape, data }, Op::Abs { input })
    }

    /// a*x + b with scalar constants.
    pub fn affine(&mut self, input: VarId, a: f64, b: f64) -> VarId {
        let data: Vec<f64> = self.value(input).data.iter().map(|v| a * v + b).collect();
        let shape = self.value(input).shape.clone();
        self.push(Tensor { shape, data }, Op::Affine { input, a })
    }

    pub fn mean_all(&mut self, input: VarId) -> VarId {
        let x = self.value(input);
        let m = x.data.iter().sum::<f64>() / x.data.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll { input })
    }

    pub fn sum_all(&mut self, input: VarId) -> VarId {
        let s = self.value(input).data.iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::SumAll { input })
    }

    pub fn reshape(&mut self, input: VarId, shape: Vec<usize>) -> Result<VarId> {
        let x = self.value(input);
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                x.shape, shape
            )));
        }
        let data = x.data.clone();
        Ok(self.push(Tensor { shape, data }, Op::Reshape { input }))
    }

    /// Differentiable ascending sort via a Gaussian-kernel soft
    /// permutation: row i of the soft matrix is a softmax over
    /// -(p_j - sorted_i)^2 / temperature. As temperature -> 0 this
    /// converges to the hard sort.
    pub fn soft_sort(&mut self, input: VarId, temperature: f64) -> Result<VarId> {
        if temperature <= 0.0 {
            return Err(Error::Contract("soft_sort temperature must be > 0".into()));
        }
        let x = self.value(input);
        if x.shape.len() != 1 {
            return Err(Error::Shape(format!(
                "soft_sort expects 1D input, got {:?}",
                x.shape
            )));
        }
        let n = x.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by(|&i, &j| x.data[i].partial_cmp(&x.data[j]).unwrap());
        let p = &x.data;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let si = p[perm[i]];
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..n {
                let d = p[j] - si;
                let w = (-d * d / temperature).exp();
                num += w * p[j];
                den += w;
            }
            out[i] = num / den;
        }
        let value = Tensor {
            shape: vec![n],
            data: out,
        };
        Ok(self.push(
            value,
            Op::SoftSort {
                input,
                temperature,
                perm,
            },
        ))
    }

    // ---- backward ----

    /// Populate gradients of every node with respect to `loss`.
    /// Repeated calls without a fresh tape accumulate.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        // Each pass runs on zeroed adjoints; gradients from earlier passes
        // are merged back afterwards so repeated calls accumulate without
        // re-propagating stale values.
        let saved: Vec<Option<Vec<f64>>> =
            self.nodes.iter_mut().map(|n| n.grad.take()).collect();
        self.grad_mut(loss)[0] = 1.0;
        for idx in (0..self.nodes.len()).rev() {
            let g = match &self.nodes[idx].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            // Split borrows: take the op out, propagate, put it back.
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(idx, &g, &op);
            self.nodes[idx].op = op;
        }
        for (node, s) in self.nodes.iter_mut().zip(saved) {
            if let Some(s) = s {
                match &mut node.grad {
                    Some(g) => g.iter_mut().zip(&s).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(s),
                }
            }
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f64], op: &Op) {
        match op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weights,
                bias,
                stride,
                pad_left,
            } => {
                let (input, weights, bias) = (*input, *weights, *bias);
                let (stride, pad_left) = (*stride, *pad_left);
                let x = self.nodes[input.0].value.clone();
                let w = self.nodes[weights.0].value.clone();
                let (b, c_in, l) = (x.shape[0], x.shape[1], x.shape[2]);
                let (c_out, _, k) = (w.shape[0], w.shape[1], w.shape[2]);
                let l_out = self.nodes[idx].value.shape[2];
                {
                    let db = self.grad_mut(bias);
                    for bi in 0..b {
                        for co in 0..c_out {
                            let o_base = (bi * c_out + co) * l_out;
                            db[co] += g[o_base..o_base + l_out].iter().sum::<f64>();
                        }
                    }
                }
                {
                    let dw = self.grad_mut(weights);
                    for bi in 0..b {
                        for co in 0..c_out {
                            let o_base = (bi * c_out + co) * l_out;
                            for ci in 0..c_in {
                                let x_base = (bi * c_in + ci) * l;
                                let w_base = (co * c_in + ci) * k;
                                for kk in 0..k {
                                    let mut acc = 0.0;
                                    for t in 0..l_out {
                                        let xi = t * stride + kk;
                                        if xi < pad_left {
                                            continue;
                                        }
                                        let xi = xi - pad_left;
                                        if xi >= l {
                                            break;
                                        }
                                        acc += x.data[x_base + xi] * g[o_base + t];
                                    }
                                    dw[w_base + kk] += acc;
                                }
                            }
                        }
                    }
                }
                {
                    let dx = self.grad_mut(input);
                    for bi in 0..b {
                        for co in 0..c_out {
                            let o_base = (bi * c_out + co) * l_out;
                            for ci in 0..c_in {
                                let x_base = (bi * c_in + ci) * l;
                                let w_base = (co * c_in + ci) * k;
                                for kk in 0..k {
                                    let wv = w.data[w_base + kk];
                                    if wv == 0.0 {
                                        continue;
                                    }
                                    for t in 0..l_out {
                                        let xi = t * stride + kk;
                                        if xi < pad_left {
                                            continue;
                                        }
                                        let xi = xi - pad_left;
                                        if xi >= l {
                                            break;
                                        }
                                        dx[x_base + xi] += wv * g[o_base + t];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let (input, weights, bias) = (*input, *weights, *bias);
                let x = self.nodes[input.0].value.clone();
                let w = self.nodes[weights.0].value.clone();
                let (b, f_in) = (x.shape[0], x.shape[1]);
                let f_out = w.shape[0];
                {
                    let db = self.grad_mut(bias);
                    for bi in 0..b {
                        for fo in 0..f_out {
                            db[fo] += g[bi * f_out + fo];
                        }
                    }
                }
                {
                    let dw = self.grad_mut(weights);
                    for bi in 0..b {
                        for fo in 0..f_out {
                            let gv = g[bi * f_out + fo];
                            if gv == 0.0 {
                                continue;
                            }
                            let xb = bi * f_in;
                            let wb = fo * f_in;
                            for fi in 0..f_in {
                                dw[wb + fi] += gv * x.data[xb + fi];
                            }
                        }
                    }
                }
                {
                    let dx = self.grad_mut(input);
                    for bi in 0..b {
                        for fo in 0..f_out {
                            let gv = g[bi * f_out + fo];
                            if gv == 0.0 {
                                continue;
                            }
                            let xb = bi * f_in;
                            let wb = fo * f_in;
                            for fi in 0..f_in {
                                dx[xb + fi] += gv * w.data[wb + fi];
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                inv_std,
                x_hat,
                training,
            } => {
                let (input, gamma, beta) = (*input, *gamma, *beta);
                let shape = self.nodes[idx].value.shape.clone();
                let (b, c, l) = (shape[0], shape[1], shape[2]);
                let gam = self.nodes[gamma.0].value.data.clone();
                let n = (b * l) as f64;
                // per-channel reductions of upstream grad
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * l;
                        for t in 0..l {
                            sum_g[ci] += g[base + t];
                            sum_gx[ci] += g[base + t] * x_hat[base + t];
                        }
                    }
                }
                {
                    let dg = self.grad_mut(gamma);
                    for ci in 0..c {
                        dg[ci] += sum_gx[ci];
                    }
                }
                {
                    let db = self.grad_mut(beta);
                    for ci in 0..c {
                        db[ci] += sum_g[ci];
                    }
                }
                {
                    let dx = self.grad_mut(input);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * l;
                            for t in 0..l {
                                let gxh = g[base + t] * gam[ci];
                                if *training {
                                    dx[base + t] += inv_std[ci]
                                        * (gxh
                                            - gam[ci] * sum_g[ci] / n
                                            - x_hat[base + t] * gam[ci] * sum_gx[ci] / n);
                                } else {
                                    dx[base + t] += gxh * inv_std[ci];
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu { input } => {
                let input = *input;
                let x = self.nodes[input.0].value.data.clone();
                let dx = self.grad_mut(input);
                for i in 0..x.len() {
                    if x[i] > 0.0 {
                        dx[i] += g[i];
                    }
                }
            }
            Op::Sigmoid { input } => {
                let input = *input;
                let y = self.nodes[idx].value.data.clone();
                let dx = self.grad_mut(input);
                for i in 0..y.len() {
                    dx[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::MaxPool { input, argmax } => {
                let input = *input;
                let argmax = argmax.clone();
                let dx = self.grad_mut(input);
                for (i, &src) in argmax.iter().enumerate() {
                    dx[src] += g[i];
                }
            }
            Op::GlobalAvgPool { input } => {
                let input = *input;
                let l = self.nodes[input.0].value.shape[2];
                let dx = self.grad_mut(input);
                for (bc, gv) in g.iter().enumerate() {
                    let share = gv / l as f64;
                    let base = bc * l;
                    for t in 0..l {
                        dx[base + t] += share;
                    }
                }
            }
            Op::ScaleChannels { input, scales } => {
                let (input, scales) = (*input, *scales);
                let x = self.nodes[input.0].value.clone();
                let s = self.nodes[scales.0].value.data.clone();
                let l = x.shape[2];
                {
                    let dx = self.grad_mut(input);
                    for bc in 0..s.len() {
                        let base = bc * l;
                        for t in 0..l {
                            dx[base + t] += g[base + t] * s[bc];
                        }
                    }
                }
                {
                    let ds = self.grad_mut(scales);
                    for bc in 0..s.len() {
                        let base = bc * l;
                        let mut acc = 0.0;
                        for t in 0..l {
                            acc += g[base + t] * x.data[base + t];
                        }
                        ds[bc] += acc;
                    }
                }
            }
            Op::AddT { a, b } => {
                let (a, b) = (*a, *b);
                let da = self.grad_mut(a);
                for i in 0..g.len() {
                    da[i] += g[i];
                }
                let db = self.grad_mut(b);
                for i in 0..g.len() {
                    db[i] += g[i];
                }
            }
            Op::SubT { a, b } => {
                let (a, b) = (*a, *b);
                let da = self.grad_mut(a);
                for i in 0..g.len() {
                    da[i] += g[i];
                }
                let db = self.grad_mut(b);
                for i in 0..g.len() {
                    db[i] -= g[i];
                }
            }
            Op::MulT { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.data.clone();
                let bv = self.nodes[b.0].value.data.clone();
                let da = self.grad_mut(a);
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
                let db = self.grad_mut(b);
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
            Op::DivT { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.data.clone();
                let bv = self.nodes[b.0].value.data.clone();
                let da = self.grad_mut(a);
                for i in 0..g.len() {
                    da[i] += g[i] / bv[i];
                }
                let db = self.grad_mut(b);
                for i in 0..g.len() {
                    db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                }
            }
            Op::Abs { input } => {
                let input = *input;
                let x = self.nodes[input.0].value.data.clone();
                let dx = self.grad_mut(input);
                for i in 0..g.len() {
                    // subgradient 0 at exact zero
                    dx[i] += g[i] * if x[i] > 0.0 { 1.0 } else if x[i] < 0.0 { -1.0 } else { 0.0 };
                }
            }
            Op::Affine { input, a } => {
                let (input, a) = (*input, *a);
                let dx = self.grad_mut(input);
                for i in 0..g.len() {
                    dx[i] += g[i] * a;
                }
            }
            Op::MeanAll { input } => {
                let input = *input;
                let n = self.nodes[input.0].value.len() as f64;
                let share = g[0] / n;
                let dx = self.grad_mut(input);
                for v in dx.iter_mut() {
                    *v += share;
                }
            }
            Op::SumAll { input } => {
                let input = *input;
                let dx = self.grad_mut(input);
                for v in dx.iter_mut() {
                    *v += g[0];
                }
            }
            Op::Reshape { input } => {
                let input = *input;
                let dx = self.grad_mut(input);
                for i in 0..g.len() {
                    dx[i] += g[i];
                }
            }
            Op::SoftSort {
                input,
                temperature,
                perm,
            } => {
                let (input, temperature) = (*input, *temperature);
                let perm = perm.clone();
                let p = self.nodes[input.0].value.data.clone();
                let n = p.len();
                // Recompute rows; accumulate J^T g where the soft value is
                // out_i = sum_j W_ij p_j / sum_j W_ij with
                // W_ij = exp(-(p_j - p_perm[i])^2 / T). The anchor value
                // p_perm[i] is itself an input coordinate, so gradient flows
                // into it as well (the permutation indices are locally
                // constant).
                let dx = self.grad_mut(input);
                for i in 0..n {
                    if g[i] == 0.0 {
                        continue;
                    }
                    let si = p[perm[i]];
                    let mut w = vec![0.0; n];
                    let mut a = vec![0.0; n];
                    let mut r = 0.0;
                    let mut num = 0.0;
                    for j in 0..n {
                        let d = p[j] - si;
                        w[j] = (-d * d / temperature).exp();
                        a[j] = -2.0 * d / temperature;
                        r += w[j];
                        num += w[j] * p[j];
                    }
                    let out_i = num / r;
                    let mut swa = 0.0; // sum_j W_ij a_ij
                    let mut swap = 0.0; // sum_j W_ij a_ij p_j
                    for j in 0..n {
                        swa += w[j] * a[j];
                        swap += w[j] * a[j] * p[j];
                    }
                    for k in 0..n {
                        // direct p_k appearance and W dependence via p_j = p_k
                        let mut dn = w[k] + w[k] * a[k] * p[k];
                        let mut dr = w[k] * a[k];
                        if k == perm[i] {
                            // anchor dependence: s_i = p_k
                            dn -= swap;
                            dr -= swa;
                        }
                        dx[k] += g[i] * (dn - out_i * dr) / r;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let b = tape.leaf(t1(&[0.0]));
        let y = tape.conv1d(x, w, b, 1, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).data, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn conv1d_hand_cross_correlation() {
        // input (1,2,3), kernel (1,1) -> (3,5)
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let b = tape.leaf(t1(&[0.0]));
        let y = tape.conv1d(x, w, b, 1, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).data, vec![3.0, 5.0]);
    }

    #[test]
    fn conv1d_channel_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 8]));
        let w = tape.leaf(Tensor::zeros(vec![3, 1, 3]));
        let b = tape.leaf(Tensor::zeros(vec![3]));
        let err = tape.conv1d(x, w, b, 1, Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 8]") && msg.contains("[3, 1, 3]"), "{msg}");
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn batchnorm_zero_variance_batch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 1, 3], vec![5.0; 6]).unwrap());
        let g = tape.leaf(t1(&[1.0]));
        let b = tape.leaf(t1(&[0.0]));
        let (y, mean, var) = tape
            .batchnorm1d(x, g, b, 1e-5, true, &[0.0], &[1.0])
            .unwrap();
        assert_eq!(mean, vec![5.0]);
        assert_eq!(var, vec![0.0]);
        for v in &tape.value(y).data {
            assert!(v.is_finite());
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, -2.0, 3.0]));
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_half_square_gives_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        let half = tape.affine(s, 0.5, 0.0);
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[2.0]));
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), vec![2.0]);
    }

    #[test]
    fn max_pool_ties_route_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 4], vec![3.0, 3.0, 1.0, 0.0]).unwrap());
        let y = tape.max_pool1d(x, 2, 2).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn soft_sort_hard_limit() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[3.0, 1.0, 2.0]));
        let y = tape.soft_sort(x, 1e-4).unwrap();
        let out = &tape.value(y).data;
        assert!((out[0] - 1.0).abs() < 1e-6);
        assert!((out[1] - 2.0).abs() < 1e-6);
        assert!((out[2] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn soft_sort_sorted_fixed_point() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0, 3.0, 4.0]));
        let y = tape.soft_sort(x, 1e-4).unwrap();
        for (a, b) in tape.value(y).data.iter().zip(&[1.0, 2.0, 3.0, 4.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
