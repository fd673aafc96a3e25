use super::kernels::{self, ConvGeom};
use super::{Activation, Axis, Shape, ShuffleDirection, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var },
    Reshape { x: Var },
    Softmax { x: Var, axis: Axis },
    Shuffle { x: Var, r: usize, direction: ShuffleDirection },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    Activation { x: Var, kind: Activation },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    DivScalar { x: Var, s: Var, index: usize },
    ConcatChannels { parts: Vec<Var> },
    SliceChannels { x: Var, start: usize },
    StackBatch { parts: Vec<Var> },
    SelectBatch { x: Var, b: usize },
    Sum { x: Var, reduction: Reduction },
    Mse { a: Var, b: Var },
    BinaryCrossEntropy { p: Var, labels: Vec<f64>, reduction: Reduction },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamically recorded op graph for one forward/backward pass.
///
/// Not shared across threads; build one tape per pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when nothing downstream of the loss touched it.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }
}

/// Accumulate `g` into the slot for `v`.
fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize, groups: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad, groups)?;
        let data = kernels::conv2d_forward(&geom, &self.value(x).data, &self.value(w).data);
        let value = Tensor {
            shape: geom.out_shape(),
            data,
        };
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::Conv2d { x, w, geom }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = kernels::matmul_dims(self.shape(a), self.shape(b))?;
        let data = kernels::matmul(&self.value(a).data, &self.value(b).data, m, k, n);
        let value = Tensor {
            shape: Shape::matrix(m, n),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Matrix transpose of the `(n*h*w) x c` view.
    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (rows, cols) = (s.pixels(), s.c);
        let data = kernels::transpose(&self.value(x).data, rows, cols);
        let value = Tensor {
            shape: Shape::matrix(cols, rows),
            data,
        };
        let rg = self.rg(x);
        self.push(value, Op::Transpose { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let s = self.shape(x);
        let data = kernels::softmax(&self.value(x).data, s, axis);
        let rg = self.rg(x);
        self.push(Tensor { shape: s, data }, Op::Softmax { x, axis }, rg)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize, direction: ShuffleDirection) -> Result<Var> {
        let s = self.shape(x);
        let out = kernels::shuffle_shape(s, r, direction)?;
        let mut data = vec![0.0; s.numel()];
        kernels::shuffle_copy(s, r, direction, &self.value(x).data, &mut data);
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: out, data }, Op::Shuffle { x, r, direction }, rg))
    }

    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x);
        kernels::check_affine(s, self.shape(gamma), self.shape(beta))?;
        let (data, xhat, inv_std) = kernels::layer_norm(
            &self.value(x).data,
            s,
            &self.value(gamma).data,
            &self.value(beta).data,
            eps,
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(Tensor { shape: s, data }, op, rg))
    }

    /// Per-sample, per-channel normalization over height and width.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let s = self.shape(x);
        let (data, inv_std) = kernels::instance_norm(&self.value(x).data, s, eps);
        let rg = self.rg(x);
        self.push(Tensor { shape: s, data }, Op::InstanceNorm { x, inv_std }, rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = super::activation(self.value(x), kind);
        let rg = self.rg(x);
        self.push(value, Op::Activation { x, kind }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: sa, data }, Op::Add { a, b }, rg))
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    /// Divide every element of `x` by element `index` of `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var, index: usize) -> Result<Var> {
        let denom = *self
            .value(s)
            .data
            .get(index)
            .ok_or_else(|| Error::shape("div_scalar", format!("index {index} outside {}", self.shape(s))))?;
        let value = self.value(x).map(|v| v / denom);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::DivScalar { x, s, index }, rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::shape("concat_channels", format!("{first} vs {s}")));
            }
            c += s.c;
        }
        let out = first.with_c(c);
        let mut data = Vec::with_capacity(out.numel());
        for px in 0..out.pixels() {
            for &p in parts {
                let pc = self.shape(p).c;
                data.extend_from_slice(&self.value(p).data[px * pc..(px + 1) * pc]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor { shape: out, data }, Op::ConcatChannels { parts: parts.to_vec() }, rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.c || len == 0 {
            return Err(Error::shape(
                "slice_channels",
                format!("[{start}, {}) outside {} channels", start + len, s.c),
            ));
        }
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(s.pixels() * len);
        for px in 0..s.pixels() {
            data.extend_from_slice(&src[px * s.c + start..px * s.c + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: s.with_c(len), data }, Op::SliceChannels { x, start }, rg))
    }

    pub fn stack_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let value = Tensor::stack(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::StackBatch { parts: parts.to_vec() }, rg))
    }

    pub fn select_batch(&mut self, x: Var, b: usize) -> Result<Var> {
        let s = self.shape(x);
        if b >= s.n {
            return Err(Error::shape("select_batch", format!("sample {b} of {s}")));
        }
        let value = self.value(x).sample(b);
        let rg = self.rg(x);
        Ok(self.push(value, Op::SelectBatch { x, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, Reduction::Sum)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(x, Reduction::Mean)
    }

    fn reduce(&mut self, x: Var, reduction: Reduction) -> Var {
        let v = self.value(x);
        let total: f64 = v.data.iter().sum();
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / v.numel() as f64,
        };
        let rg = self.rg(x);
        self.push(Tensor::scalar(value), Op::Sum { x, reduction }, rg)
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mse", format!("{sa} vs {sb}")));
        }
        let n = sa.numel() as f64;
        let total: f64 = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(total / n), Op::Mse { a, b }, rg))
    }

    /// Binary cross-entropy of probabilities `p` against `labels`, with `p`
    /// clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn binary_cross_entropy(&mut self, p: Var, labels: &[f64], reduction: Reduction) -> Result<Var> {
        let s = self.shape(p);
        if labels.len() != s.numel() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{} labels for {} probabilities", labels.len(), s.numel()),
            ));
        }
        let total: f64 = self
            .value(p)
            .data
            .iter()
            .zip(labels)
            .map(|(&k, &y)| bce_term(k, y))
            .sum();
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / s.numel() as f64,
        };
        let rg = self.rg(p);
        let op = Op::BinaryCrossEntropy {
            p,
            labels: labels.to_vec(),
            reduction,
        };
        Ok(self.push(Tensor::scalar(value), op, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape,
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) =
                    kernels::conv2d_backward(geom, val(*x), val(*w), g, self.rg(*x), self.rg(*w));
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.rg(*a) {
                    accumulate(grads, *a, kernels::matmul_nt(g, val(*b), *m, *n, *k));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, kernels::matmul_tn(val(*a), g, *m, *k, *n));
                }
            }
            Op::Transpose { x } => {
                // Output is cols x rows of the input view.
                let s = node.value.shape;
                accumulate(grads, *x, kernels::transpose(g, s.pixels(), s.c));
            }
            Op::Reshape { x } => accumulate(grads, *x, g.to_vec()),
            Op::Softmax { x, axis } => {
                let dx = kernels::softmax_backward(&node.value.data, g, node.value.shape, *axis);
                accumulate(grads, *x, dx);
            }
            Op::Shuffle { x, r, direction } => {
                let inverse = match direction {
                    ShuffleDirection::Shuffle => ShuffleDirection::Unshuffle,
                    ShuffleDirection::Unshuffle => ShuffleDirection::Shuffle,
                };
                let mut dx = vec![0.0; g.len()];
                kernels::shuffle_copy(node.value.shape, *r, inverse, g, &mut dx);
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.shape.c;
                let (dx, dgamma, dbeta) = kernels::layer_norm_backward(g, xhat, inv_std, val(*gamma), c);
                if self.rg(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let dx = kernels::instance_norm_backward(&node.value.data, g, inv_std, node.value.shape);
                accumulate(grads, *x, dx);
            }
            Op::Activation { x, kind } => {
                let dx = val(*x)
                    .iter()
                    .zip(&node.value.data)
                    .zip(g)
                    .map(|((&xv, &yv), &gv)| gv * kernels::activate_grad(*kind, xv, yv))
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Scale { x, factor } => accumulate(grads, *x, g.iter().map(|v| v * factor).collect()),
            Op::DivScalar { x, s, index } => {
                let denom = val(*s)[*index];
                if self.rg(*x) {
                    accumulate(grads, *x, g.iter().map(|v| v / denom).collect());
                }
                if self.rg(*s) {
                    // d(x/s)/ds = -x/s^2 = -y/s
                    let ds: f64 = -g.iter().zip(&node.value.data).map(|(gv, yv)| gv * yv).sum::<f64>() / denom;
                    let mut full = vec![0.0; val(*s).len()];
                    full[*index] = ds;
                    accumulate(grads, *s, full);
                }
            }
            Op::ConcatChannels { parts } => {
                let out_c = node.value.shape.c;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).c;
                    if self.rg(p) {
                        let px = node.value.shape.pixels();
                        let mut d = Vec::with_capacity(px * pc);
                        for i in 0..px {
                            d.extend_from_slice(&g[i * out_c + offset..i * out_c + offset + pc]);
                        }
                        accumulate(grads, p, d);
                    }
                    offset += pc;
                }
            }
            Op::SliceChannels { x, start } => {
                let s = self.shape(*x);
                let len = node.value.shape.c;
                let mut d = vec![0.0; s.numel()];
                for px in 0..s.pixels() {
                    d[px * s.c + start..px * s.c + start + len].copy_from_slice(&g[px * len..(px + 1) * len]);
                }
                accumulate(grads, *x, d);
            }
            Op::StackBatch { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p).numel();
                    if self.rg(p) {
                        accumulate(grads, p, g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::SelectBatch { x, b } => {
                let s = self.shape(*x);
                let len = node.value.shape.numel();
                let mut d = vec![0.0; s.numel()];
                d[b * len..(b + 1) * len].copy_from_slice(g);
                accumulate(grads, *x, d);
            }
            Op::Sum { x, reduction } => {
                let n = self.shape(*x).numel();
                let v = match reduction {
                    Reduction::Sum => g[0],
                    Reduction::Mean => g[0] / n as f64,
                };
                accumulate(grads, *x, vec![v; n]);
            }
            Op::Mse { a, b } => {
                let (xa, xb) = (val(*a), val(*b));
                let k = 2.0 * g[0] / xa.len() as f64;
                if self.rg(*a) {
                    accumulate(grads, *a, xa.iter().zip(xb).map(|(p, q)| k * (p - q)).collect());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, xa.iter().zip(xb).map(|(p, q)| k * (q - p)).collect());
                }
            }
            Op::BinaryCrossEntropy { p, labels, reduction } => {
                let probs = val(*p);
                let scale = match reduction {
                    Reduction::Sum => g[0],
                    Reduction::Mean => g[0] / probs.len() as f64,
                };
                let d = probs
                    .iter()
                    .zip(labels)
                    .map(|(&k, &y)| scale * bce_grad(k, y))
                    .collect();
                accumulate(grads, *p, d);
            }
        }
    }
}

/// Probabilities are clamped this far from 0 and 1 inside cross-entropy terms.
pub const BCE_CLAMP: f64 = 1e-7;

pub(crate) fn bce_term(kappa: f64, y: f64) -> f64 {
    let k = kappa.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * k.ln() + (1.0 - y) * (1.0 - k).ln())
}

fn bce_grad(kappa: f64, y: f64) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&kappa) {
        return 0.0;
    }
    -y / kappa + (1.0 - y) / (1.0 - kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckConfig};

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(Shape::hwc(2, 3, 1), vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.5]).unwrap());
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_mean_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse(x, zero).unwrap();
        assert_eq!(tape.value(loss).item(), 4.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn unreached_parameters_get_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let unused = tape.param(Tensor::full(Shape::hwc(1, 2, 1), 3.0));
        let loss = tape.scale(x, 3.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get_or_zero(unused), Tensor::zeros(Shape::hwc(1, 2, 1)));
        assert_eq!(g.get(x).unwrap().item(), 3.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(Shape::hwc(2, 1, 1)));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_matmul_matches_finite_differences() {
        let a = Tensor::matrix(3, 2, vec![0.3, -0.7, 1.1, 0.4, -0.2, 0.9]).unwrap();
        let b = Tensor::matrix(2, 3, vec![0.5, -1.3, 0.8, 0.1, 0.6, -0.4]).unwrap();
        let weights = Tensor::matrix(3, 3, (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let report = grad_check(
            |t, v| {
                let m = t.matmul(v[0], v[1])?;
                let s = t.softmax(m, Axis::Channel);
                let w = t.constant(weights.clone());
                let z = t.mse(s, w)?;
                Ok(z)
            },
            &[a, b],
            GradCheckConfig {
                tolerance: 1e-5,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
