//! Dense NHWC tensors with a small reverse-mode differentiation tape.
//!
//! Layout is row-major with the batch as the outermost dimension, then
//! height, width, and channels: element `(b, i, j, k)` lives at
//! `((b * h + i) * w + j) * c + k`.
//!
//! Matrix-valued ops (`matmul`, `transpose`) view a tensor as a
//! `(n * h * w) x c` matrix, so an `h x w x c` feature map is directly the
//! `hw x c` pixel-by-channel matrix. Matrix results come back with shape
//! `(1, rows, 1, cols)`.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{compare_gradients, grad_check, GradCheckConfig, GradReport, ParamErrors};
pub(crate) use tape::bce_term;
pub use tape::{Gradients, Reduction, Tape, Var, BCE_CLAMP};

/// Layer-norm guard constant.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    /// Single-sample `h x w x c` shape.
    pub const fn hwc(h: usize, w: usize, c: usize) -> Self {
        Shape { n: 1, h, w, c }
    }

    /// `rows x cols` matrix shape.
    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape {
            n: 1,
            h: rows,
            w: 1,
            c: cols,
        }
    }

    /// Convolution kernel `k x k x cin_per_group x cout`.
    pub const fn kernel(k: usize, cin_per_group: usize, cout: usize) -> Self {
        Shape {
            n: k,
            h: k,
            w: cin_per_group,
            c: cout,
        }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    #[inline]
    pub const fn index(&self, b: usize, i: usize, j: usize, k: usize) -> usize {
        ((b * self.h + i) * self.w + j) * self.c + k
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Height,
    Width,
    Channel,
}

impl Axis {
    pub(crate) fn position(self) -> usize {
        match self {
            Axis::Batch => 0,
            Axis::Height => 1,
            Axis::Width => 2,
            Axis::Channel => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// Tanh approximation of GELU.
    Gelu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    /// Discriminator slope.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShuffleDirection {
    /// `(h, w, c) -> (h * r, w * r, c / r^2)`
    Shuffle,
    /// `(h, w, c) -> (h / r, w / r, c * r^2)`
    Unshuffle,
}

/// Immutable once built; every op produces a fresh tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {}", data.len(), shape),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.n {
            for i in 0..shape.h {
                for j in 0..shape.w {
                    for k in 0..shape.c {
                        data.push(f(b, i, j, k));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Row-major `rows x cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(Shape::matrix(rows, cols), data)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, low: f64, high: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| rng.random_range(low..high))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// In-place access for optimizer updates.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, b: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.shape.index(b, i, j, k)]
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sample `b` as a single-sample tensor.
    pub fn sample(&self, b: usize) -> Tensor {
        let len = self.shape.h * self.shape.w * self.shape.c;
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[b * len..(b + 1) * len].to_vec(),
        }
    }

    /// Concatenate single- or multi-sample tensors along the batch axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors"))?
            .shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in parts {
            if (t.shape.h, t.shape.w, t.shape.c) != (first.h, first.w, first.c) {
                return Err(Error::shape("stack", format!("{} vs {}", first, t.shape)));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape { n, ..first },
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// Value-level wrappers around the kernels, for callers that need no gradients.

pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize, groups: usize) -> Result<Tensor> {
    let geom = kernels::ConvGeom::new(x.shape, w.shape, stride, pad, groups)?;
    Ok(Tensor {
        shape: geom.out_shape(),
        data: kernels::conv2d_forward(&geom, &x.data, &w.data),
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = kernels::matmul_dims(a.shape, b.shape)?;
    Ok(Tensor {
        shape: Shape::matrix(m, n),
        data: kernels::matmul(&a.data, &b.data, m, k, n),
    })
}

pub fn softmax(x: &Tensor, axis: Axis) -> Tensor {
    Tensor {
        shape: x.shape,
        data: kernels::softmax(&x.data, x.shape, axis),
    }
}

pub fn pixel_shuffle(x: &Tensor, r: usize, direction: ShuffleDirection) -> Result<Tensor> {
    let out = kernels::shuffle_shape(x.shape, r, direction)?;
    let mut data = vec![0.0; x.numel()];
    kernels::shuffle_copy(x.shape, r, direction, &x.data, &mut data);
    Ok(Tensor { shape: out, data })
}

pub fn layer_norm_channels(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    kernels::check_affine(x.shape, gamma.shape, beta.shape)?;
    let (data, _, _) = kernels::layer_norm(&x.data, x.shape, &gamma.data, &beta.data, eps);
    Ok(Tensor {
        shape: x.shape,
        data,
    })
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kernels::activate(kind, v))
}
