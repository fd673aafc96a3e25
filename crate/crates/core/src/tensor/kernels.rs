//! Raw slice kernels shared by the value-level API and the tape.

use super::{Activation, Axis, Shape, ShuffleDirection};
use crate::error::{Error, Result};

/// Convolution geometry. Kernels are stored as `k x k x (c_in / groups) x c_out`
/// in a [`Shape`] with `n = h = k`, `w = c_in / groups`, `c = c_out`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: Shape, kernel: Shape, stride: usize, pad: usize, groups: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if groups == 0 || !x.c.is_multiple_of(groups) {
            return Err(Error::Divisibility {
                op: "conv2d input channels",
                value: x.c,
                divisor: groups,
            });
        }
        if !kernel.c.is_multiple_of(groups) {
            return Err(Error::Divisibility {
                op: "conv2d output channels",
                value: kernel.c,
                divisor: groups,
            });
        }
        let k = kernel.h;
        if kernel.n != k || kernel.w != x.c / groups || k == 0 {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {} does not fit input {} with {} groups (want k x k x {} x c_out)",
                    kernel,
                    x,
                    groups,
                    x.c / groups
                ),
            ));
        }
        if x.h + 2 * pad < k || x.w + 2 * pad < k {
            return Err(Error::shape(
                "conv2d",
                format!("input {} smaller than kernel {k} with pad {pad}", x),
            ));
        }
        Ok(ConvGeom {
            n: x.n,
            h: x.h,
            w: x.w,
            cin: x.c,
            k,
            cout: kernel.c,
            stride,
            pad,
            groups,
            ho: (x.h + 2 * pad - k) / stride + 1,
            wo: (x.w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.ho, self.wo, self.cout)
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.groups == 1
    }

    /// Input coordinate for output row `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }
}

/// `C = A * B + beta * C` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f64], b: usize, grp: usize, cols: &mut [f64]) {
    let cin_g = g.cin_g();
    let kk = g.k * g.k * cin_g;
    for oi in 0..g.ho {
        for oj in 0..g.wo {
            let row = &mut cols[(oi * g.wo + oj) * kk..][..kk];
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let dst = &mut row[(kh * g.k + kw) * cin_g..][..cin_g];
                    match (g.src(oi, kh, g.h), g.src(oj, kw, g.w)) {
                        (Some(ii), Some(jj)) => {
                            let base = ((b * g.h + ii) * g.w + jj) * g.cin + grp * cin_g;
                            dst.copy_from_slice(&x[base..base + cin_g]);
                        }
                        _ => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], b: usize, grp: usize, dx: &mut [f64]) {
    let cin_g = g.cin_g();
    let kk = g.k * g.k * cin_g;
    for oi in 0..g.ho {
        for oj in 0..g.wo {
            let row = &cols[(oi * g.wo + oj) * kk..][..kk];
            for kh in 0..g.k {
                let Some(ii) = g.src(oi, kh, g.h) else { continue };
                for kw in 0..g.k {
                    let Some(jj) = g.src(oj, kw, g.w) else { continue };
                    let base = ((b * g.h + ii) * g.w + jj) * g.cin + grp * cin_g;
                    let src = &row[(kh * g.k + kw) * cin_g..][..cin_g];
                    for (d, s) in dx[base..base + cin_g].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let out_pix = g.ho * g.wo;
    let mut out = vec![0.0; g.n * out_pix * g.cout];
    if g.depthwise() {
        let c = g.cin;
        for b in 0..g.n {
            for oi in 0..g.ho {
                for oj in 0..g.wo {
                    let o = &mut out[((b * g.ho + oi) * g.wo + oj) * c..][..c];
                    for kh in 0..g.k {
                        let Some(ii) = g.src(oi, kh, g.h) else { continue };
                        for kw in 0..g.k {
                            let Some(jj) = g.src(oj, kw, g.w) else { continue };
                            let xs = &x[((b * g.h + ii) * g.w + jj) * c..][..c];
                            let ws = &w[(kh * g.k + kw) * c..][..c];
                            for ((o, xv), wv) in o.iter_mut().zip(xs).zip(ws) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        return out;
    }
    if g.pointwise() {
        gemm(
            g.n * out_pix,
            g.cin,
            g.cout,
            x,
            g.cin,
            1,
            w,
            g.cout,
            1,
            0.0,
            &mut out,
            g.cout,
            1,
        );
        return out;
    }
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kk = g.k * g.k * cin_g;
    let mut cols = vec![0.0; out_pix * kk];
    for b in 0..g.n {
        for grp in 0..g.groups {
            im2col(g, x, b, grp, &mut cols);
            gemm(
                out_pix,
                kk,
                cout_g,
                &cols,
                kk,
                1,
                &w[grp * cout_g..],
                g.cout,
                1,
                0.0,
                &mut out[b * out_pix * g.cout + grp * cout_g..],
                g.cout,
                1,
            );
        }
    }
    out
}

/// Gradients of a convolution with respect to its input and kernel.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let out_pix = g.ho * g.wo;
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    if g.depthwise() {
        let c = g.cin;
        for b in 0..g.n {
            for oi in 0..g.ho {
                for oj in 0..g.wo {
                    let d = &dy[((b * g.ho + oi) * g.wo + oj) * c..][..c];
                    for kh in 0..g.k {
                        let Some(ii) = g.src(oi, kh, g.h) else { continue };
                        for kw in 0..g.k {
                            let Some(jj) = g.src(oj, kw, g.w) else { continue };
                            let xo = ((b * g.h + ii) * g.w + jj) * c;
                            let wo = (kh * g.k + kw) * c;
                            if let Some(dx) = dx.as_mut() {
                                let ws = &w[wo..wo + c];
                                for ((t, dv), wv) in dx[xo..xo + c].iter_mut().zip(d).zip(ws) {
                                    *t += dv * wv;
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                let xs = &x[xo..xo + c];
                                for ((t, dv), xv) in dw[wo..wo + c].iter_mut().zip(d).zip(xs) {
                                    *t += dv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        return (dx, dw);
    }
    if g.pointwise() {
        let rows = g.n * out_pix;
        if let Some(dx) = dx.as_mut() {
            // dx = dy * w^T
            gemm(rows, g.cout, g.cin, dy, g.cout, 1, w, 1, g.cout, 0.0, dx, g.cin, 1);
        }
        if let Some(dw) = dw.as_mut() {
            // dw = x^T * dy
            gemm(g.cin, rows, g.cout, x, 1, g.cin, dy, g.cout, 1, 0.0, dw, g.cout, 1);
        }
        return (dx, dw);
    }
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kk = g.k * g.k * cin_g;
    let mut cols = vec![0.0; out_pix * kk];
    let mut dcols = vec![0.0; out_pix * kk];
    for b in 0..g.n {
        let dy_b = &dy[b * out_pix * g.cout..];
        for grp in 0..g.groups {
            if let Some(dw) = dw.as_mut() {
                im2col(g, x, b, grp, &mut cols);
                gemm(
                    kk,
                    out_pix,
                    cout_g,
                    &cols,
                    1,
                    kk,
                    &dy_b[grp * cout_g..],
                    g.cout,
                    1,
                    1.0,
                    &mut dw[grp * cout_g..],
                    g.cout,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    out_pix,
                    cout_g,
                    kk,
                    &dy_b[grp * cout_g..],
                    g.cout,
                    1,
                    &w[grp * cout_g..],
                    1,
                    g.cout,
                    0.0,
                    &mut dcols,
                    kk,
                    1,
                );
                col2im_add(g, &dcols, b, grp, dx);
            }
        }
    }
    (dx, dw)
}

pub(crate) fn matmul_dims(a: Shape, b: Shape) -> Result<(usize, usize, usize)> {
    let (m, k) = (a.pixels(), a.c);
    let (k2, n) = (b.pixels(), b.c);
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {m}x{k} * {k2}x{n}"),
        ));
    }
    Ok((m, k, n))
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, k, 1, b, n, 1, 0.0, &mut c, n, 1);
    c
}

/// `a^T` (m x k) times `b` (m x n), giving k x n.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    gemm(k, m, n, a, 1, k, b, n, 1, 0.0, &mut c, n, 1);
    c
}

/// `a` (m x n) times `b^T` (k x n), giving m x k.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    gemm(m, n, k, a, n, 1, b, 1, n, 0.0, &mut c, k, 1);
    c
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// `(outer, len, inner)` strides for a reduction along `axis`.
pub(crate) fn axis_split(shape: Shape, axis: Axis) -> (usize, usize, usize) {
    let dims = shape.dims();
    let p = axis.position();
    let outer = dims[..p].iter().product();
    let inner = dims[p + 1..].iter().product();
    (outer, dims[p], inner)
}

pub(crate) fn softmax(x: &[f64], shape: Shape, axis: Axis) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            let max = (0..len).map(|t| x[at(t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for t in 0..len {
                let e = (x[at(t)] - max).exp();
                y[at(t)] = e;
                total += e;
            }
            for t in 0..len {
                y[at(t)] /= total;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], dy: &[f64], shape: Shape, axis: Axis) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            let dot: f64 = (0..len).map(|t| y[at(t)] * dy[at(t)]).sum();
            for t in 0..len {
                dx[at(t)] = y[at(t)] * (dy[at(t)] - dot);
            }
        }
    }
    dx
}

pub(crate) fn shuffle_shape(x: Shape, r: usize, direction: ShuffleDirection) -> Result<Shape> {
    if r == 0 {
        return Err(Error::InvalidArgument("shuffle factor must be >= 1".into()));
    }
    match direction {
        ShuffleDirection::Unshuffle => {
            for (value, op) in [(x.h, "pixel unshuffle height"), (x.w, "pixel unshuffle width")] {
                if value % r != 0 {
                    return Err(Error::Divisibility {
                        op,
                        value,
                        divisor: r,
                    });
                }
            }
            Ok(Shape::new(x.n, x.h / r, x.w / r, x.c * r * r))
        }
        ShuffleDirection::Shuffle => {
            if !x.c.is_multiple_of(r * r) {
                return Err(Error::Divisibility {
                    op: "pixel shuffle channels",
                    value: x.c,
                    divisor: r * r,
                });
            }
            Ok(Shape::new(x.n, x.h * r, x.w * r, x.c / (r * r)))
        }
    }
}

/// Pixel (un)shuffle. With the low-resolution grid `(i, j)` and the
/// high-resolution channel count `c`, the element at high-resolution
/// position `(i * r + di, j * r + dj, k)` maps to low-resolution channel
/// `(di * r + dj) * c + k`.
pub(crate) fn shuffle_copy(
    input: Shape,
    r: usize,
    direction: ShuffleDirection,
    src: &[f64],
    dst: &mut [f64],
) {
    let (hi, lo) = match direction {
        ShuffleDirection::Unshuffle => (input, Shape::new(input.n, input.h / r, input.w / r, input.c * r * r)),
        ShuffleDirection::Shuffle => (Shape::new(input.n, input.h * r, input.w * r, input.c / (r * r)), input),
    };
    let c = hi.c;
    for b in 0..lo.n {
        for i in 0..lo.h {
            for j in 0..lo.w {
                for di in 0..r {
                    for dj in 0..r {
                        let h_off = hi.index(b, i * r + di, j * r + dj, 0);
                        let l_off = lo.index(b, i, j, (di * r + dj) * c);
                        match direction {
                            ShuffleDirection::Unshuffle => {
                                dst[l_off..l_off + c].copy_from_slice(&src[h_off..h_off + c])
                            }
                            ShuffleDirection::Shuffle => {
                                dst[h_off..h_off + c].copy_from_slice(&src[l_off..l_off + c])
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_affine(x: Shape, gamma: Shape, beta: Shape) -> Result<()> {
    if gamma.numel() != x.c || beta.numel() != x.c {
        return Err(Error::shape(
            "layer_norm_channels",
            format!(
                "gamma/beta lengths {}/{} for {} channels",
                gamma.numel(),
                beta.numel(),
                x.c
            ),
        ));
    }
    Ok(())
}

/// Per-pixel normalization over channels followed by a per-channel affine map.
/// Returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm(
    x: &[f64],
    shape: Shape,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = shape.c;
    let pixels = shape.pixels();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; pixels];
    for p in 0..pixels {
        let xs = &x[p * c..(p + 1) * c];
        let mean = xs.iter().sum::<f64>() / c as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + eps).sqrt();
        inv_std[p] = s;
        for k in 0..c {
            let h = (xs[k] - mean) * s;
            xhat[p * c + k] = h;
            y[p * c + k] = gamma[k] * h + beta[k];
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    c: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let cf = c as f64;
    for (p, &s) in inv_std.iter().enumerate() {
        let range = p * c..(p + 1) * c;
        let (d, h) = (&dy[range.clone()], &xhat[range.clone()]);
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        for k in 0..c {
            let dh = d[k] * gamma[k];
            sum_dh += dh;
            sum_dh_h += dh * h[k];
            dgamma[k] += d[k] * h[k];
            dbeta[k] += d[k];
        }
        for k in 0..c {
            let dh = d[k] * gamma[k];
            dx[p * c + k] = s / cf * (cf * dh - sum_dh - h[k] * sum_dh_h);
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-sample, per-channel normalization over the spatial extent (no affine).
/// Returns `(y, inv_std)` with `inv_std` indexed by `b * c + k`.
pub(crate) fn instance_norm(x: &[f64], shape: Shape, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (hw, c) = (shape.h * shape.w, shape.c);
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; shape.n * c];
    for b in 0..shape.n {
        let base = b * hw * c;
        for k in 0..c {
            let at = |p: usize| base + p * c + k;
            let mean = (0..hw).map(|p| x[at(p)]).sum::<f64>() / hw as f64;
            let var = (0..hw).map(|p| (x[at(p)] - mean).powi(2)).sum::<f64>() / hw as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[b * c + k] = s;
            for p in 0..hw {
                y[at(p)] = (x[at(p)] - mean) * s;
            }
        }
    }
    (y, inv_std)
}

pub(crate) fn instance_norm_backward(y: &[f64], dy: &[f64], inv_std: &[f64], shape: Shape) -> Vec<f64> {
    let (hw, c) = (shape.h * shape.w, shape.c);
    let nf = hw as f64;
    let mut dx = vec![0.0; y.len()];
    for b in 0..shape.n {
        let base = b * hw * c;
        for k in 0..c {
            let at = |p: usize| base + p * c + k;
            let sum_d: f64 = (0..hw).map(|p| dy[at(p)]).sum();
            let sum_dy: f64 = (0..hw).map(|p| dy[at(p)] * y[at(p)]).sum();
            let s = inv_std[b * c + k];
            for p in 0..hw {
                dx[at(p)] = s / nf * (nf * dy[at(p)] - sum_d - y[at(p)] * sum_dy);
            }
        }
    }
    dx
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_B: f64 = 0.044_715;

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn activate(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Gelu => 0.5 * v * (1.0 + (GELU_A * (v + GELU_B * v * v * v)).tanh()),
        Activation::LeakyRelu(slope) => {
            if v >= 0.0 {
                v
            } else {
                slope * v
            }
        }
        Activation::Sigmoid => sigmoid(v),
    }
}

/// Derivative given the input `x` and output `y`.
#[inline]
pub(crate) fn activate_grad(kind: Activation, x: f64, y: f64) -> f64 {
    match kind {
        Activation::Gelu => {
            let t = (GELU_A * (x + GELU_B * x * x * x)).tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_B * x * x)
        }
        Activation::LeakyRelu(slope) => {
            if x >= 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
    }
}
