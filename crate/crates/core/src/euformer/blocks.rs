//! Building blocks of the generator: channel-wise multi-head attention,
//! the reshape-free LeFF, the transformer block that pairs them, and the
//! pixel-shuffle resamplers.

use super::params::{Bound, Init, ParamId, ParamSet, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Axis, Shape, ShuffleDirection, Tape, Tensor, Var, NORM_EPS};

/// Bias-free convolution.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv {
    pub fn new(
        src: &mut dyn ParamSource,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        if !cin.is_multiple_of(groups) || !cout.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{name}: {cin} -> {cout} channels not divisible into {groups} groups"
            )));
        }
        let cin_g = cin / groups;
        let weight = src.param(name, Shape::kernel(k, cin_g, cout), Init::FanIn(k * k * cin_g))?;
        Ok(Conv {
            weight,
            stride,
            pad: k / 2,
            groups,
        })
    }

    /// `k x k` convolution with explicit padding.
    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.weight), self.stride, self.pad, self.groups)
    }
}

/// Per-pixel channel normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ChannelNorm {
    pub fn new(src: &mut dyn ParamSource, name: &str, c: usize) -> Result<Self> {
        let shape = Shape::new(1, 1, 1, c);
        Ok(ChannelNorm {
            gamma: src.param(&format!("{name}.gamma"), shape, Init::Const(1.0))?,
            beta: src.param(&format!("{name}.beta"), shape, Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm_channels(x, p.var(self.gamma), p.var(self.beta), NORM_EPS)
    }
}

/// `W_m W_n x`: a 1x1 cross-channel conv followed by a 3x3 depthwise conv.
#[derive(Clone, Debug)]
pub struct Projection {
    pub pointwise: Conv,
    pub depthwise: Conv,
}

impl Projection {
    fn new(src: &mut dyn ParamSource, name: &str, c: usize) -> Result<Self> {
        Ok(Projection {
            pointwise: Conv::new(src, &format!("{name}.pw"), 1, c, c, 1, 1)?,
            depthwise: Conv::new(src, &format!("{name}.dw"), 3, c, c, 1, c)?,
        })
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.pointwise.forward(tape, p, x)?;
        self.depthwise.forward(tape, p, y)
    }
}

/// Channel-wise multi-head attention.
///
/// Per head with `d = c / heads` channels, `Q` and `V` are viewed as
/// `hw x d` matrices and `K` as `d x hw`. The `d x d` map
/// `A = softmax(K Q / alpha)` is normalized over its first (key) index, so
/// each output channel of `V A` is a convex mixture of the value channels.
#[derive(Clone, Debug)]
pub struct Cmha {
    pub channels: usize,
    pub heads: usize,
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    /// One learnable temperature per head, shape `(1, 1, 1, heads)`.
    pub alpha: ParamId,
}

/// Result of the attention core for inspection.
pub struct AttentionTrace {
    pub output: Var,
    /// `A` per sample and head, in sample-major order.
    pub maps: Vec<Var>,
}

impl Cmha {
    pub fn new(src: &mut dyn ParamSource, name: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Divisibility {
                op: "cmha channels per head",
                value: channels,
                divisor: heads,
            });
        }
        let d = channels / heads;
        Ok(Cmha {
            channels,
            heads,
            query: Projection::new(src, &format!("{name}.q"), channels)?,
            key: Projection::new(src, &format!("{name}.k"), channels)?,
            value: Projection::new(src, &format!("{name}.v"), channels)?,
            alpha: src.param(
                &format!("{name}.alpha"),
                Shape::new(1, 1, 1, heads),
                Init::Const((d as f64).sqrt()),
            )?,
        })
    }

    /// `V . softmax(K . Q / alpha)` without the residual.
    pub fn attend(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<AttentionTrace> {
        let s = tape.shape(x);
        if s.c != self.channels {
            return Err(Error::shape(
                "cmha",
                format!("expected {} channels, got {}", self.channels, s.c),
            ));
        }
        let d = self.channels / self.heads;
        let q_all = self.query.forward(tape, p, x)?;
        let k_all = self.key.forward(tape, p, x)?;
        let v_all = self.value.forward(tape, p, x)?;
        let alpha = p.var(self.alpha);

        let mut maps = Vec::with_capacity(s.n * self.heads);
        let mut samples = Vec::with_capacity(s.n);
        for b in 0..s.n {
            let (q_b, k_b, v_b) = if s.n == 1 {
                (q_all, k_all, v_all)
            } else {
                (
                    tape.select_batch(q_all, b)?,
                    tape.select_batch(k_all, b)?,
                    tape.select_batch(v_all, b)?,
                )
            };
            let mut heads = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let (q, k, v) = if self.heads == 1 {
                    (q_b, k_b, v_b)
                } else {
                    (
                        tape.slice_channels(q_b, head * d, d)?,
                        tape.slice_channels(k_b, head * d, d)?,
                        tape.slice_channels(v_b, head * d, d)?,
                    )
                };
                // K (d x hw) . Q (hw x d)
                let kt = tape.transpose(k);
                let logits = tape.matmul(kt, q)?;
                let scaled = tape.div_scalar(logits, alpha, head)?;
                let attn = tape.softmax(scaled, Axis::Height);
                maps.push(attn);
                let mixed = tape.matmul(v, attn)?;
                heads.push(tape.reshape(mixed, Shape::hwc(s.h, s.w, d))?);
            }
            samples.push(if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_channels(&heads)?
            });
        }
        let output = if samples.len() == 1 {
            samples[0]
        } else {
            tape.stack_batch(&samples)?
        };
        Ok(AttentionTrace { output, maps })
    }

    /// `x_m = V . softmax(K . Q / alpha) + x`
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let trace = self.attend(tape, p, x)?;
        tape.add(trace.output, x)
    }

    /// Attention maps for `x`, one `d x d` matrix per sample and head, laid
    /// out query-major (row `j` holds the weights mixing value channels into
    /// output channel `j`, so every row sums to one).
    pub fn attention_maps(&self, params: &ParamSet, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let trace = self.attend(&mut tape, &p, xv)?;
        Ok(trace
            .maps
            .iter()
            .map(|&m| {
                let t = tape.transpose(m);
                tape.value(t).clone()
            })
            .collect())
    }
}

/// Locally-enhanced feed-forward kept in `h x w x c` layout:
/// 1x1 expand, GELU, 3x3 depthwise, GELU, 1x1 project.
#[derive(Clone, Debug)]
pub struct Leff {
    pub expand: Conv,
    pub depthwise: Conv,
    pub project: Conv,
}

/// Hidden width multiplier of [`Leff`].
pub const LEFF_EXPANSION: usize = 4;

impl Leff {
    pub fn new(src: &mut dyn ParamSource, name: &str, c: usize) -> Result<Self> {
        let hidden = c * LEFF_EXPANSION;
        Ok(Leff {
            expand: Conv::new(src, &format!("{name}.expand"), 1, c, hidden, 1, 1)?,
            depthwise: Conv::new(src, &format!("{name}.dw"), 3, hidden, hidden, 1, hidden)?,
            project: Conv::new(src, &format!("{name}.project"), 1, hidden, c, 1, 1)?,
        })
    }

    /// Feed-forward path without the residual.
    pub fn inner(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.expand.forward(tape, p, x)?;
        let h = tape.activation(h, Activation::Gelu);
        let h = self.depthwise.forward(tape, p, h)?;
        let h = tape.activation(h, Activation::Gelu);
        self.project.forward(tape, p, h)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.inner(tape, p, x)?;
        tape.add(y, x)
    }
}

/// Efficient transformer block:
/// `y = x + attn(norm1(x))`, `z = y + leff(norm2(y))`.
#[derive(Clone, Debug)]
pub struct Etb {
    pub norm1: ChannelNorm,
    pub attention: Cmha,
    pub norm2: ChannelNorm,
    pub feed_forward: Leff,
}

impl Etb {
    pub fn new(src: &mut dyn ParamSource, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Etb {
            norm1: ChannelNorm::new(src, &format!("{name}.norm1"), c)?,
            attention: Cmha::new(src, &format!("{name}.cmha"), c, heads)?,
            norm2: ChannelNorm::new(src, &format!("{name}.norm2"), c)?,
            feed_forward: Leff::new(src, &format!("{name}.leff"), c)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let n1 = self.norm1.forward(tape, p, x)?;
        let a = self.attention.attend(tape, p, n1)?.output;
        let y = tape.add(x, a)?;
        let n2 = self.norm2.forward(tape, p, y)?;
        let f = self.feed_forward.inner(tape, p, n2)?;
        tape.add(y, f)
    }
}

/// 3x3 conv `c -> c/2` then unshuffle by 2: `(h, w, c) -> (h/2, w/2, 2c)`.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv,
}

impl Downsample {
    pub fn new(src: &mut dyn ParamSource, name: &str, c: usize) -> Result<Self> {
        if !c.is_multiple_of(2) {
            return Err(Error::Divisibility {
                op: "downsample channels",
                value: c,
                divisor: 2,
            });
        }
        Ok(Downsample {
            conv: Conv::new(src, &format!("{name}.conv"), 3, c, c / 2, 1, 1)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        for (value, op) in [(s.h, "downsample height"), (s.w, "downsample width")] {
            if value % 2 != 0 {
                return Err(Error::Divisibility { op, value, divisor: 2 });
            }
        }
        let y = self.conv.forward(tape, p, x)?;
        tape.pixel_shuffle(y, 2, ShuffleDirection::Unshuffle)
    }
}

/// 3x3 conv `c -> 2c` then shuffle by 2: `(h, w, c) -> (2h, 2w, c/2)`.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub conv: Conv,
}

impl Upsample {
    pub fn new(src: &mut dyn ParamSource, name: &str, c: usize) -> Result<Self> {
        if !c.is_multiple_of(2) {
            return Err(Error::Divisibility {
                op: "upsample channels",
                value: c,
                divisor: 2,
            });
        }
        Ok(Upsample {
            conv: Conv::new(src, &format!("{name}.conv"), 3, c, 2 * c, 1, 1)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        tape.pixel_shuffle(y, 2, ShuffleDirection::Shuffle)
    }
}
