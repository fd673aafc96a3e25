use serde::{Deserialize, Serialize};

use super::blocks::Conv;
use super::params::{Bound, Initializer, Loader, ParamSet, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var, NORM_EPS};

/// Five-layer PatchGAN: 4x4 kernels, padding 1, strides 2, 2, 2, 1, 1 and
/// widths `w, 2w, 4w, 8w, 1`. Instance normalization on layers 2-4 and
/// leaky ReLU (0.2) after layers 1-4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Image channels plus curve-map channels.
    pub input_channels: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_channels: 4,
            base_width: 64,
        }
    }
}

const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];
const KERNEL: usize = 4;

impl DiscriminatorConfig {
    fn widths(&self) -> [usize; 5] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w, 1]
    }

    /// Logit grid `(rows, cols)` for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let step = |n: usize, s: usize| (n + 2).checked_sub(KERNEL).map(|v| v / s + 1);
        STRIDES
            .iter()
            .try_fold((h, w), |(h, w), &s| Some((step(h, s)?, step(w, s)?)))
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    layers: Vec<Conv>,
    params: ParamSet,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let layers = Self::build(&config, &mut init)?;
        Ok(Discriminator {
            config,
            layers,
            params: init.finish(),
        })
    }

    pub fn from_params(config: DiscriminatorConfig, params: ParamSet) -> Result<Self> {
        let mut loader = Loader::new(params);
        let layers = Self::build(&config, &mut loader)?;
        Ok(Discriminator {
            config,
            layers,
            params: loader.finish()?,
        })
    }

    fn build(config: &DiscriminatorConfig, src: &mut dyn ParamSource) -> Result<Vec<Conv>> {
        if config.base_width == 0 || config.input_channels == 0 {
            return Err(Error::Config("discriminator widths must be positive".into()));
        }
        let mut cin = config.input_channels;
        config
            .widths()
            .iter()
            .zip(STRIDES)
            .enumerate()
            .map(|(i, (&cout, stride))| {
                let conv = Conv::new(src, &format!("layer{}", i + 1), KERNEL, cin, cout, stride, 1)?.with_pad(1);
                cin = cout;
                Ok(conv)
            })
            .collect()
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Patch logits for the channel concatenation of `rgb` and `map`.
    pub fn forward_on(&self, tape: &mut Tape, p: &Bound, rgb: Var, map: Var) -> Result<Var> {
        let (a, b) = (tape.shape(rgb), tape.shape(map));
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
            return Err(Error::shape("discriminator", format!("image {a} vs map {b}")));
        }
        if a.c + b.c != self.config.input_channels {
            return Err(Error::shape(
                "discriminator",
                format!("{} + {} channels, expected {}", a.c, b.c, self.config.input_channels),
            ));
        }
        if self.config.output_size(a.h, a.w).is_none() {
            return Err(Error::shape(
                "discriminator",
                format!("{}x{} input is too small for five 4x4 layers", a.h, a.w),
            ));
        }
        let mut h = tape.concat_channels(&[rgb, map])?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if (1..=3).contains(&i) {
                h = tape.instance_norm(h, NORM_EPS);
            }
            if i < last {
                h = tape.activation(h, Activation::LEAKY);
            }
        }
        Ok(h)
    }

    pub fn logits(&self, rgb: &Tensor, map: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let (r, m) = (tape.constant(rgb.clone()), tape.constant(map.clone()));
        let out = self.forward_on(&mut tape, &p, r, m)?;
        Ok(tape.value(out).clone())
    }

    /// Per-patch probabilities `kappa = sigmoid(logit)`.
    pub fn probabilities(&self, rgb: &Tensor, map: &Tensor) -> Result<Tensor> {
        Ok(crate::tensor::activation(&self.logits(rgb, map)?, Activation::Sigmoid))
    }
}
