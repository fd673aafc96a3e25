use serde::{Deserialize, Serialize};

use super::blocks::{Conv, Downsample, Etb, Upsample};
use super::params::{Bound, Initializer, Loader, ParamSet, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};

/// U-shaped generator layout.
///
/// Level `l` runs at `1 / 2^l` resolution with `base_channels * 2^l`
/// channels. The encoder holds `encoder_blocks[l]` ETBs at each level, the
/// deepest level is followed by `bottleneck_blocks` more, and the decoder
/// mirrors the encoder on the way back up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EUFormerConfig {
    pub scales: usize,
    pub encoder_blocks: Vec<usize>,
    pub bottleneck_blocks: usize,
    pub base_channels: usize,
    pub heads: Vec<usize>,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl Default for EUFormerConfig {
    fn default() -> Self {
        EUFormerConfig {
            scales: 3,
            encoder_blocks: vec![1, 2, 2],
            bottleneck_blocks: 2,
            base_channels: 16,
            heads: vec![1, 2, 4],
            input_channels: 3,
            output_channels: 1,
        }
    }
}

impl EUFormerConfig {
    /// Two-level network used by the gradient suite.
    pub fn tiny() -> Self {
        EUFormerConfig {
            scales: 2,
            encoder_blocks: vec![1, 1],
            bottleneck_blocks: 1,
            base_channels: 8,
            heads: vec![1, 2],
            input_channels: 3,
            output_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::Config("scales must be >= 1".into()));
        }
        if self.encoder_blocks.len() != self.scales || self.heads.len() != self.scales {
            return Err(Error::Config(format!(
                "encoder_blocks ({}) and heads ({}) need one entry per scale ({})",
                self.encoder_blocks.len(),
                self.heads.len(),
                self.scales
            )));
        }
        if self.base_channels == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        for (level, &heads) in self.heads.iter().enumerate() {
            let c = self.channels(level);
            if heads == 0 || !c.is_multiple_of(heads) {
                return Err(Error::Config(format!(
                    "level {level}: {c} channels not divisible by {heads} heads"
                )));
            }
        }
        if self.scales > 1 && !self.base_channels.is_multiple_of(2) {
            return Err(Error::Config("base_channels must be even to resample".into()));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        for (value, op) in [(h, "generator input height"), (w, "generator input width")] {
            if value % m != 0 {
                return Err(Error::Divisibility { op, value, divisor: m });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Level {
    encoder: Vec<Etb>,
    down: Option<Downsample>,
    up: Option<Upsample>,
    fuse: Option<Conv>,
    decoder: Vec<Etb>,
}

#[derive(Clone, Debug)]
struct Layout {
    input: Conv,
    levels: Vec<Level>,
    bottleneck: Vec<Etb>,
    output: Conv,
}

impl Layout {
    fn build(config: &EUFormerConfig, src: &mut dyn ParamSource) -> Result<Self> {
        config.validate()?;
        let base = config.base_channels;
        let input = Conv::new(src, "input", 3, config.input_channels, base, 1, 1)?;
        let mut levels = Vec::with_capacity(config.scales);
        for level in 0..config.scales {
            let c = config.channels(level);
            let heads = config.heads[level];
            let deepest = level + 1 == config.scales;
            let encoder = (0..config.encoder_blocks[level])
                .map(|i| Etb::new(src, &format!("enc{level}.etb{i}"), c, heads))
                .collect::<Result<Vec<_>>>()?;
            let (down, up, fuse, decoder) = if deepest {
                (None, None, None, Vec::new())
            } else {
                let down = Downsample::new(src, &format!("enc{level}.down"), c)?;
                let up = Upsample::new(src, &format!("dec{level}.up"), 2 * c)?;
                let fuse = Conv::new(src, &format!("dec{level}.fuse"), 1, 2 * c, c, 1, 1)?;
                let decoder = (0..config.encoder_blocks[level])
                    .map(|i| Etb::new(src, &format!("dec{level}.etb{i}"), c, heads))
                    .collect::<Result<Vec<_>>>()?;
                (Some(down), Some(up), Some(fuse), decoder)
            };
            levels.push(Level {
                encoder,
                down,
                up,
                fuse,
                decoder,
            });
        }
        let deep_c = config.channels(config.scales - 1);
        let deep_heads = config.heads[config.scales - 1];
        let bottleneck = (0..config.bottleneck_blocks)
            .map(|i| Etb::new(src, &format!("bottleneck.etb{i}"), deep_c, deep_heads))
            .collect::<Result<Vec<_>>>()?;
        let output = Conv::new(src, "output", 3, base, config.output_channels, 1, 1)?;
        Ok(Layout {
            input,
            levels,
            bottleneck,
            output,
        })
    }
}

/// Channel-attention U-shaped generator with its parameters.
#[derive(Clone, Debug)]
pub struct Generator {
    config: EUFormerConfig,
    layout: Layout,
    params: ParamSet,
}

impl Generator {
    pub fn new(config: EUFormerConfig, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let layout = Layout::build(&config, &mut init)?;
        Ok(Generator {
            config,
            layout,
            params: init.finish(),
        })
    }

    /// Rebuild around loaded parameters; names and shapes must match `config`.
    pub fn from_params(config: EUFormerConfig, params: ParamSet) -> Result<Self> {
        let mut loader = Loader::new(params);
        let layout = Layout::build(&config, &mut loader)?;
        Ok(Generator {
            config,
            layout,
            params: loader.finish()?,
        })
    }

    pub fn config(&self) -> &EUFormerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Record the forward pass of a batch `x` of shape `(n, H, W, input_channels)`.
    pub fn forward_on(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.c != self.config.input_channels {
            return Err(Error::shape(
                "generator",
                format!("expected {} input channels, got {}", self.config.input_channels, s.c),
            ));
        }
        self.config.check_input(s.h, s.w)?;
        let l = &self.layout;
        let mut h = l.input.forward(tape, p, x)?;
        let mut skips = Vec::with_capacity(l.levels.len());
        for level in &l.levels {
            for block in &level.encoder {
                h = block.forward(tape, p, h)?;
            }
            if let Some(down) = &level.down {
                skips.push(h);
                h = down.forward(tape, p, h)?;
            }
        }
        for block in &l.bottleneck {
            h = block.forward(tape, p, h)?;
        }
        for level in l.levels.iter().rev().skip(1) {
            let (Some(up), Some(fuse)) = (&level.up, &level.fuse) else {
                unreachable!("only the deepest level lacks a decoder")
            };
            let skip = skips.pop().expect("one skip per resampled level");
            let u = up.forward(tape, p, h)?;
            let cat = tape.concat_channels(&[u, skip])?;
            h = fuse.forward(tape, p, cat)?;
            for block in &level.decoder {
                h = block.forward(tape, p, h)?;
            }
        }
        let out = l.output.forward(tape, p, h)?;
        Ok(tape.activation(out, Activation::Sigmoid))
    }

    /// Curve map(s) for `rgb`, values in (0, 1).
    pub fn forward(&self, rgb: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(rgb.clone());
        let y = self.forward_on(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn image(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(Shape::hwc(h, w, 3), |_, i, j, k| ((i * 5 + j * 3 + k * 7) % 13) as f64 / 12.0)
    }

    #[test]
    fn output_is_a_probability_map() {
        let g = Generator::new(EUFormerConfig::default(), 1).unwrap();
        let y = g.forward(&image(16, 8)).unwrap();
        assert_eq!(y.shape(), Shape::hwc(16, 8, 1));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let g = Generator::new(EUFormerConfig::tiny(), 2).unwrap();
        let x = image(8, 12);
        assert_eq!(g.forward(&x).unwrap(), g.forward(&x).unwrap());
        let h = Generator::new(EUFormerConfig::tiny(), 2).unwrap();
        assert_eq!(g.forward(&x).unwrap(), h.forward(&x).unwrap());
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let g = Generator::new(EUFormerConfig::default(), 3).unwrap();
        assert!(matches!(
            g.forward(&image(18, 8)),
            Err(Error::Divisibility { value: 18, divisor: 4, .. })
        ));
        assert!(matches!(
            g.forward(&image(16, 6)),
            Err(Error::Divisibility { value: 6, divisor: 4, .. })
        ));
        assert_eq!(g.forward(&image(20, 8)).unwrap().shape(), Shape::hwc(20, 8, 1));
    }

    #[test]
    fn config_validation() {
        let mut c = EUFormerConfig::default();
        assert!(c.validate().is_ok());
        c.heads = vec![1, 2, 5];
        assert!(c.validate().is_err());
        let c = EUFormerConfig {
            encoder_blocks: vec![1],
            ..EUFormerConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(Generator::new(c, 0).is_err());
    }

    #[test]
    fn params_round_trip_through_loader() {
        let g = Generator::new(EUFormerConfig::tiny(), 4).unwrap();
        let h = Generator::from_params(EUFormerConfig::tiny(), g.params().clone()).unwrap();
        assert_eq!(g.forward(&image(8, 8)).unwrap(), h.forward(&image(8, 8)).unwrap());
        assert!(Generator::from_params(EUFormerConfig::default(), g.params().clone()).is_err());
    }
}
