//! Desk-scale adversarial trainer.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{EUFormerConfig, Generator};
use super::loss::{loss_discriminator, loss_generator, loss_mse, loss_total, DEFAULT_LOSS_WEIGHT_G};
use super::params::ParamSet;
use crate::curve::View;
use crate::error::{Error, Result};
use crate::imageio::{flip_horizontal, rotate, write_atomic};
use crate::tensor::{Activation, Tape, Tensor};

/// An RGB trunk image and its ground-truth curve map.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    /// `(1, H, W, 3)` in `[0, 1]`.
    pub rgb: Tensor,
    /// `(1, H, W, 1)` in `[0, 1]`.
    pub map: Tensor,
    pub view: View,
}

impl TrainingPair {
    pub fn new(rgb: Tensor, map: Tensor, view: View) -> Result<Self> {
        let (a, b) = (rgb.shape(), map.shape());
        if a.n != 1 || b.n != 1 || (a.h, a.w) != (b.h, b.w) || a.c != 3 || b.c != 1 {
            return Err(Error::shape("training pair", format!("image {a} vs map {b}")));
        }
        Ok(TrainingPair { rgb, map, view })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_every: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    /// Weight of the adversarial term.
    pub loss_weight_g: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment_rotation: bool,
    pub augment_flip: bool,
    /// Rotation range in degrees, symmetric about zero.
    pub max_rotation_deg: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 50,
            epochs: 100,
            steps: None,
            loss_weight_g: DEFAULT_LOSS_WEIGHT_G,
            batch_size: 4,
            seed: 0,
            augment_rotation: true,
            augment_flip: true,
            max_rotation_deg: 10.0,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(self.loss_weight_g >= 0.0) {
            return Err(Error::Config("loss_weight_g must be non-negative".into()));
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("batch_size and lr_decay_every must be positive".into()));
        }
        Ok(())
    }

    /// Step schedule: `learning_rate * lr_decay_factor^(epoch / lr_decay_every)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.lr_decay_every) as i32;
        let raw = self.learning_rate * self.lr_decay_factor.powi(decays);
        // Round to 15 significant digits so products like 1e-4 * 0.1^2 land
        // exactly on 1e-6 instead of 1.0000000000000002e-6.
        format!("{raw:.14e}").parse().unwrap_or(raw)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = params.data_mut(id);
            for (((p, &g), m), v) in data.iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_g: f64,
    pub loss_mse: f64,
    pub loss_total: f64,
    pub loss_d: f64,
}

pub struct TrainOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<LossRecord>,
}

/// Random rotation and horizontal flip, applied identically to both images.
fn augment(pair: &TrainingPair, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let (mut rgb, mut map) = (pair.rgb.clone(), pair.map.clone());
    if config.augment_rotation && config.max_rotation_deg > 0.0 {
        let deg = rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg);
        rgb = rotate(&rgb, deg, None)?;
        map = rotate(&map, deg, Some(0.0))?;
    }
    if config.augment_flip && rng.random_bool(0.5) {
        rgb = flip_horizontal(&rgb);
        map = flip_horizontal(&map);
    }
    Ok((rgb, map))
}

fn grads_for(tape: &Tape, loss: crate::tensor::Var, vars: &[crate::tensor::Var]) -> Result<Vec<Tensor>> {
    let g = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| g.get_or_zero(v)).collect())
}

/// Alternate discriminator and generator updates over `pairs`.
///
/// Each step first updates the discriminator on real and generated pairs,
/// then the generator on `loss_weight_g * l_g + l_2` against the updated
/// discriminator. One shared generator serves both views.
pub fn train(pairs: &[TrainingPair], gen_config: &EUFormerConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let shape = pairs[0].rgb.shape();
    if pairs.iter().any(|p| p.rgb.shape() != shape) {
        return Err(Error::shape("train", "all pairs must share one image size"));
    }
    gen_config.check_input(shape.h, shape.w)?;

    let mut generator = Generator::new(gen_config.clone(), config.seed)?;
    let mut discriminator = Discriminator::new(config.discriminator.clone(), config.seed.wrapping_add(1))?;
    let mut adam_g = Adam::new(generator.params(), config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut adam_d = Adam::new(discriminator.params(), config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let batch = config.batch_size.min(pairs.len());
    let steps_per_epoch = pairs.len().div_ceil(batch);
    let total_steps = config.steps.unwrap_or(config.epochs * steps_per_epoch);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(total_steps);

    for step in 0..total_steps {
        let epoch = step / steps_per_epoch;
        let slot = step % steps_per_epoch;
        if slot == 0 {
            order.shuffle(&mut rng);
        }
        let lr = config.lr_at_epoch(epoch);
        let mut rgbs = Vec::with_capacity(batch);
        let mut maps = Vec::with_capacity(batch);
        for b in 0..batch {
            let pair = &pairs[order[(slot * batch + b) % pairs.len()]];
            let (rgb, map) = augment(pair, config, &mut rng)?;
            rgbs.push(rgb);
            maps.push(map);
        }
        let rgb = Tensor::stack(&rgbs)?;
        let truth = Tensor::stack(&maps)?;

        // Generator forward, kept on its tape for the generator update.
        let mut g_tape = Tape::new();
        let g_params = generator.params().bind(&mut g_tape, true);
        let x = g_tape.constant(rgb.clone());
        let fake = generator.forward_on(&mut g_tape, &g_params, x)?;
        let fake_value = g_tape.value(fake).clone();

        // Discriminator update on (rgb, truth) vs (rgb, fake).
        let loss_d = {
            let mut tape = Tape::new();
            let p = discriminator.params().bind(&mut tape, true);
            let r = tape.constant(rgb.clone());
            let real_map = tape.constant(truth.clone());
            let fake_map = tape.constant(fake_value);
            let real_logits = discriminator.forward_on(&mut tape, &p, r, real_map)?;
            let fake_logits = discriminator.forward_on(&mut tape, &p, r, fake_map)?;
            let kr = tape.activation(real_logits, Activation::Sigmoid);
            let kf = tape.activation(fake_logits, Activation::Sigmoid);
            let loss = loss_discriminator(&mut tape, kr, kf)?;
            let grads = grads_for(&tape, loss, p.vars())?;
            adam_d.step(discriminator.params_mut(), &grads, lr);
            tape.value(loss).item()
        };

        // Generator update against the refreshed discriminator.
        let d_params = discriminator.params().bind(&mut g_tape, false);
        let gt = g_tape.constant(truth);
        let logits = discriminator.forward_on(&mut g_tape, &d_params, x, fake)?;
        let kappa = g_tape.activation(logits, Activation::Sigmoid);
        let ones = vec![1.0; g_tape.shape(kappa).numel()];
        let lg = loss_generator(&mut g_tape, kappa, &ones)?;
        let l2 = loss_mse(&mut g_tape, fake, gt)?;
        let total = loss_total(&mut g_tape, lg, l2, config.loss_weight_g)?;
        let grads = grads_for(&g_tape, total, g_params.vars())?;
        adam_g.step(generator.params_mut(), &grads, lr);

        history.push(LossRecord {
            step,
            epoch,
            lr,
            loss_g: g_tape.value(lg).item(),
            loss_mse: g_tape.value(l2).item(),
            loss_total: g_tape.value(total).item(),
            loss_d,
        });
    }
    Ok(TrainOutcome {
        generator,
        discriminator,
        history,
    })
}

/// CSV with header `step,lr,loss_g,loss_mse,loss_total,loss_d`.
pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,lr,loss_g,loss_mse,loss_total,loss_d\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.lr, r.loss_g, r.loss_mse, r.loss_total, r.loss_d
        ));
    }
    out
}

pub fn write_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut buf = Vec::new();
    buf.write_all(history_csv(history).as_bytes())?;
    write_atomic(path, &buf)
}
