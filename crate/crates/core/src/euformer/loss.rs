//! Adversarial, reconstruction, and combined generator losses.

use crate::error::{Error, Result};
use crate::tensor::{Reduction, Tape, Tensor, Var};

/// Weight of the adversarial term in the generator objective.
pub const DEFAULT_LOSS_WEIGHT_G: f64 = 0.01;

/// `sum_n -[y_n ln(kappa_n) + (1 - y_n) ln(1 - kappa_n)]` over every entry,
/// with `kappa` clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss_generator(tape: &mut Tape, kappa: Var, labels: &[f64]) -> Result<Var> {
    tape.binary_cross_entropy(kappa, labels, Reduction::Sum)
}

/// Mean squared error over samples and pixels.
pub fn loss_mse(tape: &mut Tape, generated: Var, truth: Var) -> Result<Var> {
    tape.mse(generated, truth)
}

/// `weight * lg + l2`
pub fn loss_total(tape: &mut Tape, lg: Var, l2: Var, weight: f64) -> Result<Var> {
    let scaled = tape.scale(lg, weight);
    tape.add(scaled, l2)
}

/// Discriminator objective: mean patch cross-entropy with real pairs labeled
/// 1 and generated pairs 0, averaged over the two halves.
pub fn loss_discriminator(tape: &mut Tape, kappa_real: Var, kappa_fake: Var) -> Result<Var> {
    let ones = vec![1.0; tape.shape(kappa_real).numel()];
    let zeros = vec![0.0; tape.shape(kappa_fake).numel()];
    let real = tape.binary_cross_entropy(kappa_real, &ones, Reduction::Mean)?;
    let fake = tape.binary_cross_entropy(kappa_fake, &zeros, Reduction::Mean)?;
    let sum = tape.add(real, fake)?;
    Ok(tape.scale(sum, 0.5))
}

// Value-level counterparts.

pub fn generator_loss_value(kappa: &[f64], labels: &[f64]) -> Result<f64> {
    if kappa.len() != labels.len() {
        return Err(Error::shape(
            "loss_generator",
            format!("{} probabilities, {} labels", kappa.len(), labels.len()),
        ));
    }
    Ok(kappa
        .iter()
        .zip(labels)
        .map(|(&k, &y)| crate::tensor::bce_term(k, y))
        .sum())
}

pub fn mse_value(generated: &Tensor, truth: &Tensor) -> Result<f64> {
    if generated.shape() != truth.shape() {
        return Err(Error::shape(
            "loss_mse",
            format!("{} vs {}", generated.shape(), truth.shape()),
        ));
    }
    let n = generated.numel() as f64;
    Ok(generated
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn total_loss_value(lg: f64, l2: f64, weight: f64) -> f64 {
    weight * lg + l2
}
