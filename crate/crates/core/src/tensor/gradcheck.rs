use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-3,
            floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamErrors {
    pub index: usize,
    pub coordinates: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub params: Vec<ParamErrors>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Evaluate `f` on a fresh tape with every parameter registered as a trainable leaf.
fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compare reverse-mode gradients of the scalar function `f` against central
/// differences `(f(p + h) - f(p - h)) / 2h`, one coordinate at a time.
pub fn grad_check<F>(f: F, params: &[Tensor], config: GradCheckConfig) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zero(v)).collect();
    drop(tape);
    compare_gradients(f, params, &analytic, config)
}

/// Like [`grad_check`] but against caller-supplied gradients.
pub fn compare_gradients<F>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    config: GradCheckConfig,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let scalar = |ps: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = evaluate(&f, ps)?;
        Ok(tape.value(out).item())
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (index, grad) in analytic.iter().enumerate() {
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for coord in 0..work[index].numel() {
            let original = work[index].data[coord];
            work[index].data[coord] = original + config.step;
            let plus = scalar(&work)?;
            work[index].data[coord] = original - config.step;
            let minus = scalar(&work)?;
            work[index].data[coord] = original;

            let numeric = (plus - minus) / (2.0 * config.step);
            let exact = grad.data[coord];
            let abs = (numeric - exact).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(config.floor);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        reports.push(ParamErrors {
            index,
            coordinates: work[index].numel(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
        });
    }
    let max_abs_error = reports.iter().map(|r| r.max_abs_error).fold(0.0, f64::max);
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        params: reports,
        max_abs_error,
        max_rel_error,
        step: config.step,
        tolerance: config.tolerance,
        passed: max_rel_error < config.tolerance,
    })
}
