//! Finite-difference gradient suite over every differentiable op and the
//! tiny generator.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::euformer::{
    Bound, Cmha, Discriminator, DiscriminatorConfig, Downsample, EUFormerConfig, Etb, Generator, Initializer, Leff,
    ParamSet, Upsample,
};
use crate::tensor::{grad_check, Activation, Axis, GradCheckConfig, GradReport, Reduction, Shape, ShuffleDirection, Tape, Tensor, Var};

pub struct SuiteEntry {
    pub name: String,
    pub report: GradReport,
    pub elapsed: Duration,
}

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    params: Vec<Tensor>,
    loss: Loss,
}

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Contract an output with fixed random weights so every coordinate of the
/// output influences the scalar differently.
fn contract(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.shape(y), &mut rng);
    let target = tape.constant(w);
    tape.mse(y, target)
}

fn case(name: &str, params: Vec<Tensor>, loss: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name: name.to_string(),
        params,
        loss: Box::new(loss),
    }
}

/// Build a case over a parameterized block whose parameters come from `set`
/// and whose input is the last entry of the parameter list.
fn block_case(
    name: &str,
    set: ParamSet,
    input: Tensor,
    forward: impl Fn(&mut Tape, &Bound, Var) -> Result<Var> + 'static,
) -> Case {
    let n = set.len();
    let mut params: Vec<Tensor> = set.tensors().to_vec();
    params.push(input);
    case(name, params, move |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let y = forward(t, &bound, v[n])?;
        contract(t, y, 99)
    })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let s = |n, h, w, c| Shape::new(n, h, w, c);

    for (label, x, k, stride, pad, groups) in [
        ("conv2d 3x3", s(2, 5, 4, 3), 3, 1, 1, 1),
        ("conv2d 4x4 stride 2", s(1, 6, 6, 2), 4, 2, 1, 1),
        ("conv2d grouped", s(1, 4, 5, 4), 3, 1, 1, 2),
        ("conv2d depthwise", s(2, 4, 4, 3), 3, 1, 1, 3),
        ("conv2d pointwise", s(2, 3, 4, 5), 1, 1, 0, 1),
    ] {
        let cout = if groups == x.c { x.c } else { 4 };
        let w = Shape::kernel(k, x.c / groups, cout);
        cases.push(case(label, vec![random(x, rng), random(w, rng)], move |t, v| {
            let y = t.conv2d(v[0], v[1], stride, pad, groups)?;
            contract(t, y, 1)
        }));
    }
    cases.push(case("matmul", vec![random(Shape::matrix(4, 3), rng), random(Shape::matrix(3, 5), rng)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        contract(t, y, 2)
    }));
    cases.push(case("transpose", vec![random(s(1, 3, 2, 4), rng)], |t, v| {
        let y = t.transpose(v[0]);
        contract(t, y, 3)
    }));
    cases.push(case("reshape", vec![random(s(2, 2, 3, 2), rng)], |t, v| {
        let y = t.reshape(v[0], Shape::new(1, 4, 6, 1))?;
        contract(t, y, 4)
    }));
    for (label, axis) in [
        ("softmax batch", Axis::Batch),
        ("softmax height", Axis::Height),
        ("softmax width", Axis::Width),
        ("softmax channel", Axis::Channel),
    ] {
        cases.push(case(label, vec![random(s(2, 3, 4, 3), rng)], move |t, v| {
            let y = t.softmax(v[0], axis);
            contract(t, y, 5)
        }));
    }
    cases.push(case("softmax . matmul", vec![random(Shape::matrix(3, 4), rng), random(Shape::matrix(4, 3), rng)], |t, v| {
        let m = t.matmul(v[0], v[1])?;
        let y = t.softmax(m, Axis::Height);
        contract(t, y, 6)
    }));
    cases.push(case("pixel unshuffle", vec![random(s(2, 4, 6, 2), rng)], |t, v| {
        let y = t.pixel_shuffle(v[0], 2, ShuffleDirection::Unshuffle)?;
        contract(t, y, 7)
    }));
    cases.push(case("pixel shuffle", vec![random(s(1, 2, 3, 8), rng)], |t, v| {
        let y = t.pixel_shuffle(v[0], 2, ShuffleDirection::Shuffle)?;
        contract(t, y, 8)
    }));
    cases.push(case(
        "layer norm",
        vec![random(s(2, 3, 2, 5), rng), random(s(1, 1, 1, 5), rng), random(s(1, 1, 1, 5), rng)],
        |t, v| {
            let y = t.layer_norm_channels(v[0], v[1], v[2], 1e-5)?;
            contract(t, y, 9)
        },
    ));
    cases.push(case("instance norm", vec![random(s(2, 3, 4, 3), rng)], |t, v| {
        let y = t.instance_norm(v[0], 1e-5);
        contract(t, y, 10)
    }));
    for (label, kind) in [
        ("gelu", Activation::Gelu),
        ("leaky relu", Activation::LEAKY),
        ("sigmoid", Activation::Sigmoid),
    ] {
        // Keep samples away from the leaky-relu kink where central
        // differences straddle two slopes.
        let x = random(s(1, 4, 3, 2), rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        cases.push(case(label, vec![x], move |t, v| {
            let y = t.activation(v[0], kind);
            contract(t, y, 11)
        }));
    }
    cases.push(case("add", vec![random(s(1, 2, 3, 2), rng), random(s(1, 2, 3, 2), rng)], |t, v| {
        let y = t.add(v[0], v[1])?;
        contract(t, y, 12)
    }));
    cases.push(case("scale", vec![random(s(1, 2, 3, 2), rng)], |t, v| {
        let y = t.scale(v[0], -1.7);
        contract(t, y, 13)
    }));
    cases.push(case(
        "div scalar",
        vec![random(s(1, 2, 3, 2), rng), Tensor::new(s(1, 1, 1, 2), vec![1.3, -0.8]).expect("2 values")],
        |t, v| {
            let y = t.div_scalar(v[0], v[1], 1)?;
            contract(t, y, 14)
        },
    ));
    cases.push(case(
        "concat channels",
        vec![random(s(2, 2, 2, 1), rng), random(s(2, 2, 2, 3), rng)],
        |t, v| {
            let y = t.concat_channels(&[v[0], v[1]])?;
            contract(t, y, 15)
        },
    ));
    cases.push(case("slice channels", vec![random(s(2, 2, 2, 5), rng)], |t, v| {
        let y = t.slice_channels(v[0], 1, 3)?;
        contract(t, y, 16)
    }));
    cases.push(case("stack batch", vec![random(s(1, 2, 3, 2), rng), random(s(1, 2, 3, 2), rng)], |t, v| {
        let y = t.stack_batch(&[v[0], v[1]])?;
        contract(t, y, 17)
    }));
    cases.push(case("select batch", vec![random(s(3, 2, 2, 2), rng)], |t, v| {
        let y = t.select_batch(v[0], 2)?;
        contract(t, y, 18)
    }));
    cases.push(case("sum", vec![random(s(2, 2, 2, 2), rng)], |t, v| {
        let sq = t.activation(v[0], Activation::Sigmoid);
        Ok(t.sum(sq))
    }));
    cases.push(case("mean", vec![random(s(2, 2, 2, 2), rng)], |t, v| {
        let sq = t.activation(v[0], Activation::Gelu);
        Ok(t.mean(sq))
    }));
    cases.push(case("mse", vec![random(s(2, 3, 2, 1), rng), random(s(2, 3, 2, 1), rng)], |t, v| {
        t.mse(v[0], v[1])
    }));
    let labels: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
    for (label, reduction) in [("bce sum", Reduction::Sum), ("bce mean", Reduction::Mean)] {
        let labels = labels.clone();
        cases.push(case(label, vec![random(s(1, 3, 2, 2), rng)], move |t, v| {
            let p = t.activation(v[0], Activation::Sigmoid);
            t.binary_cross_entropy(p, &labels, reduction)
        }));
    }
    cases
}

fn block_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let mut init = Initializer::new(5);
    let cmha = Cmha::new(&mut init, "cmha", 4, 2)?;
    cases.push(block_case(
        "cmha",
        init.finish(),
        random(Shape::new(2, 3, 2, 4), rng),
        move |t, p, x| cmha.forward(t, p, x),
    ));
    let mut init = Initializer::new(6);
    let leff = Leff::new(&mut init, "leff", 3)?;
    cases.push(block_case(
        "leff",
        init.finish(),
        random(Shape::new(1, 3, 3, 3), rng),
        move |t, p, x| leff.forward(t, p, x),
    ));
    let mut init = Initializer::new(7);
    let etb = Etb::new(&mut init, "etb", 4, 2)?;
    cases.push(block_case(
        "etb",
        init.finish(),
        random(Shape::new(1, 2, 4, 4), rng),
        move |t, p, x| etb.forward(t, p, x),
    ));
    let mut init = Initializer::new(8);
    let down = Downsample::new(&mut init, "down", 4)?;
    cases.push(block_case(
        "downsample",
        init.finish(),
        random(Shape::new(1, 4, 4, 4), rng),
        move |t, p, x| down.forward(t, p, x),
    ));
    let mut init = Initializer::new(9);
    let up = Upsample::new(&mut init, "up", 4)?;
    cases.push(block_case(
        "upsample",
        init.finish(),
        random(Shape::new(1, 2, 2, 4), rng),
        move |t, p, x| up.forward(t, p, x),
    ));

    let disc = Discriminator::new(
        DiscriminatorConfig {
            input_channels: 4,
            base_width: 2,
        },
        10,
    )?;
    let n = disc.params().len();
    let mut params = disc.params().tensors().to_vec();
    params.push(Tensor::uniform(Shape::hwc(24, 24, 3), 0.0, 1.0, rng));
    params.push(Tensor::uniform(Shape::hwc(24, 24, 1), 0.0, 1.0, rng));
    cases.push(case("discriminator", params, move |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let y = disc.forward_on(t, &bound, v[n], v[n + 1])?;
        contract(t, y, 20)
    }));
    Ok(cases)
}

/// Tiny generator on a 16x8 input, checked over every parameter coordinate.
fn generator_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let g = Generator::new(EUFormerConfig::tiny(), 11)?;
    let n = g.params().len();
    let x = Tensor::uniform(Shape::hwc(16, 8, 3), 0.0, 1.0, rng);
    let target = Tensor::uniform(Shape::hwc(16, 8, 1), 0.0, 1.0, rng);
    let params = g.params().tensors().to_vec();
    Ok(case("tiny generator (16x8)", params, move |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let xv = t.constant(x.clone());
        let y = g.forward_on(t, &bound, xv)?;
        let tv = t.constant(target.clone());
        t.mse(y, tv)
    }))
}

fn run(cases: Vec<Case>, config: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    cases
        .into_iter()
        .map(|c| {
            let start = Instant::now();
            let report = grad_check(&c.loss, &c.params, config)?;
            Ok(SuiteEntry {
                name: c.name,
                report,
                elapsed: start.elapsed(),
            })
        })
        .collect()
}

/// Every tape op plus the network blocks on randomized small tensors.
pub fn op_suite(seed: u64, config: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = op_cases(&mut rng);
    cases.extend(block_cases(&mut rng)?);
    run(cases, config)
}

pub fn generator_suite(seed: u64, config: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run(vec![generator_case(&mut rng)?], config)
}

/// The complete suite: ops, blocks and the tiny generator.
pub fn gradient_suite(seed: u64, config: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut all = op_suite(seed, config)?;
    all.extend(generator_suite(seed, config)?);
    Ok(all)
}
