use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let want = self.tensors[id.0].shape();
        if value.shape() != want {
            return Err(Error::shape(
                "ParamSet::set",
                format!("{} is {want}, got {}", self.names[id.0], value.shape()),
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.tensors[id.0].data_mut()
    }

    /// Register every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Bound view over explicit vars, in [`ParamSet`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Const(f64),
}

/// Where module constructors obtain their parameters: fresh initialization
/// or lookup in an existing set (checkpoint loading).
pub trait ParamSource {
    fn param(&mut self, name: &str, shape: Shape, init: Init) -> Result<ParamId>;
}

pub struct Initializer {
    set: ParamSet,
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            set: ParamSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}

impl ParamSource for Initializer {
    fn param(&mut self, name: &str, shape: Shape, init: Init) -> Result<ParamId> {
        let value = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::uniform(shape, -bound, bound, &mut self.rng)
            }
            Init::Const(v) => Tensor::full(shape, v),
        };
        Ok(self.set.push(name, value))
    }
}

/// Resolves names against a loaded set, checking shapes.
pub struct Loader {
    set: ParamSet,
    index: HashMap<String, ParamId>,
    used: Vec<bool>,
}

impl Loader {
    pub fn new(set: ParamSet) -> Self {
        let index = set.ids().map(|id| (set.name(id).to_string(), id)).collect();
        let used = vec![false; set.len()];
        Loader { set, index, used }
    }

    /// Fails if the loaded set holds parameters the architecture never asked for.
    pub fn finish(self) -> Result<ParamSet> {
        if let Some(pos) = self.used.iter().position(|u| !u) {
            return Err(Error::Config(format!(
                "parameter {} is not part of this architecture",
                self.set.names[pos]
            )));
        }
        Ok(self.set)
    }
}

impl ParamSource for Loader {
    fn param(&mut self, name: &str, shape: Shape, _init: Init) -> Result<ParamId> {
        let id = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        let have = self.set.get(id).shape();
        if have != shape {
            return Err(Error::Config(format!("parameter {name} is {have}, architecture expects {shape}")));
        }
        self.used[id.0] = true;
        Ok(id)
    }
}
