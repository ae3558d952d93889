use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::math::sqrt;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Named parameter tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Seeded initialization: Xavier-uniform matrices, unit layer-norm gains,
    /// zero biases, embeddings with variance `1/d`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let mut t = Tensor::zeros(&shape);
            if name == "embed" {
                let a = sqrt(3.0 / config.d_model as f64);
                fill_uniform(&mut t, a, &mut rng);
            } else if shape.len() == 2 {
                let a = sqrt(6.0 / (shape[0] + shape[1]) as f64);
                fill_uniform(&mut t, a, &mut rng);
            } else if name.ends_with(".g") {
                t.data_mut().fill(1.0);
            }
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.tensors.insert(name, t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that names and shapes are exactly those `config` prescribes.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = config.param_shapes();
        if expected.len() != self.tensors.len() {
            let extra: Vec<&String> = self
                .tensors
                .keys()
                .filter(|k| !expected.iter().any(|(n, _)| n == *k))
                .collect();
            return Err(Error::Config(format!(
                "parameter set has {} entries, {} expects {} (unexpected: {extra:?})",
                self.tensors.len(),
                config.variant,
                expected.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Incremental elementwise mean, accumulated in the given order.
    ///
    /// `mean += (x - mean) / i` keeps the mean of identical inputs bit-exact.
    pub fn average(all: &[&ModelParams]) -> Result<ModelParams> {
        let (first, rest) = all
            .split_first()
            .ok_or_else(|| Error::Checkpoint("nothing to average".into()))?;
        let mut mean = (*first).clone();
        for (i, p) in rest.iter().enumerate() {
            let n = (i + 2) as f64;
            if p.tensors.len() != mean.tensors.len() {
                return Err(Error::Checkpoint("parameter sets differ".into()));
            }
            for (name, m) in mean.tensors.iter_mut() {
                let x = p
                    .tensors
                    .get(name)
                    .filter(|x| x.shape() == m.shape())
                    .ok_or_else(|| Error::Checkpoint(format!("parameter {name} differs")))?;
                for (mv, xv) in m.data_mut().iter_mut().zip(x.data()) {
                    *mv += (xv - *mv) / n;
                }
            }
        }
        Ok(mean)
    }
}

fn fill_uniform(t: &mut Tensor, bound: f64, rng: &mut ChaCha8Rng) {
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}
