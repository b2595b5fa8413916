use serde::{Deserialize, Serialize};

use super::params::{ParamEntry, ParamSet, Tensor};
use crate::data::noise::NoiseStream;
use crate::error::{Error, Result};

/// A stack of dense layers with ReLU between them and a softmax
/// cross-entropy head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            hidden,
            classes,
        }
    }

    /// The fully-connected 784-300-100-10 LeNet used for MNIST.
    pub fn lenet() -> Self {
        Self::new("lenet", 784, vec![300, 100], 10)
    }

    /// Linear softmax regression (no hidden layers).
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Self::new("linear", input_dim, vec![], classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.classes == 0 {
            return Err(Error::InvalidArgument("need at least one output class".into()));
        }
        if let Some(i) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::InvalidArgument(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.classes)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

pub(crate) fn layer_name(i: usize) -> String {
    format!("fc{}", i + 1)
}

/// Glorot-normal weights, zero biases, step 0.
///
/// Layer `fcN`'s weights come from the stream keyed by `(init_seed, "fcN")`.
pub fn init_params(arch: &Architecture, init_seed: u64) -> Result<ParamSet> {
    arch.validate()?;
    let mut entries = Vec::new();
    for (i, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
        let name = layer_name(i);
        let stream = NoiseStream::new(init_seed, &name);
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..(fan_in * fan_out) as u64).map(|j| std * stream.normal(j)).collect();
        entries.push(ParamEntry {
            name: format!("{name}.weight"),
            tensor: Tensor::new(vec![fan_in, fan_out], weights)?,
            prunable: true,
        });
        entries.push(ParamEntry {
            name: format!("{name}.bias"),
            tensor: Tensor::zeros(vec![fan_out]),
            prunable: false,
        });
    }
    ParamSet::new(entries, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_parameter_count() {
        let arch = Architecture::lenet();
        assert_eq!(arch.num_params(), 784 * 300 + 300 + 300 * 100 + 100 + 100 * 10 + 10);
        assert_eq!(arch.num_params(), 266_610);
        assert_eq!(init_params(&arch, 0).unwrap().num_params(), 266_610);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = Architecture::new("t", 20, vec![7], 3);
        let a = init_params(&arch, 5).unwrap();
        let b = init_params(&arch, 5).unwrap();
        let c = init_params(&arch, 6).unwrap();
        assert!(a.flat_values().map(f64::to_bits).eq(b.flat_values().map(f64::to_bits)));
        assert_ne!(a, c);
    }

    #[test]
    fn biases_zero_and_weight_scale_glorot() {
        let arch = Architecture::lenet();
        let p = init_params(&arch, 11).unwrap();
        for e in p.entries() {
            if e.prunable {
                let [fan_in, fan_out] = e.tensor.shape() else { panic!() };
                let n = e.tensor.len() as f64;
                let var = e.tensor.values().iter().map(|v| v * v).sum::<f64>() / n;
                let expected = 2.0 / (fan_in + fan_out) as f64;
                assert!((var / expected - 1.0).abs() < 0.1, "{}: {var} vs {expected}", e.name);
            } else {
                assert!(e.tensor.values().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn invalid_architectures() {
        assert!(Architecture::new("x", 0, vec![], 2).validate().is_err());
        assert!(Architecture::new("x", 3, vec![0], 2).validate().is_err());
        assert!(Architecture::new("x", 3, vec![], 0).validate().is_err());
    }
}
