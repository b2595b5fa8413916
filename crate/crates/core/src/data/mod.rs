//! Datasets and the deterministic SGD-noise source.

pub mod batch;
pub mod blobs;
pub mod idx;
pub mod noise;

pub use batch::{batch_at, batches_per_epoch, epoch_order, Batch, BatchSampler};
pub use blobs::synthetic_blobs;
pub use idx::{load_mnist_idx, MnistFiles};
pub use noise::{Augmentation, NoiseSpec, NoiseStream};

use serde::{Deserialize, Serialize};

use crate::engine::Examples;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    #[default]
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SplitData {
    inputs: Vec<f64>,
    labels: Vec<u32>,
}

/// Train and test examples held in memory as row-major `f64` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    input_dim: usize,
    classes: usize,
    image_shape: Option<[usize; 3]>,
    train: SplitData,
    test: SplitData,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        input_dim: usize,
        classes: usize,
        (train_inputs, train_labels): (Vec<f64>, Vec<u32>),
        (test_inputs, test_labels): (Vec<f64>, Vec<u32>),
    ) -> Result<Self> {
        if input_dim == 0 || classes == 0 {
            return Err(Error::InvalidArgument("input_dim and classes must be positive".into()));
        }
        for (what, inputs, labels) in [
            ("train", &train_inputs, &train_labels),
            ("test", &test_inputs, &test_labels),
        ] {
            if inputs.len() != labels.len() * input_dim {
                return Err(Error::CountMismatch(format!(
                    "{what}: {} values for {} labels",
                    inputs.len(),
                    labels.len()
                )));
            }
            if let Some(y) = labels.iter().find(|&&y| y as usize >= classes) {
                return Err(Error::InvalidArgument(format!("{what} label {y} >= {classes} classes")));
            }
        }
        Ok(Self {
            name: name.into(),
            input_dim,
            classes,
            image_shape: None,
            train: SplitData {
                inputs: train_inputs,
                labels: train_labels,
            },
            test: SplitData {
                inputs: test_inputs,
                labels: test_labels,
            },
        })
    }

    /// Declares the inputs to be `channels x height x width` images, which
    /// enables crop-and-flip augmentation.
    pub fn with_image_shape(mut self, shape: [usize; 3]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.input_dim {
            return Err(Error::Shape(format!("image shape {shape:?} vs input dim {}", self.input_dim)));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.image_shape
    }

    pub fn len(&self, split: Split) -> usize {
        self.data(split).labels.len()
    }

    fn data(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn split(&self, split: Split) -> Examples<'_> {
        let d = self.data(split);
        Examples::new(&d.inputs, &d.labels, self.input_dim).expect("dataset invariant")
    }
}
