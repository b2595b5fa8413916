//! Step-indexed mini-batches.
//!
//! Batch `b` of epoch `e` is the `b`-th contiguous slice of that epoch's
//! permutation, so any step can be rebuilt from `(dataset, noise, step)`.

use super::noise::{Augmentation, NoiseSpec};
use super::{Dataset, Split};
use crate::engine::Examples;
use crate::error::{Error, Result};

/// Fisher-Yates permutation of `0..n` for one epoch.
pub fn epoch_order(spec: &NoiseSpec, epoch: u64, n: usize) -> Vec<usize> {
    let stream = spec.order_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = stream.below(i as u64, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// An owned mini-batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub labels: Vec<u32>,
    pub dim: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view(&self) -> Examples<'_> {
        Examples::new(&self.inputs, &self.labels, self.dim).expect("batch invariant")
    }
}

/// Pad-4 crop and optional horizontal flip of one CHW image, driven by a
/// single 64-bit draw.
fn shift_crop_flip(src: &[f64], [channels, height, width]: [usize; 3], draw: u64, dst: &mut [f64]) {
    const PAD: i64 = 4;
    let span = (2 * PAD + 1) as u64;
    let dx = (draw % span) as i64 - PAD;
    let dy = ((draw / span) % span) as i64 - PAD;
    let flip = (draw / (span * span)) & 1 == 1;
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                let sx = if flip { width - 1 - x } else { x } as i64 + dx;
                let sy = y as i64 + dy;
                let inside = (0..width as i64).contains(&sx) && (0..height as i64).contains(&sy);
                dst[(c * height + y) * width + x] = if inside {
                    src[(c * height + sy as usize) * width + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn fill_batch(dataset: &Dataset, spec: &NoiseSpec, epoch: u64, indices: &[usize], out: &mut Batch) -> Result<()> {
    let train = dataset.split(Split::Train);
    let dim = dataset.input_dim();
    out.dim = dim;
    out.inputs.clear();
    out.inputs.resize(indices.len() * dim, 0.0);
    out.labels.clear();
    let shape = match spec.augmentation {
        Augmentation::None => None,
        Augmentation::ShiftCropFlip => Some(dataset.image_shape().ok_or_else(|| {
            Error::InvalidArgument(format!("dataset `{}` has no image shape to augment", dataset.name()))
        })?),
    };
    let stream = spec.augmentation_stream(epoch);
    for (row, &i) in indices.iter().enumerate() {
        let src = &train.inputs()[i * dim..(i + 1) * dim];
        let dst = &mut out.inputs[row * dim..(row + 1) * dim];
        match shape {
            None => dst.copy_from_slice(src),
            Some(shape) => shift_crop_flip(src, shape, stream.at(i as u64), dst),
        }
        out.labels.push(train.labels()[i]);
    }
    Ok(())
}

fn slice_bounds(n: usize, batch_index: usize, batch_size: usize) -> Result<(usize, usize)> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let per_epoch = batches_per_epoch(n, batch_size);
    if batch_index >= per_epoch {
        return Err(Error::OutOfRange(format!("batch {batch_index} of {per_epoch} per epoch")));
    }
    let start = batch_index * batch_size;
    Ok((start, (start + batch_size).min(n)))
}

/// The training batch at `(epoch, batch_index)` under `spec`.
pub fn batch_at(dataset: &Dataset, spec: &NoiseSpec, epoch: u64, batch_index: usize, batch_size: usize) -> Result<Batch> {
    let n = dataset.len(Split::Train);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (start, end) = slice_bounds(n, batch_index, batch_size)?;
    let order = epoch_order(spec, epoch, n);
    let mut batch = Batch::default();
    fill_batch(dataset, spec, epoch, &order[start..end], &mut batch)?;
    Ok(batch)
}

/// Produces the same batches as [`batch_at`] while caching the current
/// epoch's permutation and reusing one buffer.
#[derive(Debug)]
pub struct BatchSampler<'d> {
    dataset: &'d Dataset,
    spec: NoiseSpec,
    batch_size: usize,
    cached_epoch: Option<u64>,
    order: Vec<usize>,
    batch: Batch,
}

impl<'d> BatchSampler<'d> {
    pub fn new(dataset: &'d Dataset, spec: NoiseSpec, batch_size: usize) -> Result<Self> {
        if dataset.len(Split::Train) == 0 {
            return Err(Error::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Self {
            dataset,
            spec,
            batch_size,
            cached_epoch: None,
            order: Vec::new(),
            batch: Batch::default(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        batches_per_epoch(self.dataset.len(Split::Train), self.batch_size)
    }

    /// Batch used for absolute training step `step`.
    pub fn at_step(&mut self, step: u64) -> Result<&Batch> {
        let per_epoch = self.batches_per_epoch() as u64;
        let (epoch, index) = (step / per_epoch, (step % per_epoch) as usize);
        if self.cached_epoch != Some(epoch) {
            self.order = epoch_order(&self.spec, epoch, self.dataset.len(Split::Train));
            self.cached_epoch = Some(epoch);
        }
        let (start, end) = slice_bounds(self.order.len(), index, self.batch_size)?;
        fill_batch(self.dataset, &self.spec, epoch, &self.order[start..end], &mut self.batch)?;
        Ok(&self.batch)
    }
}
