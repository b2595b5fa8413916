use super::noise::NoiseStream;
use super::Dataset;
use crate::error::{Error, Result};

/// Unit-variance Gaussian clusters, one per class.
///
/// Class means sit on a circle of radius `separation` in the first two
/// coordinates (on a line when `dim == 1`); any further coordinates are pure
/// noise. Train and test draws come from separate streams. Examples are
/// interleaved by class.
pub fn synthetic_blobs(seed: u64, n_per_class: usize, classes: usize, dim: usize, separation: f64) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 || dim == 0 {
        return Err(Error::InvalidArgument("n_per_class, classes and dim must be at least 1".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidArgument(format!("separation {separation}")));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if dim == 1 {
                m[0] = separation * c as f64;
            } else {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                m[0] = separation * angle.cos();
                m[1] = separation * angle.sin();
            }
            m
        })
        .collect();

    let draw = |label: &str| {
        let stream = NoiseStream::new(seed, label);
        let n = n_per_class * classes;
        let mut xs = Vec::with_capacity(n * dim);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            for (j, mu) in means[c].iter().enumerate() {
                xs.push(mu + stream.normal((i * dim + j) as u64));
            }
            ys.push(c as u32);
        }
        (xs, ys)
    };
    Dataset::new(
        format!("blobs-{classes}x{dim}"),
        dim,
        classes,
        draw("blobs-train"),
        draw("blobs-test"),
    )
}
