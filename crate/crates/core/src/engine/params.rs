use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor values".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub prunable: bool,
}

/// The full, ordered collection of a network's weights together with the
/// training step the state belongs to.
///
/// Entry order is fixed by the architecture. Dense layers contribute a
/// `(weight, bias)` pair where the weight is stored as `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    step: u64,
}

impl ParamSet {
    pub fn new(entries: Vec<ParamEntry>, step: u64) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::InvalidArgument(format!("duplicate entry name `{}`", e.name)));
            }
        }
        Ok(Self { entries, step })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn num_prunable(&self) -> usize {
        self.prunable().map(|e| e.tensor.len()).sum()
    }

    pub fn prunable(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.prunable)
    }

    /// Every value in entry order, as one flat sequence.
    pub fn flat_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().flat_map(|e| e.tensor.values().iter().copied())
    }

    /// Same-shaped copy with every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: Tensor::zeros(e.tensor.shape().to_vec()),
                    prunable: e.prunable,
                })
                .collect(),
            step: self.step,
        }
    }

    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.check_congruent(other).is_ok()
    }

    pub fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Incongruent(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() || a.prunable != b.prunable {
                return Err(Error::Incongruent(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.flat_values().all(f64::is_finite)
    }
}

/// `alpha * w1 + (1 - alpha) * w2`, entry by entry. `alpha = 1` gives `w1`.
///
/// The result carries `w1`'s step.
pub fn interpolate_params(w1: &ParamSet, w2: &ParamSet, alpha: f64) -> Result<ParamSet> {
    let mut out = w1.clone();
    interpolate_into(w1, w2, alpha, &mut out)?;
    Ok(out)
}

pub(crate) fn interpolate_into(w1: &ParamSet, w2: &ParamSet, alpha: f64, out: &mut ParamSet) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    w1.check_congruent(w2)?;
    w1.check_congruent(out)?;
    let beta = 1.0 - alpha;
    for ((a, b), o) in w1.entries.iter().zip(&w2.entries).zip(&mut out.entries) {
        for ((x, y), z) in a
            .tensor
            .values()
            .iter()
            .zip(b.tensor.values())
            .zip(o.tensor.values_mut())
        {
            *z = alpha * x + beta * y;
        }
    }
    out.step = w1.step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_set(v: &[f64]) -> ParamSet {
        ParamSet::new(
            vec![ParamEntry {
                name: "w".into(),
                tensor: Tensor::new(vec![v.len()], v.to_vec()).unwrap(),
                prunable: true,
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = ParamEntry {
            name: "a".into(),
            tensor: Tensor::zeros(vec![1]),
            prunable: false,
        };
        assert!(ParamSet::new(vec![e.clone(), e], 0).is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let w1 = vec_set(&[2.0, 0.0]);
        let w2 = vec_set(&[0.0, 2.0]);
        assert_eq!(interpolate_params(&w1, &w2, 1.0).unwrap(), w1);
        assert_eq!(interpolate_params(&w1, &w2, 0.0).unwrap().entries(), w2.entries());
        let mid = interpolate_params(&w1, &w2, 0.5).unwrap();
        assert_eq!(mid.entries()[0].tensor.values(), &[1.0, 1.0]);
    }

    #[test]
    fn interpolating_identical_sets_is_identity() {
        let w = vec_set(&[0.3, -1.7, 5.0]);
        for i in 0..=10 {
            let a = i as f64 / 10.0;
            let p = interpolate_params(&w, &w, a).unwrap();
            for (x, y) in p.flat_values().zip(w.flat_values()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn incongruent_interpolation_fails() {
        let w1 = vec_set(&[1.0, 2.0]);
        let w2 = vec_set(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            interpolate_params(&w1, &w2, 0.5),
            Err(Error::Incongruent(_))
        ));
    }
}
