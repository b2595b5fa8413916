//! Alternative ways to compare two trained networks, and distances between
//! the states along a run.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::engine::{example_losses, predictions, ParamSet};
use crate::error::{Error, Result};
use crate::pruning::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    L2,
    Cosine,
    ClassificationDifferences,
    LossL2,
}

/// Flattened values in entry order with masked-out prunable entries zeroed.
fn masked_values<'a>(w: &'a ParamSet, mask: Option<&'a Mask>) -> Result<impl Iterator<Item = f64> + 'a> {
    if let Some(m) = mask {
        m.check_congruent(w)?;
    }
    let mut tensors = mask.map(|m| m.tensors().iter());
    let per_entry: Vec<Box<dyn Iterator<Item = f64> + 'a>> = w
        .entries()
        .iter()
        .map(|e| {
            let keep = if e.prunable {
                tensors.as_mut().and_then(|t| t.next()).map(|t| t.keep())
            } else {
                None
            };
            let values = e.tensor.values().iter().copied();
            match keep {
                Some(k) => Box::new(values.zip(k).map(|(v, &k)| if k { v } else { 0.0 })) as Box<dyn Iterator<Item = f64>>,
                None => Box::new(values),
            }
        })
        .collect();
    Ok(per_entry.into_iter().flatten())
}

/// Euclidean distance between the concatenated (optionally masked) weights.
pub fn l2_distance(w1: &ParamSet, w2: &ParamSet, mask: Option<&Mask>) -> Result<f64> {
    w1.check_congruent(w2)?;
    let sq: f64 = masked_values(w1, mask)?
        .zip(masked_values(w2, mask)?)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq.sqrt())
}

/// `1 - cos(w1, w2)` over the concatenated (optionally masked) weights.
pub fn cosine_distance(w1: &ParamSet, w2: &ParamSet, mask: Option<&Mask>) -> Result<f64> {
    w1.check_congruent(w2)?;
    let (mut dot, mut n1, mut n2) = (0.0, 0.0, 0.0);
    for (a, b) in masked_values(w1, mask)?.zip(masked_values(w2, mask)?) {
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
    }
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidArgument("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot / (n1.sqrt() * n2.sqrt())).clamp(0.0, 2.0))
}

/// Number of examples on which the two networks' argmax predictions differ.
pub fn classification_differences(w1: &ParamSet, w2: &ParamSet, dataset: &Dataset, split: Split) -> Result<usize> {
    w1.check_congruent(w2)?;
    let ex = dataset.split(split);
    let p1 = predictions(w1, ex)?;
    let p2 = predictions(w2, ex)?;
    Ok(p1.iter().zip(&p2).filter(|(a, b)| a != b).count())
}

/// Euclidean distance between the two vectors of per-example losses.
pub fn loss_vector_l2(w1: &ParamSet, w2: &ParamSet, dataset: &Dataset, split: Split) -> Result<f64> {
    w1.check_congruent(w2)?;
    let ex = dataset.split(split);
    Ok(loss_vectors_l2(&example_losses(w1, ex)?, &example_losses(w2, ex)?))
}

pub(crate) fn loss_vectors_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// How far a run travelled before and after the rewind point, and how far
/// apart its differently-seeded endings are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistanceReport {
    /// `|W_k - W_0|`
    pub init_to_rewind: f64,
    /// `|W_T^i - W_k|` for each final state
    pub rewind_to_final: Vec<f64>,
    /// `|W_T^i - W_T^j|` for `i < j`
    pub between_finals: Vec<f64>,
}

pub fn state_distance_report(init: &ParamSet, rewound: &ParamSet, finals: &[ParamSet], mask: Option<&Mask>) -> Result<StateDistanceReport> {
    let init_to_rewind = l2_distance(init, rewound, mask)?;
    let rewind_to_final = finals
        .iter()
        .map(|f| l2_distance(rewound, f, mask))
        .collect::<Result<Vec<_>>>()?;
    let between_finals = crate::instability::unordered_pairs(finals.len())
        .into_iter()
        .map(|(i, j)| l2_distance(&finals[i], &finals[j], mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(StateDistanceReport {
        init_to_rewind,
        rewind_to_final,
        between_finals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ParamEntry, Tensor};

    fn vec_set(v: &[f64]) -> ParamSet {
        ParamSet::new(
            vec![
                ParamEntry {
                    name: "fc1.weight".into(),
                    tensor: Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap(),
                    prunable: true,
                },
                ParamEntry {
                    name: "fc1.bias".into(),
                    tensor: Tensor::new(vec![1], vec![0.0]).unwrap(),
                    prunable: false,
                },
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn l2_examples() {
        let a = vec_set(&[1.0, 0.0]);
        let b = vec_set(&[0.0, 1.0]);
        assert_eq!(l2_distance(&a, &a, None).unwrap(), 0.0);
        assert!((l2_distance(&a, &b, None).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let mask = Mask::from_keep(&a, vec![vec![false, false]]).unwrap();
        assert_eq!(l2_distance(&a, &b, Some(&mask)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let a = vec_set(&[1.0, 2.0]);
        let neg = vec_set(&[-1.0, -2.0]);
        let orth = vec_set(&[2.0, -1.0]);
        assert!(cosine_distance(&a, &a, None).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&a, &orth, None).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&a, &neg, None).unwrap() - 2.0).abs() < 1e-15);
        let zero = vec_set(&[0.0, 0.0]);
        assert!(cosine_distance(&a, &zero, None).is_err());
    }

    #[test]
    fn loss_vector_arithmetic() {
        assert_eq!(loss_vectors_l2(&[1.0], &[2.0]), 1.0);
        assert!((loss_vectors_l2(&[0.0, 0.0], &[0.3, 0.4]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn state_distances() {
        let w0 = vec_set(&[0.0, 0.0]);
        let wk = vec_set(&[3.0, 0.0]);
        let wt = vec_set(&[3.0, 4.0]);
        let r = state_distance_report(&w0, &w0, &[wt.clone(), wt.clone()], None).unwrap();
        assert_eq!(r.init_to_rewind, 0.0);
        assert_eq!(r.between_finals, vec![0.0]);
        let r = state_distance_report(&w0, &wk, std::slice::from_ref(&wt), None).unwrap();
        assert_eq!((r.init_to_rewind, r.rewind_to_final[0]), (3.0, 4.0));
        assert!(l2_distance(&w0, &wt, None).unwrap() <= r.init_to_rewind + r.rewind_to_final[0]);
    }
}
