use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::is_matching;

/// Arithmetic mean and population standard deviation.
pub fn summarize_replicates(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values to summarize".into()));
    }
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Mean IMP accuracy at one density and rewind step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityResult {
    pub density: f64,
    pub k: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ExtremeSparsity {
    Matching { density: f64 },
    None,
}

/// The lowest density at which the best accuracy over all rewind steps is
/// still matching.
pub fn select_extreme_sparsity(results: &[SparsityResult], full_accuracy: f64, margin: f64) -> Result<ExtremeSparsity> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no sparsity results to select from".into()));
    }
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for r in results {
        let slot = best.entry(r.density.to_bits()).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(r.accuracy);
    }
    let lowest = best
        .iter()
        .filter(|(_, &acc)| is_matching(acc, full_accuracy, margin))
        .map(|(&bits, _)| f64::from_bits(bits))
        .min_by(f64::total_cmp);
    Ok(match lowest {
        Some(density) => ExtremeSparsity::Matching { density },
        None => ExtremeSparsity::None,
    })
}

/// Barrier and accuracy of one replicate at one density and rewind step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewindObservation {
    pub density: f64,
    pub k: u64,
    pub replicate: u64,
    pub barrier: f64,
    pub accuracy: f64,
}

/// Median over replicates of the first rewind step that is stable and the
/// first that is matching. Each is `None` unless a strict majority of the
/// replicates reach it at some step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianRewind {
    pub density: f64,
    pub stable_k: Option<u64>,
    pub matching_k: Option<u64>,
}

/// Lower median of the values, provided more than half of `total` reached one.
fn majority_median(mut firsts: Vec<u64>, total: usize) -> Option<u64> {
    if firsts.is_empty() || 2 * firsts.len() <= total {
        return None;
    }
    firsts.sort_unstable();
    Some(firsts[(firsts.len() - 1) / 2])
}

/// Per density (densest first): the median first-stable and first-matching
/// rewind steps.
pub fn median_rewind_summary(observations: &[RewindObservation], full_accuracy: f64, threshold: f64, margin: f64) -> Vec<MedianRewind> {
    // density -> replicate -> k -> (barrier, accuracy)
    type ByK = BTreeMap<u64, (f64, f64)>;
    let mut grouped: BTreeMap<u64, BTreeMap<u64, ByK>> = BTreeMap::new();
    for o in observations {
        grouped
            .entry(o.density.to_bits())
            .or_default()
            .entry(o.replicate)
            .or_default()
            .insert(o.k, (o.barrier, o.accuracy));
    }
    let mut out: Vec<MedianRewind> = grouped
        .into_iter()
        .map(|(bits, replicates)| {
            let total = replicates.len();
            let first = |pred: &dyn Fn(f64, f64) -> bool| -> Vec<u64> {
                replicates
                    .values()
                    .filter_map(|by_k| by_k.iter().find(|(_, &(b, a))| pred(b, a)).map(|(&k, _)| k))
                    .collect()
            };
            MedianRewind {
                density: f64::from_bits(bits),
                stable_k: majority_median(first(&|b, _| b < threshold), total),
                matching_k: majority_median(first(&|_, a| is_matching(a, full_accuracy, margin)), total),
            }
        })
        .collect();
    out.sort_by(|a, b| b.density.total_cmp(&a.density));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instability::STABILITY_THRESHOLD;
    use crate::pruning::MATCHING_MARGIN;

    #[test]
    fn summary_examples() {
        assert_eq!(summarize_replicates(&[2.0, 2.0, 2.0]).unwrap(), (2.0, 0.0));
        assert_eq!(summarize_replicates(&[0.0, 1.0]).unwrap(), (0.5, 0.5));
        assert_eq!(summarize_replicates(&[0.03; 9]).unwrap(), (0.03, 0.0));
        assert_eq!(summarize_replicates(&[7.5]).unwrap(), (7.5, 0.0));
        assert!(summarize_replicates(&[]).is_err());
    }

    fn res(density: f64, k: u64, accuracy: f64) -> SparsityResult {
        SparsityResult { density, k, accuracy }
    }

    #[test]
    fn extreme_sparsity_selection() {
        let only_full = [res(1.0, 0, 0.983), res(0.5, 0, 0.97), res(0.035, 0, 0.95)];
        assert_eq!(
            select_extreme_sparsity(&only_full, 0.983, MATCHING_MARGIN).unwrap(),
            ExtremeSparsity::Matching { density: 1.0 }
        );
        // the best rewind step counts, not the first one
        let later = [res(1.0, 0, 0.983), res(0.2, 0, 0.95), res(0.2, 500, 0.982), res(0.1, 500, 0.90)];
        assert_eq!(
            select_extreme_sparsity(&later, 0.983, MATCHING_MARGIN).unwrap(),
            ExtremeSparsity::Matching { density: 0.2 }
        );
        assert_eq!(select_extreme_sparsity(&[res(0.5, 0, 0.5)], 0.9, MATCHING_MARGIN).unwrap(), ExtremeSparsity::None);
        assert!(select_extreme_sparsity(&[], 0.9, MATCHING_MARGIN).is_err());
    }

    fn obs(density: f64, k: u64, replicate: u64, barrier: f64, accuracy: f64) -> RewindObservation {
        RewindObservation {
            density,
            k,
            replicate,
            barrier,
            accuracy,
        }
    }

    #[test]
    fn median_rewind_examples() {
        let full = 0.9;
        let all_stable: Vec<_> = (0..3).map(|r| obs(0.5, 0, r, 0.0, full)).collect();
        let m = median_rewind_summary(&all_stable, full, STABILITY_THRESHOLD, MATCHING_MARGIN);
        assert_eq!(m[0].stable_k, Some(0));
        assert_eq!(m[0].matching_k, Some(0));

        // first stable at 100, 500 and 2000 respectively
        let mut staggered = Vec::new();
        for (r, first) in [100u64, 500, 2000].into_iter().enumerate() {
            for k in [0, 100, 500, 2000] {
                let barrier = if k >= first { 0.0 } else { 0.3 };
                staggered.push(obs(0.2, k, r as u64, barrier, 0.5));
            }
        }
        let m = median_rewind_summary(&staggered, full, STABILITY_THRESHOLD, MATCHING_MARGIN);
        assert_eq!(m[0].stable_k, Some(500));
        // no replicate is ever matching
        assert_eq!(m[0].matching_k, None);
    }

    #[test]
    fn minority_matching_is_omitted() {
        let full = 0.9;
        let o = [
            obs(0.1, 0, 0, 0.0, full),
            obs(0.1, 0, 1, 0.0, 0.5),
            obs(0.1, 0, 2, 0.0, 0.5),
            obs(1.0, 0, 0, 0.5, full),
            obs(1.0, 0, 1, 0.5, full),
        ];
        let m = median_rewind_summary(&o, full, STABILITY_THRESHOLD, MATCHING_MARGIN);
        assert_eq!(m.iter().map(|r| r.density).collect::<Vec<_>>(), vec![1.0, 0.1]);
        assert_eq!(m[1].matching_k, None);
        assert_eq!(m[1].stable_k, Some(0));
        assert_eq!(m[0].matching_k, Some(0));
        assert_eq!(m[0].stable_k, None);
    }

    #[test]
    fn even_counts_take_the_lower_median() {
        assert_eq!(majority_median(vec![500, 100, 2000, 24000], 4), Some(500));
        assert_eq!(majority_median(vec![100, 500], 4), None);
    }
}
