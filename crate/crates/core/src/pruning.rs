//! Global magnitude pruning, iterative magnitude pruning (IMP) with
//! rewinding, and the random-prune / random-reinit baselines.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NoiseSpec, NoiseStream};
use crate::engine::{init_params, Architecture, ParamSet};
use crate::error::{Error, Result};
use crate::instability::{train_segment, TrainPlan};

/// Accuracy drop below which a subnetwork counts as matching.
pub const MATCHING_MARGIN: f64 = 0.002;

/// Keep-flags for one prunable tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskTensor {
    name: String,
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl MaskTensor {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Binary mask over the prunable entries of a [`ParamSet`], in entry order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    tensors: Vec<MaskTensor>,
}

impl Mask {
    /// Keeps everything.
    pub fn ones(params: &ParamSet) -> Self {
        Self {
            tensors: params
                .prunable()
                .map(|e| MaskTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    keep: vec![true; e.tensor.len()],
                })
                .collect(),
        }
    }

    pub fn from_keep(params: &ParamSet, keep: Vec<Vec<bool>>) -> Result<Self> {
        let mut mask = Self::ones(params);
        if keep.len() != mask.tensors.len() {
            return Err(Error::Incongruent(format!(
                "{} keep arrays for {} prunable tensors",
                keep.len(),
                mask.tensors.len()
            )));
        }
        for (t, k) in mask.tensors.iter_mut().zip(keep) {
            if k.len() != t.keep.len() {
                return Err(Error::Incongruent(format!("`{}` has {} entries, got {}", t.name, t.keep.len(), k.len())));
            }
            t.keep = k;
        }
        Ok(mask)
    }

    /// Assembles a mask from named tensors, e.g. when reading a checkpoint.
    pub fn from_tensors(tensors: Vec<(String, Vec<usize>, Vec<bool>)>) -> Result<Self> {
        let tensors = tensors
            .into_iter()
            .map(|(name, shape, keep)| {
                if shape.iter().product::<usize>() != keep.len() {
                    return Err(Error::Shape(format!("mask `{name}` shape {shape:?} vs {} flags", keep.len())));
                }
                Ok(MaskTensor { name, shape, keep })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[MaskTensor] {
        &self.tensors
    }

    pub fn check_congruent(&self, params: &ParamSet) -> Result<()> {
        let prunable: Vec<_> = params.prunable().collect();
        if prunable.len() != self.tensors.len() {
            return Err(Error::Incongruent(format!(
                "mask has {} tensors, parameters have {} prunable entries",
                self.tensors.len(),
                prunable.len()
            )));
        }
        for (e, t) in prunable.iter().zip(&self.tensors) {
            if e.name != t.name || e.tensor.shape() != t.shape.as_slice() {
                return Err(Error::Incongruent(format!("mask `{}` vs parameter `{}`", t.name, e.name)));
            }
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.tensors.iter().map(MaskTensor::kept).sum()
    }

    pub fn total(&self) -> usize {
        self.tensors.iter().map(|t| t.keep.len()).sum()
    }

    /// Kept count per prunable tensor.
    pub fn kept_per_tensor(&self) -> Vec<usize> {
        self.tensors.iter().map(MaskTensor::kept).collect()
    }

    /// `true` if every entry kept here is also kept by `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.keep.len() == b.keep.len() && a.keep.iter().zip(&b.keep).all(|(&x, &y)| !x || y)
            })
    }
}

/// Fraction of prunable weights the mask keeps.
pub fn density(mask: &Mask) -> f64 {
    mask.kept() as f64 / mask.total() as f64
}

/// Multiplies prunable entries by the mask; other entries are untouched.
pub fn apply_mask(params: &ParamSet, mask: &Mask) -> Result<ParamSet> {
    let mut out = params.clone();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub(crate) fn apply_mask_in_place(params: &mut ParamSet, mask: &Mask) -> Result<()> {
    mask.check_congruent(params)?;
    let mut tensors = mask.tensors.iter();
    for e in params.entries_mut().iter_mut().filter(|e| e.prunable) {
        let t = tensors.next().expect("checked congruence");
        for (w, &k) in e.tensor.values_mut().iter_mut().zip(&t.keep) {
            if !k {
                *w = 0.0;
            }
        }
    }
    Ok(())
}

/// `round(fraction * count)` with halves rounded up.
pub fn prune_count(fraction: f64, count: usize) -> usize {
    (fraction * count as f64 + 0.5).floor() as usize
}

/// Pruning rate for one round: a global fraction plus optional per-tensor
/// overrides. Overridden tensors are ranked on their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneRates {
    pub fraction: f64,
    #[serde(default)]
    pub overrides: Vec<LayerRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRate {
    pub tensor: String,
    pub fraction: f64,
}

impl PruneRates {
    pub fn global(fraction: f64) -> Self {
        Self {
            fraction,
            overrides: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |f: f64| {
            if (0.0..1.0).contains(&f) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("pruning fraction {f} outside [0, 1)")))
            }
        };
        check(self.fraction)?;
        self.overrides.iter().try_for_each(|o| check(o.fraction))
    }
}

/// Removes the `round(fraction * remaining)` smallest-magnitude surviving
/// weights, ranked jointly across all prunable tensors. Ties go to the
/// earlier tensor, then the lower flat index.
pub fn global_magnitude_prune(trained: &ParamSet, mask: &Mask, fraction: f64) -> Result<Mask> {
    magnitude_prune(trained, mask, &PruneRates::global(fraction))
}

pub fn magnitude_prune(trained: &ParamSet, mask: &Mask, rates: &PruneRates) -> Result<Mask> {
    rates.validate()?;
    mask.check_congruent(trained)?;
    for o in &rates.overrides {
        if !mask.tensors.iter().any(|t| t.name == o.tensor) {
            return Err(Error::InvalidArgument(format!("override for unknown tensor `{}`", o.tensor)));
        }
    }
    // One ranking group for the global rate, one per override.
    let group_of = |name: &str| {
        rates
            .overrides
            .iter()
            .position(|o| o.tensor == name)
            .map_or(0, |i| i + 1)
    };
    let group_fraction = |g: usize| if g == 0 { rates.fraction } else { rates.overrides[g - 1].fraction };

    let mut out = mask.clone();
    let groups = rates.overrides.len() + 1;
    for g in 0..groups {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, (e, t)) in trained.prunable().zip(&mask.tensors).enumerate() {
            if group_of(&t.name) != g {
                continue;
            }
            for (i, (&w, &k)) in e.tensor.values().iter().zip(&t.keep).enumerate() {
                if k {
                    candidates.push((w.abs(), ti, i));
                }
            }
        }
        let remove = prune_count(group_fraction(g), candidates.len());
        if remove == 0 {
            continue;
        }
        candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, ti, i) in &candidates[..remove] {
            out.tensors[ti].keep[i] = false;
        }
    }
    if out.kept() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(out)
}

/// For each tensor, keeps a uniformly random subset of the same size the
/// reference keeps there.
pub fn random_prune_layerwise(reference: &Mask, seed: u64) -> Mask {
    let base = NoiseStream::new(seed, "random-prune");
    let tensors = reference
        .tensors
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let stream = base.substream(ti as u64);
            let n = t.keep.len();
            let kept = t.kept();
            // partial Fisher-Yates: the first `kept` slots are the survivors
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..kept {
                let j = i + stream.below(i as u64, (n - i) as u64) as usize;
                idx.swap(i, j);
            }
            let mut keep = vec![false; n];
            for &i in &idx[..kept] {
                keep[i] = true;
            }
            MaskTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                keep,
            }
        })
        .collect();
    Mask { tensors }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Imp,
    RandomPrune,
    RandomReinit,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Imp => "imp",
            Provenance::RandomPrune => "random-prune",
            Provenance::RandomReinit => "random-reinit",
        }
    }
}

/// Weights at the rewind step together with a mask: `(W_k, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSubnetwork {
    pub rewind_step: u64,
    pub weights: ParamSet,
    pub mask: Mask,
    pub provenance: Provenance,
}

impl SparseSubnetwork {
    /// `m ⊙ W_k`.
    pub fn masked_weights(&self) -> Result<ParamSet> {
        apply_mask(&self.weights, &self.mask)
    }

    pub fn density(&self) -> f64 {
        density(&self.mask)
    }
}

/// Same mask, fresh weights from an independent initialization standing in
/// for `W_k`.
pub fn random_reinit(sub: &SparseSubnetwork, arch: &Architecture, seed: u64) -> Result<SparseSubnetwork> {
    let mut weights = init_params(arch, seed)?;
    weights.check_congruent(&sub.weights)?;
    apply_mask_in_place(&mut weights, &sub.mask)?;
    weights.set_step(sub.rewind_step);
    Ok(SparseSubnetwork {
        rewind_step: sub.rewind_step,
        weights,
        mask: sub.mask.clone(),
        provenance: Provenance::RandomReinit,
    })
}

/// A random-prune baseline: IMP's rewound weights with a random mask in
/// IMP's layerwise proportions.
pub fn random_prune(sub: &SparseSubnetwork, seed: u64) -> SparseSubnetwork {
    SparseSubnetwork {
        rewind_step: sub.rewind_step,
        weights: sub.weights.clone(),
        mask: random_prune_layerwise(&sub.mask, seed),
        provenance: Provenance::RandomPrune,
    }
}

/// `true` when the subnetwork's accuracy is less than `margin` below the
/// full network's.
pub fn is_matching(sub_accuracy: f64, full_accuracy: f64, margin: f64) -> bool {
    full_accuracy - sub_accuracy < margin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ImpMode {
    #[default]
    Iterative,
    OneShot,
}

/// IMP settings: rewind step, round count and per-round rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpConfig {
    pub rewind_step: u64,
    pub rounds: usize,
    pub rates: PruneRates,
    pub mode: ImpMode,
}

impl ImpConfig {
    pub fn iterative(rewind_step: u64, rounds: usize, fraction: f64) -> Self {
        Self {
            rewind_step,
            rounds,
            rates: PruneRates::global(fraction),
            mode: ImpMode::Iterative,
        }
    }

    /// Prune straight to `1 - fraction` density in one round.
    pub fn one_shot(rewind_step: u64, fraction: f64) -> Self {
        Self {
            rewind_step,
            rounds: 1,
            rates: PruneRates::global(fraction),
            mode: ImpMode::OneShot,
        }
    }

    pub fn validate(&self, plan: &TrainPlan) -> Result<()> {
        if self.rewind_step >= plan.total_steps {
            return Err(Error::InvalidArgument(format!(
                "rewind step {} must be below the {} training steps",
                self.rewind_step, plan.total_steps
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("IMP needs at least one round".into()));
        }
        if self.mode == ImpMode::OneShot && self.rounds != 1 {
            return Err(Error::InvalidArgument("one-shot pruning runs exactly one round".into()));
        }
        self.rates.validate()
    }
}

/// Everything IMP produced: the final subnetwork and the mask after each
/// round (`masks[0]` is the all-ones starting mask).
#[derive(Debug, Clone)]
pub struct ImpTrace {
    pub subnetwork: SparseSubnetwork,
    pub masks: Vec<Mask>,
}

/// Noise for IMP round `round` (counted from 1).
pub fn round_noise(base: &NoiseSpec, round: usize) -> NoiseSpec {
    base.derive("imp-round", round as u64)
}

/// IMP from an already-rewound state `W_k`, with the per-round training
/// delegated to `train` (which receives the round number, the masked start
/// state, the mask and the round's noise).
pub fn imp_from_rewind<F>(rewound: &ParamSet, plan: &TrainPlan, config: &ImpConfig, base_noise: &NoiseSpec, mut train: F) -> Result<ImpTrace>
where
    F: FnMut(usize, &ParamSet, &Mask, NoiseSpec) -> Result<ParamSet>,
{
    config.validate(plan)?;
    if rewound.step() != config.rewind_step {
        return Err(Error::StepMismatch(format!(
            "rewound state is at step {}, expected {}",
            rewound.step(),
            config.rewind_step
        )));
    }
    let mut mask = Mask::ones(rewound);
    let mut masks = vec![mask.clone()];
    for round in 1..=config.rounds {
        let start = apply_mask(rewound, &mask)?;
        let trained = train(round, &start, &mask, round_noise(base_noise, round))?;
        mask = magnitude_prune(&trained, &mask, &config.rates)?;
        masks.push(mask.clone());
    }
    Ok(ImpTrace {
        subnetwork: SparseSubnetwork {
            rewind_step: config.rewind_step,
            weights: rewound.clone(),
            mask,
            provenance: Provenance::Imp,
        },
        masks,
    })
}

/// Full IMP with rewinding: initialize, train `W_0 -> W_k` once under
/// `base_noise`, then prune for `config.rounds` rounds.
pub fn imp(plan: &TrainPlan, dataset: &Dataset, init_seed: u64, base_noise: &NoiseSpec, config: &ImpConfig) -> Result<ImpTrace> {
    config.validate(plan)?;
    let w0 = init_params(&plan.architecture, init_seed)?;
    let wk = train_segment(&w0, plan, dataset, base_noise, config.rewind_step, None)?;
    imp_from_rewind(&wk, plan, config, base_noise, |_, start, mask, noise| {
        train_segment(start, plan, dataset, &noise, plan.total_steps, Some(mask))
    })
}
