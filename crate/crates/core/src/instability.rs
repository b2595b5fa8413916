//! Instability analysis: train copies of one network state under different
//! SGD noise, interpolate linearly between the results and measure the error
//! barrier.

use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Dataset, NoiseSpec, Split};
use crate::engine::params::interpolate_into;
use crate::engine::{error_rate, init_params, optimizer_step, Architecture, OptimizerKind, OptimizerState, ParamSet, Schedule, Workspace};
use crate::error::{Error, Result};
use crate::pruning::{apply_mask_in_place, Mask};
use crate::runner::summarize_replicates;

/// Number of interpolation points, endpoints included.
pub const NUM_ALPHAS: usize = 30;

/// Mean barriers below this are stable.
pub const STABILITY_THRESHOLD: f64 = 0.02;

/// Everything needed to train a network from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub architecture: Architecture,
    pub schedule: Schedule,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub total_steps: u64,
    pub dataset: String,
}

impl TrainPlan {
    /// LeNet 784-300-100-10 on MNIST: Adam at 1.2e-3, batch 60, 24K steps.
    pub fn lenet() -> Self {
        Self {
            architecture: Architecture::lenet(),
            schedule: Schedule::Constant { rate: 1.2e-3 },
            optimizer: OptimizerKind::adam(),
            batch_size: 60,
            total_steps: 24_000,
            dataset: "mnist".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidArgument("total_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A single training run in progress. Optimizer state starts at zero.
pub struct Trainer<'d> {
    plan: &'d TrainPlan,
    sampler: BatchSampler<'d>,
    params: ParamSet,
    grads: ParamSet,
    state: OptimizerState,
    mask: Option<Mask>,
    workspace: Workspace,
}

impl<'d> Trainer<'d> {
    /// Starts from `params` (at `params.step()`). A mask is applied to the
    /// starting weights and enforced on every update.
    pub fn new(plan: &'d TrainPlan, dataset: &'d Dataset, mut params: ParamSet, noise: NoiseSpec, mask: Option<Mask>) -> Result<Self> {
        plan.validate()?;
        if params.step() > plan.total_steps {
            return Err(Error::StepMismatch(format!(
                "start step {} beyond {} total steps",
                params.step(),
                plan.total_steps
            )));
        }
        if let Some(m) = &mask {
            apply_mask_in_place(&mut params, m)?;
        }
        Ok(Self {
            plan,
            sampler: BatchSampler::new(dataset, noise, plan.batch_size)?,
            grads: params.zeros_like(),
            state: OptimizerState::new(plan.optimizer, &params),
            params,
            mask,
            workspace: Workspace::new(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn step(&self) -> u64 {
        self.params.step()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.sampler.batches_per_epoch()
    }

    /// One optimizer update; returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let step = self.params.step();
        if step >= self.plan.total_steps {
            return Err(Error::StepMismatch(format!("already at final step {step}")));
        }
        let batch = self.sampler.at_step(step)?;
        let loss = self.workspace.loss_and_gradient(&self.params, batch.view(), &mut self.grads)?;
        let lr = self.plan.schedule.lr_at(step);
        optimizer_step(&mut self.params, &self.grads, &mut self.state, lr, self.mask.as_ref())?;
        self.params.set_step(step + 1);
        Ok(loss)
    }

    pub fn advance_to(&mut self, to: u64) -> Result<()> {
        if to < self.params.step() || to > self.plan.total_steps {
            return Err(Error::StepMismatch(format!(
                "cannot train from step {} to {to} (total {})",
                self.params.step(),
                self.plan.total_steps
            )));
        }
        while self.params.step() < to {
            self.train_step()?;
        }
        Ok(())
    }
}

/// Trains `params` from its own step to `to` under `noise`: the function
/// `A^{s->t}(W_s, u)`.
///
/// Batch and learning rate for step `i` depend only on `i`, so splitting a
/// segment at any intermediate step replays the same data.
pub fn train_segment(params: &ParamSet, plan: &TrainPlan, dataset: &Dataset, noise: &NoiseSpec, to: u64, mask: Option<&Mask>) -> Result<ParamSet> {
    let mut trainer = Trainer::new(plan, dataset, params.clone(), *noise, mask.cloned())?;
    trainer.advance_to(to)?;
    Ok(trainer.into_params())
}

/// Errors at evenly spaced `alpha` in `[0, 1]`, endpoints included.
/// `alpha = 1` is the first network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub errors: Vec<f64>,
    pub split: Split,
}

pub fn alpha_grid() -> Vec<f64> {
    (0..NUM_ALPHAS).map(|i| i as f64 / (NUM_ALPHAS - 1) as f64).collect()
}

pub fn interpolation_curve(w1: &ParamSet, w2: &ParamSet, dataset: &Dataset, split: Split) -> Result<InterpolationCurve> {
    w1.check_congruent(w2)?;
    let alphas = alpha_grid();
    let mut buf = w1.clone();
    let mut errors = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        interpolate_into(w1, w2, a, &mut buf)?;
        errors.push(error_rate(&buf, dataset.split(split))?);
    }
    Ok(InterpolationCurve { alphas, errors, split })
}

/// Highest error on the curve minus the mean of the two endpoint errors.
/// Never negative, since the endpoints take part in the maximum.
pub fn error_barrier(curve: &InterpolationCurve) -> f64 {
    let (first, last) = match (curve.errors.first(), curve.errors.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return 0.0,
    };
    let sup = curve.errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sup - (first + last) / 2.0
}

/// How long forked copies train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    /// Continue the schedule from step `k` for the remaining `T - k` steps.
    #[default]
    Remaining,
    /// Restart the clock: `T` steps with the schedule reset to step 0.
    FullRestart,
}

/// Trains one copy of `start` to the end of the horizon.
pub fn train_copy(start: &ParamSet, plan: &TrainPlan, dataset: &Dataset, noise: &NoiseSpec, horizon: HorizonMode, mask: Option<&Mask>) -> Result<ParamSet> {
    let mut from = start.clone();
    if horizon == HorizonMode::FullRestart {
        from.set_step(0);
    }
    train_segment(&from, plan, dataset, noise, plan.total_steps, mask)
}

/// Instability of `W_k` for one pair of noise draws (Algorithm 1 with the
/// error barrier as comparison function).
#[allow(clippy::too_many_arguments)]
pub fn instability_analysis(
    plan: &TrainPlan,
    dataset: &Dataset,
    init_seed: u64,
    k: u64,
    base_noise: &NoiseSpec,
    (u1, u2): (&NoiseSpec, &NoiseSpec),
    split: Split,
    horizon: HorizonMode,
) -> Result<f64> {
    if k > plan.total_steps {
        return Err(Error::InvalidArgument(format!("k = {k} beyond {} steps", plan.total_steps)));
    }
    if u1 == u2 {
        return Err(Error::InvalidArgument("the two copies need distinct noise".into()));
    }
    let w0 = init_params(&plan.architecture, init_seed)?;
    let wk = train_segment(&w0, plan, dataset, base_noise, k, None)?;
    let a = train_copy(&wk, plan, dataset, u1, horizon, None)?;
    let b = train_copy(&wk, plan, dataset, u2, horizon, None)?;
    Ok(error_barrier(&interpolation_curve(&a, &b, dataset, split)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBarrier {
    pub init_seed: u64,
    pub noise_a: NoiseSpec,
    pub noise_b: NoiseSpec,
    pub barrier: f64,
}

/// Barriers for every unordered pair of copies from one starting state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub k: u64,
    pub split: Split,
    pub pairs: Vec<PairBarrier>,
    pub mean: f64,
    pub std: f64,
    pub stable: bool,
}

impl InstabilityReport {
    pub fn from_pairs(k: u64, split: Split, pairs: Vec<PairBarrier>) -> Result<Self> {
        let values: Vec<f64> = pairs.iter().map(|p| p.barrier).collect();
        let (mean, std) = summarize_replicates(&values)?;
        Ok(Self {
            k,
            split,
            pairs,
            mean,
            std,
            stable: mean < STABILITY_THRESHOLD,
        })
    }
}

/// Index pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Pair barriers between trained copies that share `init_seed`.
pub fn pair_barriers(init_seed: u64, finals: &[(NoiseSpec, ParamSet)], dataset: &Dataset, split: Split) -> Result<Vec<(PairBarrier, InterpolationCurve)>> {
    unordered_pairs(finals.len())
        .into_iter()
        .map(|(i, j)| {
            let curve = interpolation_curve(&finals[i].1, &finals[j].1, dataset, split)?;
            Ok((
                PairBarrier {
                    init_seed,
                    noise_a: finals[i].0,
                    noise_b: finals[j].0,
                    barrier: error_barrier(&curve),
                },
                curve,
            ))
        })
        .collect()
}

fn check_specs(specs: &[NoiseSpec]) -> Result<()> {
    if specs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two noise specs".into()));
    }
    for (i, j) in unordered_pairs(specs.len()) {
        if specs[i] == specs[j] {
            return Err(Error::InvalidArgument(format!("noise specs {i} and {j} coincide")));
        }
    }
    Ok(())
}

/// Instability of the unpruned network at step `k` over every init seed and
/// every unordered pair of `specs` (3 x 3 gives nine pairs).
#[allow(clippy::too_many_arguments)]
pub fn instability_report(
    plan: &TrainPlan,
    dataset: &Dataset,
    k: u64,
    init_seeds: &[u64],
    specs: &[NoiseSpec],
    base_noise: &NoiseSpec,
    split: Split,
    horizon: HorizonMode,
) -> Result<InstabilityReport> {
    Ok(instability_vs_k(plan, dataset, &[k], init_seeds, specs, base_noise, split, horizon)?.remove(0))
}

/// One report per `k`. Each init seed's base trajectory is trained once and
/// snapshotted at every requested `k`.
#[allow(clippy::too_many_arguments)]
pub fn instability_vs_k(
    plan: &TrainPlan,
    dataset: &Dataset,
    ks: &[u64],
    init_seeds: &[u64],
    specs: &[NoiseSpec],
    base_noise: &NoiseSpec,
    split: Split,
    horizon: HorizonMode,
) -> Result<Vec<InstabilityReport>> {
    check_specs(specs)?;
    if let Some(&k) = ks.iter().find(|&&k| k > plan.total_steps) {
        return Err(Error::InvalidArgument(format!("k = {k} beyond {} steps", plan.total_steps)));
    }
    let mut sorted: Vec<u64> = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut pairs_by_k: Vec<Vec<PairBarrier>> = vec![Vec::new(); sorted.len()];
    for &seed in init_seeds {
        let mut base = Trainer::new(plan, dataset, init_params(&plan.architecture, seed)?, *base_noise, None)?;
        for (slot, &k) in sorted.iter().enumerate() {
            base.advance_to(k)?;
            let finals = specs
                .iter()
                .map(|s| Ok((*s, train_copy(base.params(), plan, dataset, s, horizon, None)?)))
                .collect::<Result<Vec<_>>>()?;
            pairs_by_k[slot].extend(pair_barriers(seed, &finals, dataset, split)?.into_iter().map(|(p, _)| p));
        }
    }
    ks.iter()
        .map(|k| {
            let slot = sorted.binary_search(k).expect("k was sorted in");
            InstabilityReport::from_pairs(*k, split, pairs_by_k[slot].clone())
        })
        .collect()
}

/// Barrier between two copies of `start` at the end of each listed epoch
/// (step `epoch * batches_per_epoch`, capped at the final step).
#[allow(clippy::too_many_arguments)]
pub fn instability_throughout_training(
    start: &ParamSet,
    plan: &TrainPlan,
    dataset: &Dataset,
    (u1, u2): (&NoiseSpec, &NoiseSpec),
    epochs: &[u64],
    split: Split,
    mask: Option<&Mask>,
) -> Result<Vec<(u64, f64)>> {
    let mut a = Trainer::new(plan, dataset, start.clone(), *u1, mask.cloned())?;
    let mut b = Trainer::new(plan, dataset, start.clone(), *u2, mask.cloned())?;
    let per_epoch = a.batches_per_epoch() as u64;
    let mut out = Vec::with_capacity(epochs.len());
    let mut order: Vec<u64> = epochs.to_vec();
    order.sort_unstable();
    let mut by_epoch = std::collections::BTreeMap::new();
    for e in order {
        let step = (e * per_epoch).min(plan.total_steps);
        if step < start.step() {
            return Err(Error::InvalidArgument(format!(
                "epoch {e} (step {step}) precedes the fork at step {}",
                start.step()
            )));
        }
        a.advance_to(step)?;
        b.advance_to(step)?;
        let curve = interpolation_curve(a.params(), b.params(), dataset, split)?;
        by_epoch.insert(e, error_barrier(&curve));
    }
    for e in epochs {
        out.push((*e, by_epoch[e]));
    }
    Ok(out)
}
