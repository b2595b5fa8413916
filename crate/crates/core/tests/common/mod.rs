//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use lmc::data::{synthetic_blobs, Augmentation, Dataset, NoiseSpec, NoiseStream, Split};
use lmc::engine::{backward, error_rate, forward_loss, init_params, Architecture, Examples, OptimizerKind, ParamSet, Schedule};
use lmc::instability::{alpha_grid, error_barrier, instability_vs_k, interpolation_curve, train_segment, HorizonMode, TrainPlan};

/// Worst agreement between backpropagation and central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub nets: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
}

/// `|a - b| / max(|a|, |b|)`, with gradients below `floor` compared absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A random network with at most ~1K parameters, random biases and a random
/// batch, all derived from `seed`.
pub fn random_case(seed: u64) -> (ParamSet, Vec<f64>, Vec<u32>, usize) {
    let s = NoiseStream::new(seed, "case");
    let dim = 2 + s.below(0, 7) as usize;
    let depth = s.below(1, 3) as usize;
    let hidden: Vec<usize> = (0..depth).map(|i| 2 + s.below(2 + i as u64, 15) as usize).collect();
    let classes = 2 + s.below(9, 5) as usize;
    let batch = 1 + s.below(10, 8) as usize;
    let arch = Architecture::new("case", dim, hidden, classes);
    let mut params = init_params(&arch, seed).unwrap();
    let b = NoiseStream::new(seed, "bias");
    let mut j = 0;
    for e in params.entries_mut() {
        if !e.prunable {
            for v in e.tensor.values_mut() {
                *v = 0.3 * b.normal(j);
                j += 1;
            }
        }
    }
    let x = NoiseStream::new(seed, "inputs");
    let inputs = (0..(batch * dim) as u64).map(|i| x.normal(i)).collect();
    let labels = (0..batch as u64).map(|i| s.below(100 + i, classes as u64) as u32).collect();
    (params, inputs, labels, dim)
}

pub fn gradient_check(nets: usize, h: f64) -> GradientCheck {
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for seed in 0..nets as u64 {
        let (params, inputs, labels, dim) = random_case(seed);
        assert!(params.num_params() <= 1000);
        let ex = Examples::new(&inputs, &labels, dim).unwrap();
        let grads = backward(&params, ex).unwrap();
        let loss = |p: &ParamSet| forward_loss(p, ex).unwrap().0;
        for (ei, entry) in params.entries().iter().enumerate() {
            for i in 0..entry.tensor.len() {
                let mut plus = params.clone();
                plus.entries_mut()[ei].tensor.values_mut()[i] += h;
                let mut minus = params.clone();
                minus.entries_mut()[ei].tensor.values_mut()[i] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let exact = grads.entries()[ei].tensor.values()[i];
                worst = worst.max(relative_error(exact, numeric, 1e-6));
                coordinates += 1;
            }
        }
    }
    GradientCheck {
        nets,
        coordinates,
        max_relative_error: worst,
    }
}

pub fn convex_dataset() -> Dataset {
    synthetic_blobs(5, 100, 3, 2, 8.0).unwrap()
}

pub fn convex_plan() -> TrainPlan {
    TrainPlan {
        architecture: Architecture::linear(2, 3),
        schedule: Schedule::Constant { rate: 0.05 },
        optimizer: OptimizerKind::SgdMomentum { momentum: 0.9 },
        batch_size: 10,
        total_steps: 600,
        dataset: "blobs".into(),
    }
}

pub const CONVEX_KS: [u64; 5] = [0, 30, 100, 300, 600];

/// Outcome of the linear-softmax oracle.
#[derive(Debug, Clone)]
pub struct ConvexOracle {
    /// Mean barrier per rewind step.
    pub instability: Vec<(u64, f64)>,
    /// Largest barrier of any single curve.
    pub max_curve_barrier: f64,
    /// Largest rise of the loss above the chord between the endpoints.
    pub max_chord_violation: f64,
    /// Test error of the full-batch reference fit.
    pub reference_error: f64,
    /// Largest gap between an SGD copy's test error and the reference's.
    pub max_error_gap: f64,
    /// Largest barrier between an SGD copy and the reference.
    pub max_reference_barrier: f64,
}

/// Full-batch gradient descent on the whole training set.
pub fn brute_force_fit(d: &Dataset, steps: usize, lr: f64) -> ParamSet {
    let mut p = init_params(&Architecture::linear(d.input_dim(), d.classes()), 0).unwrap();
    for _ in 0..steps {
        let g = backward(&p, d.split(Split::Train)).unwrap();
        for (e, ge) in p.entries_mut().iter_mut().zip(g.entries()) {
            for (w, gw) in e.tensor.values_mut().iter_mut().zip(ge.tensor.values()) {
                *w -= lr * gw;
            }
        }
    }
    p
}

pub fn convex_oracle() -> ConvexOracle {
    let d = convex_dataset();
    let plan = convex_plan();
    let noise: Vec<NoiseSpec> = [11, 12, 13].map(|s| NoiseSpec::from_seed(s, Augmentation::None)).to_vec();
    let base = NoiseSpec::from_seed(10, Augmentation::None);
    let reports = instability_vs_k(&plan, &d, &CONVEX_KS, &[1, 2], &noise, &base, Split::Test, HorizonMode::Remaining).unwrap();
    let instability = reports.iter().map(|r| (r.k, r.mean)).collect();
    let max_curve_barrier = reports.iter().flat_map(|r| r.pairs.iter().map(|p| p.barrier)).fold(0.0, f64::max);

    let reference = brute_force_fit(&d, 5000, 0.5);
    let reference_error = error_rate(&reference, d.split(Split::Test)).unwrap();
    let mut finals = Vec::new();
    for init in [1u64, 2] {
        let w0 = init_params(&plan.architecture, init).unwrap();
        for spec in &noise {
            finals.push(train_segment(&w0, &plan, &d, spec, plan.total_steps, None).unwrap());
        }
    }
    let mut max_error_gap: f64 = 0.0;
    let mut max_reference_barrier: f64 = 0.0;
    let mut max_chord_violation: f64 = 0.0;
    for (i, w) in finals.iter().enumerate() {
        max_error_gap = max_error_gap.max((error_rate(w, d.split(Split::Test)).unwrap() - reference_error).abs());
        let mut r = reference.clone();
        r.set_step(w.step());
        max_reference_barrier = max_reference_barrier.max(error_barrier(&interpolation_curve(w, &r, &d, Split::Test).unwrap()));
        for v in &finals[i + 1..] {
            let la = forward_loss(w, d.split(Split::Train)).unwrap().0;
            let lb = forward_loss(v, d.split(Split::Train)).unwrap().0;
            for a in alpha_grid() {
                let mid = lmc::engine::interpolate_params(w, v, a).unwrap();
                let l = forward_loss(&mid, d.split(Split::Train)).unwrap().0;
                max_chord_violation = max_chord_violation.max(l - (a * la + (1.0 - a) * lb));
            }
        }
    }
    ConvexOracle {
        instability,
        max_curve_barrier,
        max_chord_violation,
        reference_error,
        max_error_gap,
        max_reference_barrier,
    }
}

pub fn tiny_dataset() -> Dataset {
    synthetic_blobs(3, 30, 3, 4, 2.0).unwrap()
}

pub fn tiny_plan(optimizer: OptimizerKind, total_steps: u64) -> TrainPlan {
    TrainPlan {
        architecture: Architecture::new("tiny", 4, vec![12, 8], 3),
        schedule: Schedule::Constant { rate: 0.01 },
        optimizer,
        batch_size: 10,
        total_steps,
        dataset: "blobs".into(),
    }
}

/// Kept weights after `rounds` rounds of pruning `fraction` of the survivors,
/// rounding each round's count.
pub fn compounded_count(total: usize, fraction: f64, rounds: usize) -> usize {
    (0..rounds).fold(total, |kept, _| kept - lmc::pruning::prune_count(fraction, kept))
}

/// Trains under `mask` one step at a time and reports whether any pruned
/// weight ever became nonzero.
pub fn resurrects(plan: &TrainPlan, d: &Dataset, start: &ParamSet, mask: &lmc::pruning::Mask, noise: NoiseSpec) -> bool {
    let mut t = lmc::instability::Trainer::new(plan, d, start.clone(), noise, Some(mask.clone())).unwrap();
    let pruned_nonzero = |p: &ParamSet| {
        p.prunable().zip(mask.tensors()).any(|(e, m)| e.tensor.values().iter().zip(m.keep()).any(|(&w, &k)| !k && w != 0.0))
    };
    while t.step() < plan.total_steps {
        t.train_step().unwrap();
        if pruned_nonzero(t.params()) {
            return true;
        }
    }
    false
}

/// Barrier of a curve given by its errors, on the standard alpha grid.
pub fn barrier_of(errors: Vec<f64>) -> f64 {
    error_barrier(&lmc::instability::InterpolationCurve {
        alphas: alpha_grid(),
        errors,
        split: Split::Test,
    })
}
