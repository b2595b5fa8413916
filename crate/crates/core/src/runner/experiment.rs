//! Running a whole experiment from its config.
//!
//! Work is split per init seed. Each replicate is single-threaded and
//! deterministic; replicates may run on a worker pool, and their results are
//! merged in config order so the output bytes never depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{DataSource, ExperimentConfig, ExperimentKind};
use super::emit::{curve_csv, fmt_f64, summary_csv, write_text, CurveMeta, SummaryRow, Table};
use super::store::{dataset_fingerprint, Store};
use super::summary::{
    median_rewind_summary, select_extreme_sparsity, summarize_replicates, ExtremeSparsity, MedianRewind, RewindObservation, SparsityResult,
};
use crate::data::{load_mnist_idx, synthetic_blobs, Dataset, MnistFiles, NoiseSpec, NoiseStream, Split};
use crate::engine::{error_rate, init_params, ParamSet};
use crate::error::{Error, Result};
use crate::instability::{
    alpha_grid, error_barrier, instability_throughout_training, interpolation_curve, train_copy, unordered_pairs, HorizonMode,
    InstabilityReport, InterpolationCurve, PairBarrier, TrainPlan, Trainer, STABILITY_THRESHOLD,
};
use crate::metrics::{classification_differences, cosine_distance, l2_distance, loss_vector_l2, state_distance_report, DistanceKind};
use crate::pruning::{
    imp_from_rewind, is_matching, random_prune, random_reinit, ImpConfig, Mask, Provenance, SparseSubnetwork, MATCHING_MARGIN,
};

/// Knobs that affect how a run executes but never what it computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for replicates.
    pub threads: usize,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { threads: 1, verbose: false }
    }
}

/// Errors of one trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `full` for the dense network trained from scratch, `copy` otherwise.
    pub role: String,
    /// `dense`, `imp`, `random-prune` or `random-reinit`.
    pub provenance: String,
    pub level: String,
    pub init_seed: u64,
    pub noise_seed: u64,
    pub rewind_k: Option<u64>,
    pub density: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub wall_seconds: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub provenance: String,
    pub level: String,
    pub row: SummaryRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub k: Option<u64>,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// What a run did and where its files are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub kind: ExperimentKind,
    pub toolchain: String,
    pub out_dir: PathBuf,
    /// Mean accuracy of the fully trained dense networks on the split.
    pub full_accuracy: f64,
    pub runs: Vec<RunMetrics>,
    pub reports: Vec<ReportSummary>,
    pub extreme_sparsity: Option<ExtremeSparsity>,
    pub median_rewind: Vec<MedianRewind>,
    pub checks: Vec<CheckOutcome>,
    /// Paths relative to `out_dir`.
    pub artifacts: Vec<PathBuf>,
}

impl RunRecord {
    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn report(&self, provenance: &str, k: u64, level: &str) -> Option<&SummaryRow> {
        self.reports
            .iter()
            .find(|r| r.provenance == provenance && r.row.k == k && r.level == level)
            .map(|r| &r.row)
    }
}

pub fn toolchain() -> String {
    format!("lmc {} ({})", env!("CARGO_PKG_VERSION"), env!("LMC_RUSTC_VERSION"))
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Mnist { dir } => {
                let files = MnistFiles::in_dir(dir);
                if !files.exist() {
                    return Err(Error::io(
                        dir,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST IDX files not found"),
                    ));
                }
                load_mnist_idx(&files)
            }
            DataSource::Blobs {
                seed,
                per_class,
                classes,
                dim,
                separation,
            } => synthetic_blobs(*seed, *per_class, *classes, *dim, *separation),
            DataSource::External { name, .. } => Err(Error::config("data", format!("dataset `{name}` is not available"))),
        }
    }
}

/// A trained network together with the key it is cached under.
struct Trained {
    key: String,
    params: ParamSet,
    noise_seed: u64,
    seconds: f64,
    cached: bool,
}

struct Final {
    trained: Trained,
    train_error: f64,
    test_error: f64,
}

/// Copies trained from one starting state, and their pairwise curves.
struct Group {
    provenance: Option<Provenance>,
    k: u64,
    level: String,
    density: f64,
    finals: Vec<Final>,
    pairs: Vec<(PairBarrier, InterpolationCurve)>,
}

impl Group {
    fn provenance_name(&self) -> &'static str {
        self.provenance.map_or("dense", Provenance::as_str)
    }
}

struct Replicate {
    seed: u64,
    full: Final,
    groups: Vec<Group>,
    throughout: Vec<Vec<String>>,
    distances: Vec<Vec<String>>,
    compare: Vec<Vec<String>>,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    kind: ExperimentKind,
    plan: TrainPlan,
    data: &'a Dataset,
    store: Store,
    verbose: bool,
}

impl Context<'_> {
    fn say(&self, seed: u64, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[init {seed}] {}", msg.as_ref());
        }
    }

    fn split_error(&self, f: &Final) -> f64 {
        match self.config.split {
            Split::Train => f.train_error,
            Split::Test => f.test_error,
        }
    }

    fn errors(&self, t: Trained) -> Result<Final> {
        let key = self.store.key(&json!({ "unit": "errors", "state": t.key }));
        let e = self.store.memo_floats(&key, || {
            Ok(vec![
                error_rate(&t.params, self.data.split(Split::Train))?,
                error_rate(&t.params, self.data.split(Split::Test))?,
            ])
        })?;
        Ok(Final {
            trained: t,
            train_error: e[0],
            test_error: e[1],
        })
    }

    /// Loads the state cached under `key` or computes and caches it.
    fn cached(&self, key: String, noise_seed: u64, compute: impl FnOnce() -> Result<(ParamSet, Option<Mask>)>) -> Result<Trained> {
        if let Some((params, _)) = self.store.load(&key) {
            return Ok(Trained {
                key,
                params,
                noise_seed,
                seconds: 0.0,
                cached: true,
            });
        }
        let start = Instant::now();
        let (params, mask) = compute()?;
        self.store.save(&key, &params, mask.as_ref())?;
        Ok(Trained {
            key,
            params,
            noise_seed,
            seconds: start.elapsed().as_secs_f64(),
            cached: false,
        })
    }

    /// Snapshots of the base trajectory (init seed, base noise) at `steps`.
    fn base_trajectory(&self, seed: u64, steps: &[u64]) -> Result<BTreeMap<u64, Trained>> {
        let base = self.config.seeds.base_spec();
        let key = |s: u64| self.store.key(&json!({ "unit": "base", "init": seed, "noise": base, "step": s }));
        let mut out = BTreeMap::new();
        if steps.iter().all(|&s| self.store.contains(&key(s))) {
            for &s in steps {
                if let Some((params, _)) = self.store.load(&key(s)) {
                    out.insert(
                        s,
                        Trained {
                            key: key(s),
                            params,
                            noise_seed: self.config.seeds.base_noise,
                            seconds: 0.0,
                            cached: true,
                        },
                    );
                }
            }
            if out.len() == steps.len() {
                return Ok(out);
            }
            out.clear();
        }
        self.say(seed, format!("training base trajectory to step {}", steps.last().copied().unwrap_or(0)));
        let start = Instant::now();
        let mut trainer = Trainer::new(&self.plan, self.data, init_params(&self.plan.architecture, seed)?, base, None)?;
        for &s in steps {
            trainer.advance_to(s)?;
            self.store.save(&key(s), trainer.params(), None)?;
            out.insert(
                s,
                Trained {
                    key: key(s),
                    params: trainer.params().clone(),
                    noise_seed: self.config.seeds.base_noise,
                    seconds: start.elapsed().as_secs_f64(),
                    cached: false,
                },
            );
        }
        Ok(out)
    }

    /// Trains one copy of `start` (keyed `start_key`) under `spec`.
    fn copy(&self, start_key: &str, start: &ParamSet, mask: Option<&Mask>, spec: &NoiseSpec, seed: u64) -> Result<Trained> {
        let horizon = self.config.horizon;
        if horizon == HorizonMode::Remaining && start.step() == self.plan.total_steps {
            return Ok(Trained {
                key: start_key.to_string(),
                params: start.clone(),
                noise_seed: seed,
                seconds: 0.0,
                cached: true,
            });
        }
        let key = self.store.key(&json!({ "unit": "copy", "start": start_key, "noise": spec, "horizon": horizon }));
        self.cached(key, seed, || Ok((train_copy(start, &self.plan, self.data, spec, horizon, mask)?, mask.cloned())))
    }

    fn curve(&self, a: &Trained, b: &Trained) -> Result<InterpolationCurve> {
        let split = self.config.split;
        let key = self.store.key(&json!({ "unit": "curve", "a": a.key, "b": b.key, "split": split }));
        let errors = self
            .store
            .memo_floats(&key, || Ok(interpolation_curve(&a.params, &b.params, self.data, split)?.errors))?;
        Ok(InterpolationCurve {
            alphas: alpha_grid(),
            errors,
            split,
        })
    }

    /// Copies of one starting state under every noise spec, and all pairs.
    #[allow(clippy::too_many_arguments)]
    fn group(
        &self,
        seed: u64,
        provenance: Option<Provenance>,
        k: u64,
        level: &str,
        start_key: &str,
        start: &ParamSet,
        mask: Option<&Mask>,
    ) -> Result<Group> {
        let name = provenance.map_or("dense", Provenance::as_str);
        let specs = self.config.seeds.noise_specs();
        let mut finals = Vec::with_capacity(specs.len());
        for (spec, &noise_seed) in specs.iter().zip(&self.config.seeds.noise) {
            let t = self.copy(start_key, start, mask, spec, noise_seed)?;
            if !t.cached {
                self.say(seed, format!("{name} k={k} {level} noise {noise_seed}: trained in {:.1}s", t.seconds));
            }
            finals.push(self.errors(t)?);
        }
        let mut pairs = Vec::new();
        for (i, j) in unordered_pairs(finals.len()) {
            let curve = self.curve(&finals[i].trained, &finals[j].trained)?;
            pairs.push((
                PairBarrier {
                    init_seed: seed,
                    noise_a: specs[i],
                    noise_b: specs[j],
                    barrier: error_barrier(&curve),
                },
                curve,
            ));
        }
        Ok(Group {
            provenance,
            k,
            level: level.to_string(),
            density: mask.map_or(1.0, crate::pruning::density),
            finals,
            pairs,
        })
    }

    fn imp_trace(&self, seed: u64, rewind: &Trained, imp: &ImpConfig) -> Result<Mask> {
        let trace = imp_from_rewind(&rewind.params, &self.plan, imp, &self.config.seeds.base_spec(), |round, start, mask, noise| {
            let rates = if round == 1 { json!(null) } else { json!(imp.rates) };
            let key = self
                .store
                .key(&json!({ "unit": "imp-round", "rewind": rewind.key, "round": round, "rates": rates, "noise": noise }));
            let t = self.cached(key, noise.order_seed, || {
                Ok((
                    crate::instability::train_segment(start, &self.plan, self.data, &noise, self.plan.total_steps, Some(mask))?,
                    Some(mask.clone()),
                ))
            })?;
            if !t.cached {
                self.say(seed, format!("IMP k={} round {round}: trained in {:.1}s", imp.rewind_step, t.seconds));
            }
            Ok(t.params)
        })?;
        Ok(trace.subnetwork.mask)
    }

    fn baseline_seed(&self, provenance: Provenance, seed: u64, k: u64, level: &str) -> u64 {
        NoiseStream::new(self.config.seeds.baseline, &format!("{}/{seed}/{k}/{level}", provenance.as_str())).at(0)
    }

    fn sparse_groups(&self, seed: u64, base: &BTreeMap<u64, Trained>) -> Result<Vec<Group>> {
        let Some(pruning) = &self.config.pruning else {
            return Ok(Vec::new());
        };
        let mut groups = Vec::new();
        for k in self.config.imp_rewind() {
            let rewind = &base[&k];
            for level in pruning.levels(k) {
                let mask = self.imp_trace(seed, rewind, &level.imp)?;
                let sub = SparseSubnetwork {
                    rewind_step: k,
                    weights: rewind.params.clone(),
                    mask,
                    provenance: Provenance::Imp,
                };
                let sub_key = self.store.key(&json!({
                    "unit": "subnetwork",
                    "provenance": Provenance::Imp,
                    "rewind": rewind.key,
                    "rates": level.imp.rates,
                    "rounds": level.imp.rounds,
                }));
                groups.push(self.group(seed, Some(Provenance::Imp), k, &level.label, &sub_key, &sub.weights, Some(&sub.mask))?);
                for &b in &pruning.baselines {
                    let bseed = self.baseline_seed(b, seed, k, &level.label);
                    let derived = match b {
                        Provenance::RandomPrune => random_prune(&sub, bseed),
                        Provenance::RandomReinit => random_reinit(&sub, &self.plan.architecture, bseed)?,
                        Provenance::Imp => continue,
                    };
                    let key = self
                        .store
                        .key(&json!({ "unit": "subnetwork", "provenance": b, "from": sub_key, "seed": bseed }));
                    groups.push(self.group(seed, Some(b), k, &level.label, &key, &derived.weights, Some(&derived.mask))?);
                }
            }
        }
        Ok(groups)
    }

    fn analysis(&self, seed: u64, base: &BTreeMap<u64, Trained>, dense: &[Group], r: &mut Replicate) -> Result<()> {
        let a = &self.config.analysis;
        let specs = self.config.seeds.noise_specs();
        let noise = &self.config.seeds.noise;
        for g in dense {
            let start = &base[&g.k];
            let per_epoch = crate::data::batches_per_epoch(self.data.len(Split::Train), self.plan.batch_size) as u64;
            let epochs: Vec<u64> = a
                .throughout_epochs
                .iter()
                .copied()
                .filter(|e| (e * per_epoch).min(self.plan.total_steps) >= g.k)
                .collect();
            if !epochs.is_empty() {
                let key = self.store.key(&json!({
                    "unit": "throughout",
                    "start": start.key,
                    "a": specs[0],
                    "b": specs[1],
                    "epochs": epochs,
                    "split": self.config.split,
                }));
                let barriers = self.store.memo_floats(&key, || {
                    Ok(instability_throughout_training(
                        &start.params,
                        &self.plan,
                        self.data,
                        (&specs[0], &specs[1]),
                        &epochs,
                        self.config.split,
                        None,
                    )?
                    .into_iter()
                    .map(|(_, b)| b)
                    .collect())
                })?;
                for (e, b) in epochs.iter().zip(barriers) {
                    r.throughout
                        .push(vec![seed.to_string(), g.k.to_string(), noise[0].to_string(), noise[1].to_string(), e.to_string(), fmt_f64(b)]);
                }
            }
            if a.distances {
                let w0 = init_params(&self.plan.architecture, seed)?;
                let finals: Vec<ParamSet> = g.finals.iter().map(|f| f.trained.params.clone()).collect();
                let d = state_distance_report(&w0, &start.params, &finals, None)?;
                let row = |kind: &str, a: String, b: String, v: f64| vec![seed.to_string(), g.k.to_string(), kind.to_string(), a, b, fmt_f64(v)];
                r.distances.push(row("init-to-rewind", String::new(), String::new(), d.init_to_rewind));
                for (i, v) in d.rewind_to_final.iter().enumerate() {
                    r.distances.push(row("rewind-to-final", noise[i].to_string(), String::new(), *v));
                }
                for ((i, j), v) in unordered_pairs(finals.len()).into_iter().zip(&d.between_finals) {
                    r.distances.push(row("between-finals", noise[i].to_string(), noise[j].to_string(), *v));
                }
            }
            for (i, j) in unordered_pairs(g.finals.len()) {
                let (p, q) = (&g.finals[i].trained.params, &g.finals[j].trained.params);
                for kind in &a.compare {
                    let (name, v) = match kind {
                        DistanceKind::L2 => ("l2", l2_distance(p, q, None)?),
                        DistanceKind::Cosine => ("cosine", cosine_distance(p, q, None)?),
                        DistanceKind::ClassificationDifferences => {
                            ("classification-differences", classification_differences(p, q, self.data, self.config.split)? as f64)
                        }
                        DistanceKind::LossL2 => ("loss-l2", loss_vector_l2(p, q, self.data, self.config.split)?),
                    };
                    r.compare.push(vec![
                        seed.to_string(),
                        g.k.to_string(),
                        noise[i].to_string(),
                        noise[j].to_string(),
                        name.to_string(),
                        fmt_f64(v),
                    ]);
                }
            }
        }
        Ok(())
    }

    fn replicate(&self, seed: u64) -> Result<Replicate> {
        let t = self.plan.total_steps;
        let dense_wanted = matches!(self.kind, ExperimentKind::Instability | ExperimentKind::Sweep | ExperimentKind::Report);
        let sparse_wanted = matches!(self.kind, ExperimentKind::Imp | ExperimentKind::Sweep | ExperimentKind::Report);
        let mut steps: Vec<u64> = self.config.rewind.iter().copied().chain([t]).collect();
        if sparse_wanted && self.config.pruning.is_some() {
            steps.extend(self.config.imp_rewind());
        }
        steps.sort_unstable();
        steps.dedup();

        let mut base = self.base_trajectory(seed, &steps)?;
        let full = base.remove(&t).expect("final step is always snapshotted");
        let full_key = full.key.clone();
        let full_params = full.params.clone();
        base.insert(
            t,
            Trained {
                key: full_key,
                params: full_params,
                noise_seed: full.noise_seed,
                seconds: 0.0,
                cached: true,
            },
        );
        let full = self.errors(full)?;
        self.say(seed, format!("full network: test error {:.4}", full.test_error));

        let mut groups = Vec::new();
        if dense_wanted {
            for &k in &self.config.rewind {
                let start = &base[&k];
                groups.push(self.group(seed, None, k, "", &start.key, &start.params, None)?);
            }
        }
        let mut r = Replicate {
            seed,
            full,
            groups: Vec::new(),
            throughout: Vec::new(),
            distances: Vec::new(),
            compare: Vec::new(),
        };
        if dense_wanted {
            self.analysis(seed, &base, &groups, &mut r)?;
        }
        if sparse_wanted {
            groups.extend(self.sparse_groups(seed, &base)?);
        }
        r.groups = groups;
        Ok(r)
    }
}

fn relative(out: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(out).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

struct Writer {
    out: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Writer {
    fn write(&mut self, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        let path = self.out.join(rel.as_ref());
        write_text(&path, text)?;
        self.artifacts.push(relative(&self.out, &path));
        Ok(())
    }
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

/// Runs `config` with default options.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    run_experiment_with(config, RunOptions::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, options: RunOptions) -> Result<RunRecord> {
    config.validate()?;
    let kind = config.kind()?;
    let plan = config.train_plan()?;
    plan.validate()?;
    let data = config.data.load()?;
    let out = config.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let store = Store::new(config.checkpoint_dir(), &plan, &dataset_fingerprint(&data));
    let ctx = Context {
        config,
        kind,
        plan,
        data: &data,
        store,
        verbose: options.verbose,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let replicates: Vec<Replicate> = pool.install(|| config.seeds.init.par_iter().map(|&s| ctx.replicate(s)).collect::<Result<_>>())?;

    let mut w = Writer {
        out: out.clone(),
        artifacts: Vec::new(),
    };
    let mut resolved = config.clone();
    resolved.kind = Some(kind);
    w.write("config.toml", &resolved.to_toml_string())?;

    let split_errors: Vec<f64> = replicates.iter().map(|r| ctx.split_error(&r.full)).collect();
    let full_accuracy = 1.0 - summarize_replicates(&split_errors)?.0;

    let mut runs = Vec::new();
    let mut metrics = Table::new(&[
        "role",
        "provenance",
        "level",
        "init_seed",
        "noise_seed",
        "rewind_k",
        "density",
        "train_error",
        "test_error",
    ]);
    let mut add_run = |role: &str, provenance: &str, level: &str, seed: u64, k: Option<u64>, density: f64, f: &Final| {
        metrics.push(vec![
            role.into(),
            provenance.into(),
            level.into(),
            seed.to_string(),
            f.trained.noise_seed.to_string(),
            k.map(|k| k.to_string()).unwrap_or_default(),
            fmt_f64(density),
            fmt_f64(f.train_error),
            fmt_f64(f.test_error),
        ]);
        runs.push(RunMetrics {
            role: role.into(),
            provenance: provenance.into(),
            level: level.into(),
            init_seed: seed,
            noise_seed: f.trained.noise_seed,
            rewind_k: k,
            density,
            train_error: f.train_error,
            test_error: f.test_error,
            wall_seconds: f.trained.seconds,
            cached: f.trained.cached,
        });
    };
    for r in &replicates {
        add_run("full", "dense", "", r.seed, None, 1.0, &r.full);
        for g in &r.groups {
            for f in &g.finals {
                add_run("copy", g.provenance_name(), &g.level, r.seed, Some(g.k), g.density, f);
            }
        }
    }
    w.write("train_metrics.csv", &metrics.to_csv())?;

    // Reports: one per (provenance, k, level), pairs pooled over replicates.
    let mut reports: Vec<ReportSummary> = Vec::new();
    let mut pair_rows = Table::new(&["provenance", "level", "rewind_k", "density", "init_seed", "noise_seed_a", "noise_seed_b", "barrier"]);
    let n_groups = replicates.first().map_or(0, |r| r.groups.len());
    for gi in 0..n_groups {
        let first = &replicates[0].groups[gi];
        let mut pairs = Vec::new();
        let mut errors = Vec::new();
        let mut densities = Vec::new();
        for r in &replicates {
            let g = &r.groups[gi];
            densities.push(g.density);
            errors.extend(g.finals.iter().map(|f| ctx.split_error(f)));
            for (p, curve) in &g.pairs {
                pairs.push(p.clone());
                let meta = CurveMeta {
                    init_seed: r.seed,
                    noise_seed_a: p.noise_a.order_seed,
                    noise_seed_b: p.noise_b.order_seed,
                    rewind_k: g.k,
                    density: g.density,
                };
                let level = if g.level.is_empty() { String::new() } else { format!("-{}", g.level) };
                let name = format!(
                    "curves/{}-k{}{}-init{}-{}-{}.csv",
                    g.provenance_name(),
                    g.k,
                    level,
                    r.seed,
                    meta.noise_seed_a,
                    meta.noise_seed_b
                );
                w.write(name, &curve_csv(curve, &meta))?;
                pair_rows.push(vec![
                    g.provenance_name().into(),
                    g.level.clone(),
                    g.k.to_string(),
                    fmt_f64(g.density),
                    r.seed.to_string(),
                    meta.noise_seed_a.to_string(),
                    meta.noise_seed_b.to_string(),
                    fmt_f64(p.barrier),
                ]);
            }
        }
        let report = InstabilityReport::from_pairs(first.k, config.split, pairs)?;
        let (mean_error, std_error) = summarize_replicates(&errors)?;
        let density = summarize_replicates(&densities)?.0;
        reports.push(ReportSummary {
            provenance: first.provenance_name().into(),
            level: first.level.clone(),
            row: SummaryRow {
                k: first.k,
                density,
                mean_instability: report.mean,
                std_instability: report.std,
                stable: report.stable,
                mean_error,
                std_error,
                matching: is_matching(1.0 - mean_error, full_accuracy, MATCHING_MARGIN),
            },
        });
    }
    if !pair_rows.is_empty() {
        w.write("pairs.csv", &pair_rows.to_csv())?;
    }
    for prov in ["dense", "imp", "random-prune", "random-reinit"] {
        let rows: Vec<SummaryRow> = reports.iter().filter(|r| r.provenance == prov).map(|r| r.row).collect();
        if !rows.is_empty() {
            w.write(format!("summary_{prov}.csv"), &summary_csv(&rows))?;
        }
    }

    type Extra<'a> = (&'a str, &'a [&'static str], Vec<Vec<String>>);
    let extras: [Extra; 3] = [
        (
            "throughout.csv",
            &["init_seed", "rewind_k", "noise_seed_a", "noise_seed_b", "epoch", "barrier"],
            replicates.iter().flat_map(|r| r.throughout.clone()).collect(),
        ),
        (
            "distances.csv",
            &["init_seed", "rewind_k", "kind", "noise_seed_a", "noise_seed_b", "distance"],
            replicates.iter().flat_map(|r| r.distances.clone()).collect(),
        ),
        (
            "compare.csv",
            &["init_seed", "rewind_k", "noise_seed_a", "noise_seed_b", "metric", "value"],
            replicates.iter().flat_map(|r| r.compare.clone()).collect(),
        ),
    ];
    for (name, header, rows) in extras {
        if !rows.is_empty() {
            let mut t = Table::new(header);
            rows.into_iter().for_each(|row| t.push(row));
            w.write(name, &t.to_csv())?;
        }
    }

    // Sparsity selection over IMP reports, with the dense network as density 1.
    let mut extreme_sparsity = None;
    let mut median_rewind = Vec::new();
    let selecting = matches!(kind, ExperimentKind::Sweep | ExperimentKind::Report) && config.pruning.is_some();
    if selecting {
        let mut results: Vec<SparsityResult> = reports
            .iter()
            .filter(|r| r.provenance == "imp" || r.provenance == "dense")
            .map(|r| SparsityResult {
                density: r.row.density,
                k: r.row.k,
                accuracy: 1.0 - r.row.mean_error,
            })
            .collect();
        if !reports.iter().any(|r| r.provenance == "dense") {
            results.push(SparsityResult {
                density: 1.0,
                k: 0,
                accuracy: full_accuracy,
            });
        }
        let selected = select_extreme_sparsity(&results, full_accuracy, MATCHING_MARGIN)?;
        let (status, density) = match selected {
            ExtremeSparsity::Matching { density } => ("matching", fmt_f64(density)),
            ExtremeSparsity::None => ("none", String::new()),
        };
        let mut t = Table::new(&["status", "density"]);
        t.push(vec![status.into(), density]);
        w.write("extreme_sparsity.csv", &t.to_csv())?;
        extreme_sparsity = Some(selected);

        let mut observations = Vec::new();
        for r in &replicates {
            for g in r.groups.iter().filter(|g| matches!(g.provenance, None | Some(Provenance::Imp))) {
                let barriers: Vec<f64> = g.pairs.iter().map(|(p, _)| p.barrier).collect();
                let errors: Vec<f64> = g.finals.iter().map(|f| ctx.split_error(f)).collect();
                observations.push(RewindObservation {
                    density: g.density,
                    k: g.k,
                    replicate: r.seed,
                    barrier: summarize_replicates(&barriers)?.0,
                    accuracy: 1.0 - summarize_replicates(&errors)?.0,
                });
            }
        }
        median_rewind = median_rewind_summary(&observations, full_accuracy, STABILITY_THRESHOLD, MATCHING_MARGIN);
        let mut t = Table::new(&["density", "median_stable_k", "median_matching_k"]);
        for m in &median_rewind {
            let opt = |k: Option<u64>| k.map(|k| k.to_string()).unwrap_or_default();
            t.push(vec![fmt_f64(m.density), opt(m.stable_k), opt(m.matching_k)]);
        }
        w.write("median_rewind.csv", &t.to_csv())?;
    }

    let checks = if kind == ExperimentKind::Report {
        let checks = evaluate_checks(config, full_accuracy, &reports);
        let mut t = Table::new(&["check", "rewind_k", "value", "threshold", "passed"]);
        for c in &checks {
            t.push(vec![
                c.name.clone(),
                c.k.map(|k| k.to_string()).unwrap_or_default(),
                fmt_f64(c.value),
                fmt_f64(c.threshold),
                bool_str(c.passed),
            ]);
        }
        w.write("checks.csv", &t.to_csv())?;
        checks
    } else {
        Vec::new()
    };

    let mut record = RunRecord {
        config_hash: config.hash(),
        kind,
        toolchain: toolchain(),
        out_dir: out.clone(),
        full_accuracy,
        runs,
        reports,
        extreme_sparsity,
        median_rewind,
        checks,
        artifacts: w.artifacts.clone(),
    };
    record.artifacts.push(PathBuf::from("record.json"));
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_text(&out.join("record.json"), &json)?;
    Ok(record)
}

fn evaluate_checks(config: &ExperimentConfig, full_accuracy: f64, reports: &[ReportSummary]) -> Vec<CheckOutcome> {
    let c = &config.checks;
    let mut out = Vec::new();
    let mut push = |name: &str, k: Option<u64>, value: f64, threshold: f64, passed: bool| {
        out.push(CheckOutcome {
            name: name.into(),
            k,
            value,
            threshold,
            passed,
        })
    };
    if let Some(min) = c.min_full_accuracy {
        push("min_full_accuracy", None, full_accuracy, min, full_accuracy >= min);
    }
    if let Some(max) = c.max_mean_instability {
        for r in reports.iter().filter(|r| r.provenance == "dense") {
            push("max_mean_instability", Some(r.row.k), r.row.mean_instability, max, r.row.mean_instability < max);
        }
    }
    let accuracy_of = |prov: &str, k: u64, level: &str| {
        reports
            .iter()
            .find(|r| r.provenance == prov && r.row.k == k && r.level == level)
            .map(|r| 1.0 - r.row.mean_error)
    };
    for k in config.imp_rewind() {
        let Some(sparsest) = reports
            .iter()
            .filter(|r| r.provenance == "imp" && r.row.k == k)
            .min_by(|a, b| a.row.density.total_cmp(&b.row.density))
        else {
            continue;
        };
        let level = sparsest.level.as_str();
        let imp = 1.0 - sparsest.row.mean_error;
        if let Some(min) = c.min_sparse_accuracy {
            push("min_sparse_accuracy", Some(k), imp, min, imp >= min);
        }
        if let Some(max) = c.max_accuracy_drop {
            let drop = full_accuracy - imp;
            push("max_accuracy_drop", Some(k), drop, max, drop <= max);
        }
        let prune = accuracy_of("random-prune", k, level);
        if let (Some(min), Some(prune)) = (c.min_imp_over_random_prune, prune) {
            push("min_imp_over_random_prune", Some(k), imp - prune, min, imp - prune >= min);
        }
        if let (Some(min), Some(prune), Some(reinit)) = (c.min_reinit_over_random_prune, prune, accuracy_of("random-reinit", k, level)) {
            push("min_reinit_over_random_prune", Some(k), reinit - prune, min, reinit - prune >= min);
        }
    }
    out
}
