//! Declarative experiment descriptions, read from TOML.
//!
//! Unknown keys anywhere in the document are rejected, and validation errors
//! name the offending field by its dotted path.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Augmentation, NoiseSpec, NoiseStream, Split};
use crate::engine::{Architecture, OptimizerKind, Schedule};
use crate::error::{Error, Result};
use crate::instability::{HorizonMode, TrainPlan};
use crate::metrics::DistanceKind;
use crate::pruning::{ImpConfig, LayerRate, PruneRates, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Train every init seed to the end, checkpointing along the way.
    Train,
    /// Dense instability at every rewind step.
    Instability,
    /// IMP subnetworks (and baselines) at every rewind step and sparsity.
    Imp,
    /// Dense instability plus IMP, with sparsity selection summaries.
    Sweep,
    /// Whatever sections are present, followed by the configured checks.
    Report,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Instability => "instability",
            ExperimentKind::Imp => "imp",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Report => "report",
        }
    }
}

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// The four IDX files (optionally gzipped) in `dir`.
    Mnist { dir: PathBuf },
    /// Gaussian blobs from [`synthetic_blobs`](crate::data::synthetic_blobs).
    Blobs {
        seed: u64,
        per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
    },
    /// A dataset that is described but not bundled (CIFAR-10, ImageNet).
    External {
        name: String,
        train_examples: usize,
        input_shape: [usize; 3],
        classes: usize,
    },
}

impl DataSource {
    pub fn name(&self) -> &str {
        match self {
            DataSource::Mnist { .. } => "mnist",
            DataSource::Blobs { .. } => "blobs",
            DataSource::External { name, .. } => name,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            DataSource::Mnist { .. } => (784, 10),
            DataSource::Blobs { dim, classes, .. } => (*dim, *classes),
            DataSource::External { input_shape, classes, .. } => (input_shape.iter().product(), *classes),
        }
    }
}

/// A trainable dense network, or a named network that can be described in a
/// config but is not built here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArchitectureSpec {
    Dense {
        name: String,
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    External { name: String, params: u64 },
}

impl ArchitectureSpec {
    pub fn lenet() -> Self {
        let a = Architecture::lenet();
        ArchitectureSpec::Dense {
            name: a.name,
            input_dim: a.input_dim,
            hidden: a.hidden,
            classes: a.classes,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ArchitectureSpec::Dense { name, .. } | ArchitectureSpec::External { name, .. } => name,
        }
    }
}

/// [`TrainPlan`] minus the dataset name, which comes from [`DataSource`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub architecture: ArchitectureSpec,
    pub schedule: Schedule,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub total_steps: u64,
}

impl PlanConfig {
    pub fn lenet() -> Self {
        let p = TrainPlan::lenet();
        Self {
            architecture: ArchitectureSpec::lenet(),
            schedule: p.schedule,
            optimizer: p.optimizer,
            batch_size: p.batch_size,
            total_steps: p.total_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// One replicate per init seed.
    pub init: Vec<u64>,
    /// Noise seeds for the copies trained from each rewind point.
    pub noise: Vec<u64>,
    /// Noise for the trajectory from initialization to the rewind point and
    /// for the IMP rounds.
    pub base_noise: u64,
    /// Seed for the random-prune and random-reinit baselines.
    #[serde(default)]
    pub baseline: u64,
    #[serde(default)]
    pub augmentation: Augmentation,
}

impl SeedConfig {
    /// Seeds derived from one master seed, keeping the replicate counts.
    pub fn derived(master: u64, inits: usize, copies: usize) -> Self {
        let stream = |label: &str| NoiseStream::new(master, label);
        Self {
            init: (0..inits as u64).map(|i| stream("init").at(i)).collect(),
            noise: (0..copies as u64).map(|i| stream("noise").at(i)).collect(),
            base_noise: stream("base-noise").at(0),
            baseline: stream("baseline").at(0),
            augmentation: Augmentation::None,
        }
    }

    pub fn noise_specs(&self) -> Vec<NoiseSpec> {
        self.noise.iter().map(|&s| NoiseSpec::from_seed(s, self.augmentation)).collect()
    }

    pub fn base_spec(&self) -> NoiseSpec {
        NoiseSpec::from_seed(self.base_noise, self.augmentation)
    }
}

/// The sparsity levels to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SparsityGrid {
    /// Iterative pruning at `fraction` per round, evaluated after each listed
    /// round count.
    Iterative { fraction: f64, rounds: Vec<usize> },
    /// Independent one-shot pruning to each listed fraction.
    OneShot { fractions: Vec<f64> },
}

/// One sparsity level: how IMP is run and after how many rounds the mask is
/// taken.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityLevel {
    pub imp: ImpConfig,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningConfig {
    /// Rewind steps for IMP; the top-level `rewind` list when absent.
    #[serde(default)]
    pub rewind: Option<Vec<u64>>,
    pub sparsity: SparsityGrid,
    /// Per-tensor fractions replacing the global one.
    #[serde(default)]
    pub overrides: Vec<LayerRate>,
    /// Baselines trained alongside every IMP subnetwork.
    #[serde(default)]
    pub baselines: Vec<Provenance>,
}

impl PruningConfig {
    fn rates(&self, fraction: f64) -> PruneRates {
        PruneRates {
            fraction,
            overrides: self.overrides.clone(),
        }
    }

    /// Every level at rewind step `k`, in grid order.
    pub fn levels(&self, k: u64) -> Vec<SparsityLevel> {
        match &self.sparsity {
            SparsityGrid::Iterative { fraction, rounds } => rounds
                .iter()
                .map(|&n| SparsityLevel {
                    imp: ImpConfig {
                        rates: self.rates(*fraction),
                        ..ImpConfig::iterative(k, n, *fraction)
                    },
                    label: format!("r{n}"),
                })
                .collect(),
            SparsityGrid::OneShot { fractions } => fractions
                .iter()
                .map(|&f| SparsityLevel {
                    imp: ImpConfig {
                        rates: self.rates(f),
                        ..ImpConfig::one_shot(k, f)
                    },
                    label: format!("f{f}"),
                })
                .collect(),
        }
    }
}

/// Optional extra outputs for dense instability runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Epochs at which the first two copies are interpolated while training.
    #[serde(default)]
    pub throughout_epochs: Vec<u64>,
    /// Emit L2 distances between initialization, rewind point and finals.
    #[serde(default)]
    pub distances: bool,
    /// Alternative comparisons between every pair of finals.
    #[serde(default)]
    pub compare: Vec<DistanceKind>,
}

/// Pass/fail thresholds evaluated in report mode. Accuracies are fractions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    /// Mean accuracy of the fully trained dense networks.
    pub min_full_accuracy: Option<f64>,
    /// Upper bound on the mean barrier of every dense report.
    pub max_mean_instability: Option<f64>,
    /// Mean IMP accuracy at the sparsest level.
    pub min_sparse_accuracy: Option<f64>,
    /// Full accuracy minus IMP accuracy at the sparsest level.
    pub max_accuracy_drop: Option<f64>,
    /// IMP accuracy minus random-prune accuracy at the sparsest level.
    pub min_imp_over_random_prune: Option<f64>,
    /// Random-reinit accuracy minus random-prune accuracy at the sparsest level.
    pub min_reinit_over_random_prune: Option<f64>,
}

impl Checks {
    pub fn is_empty(&self) -> bool {
        *self == Checks::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Set by the CLI subcommand when absent.
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    /// Output directory; the CLI's `--out` takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Where trained states are cached; `<out_dir>/checkpoints` by default.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    pub data: DataSource,
    pub plan: PlanConfig,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub horizon: HorizonMode,
    /// Rewind steps `k` for dense instability (and IMP by default).
    #[serde(default)]
    pub rewind: Vec<u64>,
    #[serde(default)]
    pub pruning: Option<PruningConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub checks: Checks,
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let path = match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}")
        }
        None => "<document>".into(),
    };
    Error::config(path, e.message().trim().to_string())
}

fn check(ok: bool, path: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, message()))
    }
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v.is_finite() && (lo..=hi).contains(&v)
}

fn distinct(values: &[u64], path: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for v in values {
        check(seen.insert(*v), path, || format!("seed {v} appears twice"))?;
    }
    Ok(())
}

fn fraction(v: f64, path: &str) -> Result<()> {
    check(v.is_finite() && (0.0..1.0).contains(&v), path, || format!("{v} is not in [0, 1)"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(text, e))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical JSON form, ignoring the output and checkpoint
    /// locations. Key order in the source text does not matter.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        canonical.checkpoint_dir = None;
        let json = serde_json::to_vec(&canonical).expect("configs always serialize");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces every seed with one derived from `master`.
    pub fn override_seeds(&mut self, master: u64) {
        let augmentation = self.seeds.augmentation;
        self.seeds = SeedConfig {
            augmentation,
            ..SeedConfig::derived(master, self.seeds.init.len(), self.seeds.noise.len())
        };
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind.ok_or_else(|| Error::config("kind", "missing (set it in the file or use a subcommand)"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint_dir.clone().unwrap_or_else(|| self.out_dir().join("checkpoints"))
    }

    /// Rewind steps used for IMP.
    pub fn imp_rewind(&self) -> Vec<u64> {
        self.pruning
            .as_ref()
            .and_then(|p| p.rewind.clone())
            .unwrap_or_else(|| self.rewind.clone())
    }

    /// The trainable plan, or an error for external architectures/datasets.
    pub fn train_plan(&self) -> Result<TrainPlan> {
        let ArchitectureSpec::Dense {
            name,
            input_dim,
            hidden,
            classes,
        } = &self.plan.architecture
        else {
            return Err(Error::config(
                "plan.architecture",
                format!("`{}` can be described but not trained here", self.plan.architecture.name()),
            ));
        };
        if let DataSource::External { name, .. } = &self.data {
            return Err(Error::config("data", format!("dataset `{name}` is not available")));
        }
        Ok(TrainPlan {
            architecture: Architecture::new(name.clone(), *input_dim, hidden.clone(), *classes),
            schedule: self.plan.schedule.clone(),
            optimizer: self.plan.optimizer,
            batch_size: self.plan.batch_size,
            total_steps: self.plan.total_steps,
            dataset: self.data.name().to_string(),
        })
    }

    /// Checks every field; the error names the first offending path.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        self.validate_data()?;
        self.validate_plan()?;
        self.validate_seeds(kind)?;

        let t = self.plan.total_steps;
        for (i, &k) in self.rewind.iter().enumerate() {
            check(k <= t, &format!("rewind[{i}]"), || format!("{k} exceeds total_steps = {t}"))?;
        }
        distinct(&self.rewind, "rewind")?;
        let needs_rewind = matches!(kind, ExperimentKind::Instability | ExperimentKind::Sweep);
        check(!needs_rewind || !self.rewind.is_empty(), "rewind", || {
            format!("a {} experiment needs at least one rewind step", kind.as_str())
        })?;

        let needs_pruning = matches!(kind, ExperimentKind::Imp | ExperimentKind::Sweep);
        check(!needs_pruning || self.pruning.is_some(), "pruning", || {
            format!("a {} experiment needs a [pruning] section", kind.as_str())
        })?;
        if let Some(p) = &self.pruning {
            self.validate_pruning(p)?;
        }

        let per_epoch = self.train_examples().div_ceil(self.plan.batch_size) as u64;
        for (i, &e) in self.analysis.throughout_epochs.iter().enumerate() {
            check(e <= t.div_ceil(per_epoch), &format!("analysis.throughout_epochs[{i}]"), || {
                format!("epoch {e} is past the end of training")
            })?;
        }
        let wants_analysis = !self.analysis.throughout_epochs.is_empty() || self.analysis.distances || !self.analysis.compare.is_empty();
        check(!wants_analysis || !self.rewind.is_empty(), "analysis", || "needs at least one rewind step".into())?;

        self.validate_checks(kind)
    }

    fn train_examples(&self) -> usize {
        match &self.data {
            DataSource::Mnist { .. } => 60_000,
            DataSource::Blobs { per_class, classes, .. } => per_class * classes,
            DataSource::External { train_examples, .. } => *train_examples,
        }
    }

    fn validate_data(&self) -> Result<()> {
        match &self.data {
            DataSource::Mnist { dir } => check(!dir.as_os_str().is_empty(), "data.dir", || "must not be empty".into()),
            DataSource::Blobs {
                per_class,
                classes,
                dim,
                separation,
                ..
            } => {
                check(*per_class > 0, "data.per_class", || "must be positive".into())?;
                check(*classes >= 2, "data.classes", || "needs at least two classes".into())?;
                check(*dim > 0, "data.dim", || "must be positive".into())?;
                check(separation.is_finite() && *separation > 0.0, "data.separation", || "must be positive".into())
            }
            DataSource::External {
                name,
                train_examples,
                input_shape,
                classes,
            } => {
                check(!name.is_empty(), "data.name", || "must not be empty".into())?;
                check(*train_examples > 0, "data.train_examples", || "must be positive".into())?;
                check(input_shape.iter().all(|&d| d > 0), "data.input_shape", || "dimensions must be positive".into())?;
                check(*classes >= 2, "data.classes", || "needs at least two classes".into())
            }
        }
    }

    fn validate_plan(&self) -> Result<()> {
        let p = &self.plan;
        match &p.architecture {
            ArchitectureSpec::Dense {
                name,
                input_dim,
                hidden,
                classes,
            } => {
                Architecture::new(name.clone(), *input_dim, hidden.clone(), *classes)
                    .validate()
                    .map_err(|e| Error::config("plan.architecture", e.to_string()))?;
                let (dim, c) = self.data.shape();
                check(*input_dim == dim, "plan.architecture.input_dim", || {
                    format!("{input_dim} does not match the {dim} inputs of `{}`", self.data.name())
                })?;
                check(*classes == c, "plan.architecture.classes", || {
                    format!("{classes} does not match the {c} classes of `{}`", self.data.name())
                })?;
            }
            ArchitectureSpec::External { name, params } => {
                check(!name.is_empty(), "plan.architecture.name", || "must not be empty".into())?;
                check(*params > 0, "plan.architecture.params", || "must be positive".into())?;
            }
        }
        p.schedule.validate().map_err(|e| Error::config("plan.schedule", e.to_string()))?;
        p.optimizer.validate().map_err(|e| Error::config("plan.optimizer", e.to_string()))?;
        check(p.batch_size > 0, "plan.batch_size", || "must be positive".into())?;
        check(p.total_steps > 0, "plan.total_steps", || "must be positive".into())
    }

    fn validate_seeds(&self, kind: ExperimentKind) -> Result<()> {
        let s = &self.seeds;
        check(!s.init.is_empty(), "seeds.init", || "needs at least one seed".into())?;
        distinct(&s.init, "seeds.init")?;
        distinct(&s.noise, "seeds.noise")?;
        check(!s.noise.contains(&s.base_noise), "seeds.base_noise", || {
            format!("{} is also a copy noise seed", s.base_noise)
        })?;
        let needs_copies = kind != ExperimentKind::Train;
        check(!needs_copies || s.noise.len() >= 2, "seeds.noise", || {
            "needs at least two seeds to form pairs".into()
        })?;
        if s.augmentation != Augmentation::None {
            check(!matches!(self.data, DataSource::Blobs { .. }), "seeds.augmentation", || {
                format!("`{}` has no image shape to augment", self.data.name())
            })?;
        }
        Ok(())
    }

    fn validate_pruning(&self, p: &PruningConfig) -> Result<()> {
        let t = self.plan.total_steps;
        let rewind = self.imp_rewind();
        check(!rewind.is_empty(), "pruning.rewind", || "needs at least one rewind step".into())?;
        for (i, &k) in rewind.iter().enumerate() {
            check(k < t, &format!("pruning.rewind[{i}]"), || format!("{k} must be below total_steps = {t}"))?;
        }
        distinct(&rewind, "pruning.rewind")?;
        match &p.sparsity {
            SparsityGrid::Iterative { fraction: f, rounds } => {
                fraction(*f, "pruning.sparsity.fraction")?;
                check(!rounds.is_empty(), "pruning.sparsity.rounds", || "needs at least one round count".into())?;
                for (i, &n) in rounds.iter().enumerate() {
                    check(n >= 1, &format!("pruning.sparsity.rounds[{i}]"), || "must be at least 1".into())?;
                }
                check(rounds.windows(2).all(|w| w[0] < w[1]), "pruning.sparsity.rounds", || {
                    "must be strictly increasing".into()
                })?;
            }
            SparsityGrid::OneShot { fractions } => {
                check(!fractions.is_empty(), "pruning.sparsity.fractions", || "needs at least one fraction".into())?;
                for (i, &f) in fractions.iter().enumerate() {
                    fraction(f, &format!("pruning.sparsity.fractions[{i}]"))?;
                }
            }
        }
        for (i, o) in p.overrides.iter().enumerate() {
            fraction(o.fraction, &format!("pruning.overrides[{i}].fraction"))?;
            if let ArchitectureSpec::Dense { hidden, .. } = &self.plan.architecture {
                let layers = hidden.len() + 1;
                let known = (1..=layers).any(|l| o.tensor == format!("fc{l}.weight"));
                check(known, &format!("pruning.overrides[{i}].tensor"), || {
                    format!("`{}` is not a prunable tensor", o.tensor)
                })?;
            }
        }
        for (i, b) in p.baselines.iter().enumerate() {
            check(*b != Provenance::Imp, &format!("pruning.baselines[{i}]"), || {
                "baselines are random-prune or random-reinit".into()
            })?;
        }
        Ok(())
    }

    fn validate_checks(&self, kind: ExperimentKind) -> Result<()> {
        let c = &self.checks;
        check(kind != ExperimentKind::Report || !c.is_empty(), "checks", || {
            "a report experiment needs at least one check".into()
        })?;
        let fields = [
            ("checks.min_full_accuracy", c.min_full_accuracy, 0.0, 1.0),
            ("checks.max_mean_instability", c.max_mean_instability, 0.0, 1.0),
            ("checks.min_sparse_accuracy", c.min_sparse_accuracy, 0.0, 1.0),
            ("checks.max_accuracy_drop", c.max_accuracy_drop, -1.0, 1.0),
            ("checks.min_imp_over_random_prune", c.min_imp_over_random_prune, -1.0, 1.0),
            ("checks.min_reinit_over_random_prune", c.min_reinit_over_random_prune, -1.0, 1.0),
        ];
        for (path, v, lo, hi) in fields {
            if let Some(v) = v {
                check(within(v, lo, hi), path, || format!("{v} is not in [{lo}, {hi}]"))?;
            }
        }
        check(c.max_mean_instability.is_none() || !self.rewind.is_empty(), "checks.max_mean_instability", || {
            "needs at least one rewind step".into()
        })?;
        let sparse = [
            ("checks.min_sparse_accuracy", c.min_sparse_accuracy),
            ("checks.max_accuracy_drop", c.max_accuracy_drop),
        ];
        for (path, v) in sparse {
            check(v.is_none() || self.pruning.is_some(), path, || "needs a [pruning] section".into())?;
        }
        let has = |b: Provenance| self.pruning.as_ref().is_some_and(|p| p.baselines.contains(&b));
        check(
            c.min_imp_over_random_prune.is_none() || has(Provenance::RandomPrune),
            "checks.min_imp_over_random_prune",
            || "needs the random-prune baseline".into(),
        )?;
        check(
            c.min_reinit_over_random_prune.is_none() || (has(Provenance::RandomPrune) && has(Provenance::RandomReinit)),
            "checks.min_reinit_over_random_prune",
            || "needs both random baselines".into(),
        )
    }
}
