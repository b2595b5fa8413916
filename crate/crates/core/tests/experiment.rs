use std::fs;
use std::path::{Path, PathBuf};

use lmc::runner::{run_experiment, ExperimentConfig, ExperimentKind, ExtremeSparsity, CURVE_HEADER, SUMMARY_HEADER};

fn blobs(out: &Path, kind: ExperimentKind) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs-report.toml");
    let mut c = ExperimentConfig::from_file(&path).unwrap();
    c.kind = Some(kind);
    c.out_dir = Some(out.to_path_buf());
    c
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            if p.file_name().unwrap() != "checkpoints" {
                out.extend(files(&p));
            }
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn report_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let record = run_experiment(&blobs(dir.path(), ExperimentKind::Report)).unwrap();
    let out = dir.path();
    for name in [
        "config.toml",
        "train_metrics.csv",
        "pairs.csv",
        "summary_dense.csv",
        "summary_imp.csv",
        "summary_random-prune.csv",
        "summary_random-reinit.csv",
        "throughout.csv",
        "distances.csv",
        "compare.csv",
        "extreme_sparsity.csv",
        "median_rewind.csv",
        "checks.csv",
        "record.json",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    for a in &record.artifacts {
        assert!(out.join(a).is_file(), "{} listed but missing", a.display());
    }

    let dense = fs::read_to_string(out.join("summary_dense.csv")).unwrap();
    assert_eq!(dense.lines().next().unwrap(), SUMMARY_HEADER);
    assert_eq!(dense.lines().count(), 1 + 3);
    // two rewind steps times two levels
    let imp = fs::read_to_string(out.join("summary_imp.csv")).unwrap();
    assert_eq!(imp.lines().count(), 1 + 4);

    // 2 inits, 3 pairs each, for 3 dense + 12 sparse groups
    let curves = fs::read_dir(out.join("curves")).unwrap().count();
    assert_eq!(curves, 2 * 3 * 15);
    let curve = fs::read_to_string(out.join("curves/dense-k20-init1-11-12.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), CURVE_HEADER);
    assert_eq!(curve.lines().count(), 31);
    let curve = fs::read_to_string(out.join("curves/imp-k0-r4-init2-12-13.csv")).unwrap();
    assert!(curve.lines().nth(1).unwrap().contains(",test,2,12,13,0,"));

    // at k = T copies have nothing left to train, so the barrier is zero
    let last = record.report("dense", 200, "").unwrap();
    assert_eq!(last.mean_instability, 0.0);
    assert!(last.stable);

    assert!(record.full_accuracy > 0.8, "{}", record.full_accuracy);
    assert!(record.extreme_sparsity.is_some());
    assert!(!record.checks.is_empty());
    assert!(record.checks_passed(), "{:?}", record.checks);
    assert_eq!(record.median_rewind.first().map(|m| m.density), Some(1.0));
    let imp_r4 = record.report("imp", 0, "r4").unwrap();
    assert!((imp_r4.density - 0.8f64.powi(4)).abs() < 0.02, "{}", imp_r4.density);
    assert!(matches!(record.extreme_sparsity, Some(ExtremeSparsity::Matching { .. }) | Some(ExtremeSparsity::None)));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_caches() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_experiment(&blobs(a.path(), ExperimentKind::Sweep)).unwrap();
    let second = run_experiment(&blobs(b.path(), ExperimentKind::Sweep)).unwrap();
    // a third run reuses the first run's cache
    let c = tempfile::tempdir().unwrap();
    let mut cached = blobs(c.path(), ExperimentKind::Sweep);
    cached.checkpoint_dir = Some(a.path().join("checkpoints"));
    let third = run_experiment(&cached).unwrap();
    assert!(third.runs.iter().all(|r| r.cached));
    assert!(first.runs.iter().any(|r| !r.cached));

    let rel = |root: &Path| -> Vec<PathBuf> { files(root).into_iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect() };
    let names = rel(a.path());
    assert_eq!(names, rel(b.path()));
    assert_eq!(names, rel(c.path()));
    for name in names.iter().filter(|n| n.extension().is_some_and(|e| e == "csv")) {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{}", name.display());
        assert_eq!(x, fs::read(c.path().join(name)).unwrap(), "{}", name.display());
    }
    assert_eq!(first.reports, second.reports);
    assert_eq!(first.config_hash, third.config_hash);
}

#[test]
fn train_only_produces_base_networks() {
    let dir = tempfile::tempdir().unwrap();
    let record = run_experiment(&blobs(dir.path(), ExperimentKind::Train)).unwrap();
    assert!(record.reports.is_empty());
    assert_eq!(record.runs.len(), 2);
    assert!(record.runs.iter().all(|r| r.role == "full"));
    assert!(!dir.path().join("pairs.csv").exists());
}

#[test]
fn missing_mnist_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::from_toml_str(&fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lenet-instability.toml")).unwrap()).unwrap();
    c.data = lmc::runner::DataSource::Mnist { dir: dir.path().join("nowhere") };
    c.out_dir = Some(dir.path().join("out"));
    assert!(matches!(run_experiment(&c), Err(lmc::Error::Io { .. })));
}
