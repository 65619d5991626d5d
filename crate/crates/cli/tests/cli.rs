use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxelforge::analysis::{read_regression_csv, read_results_csv, write_results_csv, EvalRecord};
use voxelforge::controller::{count_flops, Checkpoint};
use voxelforge::mapelites::Archive;
use voxelforge::morphometrics::{MorphoMetrics, SymmetryAxis};
use voxelforge::tasks::TaskKind;
use voxelforge::Genome;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxelforge"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("VOXELFORGE_OUT")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("spawn voxelforge")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

/// Archive with a 2x2 all-actuator body and a 3x1 actuator-rigid-actuator bar.
fn two_genome_archive(path: &Path) {
    let mut a = Archive::new(3, SymmetryAxis::Vertical);
    let (b1, placed1) = a.place_if_empty(Genome::from_codes(2, 2, &[3, 4, 4, 3]), 0, None);
    let (b2, placed2) = a.place_if_empty(Genome::from_codes(3, 1, &[3, 1, 4]), 0, None);
    assert!(placed1 && placed2 && b1 != b2);
    fs::write(path, a.to_json().unwrap()).unwrap();
}

const FAST_PPO: &[&str] = &["--timesteps", "10000", "--eval-interval", "5000", "--steps-per-update", "1000", "--hidden", "16"];

#[test]
fn generate_is_deterministic_and_records_default_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["generate", "--init-pop", "30", "--iterations", "200"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    for f in ["archive.json", "fill_curve.csv", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let m = manifest(a.path());
    assert_eq!(m["master_seed"], 0);
    assert_eq!(m["stages"]["generate"]["archive"], "archive.json");
    assert_eq!(m["config"]["mapelites"]["iterations"], 200);
}

#[test]
fn generate_single_initial_genome() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--seed", "3", "generate", "--iterations", "0", "--init-pop", "1"]);
    let a = Archive::from_json(&fs::read_to_string(d.path().join("archive.json")).unwrap()).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(manifest(d.path())["master_seed"], 3);
}

#[test]
fn grid_flag_sets_genome_size() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--grid", "3x4", "generate", "--iterations", "10", "--init-pop", "10"]);
    let a = Archive::from_json(&fs::read_to_string(d.path().join("archive.json")).unwrap()).unwrap();
    assert!(a.entries().all(|e| e.genome.width() == 3 && e.genome.height() == 4));
}

#[test]
fn train_resume_then_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let archive = root.join("input-archive.json");
    two_genome_archive(&archive);
    let mut args = vec!["train", "--archive", archive.to_str().unwrap()];
    args.extend_from_slice(FAST_PPO);
    ok(root, &args);

    let policies: Vec<PathBuf> = sorted_files(&root.join("policies/walker"));
    let curves = sorted_files(&root.join("curves/walker"));
    assert_eq!((policies.len(), curves.len()), (2, 2));
    let before: Vec<Vec<u8>> = policies.iter().map(|p| fs::read(p).unwrap()).collect();
    let kept_mtime = fs::metadata(&policies[1]).unwrap().modified().unwrap();

    fs::remove_file(&policies[0]).unwrap();
    let o = ok(root, &args);
    let log = String::from_utf8_lossy(&o.stderr);
    assert_eq!(log.matches("skipped").count(), 1, "{log}");
    assert_eq!(fs::read(&policies[0]).unwrap(), before[0], "retrained checkpoint differs");
    assert_eq!(fs::metadata(&policies[1]).unwrap().modified().unwrap(), kept_mtime);

    ok(root, &["evaluate"]);
    let results = fs::read(root.join("results.csv")).unwrap();
    let records = read_results_csv(results.as_slice()).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.windows(2).all(|w| w[0].genome_id <= w[1].genome_id));
    for r in &records {
        let ck: Checkpoint =
            serde_json::from_str(&fs::read_to_string(root.join(format!("policies/walker/{}.json", r.genome_id))).unwrap())
                .unwrap();
        assert_eq!(r.flops, count_flops(&ck.layer_sizes).total);
        assert_eq!(ck.layer_sizes[1], 16);
    }
    ok(root, &["evaluate"]);
    assert_eq!(fs::read(root.join("results.csv")).unwrap(), results, "re-evaluation changed results");

    // a missing checkpoint becomes a failure row, not an abort
    fs::remove_file(&policies[0]).unwrap();
    ok(root, &["evaluate"]);
    let records = read_results_csv(fs::File::open(root.join("results.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), 1);
    let failures = fs::read_to_string(root.join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 2, "{failures}");
    assert!(failures.contains(",evaluate,failed,"));
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn paper_scale_widens_hidden_layers() {
    let d = tempfile::tempdir().unwrap();
    let archive = d.path().join("a.json");
    two_genome_archive(&archive);
    let a = archive.to_str().unwrap();
    ok(
        d.path(),
        &["--paper-scale", "train", "--archive", a, "--timesteps", "200", "--eval-interval", "100", "--steps-per-update", "100", "--batch-size", "50"],
    );
    let m = manifest(d.path());
    assert_eq!(m["config"]["ppo"]["hidden"], serde_json::json!([256, 256]));
    for p in sorted_files(&d.path().join("policies/walker")) {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(&ck.layer_sizes[1..3], &[256, 256]);
    }
}

fn record(id: &str, task: TaskKind, composite: f64, flops: u64, fitness: f64) -> EvalRecord {
    let metrics = MorphoMetrics {
        heterogeneity: composite,
        connectivity: 2.0 * composite,
        symmetry: 0.5,
        actuator_dispersion: 1.0,
        het_norm: composite,
        conn_norm: composite / 2.0,
        sym_norm: 0.5,
        act_norm: 0.25,
        composite,
    };
    EvalRecord {
        genome_id: id.into(),
        task,
        seed: 1,
        metrics,
        flops,
        fitness,
    }
}

fn write_results(path: &Path, records: &[EvalRecord]) {
    let mut buf = Vec::new();
    write_results_csv(records, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

#[test]
fn analyze_three_tasks_recovers_plane_and_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    let results = d.path().join("fixture.csv");
    let mut records = Vec::new();
    for (t, task) in TaskKind::ALL.into_iter().enumerate() {
        for i in 0..8 {
            let c = 0.1 * i as f64 + 0.05 * t as f64;
            let flops = 1000 + 37 * ((i * i) % 5) as u64 + 11 * i as u64;
            records.push(record(&format!("g{i}"), task, c, flops, 2.0 + 3.0 * c - flops as f64));
        }
    }
    write_results(&results, &records);
    let args = ["analyze", "--results", results.to_str().unwrap(), "--raw-flops"];
    ok(d.path(), &args);
    let report = d.path().join("report");
    let fits = read_regression_csv(fs::File::open(report.join("regression.csv")).unwrap()).unwrap();
    assert_eq!(fits.len(), 3);
    for (_, f) in &fits {
        assert!((f.beta0 - 2.0).abs() < 1e-8 && (f.beta1 - 3.0).abs() < 1e-8 && (f.beta2 + 1.0).abs() < 1e-8, "{f:?}");
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }
    let snapshot: Vec<(PathBuf, Vec<u8>)> = sorted_files(&report).into_iter().map(|p| (p.clone(), fs::read(&p).unwrap())).collect();
    assert_eq!(snapshot.len(), 2 + 3 + 6);
    ok(d.path(), &args);
    let again: Vec<(PathBuf, Vec<u8>)> = sorted_files(&report).into_iter().map(|p| (p.clone(), fs::read(&p).unwrap())).collect();
    assert_eq!(snapshot, again);
    assert_eq!(manifest(d.path())["stages"]["analyze"]["flops_scale"], "raw");
}

#[test]
fn analyze_small_task_skips_regression_but_keeps_sensitivity() {
    let d = tempfile::tempdir().unwrap();
    let results = d.path().join("fixture.csv");
    write_results(
        &results,
        &[record("a", TaskKind::Walker, 0.2, 100, 1.0), record("b", TaskKind::Walker, 0.4, 200, 2.0)],
    );
    let o = ok(d.path(), &["analyze", "--results", results.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipped"));
    let reg = fs::read_to_string(d.path().join("report/regression.csv")).unwrap();
    assert_eq!(reg.lines().count(), 1);
    let sens = fs::read_to_string(d.path().join("report/sensitivity.csv")).unwrap();
    assert!(sens.lines().any(|l| l.starts_with("walker,")));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    assert_eq!(run(root, &["--help"]).status.code(), Some(0));
    assert_eq!(run(root, &["--version"]).status.code(), Some(0));
    assert_eq!(run(root, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(root, &["--grid", "0x5", "generate"]).status.code(), Some(1));
    assert_eq!(run(root, &["--task", "swimmer", "generate"]).status.code(), Some(1));
    assert_eq!(run(root, &["generate", "--bins", "0"]).status.code(), Some(1));
    // no archive yet
    assert_eq!(run(root, &["train"]).status.code(), Some(1));

    let corrupt = root.join("corrupt.json");
    fs::write(&corrupt, "{\"bins_per_metric\": 3, \"entries\": [").unwrap();
    assert_eq!(run(root, &["train", "--archive", corrupt.to_str().unwrap()]).status.code(), Some(2));
    let missing = root.join("missing.json");
    assert_eq!(run(root, &["train", "--archive", missing.to_str().unwrap()]).status.code(), Some(2));

    let bad = root.join("bad.csv");
    fs::write(&bad, "genome_id,task\nx,walker\n").unwrap();
    assert_eq!(run(root, &["analyze", "--results", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn out_defaults_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let target = d.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_voxelforge"))
        .args(["generate", "--iterations", "0", "--init-pop", "1"])
        .env("VOXELFORGE_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("archive.json").exists());
}
