use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use voxelforge::analysis::{self, EvalRecord, FlopsScale};
use voxelforge::controller::{self, count_flops, Checkpoint, Policy, PpoConfig};
use voxelforge::genome::Genome;
use voxelforge::mapelites::{self, Archive, BinKey, MapElitesConfig};
use voxelforge::physics::SimConfig;
use voxelforge::seed::derive_seed;
use voxelforge::tasks::{observation_len, run_episode, TaskKind, TaskSpec};

use crate::args::GlobalArgs;
use crate::store::{self, rel, write_atomic, Manifest};

/// Usage problems detected after parsing (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn genome_id(bin: &BinKey) -> String {
    format!("g{}-{}-{}-{}", bin[0], bin[1], bin[2], bin[3])
}

fn sim() -> SimConfig<f64> {
    SimConfig::default()
}

fn task_spec(master: u64, kind: TaskKind, episode_length: usize) -> TaskSpec {
    TaskSpec {
        episode_length,
        terrain_seed: derive_seed(master, &["terrain", kind.cli_name()]),
        ..TaskSpec::new(kind)
    }
}

fn tasks(g: &GlobalArgs) -> Result<Vec<TaskKind>> {
    let mut t = g.task.clone();
    t.sort();
    t.dedup();
    if t.is_empty() {
        return Err(usage("--task needs at least one task"));
    }
    Ok(t)
}

fn pool(workers: u32) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers as usize).build()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateStage {
    pub seed: u64,
    pub archive: String,
    pub fill_curve: String,
    pub occupied_bins: usize,
    pub capacity: usize,
    pub skipped_mutations: usize,
}

pub fn generate(g: &GlobalArgs, cfg: &MapElitesConfig) -> Result<GenerateStage> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let root = &g.out;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let mut manifest = Manifest::load_or_new(root, g.seed)?;
    manifest.set_config("mapelites", cfg)?;
    let seed = g.seed;
    // seeds are recorded before any stochastic work
    manifest.set_stage("generate", &serde_json::json!({ "seed": seed, "status": "running" }))?;
    manifest.save(root)?;

    let out = mapelites::run(cfg, seed)?;
    let archive_path = root.join(store::ARCHIVE);
    let mut json = out.archive.to_json()?;
    json.push('\n');
    write_atomic(&archive_path, json.as_bytes())?;
    let curve_path = root.join(store::FILL_CURVE);
    let mut buf = Vec::new();
    mapelites::write_fill_curve_csv(&out.fill_curve, &mut buf)?;
    write_atomic(&curve_path, &buf)?;

    let stage = GenerateStage {
        seed,
        archive: rel(root, &archive_path),
        fill_curve: rel(root, &curve_path),
        occupied_bins: out.archive.len(),
        capacity: out.archive.capacity(),
        skipped_mutations: out.skipped_mutations,
    };
    manifest.set_stage("generate", &stage)?;
    manifest.save(root)?;
    eprintln!(
        "generate: {} of {} bins occupied ({} mutations skipped)",
        stage.occupied_bins, stage.capacity, stage.skipped_mutations
    );
    Ok(stage)
}

fn load_archive(root: &Path, explicit: Option<&PathBuf>, manifest: &Manifest) -> Result<(Archive, String)> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => {
            let stage: GenerateStage = manifest
                .stage("generate")?
                .ok_or_else(|| usage("no archive: run `generate` first or pass --archive"))?;
            root.join(stage.archive)
        }
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading archive {}", path.display()))?;
    let archive = Archive::from_json(&text).with_context(|| format!("loading archive {}", path.display()))?;
    Ok((archive, rel(root, &path)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainItem {
    pub genome_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub checkpoint: String,
    pub curve: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_fitness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStage {
    pub archive: String,
    pub items: Vec<TrainItem>,
}

fn curve_csv(curve: &[controller::CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in curve {
        w.serialize(p)?;
    }
    Ok(w.into_inner()?)
}

fn read_final_fitness(path: &Path) -> Option<f64> {
    let mut rd = csv::Reader::from_path(path).ok()?;
    rd.deserialize::<controller::CurvePoint>().filter_map(|r| r.ok()).last().map(|p| p.eval_fitness)
}

fn train_one(root: &Path, genome: &Genome, id: &str, spec: &TaskSpec, cfg: &PpoConfig, seed: u64) -> TrainItem {
    let task = spec.kind;
    let ckpt = store::checkpoint_path(root, task.cli_name(), id);
    let curve = store::curve_path(root, task.cli_name(), id);
    let mut item = TrainItem {
        genome_id: id.to_string(),
        task,
        seed,
        checkpoint: rel(root, &ckpt),
        curve: rel(root, &curve),
        status: Status::Ok,
        final_fitness: None,
        message: None,
    };
    if ckpt.exists() && curve.exists() {
        item.final_fitness = read_final_fitness(&curve);
        eprintln!("train: {id} {task}: checkpoint present, skipped");
        return item;
    }
    let result = (|| -> Result<f64> {
        let out = controller::train(genome, spec, &sim(), cfg, seed)?;
        let mut json = serde_json::to_string_pretty(&out.policy.to_checkpoint())?;
        json.push('\n');
        write_atomic(&curve, &curve_csv(&out.curve)?)?;
        // checkpoint last: its presence marks the item complete
        write_atomic(&ckpt, json.as_bytes())?;
        Ok(out.final_fitness())
    })();
    match result {
        Ok(f) => {
            item.final_fitness = Some(f);
            eprintln!("train: {id} {task}: final fitness {f:.4}");
        }
        Err(e) => {
            item.status = Status::Failed;
            item.message = Some(format!("{e:#}"));
            eprintln!("train: {id} {task}: FAILED: {e:#}");
        }
    }
    item
}

pub fn train(g: &GlobalArgs, archive_arg: Option<&PathBuf>, cfg: &PpoConfig, episode_length: usize) -> Result<TrainStage> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if episode_length == 0 {
        return Err(usage("--episode-length must be >= 1"));
    }
    let root = &g.out;
    fs::create_dir_all(root)?;
    let mut manifest = Manifest::load_or_new(root, g.seed)?;
    let (archive, archive_rel) = load_archive(root, archive_arg, &manifest)?;
    let tasks = tasks(g)?;
    manifest.set_config("ppo", cfg)?;
    manifest.set_config("sim", &sim())?;
    let specs: Vec<TaskSpec> = tasks.iter().map(|&t| task_spec(g.seed, t, episode_length)).collect();
    manifest.set_config("tasks", &specs)?;

    let work: Vec<(Genome, String, TaskSpec, u64)> = specs
        .iter()
        .flat_map(|spec| {
            archive.entries().map(move |e| {
                let id = genome_id(&e.bin);
                let seed = derive_seed(g.seed, &["train", &id, spec.kind.cli_name()]);
                (e.genome.clone(), id, spec.clone(), seed)
            })
        })
        .collect();
    let planned = TrainStage {
        archive: archive_rel.clone(),
        items: work
            .iter()
            .map(|(_, id, spec, seed)| TrainItem {
                genome_id: id.clone(),
                task: spec.kind,
                seed: *seed,
                checkpoint: rel(root, &store::checkpoint_path(root, spec.kind.cli_name(), id)),
                curve: rel(root, &store::curve_path(root, spec.kind.cli_name(), id)),
                status: Status::Failed,
                final_fitness: None,
                message: Some("not started".into()),
            })
            .collect(),
    };
    manifest.set_stage("train", &planned)?;
    manifest.save(root)?;

    let items: Vec<TrainItem> = pool(g.workers)?.install(|| {
        work.par_iter()
            .map(|(genome, id, spec, seed)| train_one(root, genome, id, spec, cfg, *seed))
            .collect()
    });
    let stage = TrainStage {
        archive: archive_rel,
        items,
    };
    manifest.set_stage("train", &stage)?;
    manifest.save(root)?;
    let failed = stage.items.iter().filter(|i| i.status == Status::Failed).count();
    eprintln!("train: {} trained, {failed} failed", stage.items.len() - failed);
    Ok(stage)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub genome_id: String,
    pub task: TaskKind,
    pub eval_seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateStage {
    pub results: String,
    pub failures: String,
    pub items: Vec<EvalItem>,
}

#[derive(Debug, Serialize)]
struct FailureRow<'a> {
    genome_id: &'a str,
    task: &'a str,
    seed: u64,
    stage: &'a str,
    status: Status,
    message: &'a str,
}

pub const FAILURES_HEADER: &str = "genome_id,task,seed,stage,status,message";

fn evaluate_one(root: &Path, archive: &Archive, item: &TrainItem, spec: &TaskSpec, eval_seed: u64) -> Result<EvalRecord> {
    if item.status != Status::Ok {
        bail!("training failed: {}", item.message.as_deref().unwrap_or("unknown error"));
    }
    let entry = archive
        .entries()
        .find(|e| genome_id(&e.bin) == item.genome_id)
        .ok_or_else(|| voxelforge::Error::Inconsistent(format!("genome {} not in archive", item.genome_id)))?;
    let path = root.join(&item.checkpoint);
    let text = fs::read_to_string(&path).with_context(|| format!("missing checkpoint {}", path.display()))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(voxelforge::Error::from)?;
    let policy = Policy::<f64>::from_checkpoint(&ckpt)?;
    let expected = [observation_len(&entry.genome, spec.kind), entry.genome.actuator_count()];
    if [policy.obs_dim(), policy.act_dim()] != expected {
        return Err(voxelforge::Error::Inconsistent(format!(
            "checkpoint sizes {:?} do not fit genome {} on {}",
            policy.layer_sizes, item.genome_id, spec.kind
        ))
        .into());
    }
    let flops = count_flops(&ckpt.layer_sizes);
    if flops != ckpt.flops {
        return Err(voxelforge::Error::Inconsistent(format!("stored FLOPs report of {} is stale", item.checkpoint)).into());
    }
    let r = run_episode(&entry.genome, &policy, spec, &sim(), eval_seed)?;
    if r.truncated {
        return Err(voxelforge::Error::NumericalBlowup(format!("evaluation episode truncated after {} steps", r.steps_run)).into());
    }
    Ok(EvalRecord {
        genome_id: item.genome_id.clone(),
        task: spec.kind,
        seed: item.seed,
        metrics: entry.metrics,
        flops: flops.total,
        fitness: r.fitness,
    })
}

pub fn evaluate(g: &GlobalArgs, archive_arg: Option<&PathBuf>, episode_length: usize) -> Result<EvaluateStage> {
    if episode_length == 0 {
        return Err(usage("--episode-length must be >= 1"));
    }
    let root = &g.out;
    let mut manifest = Manifest::load_or_new(root, g.seed)?;
    let train: TrainStage = manifest
        .stage("train")?
        .ok_or_else(|| usage("no trained controllers: run `train` first"))?;
    let archive_arg = archive_arg.cloned().or_else(|| Some(root.join(&train.archive)));
    let (archive, _) = load_archive(root, archive_arg.as_ref(), &manifest)?;
    let tasks = tasks(g)?;

    let mut items: Vec<&TrainItem> = train.items.iter().filter(|i| tasks.contains(&i.task)).collect();
    items.sort_by(|a, b| (&a.genome_id, a.task).cmp(&(&b.genome_id, b.task)));
    let outcomes: Vec<(EvalItem, Result<EvalRecord>)> = pool(g.workers)?.install(|| {
        items
            .par_iter()
            .map(|item| {
                let spec = task_spec(g.seed, item.task, episode_length);
                let eval_seed = derive_seed(g.seed, &["eval", &item.genome_id, item.task.cli_name()]);
                let r = evaluate_one(root, &archive, item, &spec, eval_seed);
                let eval = EvalItem {
                    genome_id: item.genome_id.clone(),
                    task: item.task,
                    eval_seed,
                    status: if r.is_ok() { Status::Ok } else { Status::Failed },
                    message: r.as_ref().err().map(|e| format!("{e:#}")),
                };
                (eval, r)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    failures.write_record(FAILURES_HEADER.split(','))?;
    let mut failures_rows = 0;
    for ((eval, r), item) in outcomes.iter().zip(&items) {
        match r {
            Ok(rec) => records.push(rec.clone()),
            Err(e) => {
                failures_rows += 1;
                let stage = if item.status == Status::Ok { "evaluate" } else { "train" };
                failures.serialize(FailureRow {
                    genome_id: &eval.genome_id,
                    task: eval.task.cli_name(),
                    seed: item.seed,
                    stage,
                    status: Status::Failed,
                    message: &format!("{e:#}"),
                })?;
                eprintln!("evaluate: {} {}: FAILED: {e:#}", eval.genome_id, eval.task);
            }
        }
    }
    let results_path = root.join(store::RESULTS);
    let mut buf = Vec::new();
    analysis::write_results_csv(&records, &mut buf)?;
    write_atomic(&results_path, &buf)?;
    let failures_path = root.join(store::FAILURES);
    write_atomic(&failures_path, &failures.into_inner()?)?;

    let stage = EvaluateStage {
        results: rel(root, &results_path),
        failures: rel(root, &failures_path),
        items: outcomes.into_iter().map(|(e, _)| e).collect(),
    };
    manifest.set_stage("evaluate", &stage)?;
    manifest.save(root)?;
    eprintln!("evaluate: {} rows, {failures_rows} failed", records.len());
    Ok(stage)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeStage {
    pub results: String,
    pub flops_scale: FlopsScale,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_regressions: Vec<String>,
}

pub fn analyze(g: &GlobalArgs, results_arg: Option<&PathBuf>, raw_flops: bool, levels: usize) -> Result<AnalyzeStage> {
    if levels == 0 {
        return Err(usage("--levels must be >= 1"));
    }
    let root = &g.out;
    fs::create_dir_all(root)?;
    let mut manifest = Manifest::load_or_new(root, g.seed)?;
    let results_path = match results_arg {
        Some(p) => p.clone(),
        None => {
            let stage: EvaluateStage = manifest
                .stage("evaluate")?
                .ok_or_else(|| usage("no results: run `evaluate` first or pass --results"))?;
            root.join(stage.results)
        }
    };
    let file = fs::File::open(&results_path).with_context(|| format!("opening {}", results_path.display()))?;
    let records = analysis::read_results_csv(file).with_context(|| format!("reading {}", results_path.display()))?;
    let scale = if raw_flops { FlopsScale::Raw } else { FlopsScale::Log10 };
    let report_dir = root.join(store::REPORT_DIR);
    // write into a scratch directory, then move files in atomically
    let scratch = root.join(".report.tmp");
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    let summary = analysis::emit_report(&records, &scratch, scale, levels)?;
    fs::create_dir_all(&report_dir)?;
    let mut files = Vec::new();
    for f in &summary.files {
        let dest = report_dir.join(f.file_name().context("report file name")?);
        fs::rename(f, &dest)?;
        files.push(rel(root, &dest));
    }
    fs::remove_dir_all(&scratch)?;
    for (task, why) in &summary.skipped {
        eprintln!("analyze: regression for {task} skipped: {why}");
    }
    for (task, fit) in &summary.fits {
        eprintln!(
            "analyze: {task}: beta0={:.6} beta1={:.6} beta2={:.6} R2={:.6} (n={})",
            fit.beta0, fit.beta1, fit.beta2, fit.r_squared, fit.n_samples
        );
    }
    let stage = AnalyzeStage {
        results: rel(root, &results_path),
        flops_scale: scale,
        files,
        skipped_regressions: summary.skipped.iter().map(|(t, w)| format!("{t}: {w}")).collect(),
    };
    manifest.set_stage("analyze", &stage)?;
    manifest.save(root)?;
    Ok(stage)
}

pub fn pipeline(g: &GlobalArgs, a: &crate::args::PipelineArgs) -> Result<AnalyzeStage> {
    let ppo = a.ppo.config(g.paper_scale);
    ppo.validate().map_err(|e| usage(e.to_string()))?;
    generate(g, &a.generate.config(g))?;
    train(g, None, &ppo, a.episode.episode_length)?;
    evaluate(g, None, a.episode.episode_length)?;
    analyze(g, None, a.raw_flops, a.levels)
}
