//! Output tree layout, atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST: &str = "manifest.json";
pub const ARCHIVE: &str = "archive.json";
pub const FILL_CURVE: &str = "fill_curve.csv";
pub const RESULTS: &str = "results.csv";
pub const FAILURES: &str = "failures.csv";
pub const REPORT_DIR: &str = "report";

/// Writes via a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().context("path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Relative path with forward slashes, for the manifest.
pub fn rel(root: &Path, path: &Path) -> String {
    let p = path.strip_prefix(root).unwrap_or(path);
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn checkpoint_path(root: &Path, task: &str, genome_id: &str) -> PathBuf {
    root.join("policies").join(task).join(format!("{genome_id}.json"))
}

pub fn curve_path(root: &Path, task: &str, genome_id: &str) -> PathBuf {
    root.join("curves").join(task).join(format!("{genome_id}.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`, else null so that
    /// reruns stay byte-identical.
    pub created: Option<u64>,
    /// How stage and item seeds are derived from the master seed.
    pub seed_rule: String,
    /// Config snapshot per section.
    pub config: BTreeMap<String, Value>,
    pub stages: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(master_seed: u64) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            created: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()),
            seed_rule: "seed = splitmix64(fnv1a64(master_seed as 8 LE bytes, then each label \
                        preceded by 0x1f)); labels: [\"mapelites\"] for generation, \
                        [\"train\", genome_id, task] and [\"eval\", genome_id, task] per item, \
                        [\"terrain\", task] for obstacle terrain"
                .to_string(),
            config: BTreeMap::new(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads the manifest in `root`, or starts a new one. A manifest with a
    /// different master seed is replaced.
    pub fn load_or_new(root: &Path, master_seed: u64) -> Result<Self> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Ok(Manifest::new(master_seed));
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(voxelforge::Error::from)
            .with_context(|| format!("parsing {}", path.display()))?;
        if m.master_seed != master_seed {
            return Ok(Manifest::new(master_seed));
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&root.join(MANIFEST), text.as_bytes())
    }

    pub fn set_config<T: Serialize>(&mut self, section: &str, value: &T) -> Result<()> {
        self.config.insert(section.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn set_stage<T: Serialize>(&mut self, stage: &str, value: &T) -> Result<()> {
        self.stages.insert(stage.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn stage<T: for<'de> Deserialize<'de>>(&self, stage: &str) -> Result<Option<T>> {
        match self.stages.get(stage) {
            None => Ok(None),
            Some(v) => Ok(Some(
                serde_json::from_value(v.clone())
                    .map_err(voxelforge::Error::from)
                    .with_context(|| format!("manifest stage `{stage}`"))?,
            )),
        }
    }
}
