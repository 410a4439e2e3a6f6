//! Run directories: the per-directory lock, the manifest, and dataset
//! resolution.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use hytransformer::store::{dataset_checksum, load_dataset, DatasetFormat, KnowledgeGraph};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const DATA_ROOT_ENV: &str = "HYT_DATA_ROOT";
pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Resolves `--data`: absolute or existing paths are used as given, other
/// relative paths are looked up under the data root.
pub fn resolve_data(arg: Option<&Path>) -> Result<PathBuf> {
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    let path = match (arg, root) {
        (Some(p), _) if p.is_absolute() || p.exists() => p.to_owned(),
        (Some(p), Some(root)) => root.join(p),
        (Some(p), None) => p.to_owned(),
        (None, Some(root)) => root,
        (None, None) => bail!("no dataset given: pass --data or set {DATA_ROOT_ENV}"),
    };
    if !path.exists() {
        bail!("dataset path {} does not exist", path.display());
    }
    Ok(path)
}

pub struct Dataset {
    pub path: PathBuf,
    pub format: DatasetFormat,
    pub graph: KnowledgeGraph,
}

pub fn open_dataset(arg: Option<&Path>, format: Option<&str>) -> Result<Dataset> {
    let path = resolve_data(arg)?;
    let format = match format {
        Some(f) => f.parse()?,
        None if path.is_dir() => DatasetFormat::detect(&path)
            .ok_or_else(|| anyhow!("{} holds no train.jsonl or train.tsv", path.display()))?,
        None if path.extension().is_some_and(|e| e == "tsv") => DatasetFormat::TsvFlat,
        None => DatasetFormat::JsonlStatements,
    };
    let graph = load_dataset(&path, format)?;
    Ok(Dataset {
        path,
        format,
        graph,
    })
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
    Diverged,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub dataset: PathBuf,
    pub dataset_format: String,
    pub dataset_checksum: String,
    pub code_version: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub status: RunStatus,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, data: &Dataset) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            config: config.clone(),
            seed: config.train.seed,
            dataset: data.path.clone(),
            dataset_format: data.format.to_string(),
            dataset_checksum: dataset_checksum(&data.path)?,
            code_version: code_version(),
            started_at: unix_now(),
            finished_at: None,
            status: RunStatus::Running,
            outputs: BTreeMap::new(),
            error: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut f = File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        drop(f);
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(&mut self, dir: &Path, status: RunStatus, error: Option<String>) -> Result<()> {
        self.status = status;
        self.error = error;
        self.finished_at = Some(unix_now());
        self.write(dir)
    }
}
