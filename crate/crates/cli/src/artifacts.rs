//! On-disk formats owned by the CLI: the model file and the profile
//! metadata sidecar.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adseg_core::clustering::{Assignment, ClusterModel, KMeansParams, ValidationReport};
use adseg_core::features::ProfileMeta;
use adseg_core::ingest::{AdvertRegistry, FirstOccurrenceStore};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT: &str = "adseg-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub n_users: usize,
    pub sizes: Vec<usize>,
    pub wcss: f64,
    pub bcss: f64,
    pub tss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub restart_wcss: Vec<f64>,
    pub wcss_history: Vec<f64>,
    /// Users the centroids were fitted on, when fitting used a sample.
    pub fit_sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub seed: u64,
    pub categories: Vec<String>,
    pub params: KMeansParams,
    pub centroids: Vec<Vec<f64>>,
    pub stats: ModelStats,
    /// Assignments file, relative to the model file.
    pub assignments: String,
}

impl ModelFile {
    pub fn new(
        model: &ClusterModel,
        report: &ValidationReport,
        categories: Vec<String>,
        n_users: usize,
        sizes: Vec<usize>,
        fit_sample: Option<usize>,
        assignments: String,
    ) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            seed: model.params.seed,
            categories,
            params: model.params.clone(),
            centroids: model.centroids.clone(),
            stats: ModelStats {
                n_users,
                sizes,
                wcss: report.wcss,
                bcss: report.bcss,
                tss: report.tss,
                iterations: report.iterations,
                converged: report.converged,
                best_restart: model.trace.restart,
                restart_wcss: model.trace.restart_wcss.clone(),
                wcss_history: model.trace.wcss_history.clone(),
                fit_sample,
            },
            assignments,
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
        let model: ModelFile = serde_json::from_reader(BufReader::new(file))
            .with_context(|| format!("parsing model {}", path.display()))?;
        if model.format != MODEL_FORMAT {
            bail!("{}: unsupported model format {:?}", path.display(), model.format);
        }
        if model.centroids.is_empty() {
            bail!("{}: model has no centroids", path.display());
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn assignments_path(&self, model_path: &Path) -> PathBuf {
        model_path.parent().unwrap_or(Path::new(".")).join(&self.assignments)
    }

    pub fn load_assignment(&self, model_path: &Path, explicit: Option<&Path>) -> Result<Assignment> {
        let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| self.assignments_path(model_path));
        let file = File::open(&path).with_context(|| format!("opening assignments {}", path.display()))?;
        Assignment::read_jsonl(BufReader::new(file), self.k())
            .with_context(|| format!("reading assignments {}", path.display()))
    }
}

/// `model.json` → `model.assignments.jsonl`.
pub fn default_assignments_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    model.with_file_name(format!("{stem}.assignments.jsonl"))
}

/// `profiles.jsonl` → `profiles.jsonl.meta.json`.
pub fn meta_path(profiles: &Path) -> PathBuf {
    let mut name = profiles.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    profiles.with_file_name(name)
}

/// `rules.csv` → `rules.baskets.tsv`.
pub fn default_baskets_path(rules: &Path) -> PathBuf {
    let stem = rules.file_stem().and_then(|s| s.to_str()).unwrap_or("rules");
    rules.with_file_name(format!("{stem}.baskets.tsv"))
}

pub fn read_meta(profiles: &Path) -> Result<Option<ProfileMeta>> {
    let path = meta_path(profiles);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn read_store(path: &Path) -> Result<FirstOccurrenceStore> {
    let file = File::open(path).with_context(|| format!("opening store {}", path.display()))?;
    FirstOccurrenceStore::read_from(BufReader::new(file)).with_context(|| format!("reading store {}", path.display()))
}

pub fn read_registry(path: &Path) -> Result<AdvertRegistry> {
    let text = fs::read_to_string(path).with_context(|| format!("reading registry {}", path.display()))?;
    AdvertRegistry::parse(&text).with_context(|| format!("parsing registry {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_paths() {
        assert_eq!(default_assignments_path(Path::new("out/model.json")), Path::new("out/model.assignments.jsonl"));
        assert_eq!(meta_path(Path::new("a/profiles.jsonl")), Path::new("a/profiles.jsonl.meta.json"));
        assert_eq!(default_baskets_path(Path::new("rules.csv")), Path::new("rules.baskets.tsv"));
    }
}
