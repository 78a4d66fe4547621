//! `adseg pipeline` run configuration and orchestration.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adseg_core::clustering::KMeansParams;
use adseg_core::features::{default_categories, parse_category_list, AppCatalog};
use adseg_core::ingest::{LogFormat, ParseOptions, Stage, StudyWindow};
use adseg_core::mining::{select_rule_set, AdvertFilter, Class4From, MiningError, MiningParams};
use adseg_core::synth::{generate, SynthSpec};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{self, write_json, ModelFile};
use crate::report::{write_report, SelectionOutcome};
use crate::{stages, UsageError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Log files; relative paths resolve against the config file.
    #[serde(default)]
    pub logs: Vec<PathBuf>,
    #[serde(default = "default_format")]
    pub format: LogFormat,
    pub registry: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    #[serde(default)]
    pub allow_any_k: bool,
    /// Generate the inputs from this spec instead of reading logs.
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub window: Option<StudyWindow>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub fit_sample: Option<usize>,
    #[serde(default = "default_genre")]
    pub genre: String,
    #[serde(default = "default_left_support")]
    pub min_left_support: f64,
    #[serde(default = "default_lift")]
    pub lift: f64,
    #[serde(default = "default_max_antecedent")]
    pub max_antecedent: usize,
    #[serde(default)]
    pub class4_from: Class4From,
    #[serde(default = "default_coverage")]
    pub coverage: f64,
}

fn default_format() -> LogFormat {
    LogFormat::Jsonl
}
fn default_k() -> usize {
    10
}
fn default_restarts() -> usize {
    10
}
fn default_max_iter() -> usize {
    300
}
fn default_tol() -> f64 {
    1e-8
}
fn default_genre() -> String {
    "all".into()
}
fn default_left_support() -> f64 {
    1e-5
}
fn default_lift() -> f64 {
    1.5
}
fn default_max_antecedent() -> usize {
    3
}
fn default_coverage() -> f64 {
    0.5
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(format!("config: {m}")));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.min_left_support > 0.0 && self.min_left_support <= 1.0) {
            return bad(format!("min_left_support {} outside (0, 1]", self.min_left_support));
        }
        if !(self.lift >= 0.0 && self.lift.is_finite()) {
            return bad(format!("lift {} must be >= 0", self.lift));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return bad(format!("coverage {} outside [0, 1]", self.coverage));
        }
        if self.max_antecedent == 0 {
            return bad("max_antecedent must be >= 1".into());
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return bad("restarts and max_iter must be >= 1".into());
        }
        if self.genre.parse::<AdvertFilter>().is_err() {
            return bad(format!("genre {:?} is not finance, lifestyle, entertainment or all", self.genre));
        }
        match (&self.synth, self.logs.is_empty()) {
            (Some(_), false) => return bad("give either logs or synth, not both".into()),
            (None, true) => return bad("no logs and no synth spec".into()),
            (None, false) if self.registry.is_none() || self.catalog.is_none() => {
                return bad("registry and catalog are required with logs".into())
            }
            _ => {}
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Runs every stage and writes all artifacts into `out`. Returns the
/// summary that is also written to `summary.json`.
pub fn run_pipeline(
    cfg: &RunConfig,
    base: &Path,
    out: &Path,
    seed_flag: Option<u64>,
    lenient_flag: bool,
) -> Result<serde_json::Value> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seed = seed_flag.or(cfg.seed).or(cfg.synth.as_ref().map(|s| s.seed)).unwrap_or(0);
    let lenient = lenient_flag || cfg.lenient;
    let t0 = Instant::now();

    let (logs, registry_path, catalog_path, categories_path) = match &cfg.synth {
        Some(spec) => {
            let mut spec = spec.clone();
            if let Some(s) = seed_flag {
                spec.seed = s;
            }
            let dir = out.join("synth");
            let syn = generate(&spec).context("synth")?;
            syn.write_to_dir(&dir).context("synth")?;
            log::info!("synth: {} users, {} events", spec.n_users, syn.event_count());
            (
                vec![dir.join("logs.jsonl")],
                dir.join("registry.tsv"),
                dir.join("catalog.tsv"),
                Some(dir.join("categories.txt")),
            )
        }
        None => (
            cfg.logs.iter().map(|p| resolve(base, p)).collect(),
            resolve(base, cfg.registry.as_ref().expect("validated")),
            resolve(base, cfg.catalog.as_ref().expect("validated")),
            cfg.categories.as_ref().map(|p| resolve(base, p)),
        ),
    };
    let format = if cfg.synth.is_some() { LogFormat::Jsonl } else { cfg.format };

    let opts = ParseOptions { lenient, window: cfg.window };
    let (store, ingest_stats) = stages::ingest(&logs, format, &opts).context("ingest")?;
    let store_path = out.join("store.jsonl");
    store.write_to(BufWriter::new(artifacts::create(&store_path)?)).context("ingest")?;
    if ingest_stats.skipped > 0 {
        log::warn!("{} malformed lines skipped", ingest_stats.skipped);
    }
    let funnel = store.funnel_report();
    log::info!("ingest: {} records, {} entries ({:?})", ingest_stats.records, store.len(), t0.elapsed());

    let registry = artifacts::read_registry(&registry_path).context("ingest")?;
    let categories = match &categories_path {
        Some(p) => parse_category_list(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => default_categories(),
    };
    let catalog_text =
        fs::read_to_string(&catalog_path).with_context(|| format!("reading {}", catalog_path.display()))?;
    let catalog = AppCatalog::parse(&catalog_text, &categories, cfg.allow_any_k).context("profile")?;
    let profiles = stages::profile(&store, &catalog).context("profile")?;
    let profiles_path = out.join("profiles.jsonl");
    adseg_core::features::write_profiles(&profiles.rows, BufWriter::new(artifacts::create(&profiles_path)?))?;
    write_json(&artifacts::meta_path(&profiles_path), &profiles.meta)?;
    log::info!("profile: {} users ({:?})", profiles.rows.len(), t0.elapsed());

    let params = KMeansParams { k: cfg.k, seed, restarts: cfg.restarts, max_iter: cfg.max_iter, tol: cfg.tol };
    let clustering = stages::cluster(&profiles.rows, &params, cfg.fit_sample).context("cluster")?;
    let model_path = out.join("model.json");
    let assignments_path = artifacts::default_assignments_path(&model_path);
    let model_file = ModelFile::new(
        &clustering.model,
        &clustering.report,
        profiles.meta.categories.clone(),
        profiles.rows.len(),
        clustering.sizes.clone(),
        clustering.fit_sample,
        assignments_path.file_name().unwrap().to_string_lossy().into_owned(),
    );
    model_file.write(&model_path)?;
    clustering.assignment.write_jsonl(BufWriter::new(artifacts::create(&assignments_path)?))?;
    log::info!("cluster: wcss {:.3} ({:?})", clustering.report.wcss, t0.elapsed());

    let index = stages::index(&store, &clustering.assignment, &registry).context("index")?;
    index.write_csv(artifacts::create(&out.join("index.csv"))?).context("index")?;

    let filter: AdvertFilter = cfg.genre.parse().map_err(|e: String| UsageError(e))?;
    let mining_params = MiningParams {
        min_left_support: cfg.min_left_support,
        lift_floor: cfg.lift,
        max_antecedent: cfg.max_antecedent,
        ..Default::default()
    };
    let mined = match stages::mine(&store, &clustering.assignment, &registry, &filter, &mining_params, cfg.class4_from)
    {
        Ok(m) => m,
        Err(e) => return Err(e.context("mine")),
    };
    adseg_core::mining::write_rules_csv(&mined.rules, artifacts::create(&out.join("rules.csv"))?).context("mine")?;
    mined.baskets.db.write_tsv(BufWriter::new(artifacts::create(&out.join("baskets.tsv"))?))?;
    log::info!("mine: {} baskets, {} rules ({:?})", mined.baskets.db.len(), mined.rules.len(), t0.elapsed());

    let selection = match select_rule_set(&mined.rules, &mined.baskets.db, cfg.coverage) {
        Ok(s) => SelectionOutcome::Selected(s),
        Err(MiningError::NoRules) => SelectionOutcome::NoRules,
        Err(MiningError::NoQualifyingSet { mean_lift }) => SelectionOutcome::NoQualifyingSet { mean_lift },
        Err(e) => return Err(anyhow::Error::from(e).context("select")),
    };
    write_json(&out.join("selection.json"), &selection)?;
    write_report(&out.join("report"), &model_file, &index, &mined.rules, Some(&selection)).context("report")?;
    fs::copy(out.join("report").join("report.md"), out.join("report.md"))?;

    let defined = index.cells.iter().filter(|c| c.index.is_some()).count();
    let summary = json!({
        "seed": seed,
        "ingest": {
            "records": ingest_stats.records,
            "skipped": ingest_stats.skipped,
            "users": store.user_count(),
            "entries": store.len(),
            "funnel_violations": funnel.violations.len(),
        },
        "profile": {
            "users": profiles.rows.len(),
            "excluded": profiles.meta.excluded_users.len(),
            "constant_coordinates": profiles.meta.constant_coordinates,
        },
        "cluster": {
            "k": cfg.k,
            "sizes": clustering.sizes,
            "wcss": clustering.report.wcss,
            "bcss": clustering.report.bcss,
            "tss": clustering.report.tss,
            "iterations": clustering.report.iterations,
            "converged": clustering.report.converged,
            "fit_sample": clustering.fit_sample,
        },
        "index": { "cells": index.cells.len(), "defined": defined },
        "mine": {
            "genre": cfg.genre,
            "baskets": mined.baskets.db.len(),
            "rules": mined.rules.len(),
            "consequents": mining_params.consequents.iter().map(|s: &Stage| s.item_name()).collect::<Vec<_>>(),
        },
        "selection": selection,
        "artifacts": [
            "store.jsonl", "profiles.jsonl", "profiles.jsonl.meta.json", "model.json",
            "model.assignments.jsonl", "index.csv", "rules.csv", "baskets.tsv", "selection.json",
            "report.md", "report/centroids.csv", "report/index.csv", "report/rules.csv", "summary.json",
        ],
    });
    write_json(&out.join("summary.json"), &summary)?;
    log::info!("pipeline done in {:?}", t0.elapsed());
    Ok(summary)
}
