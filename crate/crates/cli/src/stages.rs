//! Pipeline stages shared by the subcommands and `pipeline`.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use adseg_core::clustering::{fit_points, validate_points, Assignment, ClusterModel, KMeansParams, ValidationReport};
use adseg_core::features::{build_profiles, AppCatalog, ProfileRow, ProfileTable};
use adseg_core::ingest::{read_log, AdvertRegistry, FirstOccurrenceStore, IngestStats, LogFormat, ParseOptions};
use adseg_core::metrics::{build_matrix, index_table, IndexTable};
use adseg_core::mining::{
    build_baskets, classifier_for, mine_rules, AdvertFilter, BasketBuild, Class4From, MiningParams, Rule,
};
use anyhow::{Context, Result};
use rayon::prelude::*;

/// Parses every log (in parallel, one store per file) and merges the
/// stores. `-` reads standard input.
pub fn ingest(
    paths: &[PathBuf],
    format: LogFormat,
    opts: &ParseOptions,
) -> Result<(FirstOccurrenceStore, IngestStats)> {
    let parts: Vec<Result<(FirstOccurrenceStore, IngestStats)>> = paths
        .par_iter()
        .map(|path| {
            let mut store = FirstOccurrenceStore::new();
            let input: Box<dyn Read> = if path == Path::new("-") {
                Box::new(io::stdin())
            } else {
                Box::new(File::open(path).with_context(|| format!("opening {}", path.display()))?)
            };
            let stats = read_log(BufReader::with_capacity(1 << 16, input), format, opts, |r| store.insert(r))
                .with_context(|| format!("{}", path.display()))?;
            Ok((store, stats))
        })
        .collect();
    let mut store = FirstOccurrenceStore::new();
    let mut stats = IngestStats::default();
    for part in parts {
        let (s, st) = part?;
        if store.is_empty() {
            store = s;
        } else {
            store.merge(&s);
        }
        stats.absorb(&st);
    }
    Ok((store, stats))
}

pub fn profile(store: &FirstOccurrenceStore, catalog: &AppCatalog) -> Result<ProfileTable> {
    Ok(build_profiles(store, catalog)?)
}

pub struct Clustering {
    pub model: ClusterModel,
    pub report: ValidationReport,
    pub assignment: Assignment,
    pub sizes: Vec<usize>,
    pub fit_sample: Option<usize>,
}

/// Fits k-means on every row, or on an evenly spaced sample of
/// `fit_sample` rows; every row is then labelled by its nearest centroid.
pub fn cluster(rows: &[ProfileRow], params: &KMeansParams, fit_sample: Option<usize>) -> Result<Clustering> {
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.z.clone()).collect();
    let users: Vec<String> = rows.iter().map(|r| r.user.clone()).collect();
    let sample = fit_sample.filter(|&s| s < rows.len());
    let (mut model, report) = match sample {
        None => fit_points(&points, users, params)?,
        Some(s) => {
            let step = rows.len() as f64 / s as f64;
            let picks: Vec<usize> = (0..s).map(|i| (i as f64 * step) as usize).collect();
            let sub: Vec<Vec<f64>> = picks.iter().map(|&i| points[i].clone()).collect();
            let sub_users = picks.iter().map(|&i| rows[i].user.clone()).collect();
            let (mut model, _) = fit_points(&sub, sub_users, params)?;
            model.labels = points.iter().map(|p| model.assign(p)).collect();
            model.users = users;
            let report = validate_points(&model, &points);
            (model, report)
        }
    };
    model.users.shrink_to_fit();
    let assignment = model.assignment();
    let sizes = model.sizes();
    Ok(Clustering { model, report, assignment, sizes, fit_sample: sample })
}

pub fn index(store: &FirstOccurrenceStore, assignment: &Assignment, registry: &AdvertRegistry) -> Result<IndexTable> {
    let matrix = build_matrix(store, registry)?;
    let gaps = matrix.coverage_gaps();
    if !gaps.is_empty() {
        log::info!("{} adverts have funnel stages with no events", gaps.len());
    }
    Ok(index_table(&matrix, assignment))
}

pub struct Mined {
    pub baskets: BasketBuild,
    pub rules: Vec<Rule>,
}

pub fn mine(
    store: &FirstOccurrenceStore,
    assignment: &Assignment,
    registry: &AdvertRegistry,
    filter: &AdvertFilter,
    params: &MiningParams,
    class4_from: Class4From,
) -> Result<Mined> {
    let classifier = classifier_for(store, assignment, class4_from);
    log::info!("app-count classes from mean {:.3}, sd {:.3}", classifier.mean, classifier.sd);
    let baskets = build_baskets(store, assignment, registry, filter, &classifier)?;
    if baskets.skipped_unclustered > 0 {
        log::warn!("{} impressed pairs skipped: user has no cluster", baskets.skipped_unclustered);
    }
    let rules = mine_rules(&baskets.db, params)?;
    Ok(Mined { baskets, rules })
}
