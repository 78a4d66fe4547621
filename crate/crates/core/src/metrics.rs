//! Per-cluster interaction index values.
//!
//! For a cluster K, a set of adverts S and a funnel stage s, the index is
//! the cluster's stage-s rate per impression over S divided by the same
//! rate computed across every clustered user:
//!
//! ```text
//!          Σ_L |K ∩ A_L(s)| / Σ_L |K ∩ A_L(imp)|
//! Ind_K = ---------------------------------------
//!          Σ_L,k |k ∩ A_L(s)| / Σ_L,k |k ∩ A_L(imp)|
//! ```
//!
//! A value of 1 means the cluster behaves like the clustered population.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clustering::Assignment;
use crate::ingest::{AdvertRegistry, FirstOccurrenceStore, Genre, Stage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("advert {0:?} is not in the registry")]
    UnregisteredAdvert(String),
    #[error("cluster {cluster} outside 1..={k}")]
    InvalidCluster { cluster: u32, k: usize },
    #[error("advert set is empty")]
    EmptyAdvertSet,
    #[error("index undefined for cluster {cluster} at {stage}: cluster impressions {cluster_impressions}, global rate {global_rate:?}")]
    UndefinedIndex { cluster: u32, stage: Stage, cluster_impressions: u64, global_rate: Option<f64> },
    #[error("index table line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Users reaching each stage of one advert.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvertReach {
    pub genre: Genre,
    /// Indexed by stage ordinal; slot 0 holds the impressed users.
    pub reach: [BTreeSet<Arc<str>>; 8],
}

impl AdvertReach {
    fn new(genre: Genre) -> Self {
        AdvertReach { genre, reach: Default::default() }
    }

    pub fn users_at(&self, stage: Stage) -> &BTreeSet<Arc<str>> {
        &self.reach[stage.ordinal()]
    }
}

/// Binary reach vectors per advert and stage, built from a deduplicated
/// store. A stage may be recorded without its impression; such users are
/// counted as a coverage gap, not dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionMatrix {
    adverts: BTreeMap<String, AdvertReach>,
}

pub fn build_matrix(
    store: &FirstOccurrenceStore,
    registry: &AdvertRegistry,
) -> Result<InteractionMatrix, MetricsError> {
    let mut adverts: BTreeMap<String, AdvertReach> = BTreeMap::new();
    for (key, _) in store.entries() {
        let reach = match adverts.get_mut(&*key.advert) {
            Some(r) => r,
            None => {
                let genre = registry
                    .genre(&key.advert)
                    .ok_or_else(|| MetricsError::UnregisteredAdvert(key.advert.to_string()))?;
                adverts.entry(key.advert.to_string()).or_insert_with(|| AdvertReach::new(genre))
            }
        };
        reach.reach[key.stage.ordinal()].insert(key.user.clone());
    }
    Ok(InteractionMatrix { adverts })
}

impl InteractionMatrix {
    pub fn advert(&self, advert: &str) -> Option<&AdvertReach> {
        self.adverts.get(advert)
    }

    pub fn adverts(&self) -> impl Iterator<Item = (&str, &AdvertReach)> {
        self.adverts.iter().map(|(a, r)| (a.as_str(), r))
    }

    pub fn adverts_in(&self, genre: Genre) -> Vec<&str> {
        self.adverts().filter(|(_, r)| r.genre == genre).map(|(a, _)| a).collect()
    }

    pub fn merge(&mut self, other: &InteractionMatrix) {
        for (advert, reach) in &other.adverts {
            let mine = self.adverts.entry(advert.clone()).or_insert_with(|| AdvertReach::new(reach.genre));
            for (dst, src) in mine.reach.iter_mut().zip(&reach.reach) {
                dst.extend(src.iter().cloned());
            }
        }
    }

    /// Per advert and stage, the number of users who reached the stage
    /// without a recorded impression.
    pub fn coverage_gaps(&self) -> BTreeMap<String, [usize; 8]> {
        self.adverts
            .iter()
            .map(|(a, r)| {
                let mut gaps = [0usize; 8];
                for (gap, reach) in gaps.iter_mut().zip(&r.reach).skip(1) {
                    *gap = reach.difference(&r.reach[0]).count();
                }
                (a.clone(), gaps)
            })
            .collect()
    }
}

/// Per (advert, stage) event counts split by cluster label.
#[derive(Debug, Clone)]
pub struct ClusterCounts {
    k: usize,
    // advert -> stage ordinal -> cluster index (label - 1)
    counts: HashMap<String, [Vec<u64>; 8]>,
}

impl ClusterCounts {
    pub fn new(matrix: &InteractionMatrix, assignment: &Assignment) -> Self {
        let k = assignment.k();
        let mut counts = HashMap::new();
        for (advert, reach) in matrix.adverts() {
            let per_stage: [Vec<u64>; 8] = std::array::from_fn(|s| {
                let mut c = vec![0u64; k];
                for user in &reach.reach[s] {
                    if let Some(l) = assignment.label(user) {
                        c[l as usize - 1] += 1;
                    }
                }
                c
            });
            counts.insert(advert.to_string(), per_stage);
        }
        ClusterCounts { k, counts }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Events per cluster at `stage`, summed over `adverts`.
    pub fn totals(&self, adverts: &[&str], stage: Stage) -> Vec<u64> {
        let mut out = vec![0u64; self.k];
        for a in adverts {
            if let Some(per_stage) = self.counts.get(*a) {
                for (o, c) in out.iter_mut().zip(&per_stage[stage.ordinal()]) {
                    *o += c;
                }
            }
        }
        out
    }

    pub fn cell(&self, cluster: u32, adverts: &[&str], stage: Stage) -> Result<IndexCell, MetricsError> {
        if cluster == 0 || cluster as usize > self.k {
            return Err(MetricsError::InvalidCluster { cluster, k: self.k });
        }
        if adverts.is_empty() {
            return Err(MetricsError::EmptyAdvertSet);
        }
        let events = self.totals(adverts, stage);
        let impressions = self.totals(adverts, Stage::Impression);
        let ki = cluster as usize - 1;
        let (ce, ci) = (events[ki], impressions[ki]);
        let (ge, gi): (u64, u64) = (events.iter().sum(), impressions.iter().sum());
        let global_rate = (gi > 0).then(|| ge as f64 / gi as f64);
        let index = (ci > 0 && gi > 0 && ge > 0).then(|| (ce as f64 * gi as f64) / (ci as f64 * ge as f64));
        Ok(IndexCell { cluster, genre: None, stage, cluster_events: ce, cluster_impressions: ci, global_rate, index })
    }
}

/// One (cluster, genre, stage) entry of the index table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexCell {
    pub cluster: u32,
    /// `None` when computed for an ad-hoc advert set.
    pub genre: Option<Genre>,
    pub stage: Stage,
    pub cluster_events: u64,
    pub cluster_impressions: u64,
    pub global_rate: Option<f64>,
    /// `None` when the cluster had no impressions or the global rate is 0.
    pub index: Option<f64>,
}

impl IndexCell {
    pub fn cluster_rate(&self) -> Option<f64> {
        (self.cluster_impressions > 0).then(|| self.cluster_events as f64 / self.cluster_impressions as f64)
    }
}

/// Index of one cluster over an advert set at one stage.
pub fn index_value(
    matrix: &InteractionMatrix,
    assignment: &Assignment,
    cluster: u32,
    adverts: &[&str],
    stage: Stage,
) -> Result<f64, MetricsError> {
    let cell = ClusterCounts::new(matrix, assignment).cell(cluster, adverts, stage)?;
    cell.index.ok_or(MetricsError::UndefinedIndex {
        cluster,
        stage,
        cluster_impressions: cell.cluster_impressions,
        global_rate: cell.global_rate,
    })
}

/// Cells for every cluster × genre × post-impression stage, ordered by
/// cluster, then genre, then funnel stage.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexTable {
    pub cells: Vec<IndexCell>,
}

pub fn index_table(matrix: &InteractionMatrix, assignment: &Assignment) -> IndexTable {
    let counts = ClusterCounts::new(matrix, assignment);
    let by_genre: Vec<(Genre, Vec<&str>)> = Genre::ALL.iter().map(|&g| (g, matrix.adverts_in(g))).collect();
    let mut cells = Vec::with_capacity(counts.k() * 3 * 7);
    for cluster in 1..=counts.k() as u32 {
        for (genre, adverts) in &by_genre {
            for stage in Stage::INTERACTIONS {
                let mut cell = if adverts.is_empty() {
                    IndexCell {
                        cluster,
                        genre: None,
                        stage,
                        cluster_events: 0,
                        cluster_impressions: 0,
                        global_rate: None,
                        index: None,
                    }
                } else {
                    counts.cell(cluster, adverts, stage).expect("valid cluster and non-empty set")
                };
                cell.genre = Some(*genre);
                cells.push(cell);
            }
        }
    }
    IndexTable { cells }
}

pub const INDEX_CSV_HEADER: [&str; 7] =
    ["cluster", "genre", "stage", "cluster_events", "cluster_impressions", "global_rate", "index"];

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl IndexTable {
    pub fn get(&self, cluster: u32, genre: Genre, stage: Stage) -> Option<&IndexCell> {
        self.cells.iter().find(|c| c.cluster == cluster && c.genre == Some(genre) && c.stage == stage)
    }

    /// Impression-weighted mean of the defined index values over clusters.
    pub fn weighted_mean(&self, genre: Genre, stage: Stage) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for c in self.cells.iter().filter(|c| c.genre == Some(genre) && c.stage == stage) {
            if let Some(ind) = c.index {
                num += ind * c.cluster_impressions as f64;
                den += c.cluster_impressions as f64;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(INDEX_CSV_HEADER)?;
        for c in &self.cells {
            out.write_record([
                c.cluster.to_string(),
                c.genre.map(|g| g.name().to_string()).unwrap_or_default(),
                c.stage.name().to_string(),
                c.cluster_events.to_string(),
                c.cluster_impressions.to_string(),
                opt_f64(c.global_rate),
                opt_f64(c.index),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, MetricsError> {
        let mut reader = csv::Reader::from_reader(r);
        let mut cells = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let line = idx + 2;
            let fail = |message: String| MetricsError::Format { line, message };
            let row = row.map_err(|e| fail(e.to_string()))?;
            if row.len() != INDEX_CSV_HEADER.len() {
                return Err(fail(format!("expected {} columns", INDEX_CSV_HEADER.len())));
            }
            let num = |i: usize| -> Result<u64, MetricsError> {
                row[i].parse().map_err(|_| fail(format!("bad {} {:?}", INDEX_CSV_HEADER[i], &row[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, MetricsError> {
                if row[i].is_empty() {
                    Ok(None)
                } else {
                    row[i].parse().map(Some).map_err(|_| fail(format!("bad {} {:?}", INDEX_CSV_HEADER[i], &row[i])))
                }
            };
            cells.push(IndexCell {
                cluster: num(0)? as u32,
                genre: if row[1].is_empty() {
                    None
                } else {
                    Some(row[1].parse().map_err(|e: crate::ingest::UnknownGenre| fail(e.to_string()))?)
                },
                stage: row[2].parse().map_err(|e: crate::ingest::UnknownStage| fail(e.to_string()))?,
                cluster_events: num(3)?,
                cluster_impressions: num(4)?,
                global_rate: opt(5)?,
                index: opt(6)?,
            });
        }
        Ok(IndexTable { cells })
    }
}
