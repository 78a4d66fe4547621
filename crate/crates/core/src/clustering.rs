//! Lloyd's k-means with k-means++ seeding and multiple restarts.
//!
//! Distances are squared Euclidean. Ties between equidistant centroids go
//! to the lowest label. Labels exposed to callers run from 1 to k.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::StandardizedProfile;
use crate::util::{derive_seed, sq_dist};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    DegenerateK,
    #[error("need at least {k} distinct points, found {distinct}")]
    TooFewDistinctPoints { distinct: usize, k: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("assignment line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { k: 10, seed: 0, restarts: 10, max_iter: 300, tol: 1e-8 }
    }
}

/// Sums of squares of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Squared distances of points to their assigned centroid.
    pub wcss: f64,
    /// Size-weighted squared distances of centroids to the grand mean.
    pub bcss: f64,
    /// Squared distances of points to the grand mean.
    pub tss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// How the winning restart got to its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    /// WCSS after the seeding assignment and after every Lloyd iteration.
    pub wcss_history: Vec<f64>,
    /// Final WCSS of every restart, in restart order.
    pub restart_wcss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub params: KMeansParams,
    pub centroids: Vec<Vec<f64>>,
    /// Clustered users, in input order.
    pub users: Vec<String>,
    /// Label of each entry of `users`, in `1..=k`.
    pub labels: Vec<u32>,
    pub trace: FitTrace,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid label for an arbitrary standardized vector.
    pub fn assign(&self, z: &[f64]) -> u32 {
        nearest(&self.centroids, z).0 as u32 + 1
    }

    /// Number of users per label; index 0 holds label 1.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l as usize - 1] += 1;
        }
        sizes
    }

    /// Labels whose share of users is below `fraction`.
    pub fn small_clusters(&self, fraction: f64) -> Vec<u32> {
        let n = self.labels.len().max(1) as f64;
        self.sizes().iter().enumerate().filter(|(_, &s)| (s as f64) / n < fraction).map(|(i, _)| i as u32 + 1).collect()
    }

    pub fn assignment(&self) -> Assignment {
        let mut a = Assignment::new(self.k());
        for (u, &l) in self.users.iter().zip(&self.labels) {
            a.insert(u.clone(), l);
        }
        a
    }
}

pub fn assign(model: &ClusterModel, profile: &StandardizedProfile) -> u32 {
    model.assign(&profile.z)
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    #[cfg(feature = "parallel")]
    let pairs: Vec<(usize, f64)> = {
        use rayon::prelude::*;
        points.par_iter().with_min_len(1024).map(|x| nearest(centroids, x)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Vec<(usize, f64)> = points.iter().map(|x| nearest(centroids, x)).collect();
    pairs.into_iter().unzip()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can run past the end; take the last positive weight
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Cluster means; an empty cluster is reseeded at the point farthest from
/// its currently assigned centroid.
fn update_centroids(points: &[Vec<f64>], labels: &[usize], dists: &[f64], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut taken: HashSet<usize> = HashSet::new();
    for j in 0..k {
        if counts[j] > 0 {
            let inv = counts[j] as f64;
            for s in sums[j].iter_mut() {
                *s /= inv;
            }
        } else {
            let far = (0..points.len())
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("at least k distinct points");
            taken.insert(far);
            sums[j] = points[far].clone();
        }
    }
    sums
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    wcss: f64,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Run {
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let (mut labels, mut dists) = assign_all(points, &centroids);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let next = update_centroids(points, &labels, &dists, k, dim);
        let shift = next.iter().zip(&centroids).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        let (new_labels, new_dists) = assign_all(points, &centroids);
        history.push(new_dists.iter().sum());
        let stable = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if stable && shift < tol {
            converged = true;
            break;
        }
    }
    let wcss = *history.last().expect("non-empty");
    Run { centroids, labels, wcss, history, iterations, converged }
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::DegenerateK);
    }
    let dim = points.first().map_or(0, Vec::len);
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(ClusterError::DimensionMismatch { index, expected: dim, found: p.len() });
        }
    }
    let distinct: HashSet<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect()).collect();
    if distinct.len() < k {
        return Err(ClusterError::TooFewDistinctPoints { distinct: distinct.len(), k });
    }
    Ok(())
}

/// Fits k-means on raw vectors. `users` names each point and must have the
/// same length as `points`.
pub fn fit_points(
    points: &[Vec<f64>],
    users: Vec<String>,
    params: &KMeansParams,
) -> Result<(ClusterModel, ValidationReport), ClusterError> {
    assert_eq!(points.len(), users.len(), "one user id per point");
    check_points(points, params.k)?;
    let restarts = params.restarts.max(1);
    let run_one = |r: usize| lloyd(points, params.k, derive_seed(params.seed, r as u64), params.max_iter, params.tol);
    #[cfg(feature = "parallel")]
    let runs: Vec<Run> = {
        use rayon::prelude::*;
        (0..restarts).into_par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Run> = (0..restarts).map(run_one).collect();

    let restart_wcss: Vec<f64> = runs.iter().map(|r| r.wcss).collect();
    let (best_idx, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.wcss.total_cmp(&b.wcss).then(ia.cmp(ib)))
        .expect("at least one restart");
    let model = ClusterModel {
        params: params.clone(),
        centroids: best.centroids,
        users,
        labels: best.labels.iter().map(|&l| l as u32 + 1).collect(),
        trace: FitTrace {
            restart: best_idx,
            iterations: best.iterations,
            converged: best.converged,
            wcss_history: best.history,
            restart_wcss,
        },
    };
    let report = validate_points(&model, points);
    Ok((model, report))
}

pub fn kmeans_fit(
    profiles: &[StandardizedProfile],
    params: &KMeansParams,
) -> Result<(ClusterModel, ValidationReport), ClusterError> {
    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.z.clone()).collect();
    let users = profiles.iter().map(|p| p.user.clone()).collect();
    fit_points(&points, users, params)
}

/// Recomputes the sums of squares of `points` under the model's centroids,
/// assigning every point to its nearest centroid.
pub fn validate_points(model: &ClusterModel, points: &[Vec<f64>]) -> ValidationReport {
    let dim = model.dim();
    let k = model.k();
    let n = points.len();
    let mut grand = vec![0.0; dim];
    for p in points {
        for (g, v) in grand.iter_mut().zip(p) {
            *g += v;
        }
    }
    if n > 0 {
        grand.iter_mut().for_each(|g| *g /= n as f64);
    }
    let mut sizes = vec![0usize; k];
    let mut wcss = 0.0;
    let mut tss = 0.0;
    for p in points {
        let (j, d) = nearest(&model.centroids, p);
        sizes[j] += 1;
        wcss += d;
        tss += sq_dist(p, &grand);
    }
    let bcss = model.centroids.iter().zip(&sizes).map(|(c, &s)| s as f64 * sq_dist(c, &grand)).sum();
    ValidationReport { wcss, bcss, tss, iterations: model.trace.iterations, converged: model.trace.converged }
}

pub fn validate(model: &ClusterModel, profiles: &[StandardizedProfile]) -> ValidationReport {
    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.z.clone()).collect();
    validate_points(model, &points)
}

/// User → cluster label mapping consumed by the index and mining stages.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    k: usize,
    labels: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentLine {
    user: String,
    cluster: u32,
}

impl Assignment {
    pub fn new(k: usize) -> Self {
        Assignment { k, labels: HashMap::new() }
    }

    /// `label` must lie in `1..=k`.
    pub fn insert(&mut self, user: impl Into<String>, label: u32) {
        assert!(label >= 1 && label as usize <= self.k, "label {label} outside 1..={}", self.k);
        self.labels.insert(user.into(), label);
    }

    pub fn label(&self, user: &str) -> Option<u32> {
        self.labels.get(user).copied()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.labels.iter().map(|(u, &l)| (u.as_str(), l))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let sorted: BTreeMap<&String, &u32> = self.labels.iter().collect();
        for (user, &cluster) in sorted {
            serde_json::to_writer(&mut w, &AssignmentLine { user: user.clone(), cluster })?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, k: usize) -> Result<Self, ClusterError> {
        let mut a = Assignment::new(k);
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| ClusterError::Format { line: idx + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let row: AssignmentLine = serde_json::from_str(&line)
                .map_err(|e| ClusterError::Format { line: idx + 1, message: e.to_string() })?;
            if row.cluster == 0 || row.cluster as usize > k {
                return Err(ClusterError::Format {
                    line: idx + 1,
                    message: format!("cluster {} outside 1..={k}", row.cluster),
                });
            }
            a.labels.insert(row.user, row.cluster);
        }
        Ok(a)
    }
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: std::hash::Hash + Eq,
    B: std::hash::Hash + Eq,
{
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as u64;
    let mut table: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
