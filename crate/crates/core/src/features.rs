//! Category-percentage features and z-score standardization.
//!
//! A user's installed apps are mapped through the [`AppCatalog`] to a
//! 22-dimensional vector holding the share of their catalogued apps that
//! falls in each category. The population is then standardized per
//! coordinate before clustering.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ingest::FirstOccurrenceStore;

pub const CATEGORY_COUNT: usize = 22;

/// Default coordinate order. The last slot collects categories without a
/// dedicated column.
pub const DEFAULT_CATEGORIES: [&str; CATEGORY_COUNT] = [
    "games",
    "sports",
    "social networking",
    "lifestyles",
    "finance",
    "medical",
    "weather",
    "health/fitness",
    "navigation",
    "news",
    "travel",
    "photo/video",
    "reference",
    "entertainment",
    "utilities",
    "music",
    "business",
    "food/drink",
    "productivity",
    "education",
    "books",
    "other",
];

pub fn default_categories() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// Reads a category list file: one name per line, blank lines ignored.
pub fn parse_category_list(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("catalog line {line}: expected `app<TAB>category`")]
    MalformedCatalogLine { line: usize },
    #[error("app {app:?} listed under both {first:?} and {second:?}")]
    DuplicateApp { app: String, first: String, second: String },
    #[error("catalog line {line}: unknown category {category:?}")]
    UnknownCategory { line: usize, category: String },
    #[error("expected {expected} categories, found {found}")]
    WrongCategoryCount { expected: usize, found: usize },
    #[error("user {0:?} has no catalogued apps")]
    NoCataloguedApps(String),
    #[error("need at least 2 profiles to standardize, got {0}")]
    TooFewProfiles(usize),
    #[error("profile line {line}: {message}")]
    ProfileFormat { line: usize, message: String },
}

/// App id → category index, plus the ordered category names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppCatalog {
    categories: Vec<String>,
    apps: BTreeMap<String, usize>,
}

impl AppCatalog {
    /// Parses `app<TAB>category` rows against the given category list.
    ///
    /// Unless `allow_any_k` is set, the list must hold exactly 22 names and
    /// the catalog must use every one of them.
    pub fn parse(text: &str, categories: &[String], allow_any_k: bool) -> Result<Self, FeatureError> {
        if !allow_any_k && categories.len() != CATEGORY_COUNT {
            return Err(FeatureError::WrongCategoryCount { expected: CATEGORY_COUNT, found: categories.len() });
        }
        let index: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut apps: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = raw.split('\t');
            let (Some(app), Some(category), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(FeatureError::MalformedCatalogLine { line });
            };
            let (app, category) = (app.trim(), category.trim());
            if app.is_empty() {
                return Err(FeatureError::MalformedCatalogLine { line });
            }
            let &k = index
                .get(category)
                .ok_or_else(|| FeatureError::UnknownCategory { line, category: category.to_string() })?;
            if let Some(&prev) = apps.get(app) {
                if prev != k {
                    return Err(FeatureError::DuplicateApp {
                        app: app.to_string(),
                        first: categories[prev].clone(),
                        second: category.to_string(),
                    });
                }
            }
            apps.insert(app.to_string(), k);
        }
        let used: BTreeSet<usize> = apps.values().copied().collect();
        if !allow_any_k && used.len() != CATEGORY_COUNT {
            return Err(FeatureError::WrongCategoryCount { expected: CATEGORY_COUNT, found: used.len() });
        }
        Ok(AppCatalog { categories: categories.to_vec(), apps })
    }

    pub fn from_pairs<I, S>(categories: Vec<String>, pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let apps = pairs.into_iter().map(|(a, k)| (a.into(), k)).collect();
        AppCatalog { categories, apps }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn dim(&self) -> usize {
        self.categories.len()
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    pub fn category_of(&self, app: &str) -> Option<usize> {
        self.apps.get(app).copied()
    }

    /// Catalogued apps in sorted order; the column order of
    /// [`AppCatalog::category_indicator`].
    pub fn app_universe(&self) -> impl Iterator<Item = &str> {
        self.apps.keys().map(String::as_str)
    }

    /// Binary membership vector of category `k` over [`AppCatalog::app_universe`].
    pub fn category_indicator(&self, k: usize) -> Vec<u8> {
        self.apps.values().map(|&c| u8::from(c == k)).collect()
    }

    pub fn to_tsv(&self) -> String {
        self.apps.iter().map(|(a, &k)| format!("{a}\t{}\n", self.categories[k])).collect()
    }
}

/// Share of a user's catalogued apps in each category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub user: String,
    /// Number of catalogued apps; the denominator of every share.
    pub n_apps: usize,
    pub pct: Vec<f64>,
}

/// Maps an app set to category shares. Uncatalogued apps are ignored and do
/// not count toward the denominator.
pub fn category_percentages<'a, I>(user: &str, apps: I, catalog: &AppCatalog) -> Result<CategoryProfile, FeatureError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = vec![0usize; catalog.dim()];
    let mut seen = BTreeSet::new();
    for app in apps {
        if !seen.insert(app) {
            continue;
        }
        if let Some(k) = catalog.category_of(app) {
            counts[k] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(FeatureError::NoCataloguedApps(user.to_string()));
    }
    let pct = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(CategoryProfile { user: user.to_string(), n_apps: n, pct })
}

/// Mergeable per-coordinate mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Pairwise combination of two partial accumulators.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population standard deviation (divisor n).
    pub fn population_sd(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.m2.iter().map(|s| (s.max(0.0) / n).sqrt()).collect()
    }
}

/// Fitted per-coordinate mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedProfile {
    pub user: String,
    pub z: Vec<f64>,
}

pub fn fit_standardizer(profiles: &[CategoryProfile]) -> Result<Standardizer, FeatureError> {
    if profiles.len() < 2 {
        return Err(FeatureError::TooFewProfiles(profiles.len()));
    }
    let dim = profiles[0].pct.len();
    let mut acc = MomentAccumulator::new(dim);
    for p in profiles {
        acc.push(&p.pct);
    }
    Ok(Standardizer::from_moments(&acc))
}

impl Standardizer {
    pub fn from_moments(acc: &MomentAccumulator) -> Self {
        Standardizer { mean: acc.mean().to_vec(), sd: acc.population_sd(), n: acc.count() as usize }
    }

    /// Coordinates with zero spread; they standardize to 0.
    pub fn constant_coordinates(&self) -> Vec<usize> {
        self.sd.iter().enumerate().filter(|(_, &s)| s == 0.0).map(|(k, _)| k).collect()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&v, (&m, &s))| if s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    /// Undoes [`Standardizer::transform`]. Constant coordinates come back
    /// as their mean.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.sd)).map(|(&v, (&m, &s))| if s > 0.0 { v * s + m } else { m }).collect()
    }

    pub fn standardize(&self, profile: &CategoryProfile) -> StandardizedProfile {
        StandardizedProfile { user: profile.user.clone(), z: self.transform(&profile.pct) }
    }
}

/// One row of the profiles file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub user: String,
    pub n_apps: usize,
    pub pct: Vec<f64>,
    pub z: Vec<f64>,
}

impl ProfileRow {
    pub fn standardized(&self) -> StandardizedProfile {
        StandardizedProfile { user: self.user.clone(), z: self.z.clone() }
    }
}

/// Side information written next to the profiles file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub categories: Vec<String>,
    pub standardizer: Standardizer,
    pub constant_coordinates: Vec<usize>,
    pub excluded_users: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub meta: ProfileMeta,
    pub rows: Vec<ProfileRow>,
}

/// Profiles every user in the store against the catalog and standardizes
/// the clusterable population. Users without catalogued apps are listed
/// in `meta.excluded_users`.
pub fn build_profiles(store: &FirstOccurrenceStore, catalog: &AppCatalog) -> Result<ProfileTable, FeatureError> {
    let mut profiles = Vec::new();
    let mut excluded = Vec::new();
    for (user, apps) in store.users() {
        match category_percentages(user, apps.iter().map(|a| &**a), catalog) {
            Ok(p) => profiles.push(p),
            Err(FeatureError::NoCataloguedApps(u)) => excluded.push(u),
            Err(e) => return Err(e),
        }
    }
    let standardizer = fit_standardizer(&profiles)?;
    let rows = profiles
        .into_iter()
        .map(|p| {
            let z = standardizer.transform(&p.pct);
            ProfileRow { user: p.user, n_apps: p.n_apps, pct: p.pct, z }
        })
        .collect();
    Ok(ProfileTable {
        meta: ProfileMeta {
            categories: catalog.categories().to_vec(),
            constant_coordinates: standardizer.constant_coordinates(),
            standardizer,
            excluded_users: excluded,
        },
        rows,
    })
}

pub fn write_profiles<W: Write>(rows: &[ProfileRow], mut w: W) -> io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_profiles<R: BufRead>(r: R) -> Result<Vec<ProfileRow>, FeatureError> {
    let mut rows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| FeatureError::ProfileFormat { line: idx + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ProfileRow = serde_json::from_str(&line)
            .map_err(|e| FeatureError::ProfileFormat { line: idx + 1, message: e.to_string() })?;
        rows.push(row);
    }
    Ok(rows)
}
