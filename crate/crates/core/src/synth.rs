//! Synthetic populations with planted structure.
//!
//! A [`SynthSpec`] fixes cluster weights, category preferences, app-count
//! distributions, per-genre funnel step probabilities and optional rule
//! boosts. [`generate`] draws a population from it; [`expected_index`] and
//! [`expected_rule_lift`] give the matching closed-form values.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::clustering::Assignment;
use crate::features::{AppCatalog, DEFAULT_CATEGORIES};
use crate::ingest::{AdvertRegistry, FirstOccurrenceStore, Genre, InteractionRecord, Stage};
use crate::mining::{AppClassifier, AppCountClass, Class4From, Item, TimeOfDay};
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<io::Error> for SynthError {
    fn from(e: io::Error) -> Self {
        SynthError::Io(e.to_string())
    }
}

/// Conditional step probabilities for tap, loadvideo, playvideo, video25,
/// video50, video75 and videocomplete: entry `j` is the chance that a pair
/// at stage `j` moves on to stage `j + 1`.
pub type StepProbs = [f64; 7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreFunnels {
    pub finance: StepProbs,
    pub lifestyle: StepProbs,
    pub entertainment: StepProbs,
}

impl GenreFunnels {
    pub fn uniform(steps: StepProbs) -> Self {
        GenreFunnels { finance: steps, lifestyle: steps, entertainment: steps }
    }

    pub fn get(&self, genre: Genre) -> &StepProbs {
        match genre {
            Genre::Finance => &self.finance,
            Genre::Lifestyle => &self.lifestyle,
            Genre::Entertainment => &self.entertainment,
        }
    }

    pub fn get_mut(&mut self, genre: Genre) -> &mut StepProbs {
        match genre {
            Genre::Finance => &mut self.finance,
            Genre::Lifestyle => &mut self.lifestyle,
            Genre::Entertainment => &mut self.entertainment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub weight: f64,
    /// Category indices drawn `home_weight` times as often as the rest.
    #[serde(default)]
    pub home_categories: Vec<usize>,
    #[serde(default = "default_home_weight")]
    pub home_weight: f64,
    pub app_count_mean: f64,
    pub app_count_sd: f64,
    pub funnel: GenreFunnels,
}

fn default_home_weight() -> f64 {
    5.0
}

/// Multiplies the chance of reaching `stage` (and so every later stage)
/// for pairs matching all given cohort conditions. `None` matches anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub cluster: Option<u32>,
    pub app_class: Option<AppCountClass>,
    pub time: Option<TimeOfDay>,
    pub genre: Option<Genre>,
    pub stage: Stage,
    pub multiplier: f64,
}

impl PlantedRule {
    fn matches(&self, cluster: u32, class: AppCountClass, time: TimeOfDay, genre: Genre) -> bool {
        self.cluster.is_none_or(|c| c == cluster)
            && self.app_class.is_none_or(|c| c == class)
            && self.time.is_none_or(|t| t == time)
            && self.genre.is_none_or(|g| g == genre)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    pub finance: usize,
    pub lifestyle: usize,
    pub entertainment: usize,
}

impl Roster {
    pub fn count(&self, genre: Genre) -> usize {
        match genre {
            Genre::Finance => self.finance,
            Genre::Lifestyle => self.lifestyle,
            Genre::Entertainment => self.entertainment,
        }
    }

    pub fn total(&self) -> usize {
        self.finance + self.lifestyle + self.entertainment
    }
}

impl Default for Roster {
    fn default() -> Self {
        Roster { finance: 2, lifestyle: 2, entertainment: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub days: u32,
}

impl Default for Window {
    fn default() -> Self {
        Window { start: NaiveDate::from_ymd_opt(2014, 5, 1).expect("valid date"), days: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub seed: u64,
    #[serde(default = "default_category_names")]
    pub categories: Vec<String>,
    #[serde(default = "default_apps_per_category")]
    pub apps_per_category: usize,
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub adverts: Roster,
    /// Distinct adverts shown to each user, chosen uniformly.
    #[serde(default = "default_adverts_per_user")]
    pub adverts_per_user: usize,
    #[serde(default)]
    pub planted_rules: Vec<PlantedRule>,
    #[serde(default)]
    pub class4_from: Class4From,
    #[serde(default)]
    pub window: Window,
    /// Chance that an emitted event is repeated later in the log.
    #[serde(default)]
    pub duplicate_rate: f64,
    /// Chance of a malformed line after each written log line.
    #[serde(default)]
    pub corrupt_rate: f64,
}

fn default_category_names() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

fn default_apps_per_category() -> usize {
    37
}

fn default_adverts_per_user() -> usize {
    2
}

impl SynthSpec {
    /// `k` equally weighted clusters; cluster `j` prefers categories
    /// `2j` and `2j + 1` (mod the category count) at 5:1. Users hold
    /// 60 ± 12 apps, enough for the preference to dominate sampling noise.
    /// Every funnel step is `step`.
    pub fn planted(n_users: usize, k: usize, seed: u64, step: f64) -> Self {
        let n_cat = DEFAULT_CATEGORIES.len();
        let clusters = (0..k)
            .map(|j| ClusterSpec {
                weight: 1.0,
                home_categories: vec![(2 * j) % n_cat, (2 * j + 1) % n_cat],
                home_weight: 5.0,
                app_count_mean: 60.0,
                app_count_sd: 12.0,
                funnel: GenreFunnels::uniform([step; 7]),
            })
            .collect();
        SynthSpec {
            n_users,
            seed,
            categories: default_category_names(),
            apps_per_category: default_apps_per_category(),
            clusters,
            adverts: Roster::default(),
            adverts_per_user: default_adverts_per_user(),
            planted_rules: Vec::new(),
            class4_from: Class4From::Sigma,
            window: Window::default(),
            duplicate_rate: 0.0,
            corrupt_rate: 0.0,
        }
    }

    /// One cluster with no category preference.
    pub fn homogeneous(n_users: usize, seed: u64, step: f64) -> Self {
        let mut spec = SynthSpec::planted(n_users, 1, seed, step);
        spec.clusters[0].home_categories.clear();
        spec
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_apps(&self) -> usize {
        self.categories.len() * self.apps_per_category
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_users == 0 {
            return bad("n_users must be at least 1".into());
        }
        if self.categories.is_empty() || self.apps_per_category == 0 {
            return bad("need at least one category and one app per category".into());
        }
        if self.clusters.is_empty() {
            return bad("need at least one cluster".into());
        }
        for (j, c) in self.clusters.iter().enumerate() {
            let id = j + 1;
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return bad(format!("cluster {id}: weight must be positive"));
            }
            if !(c.home_weight > 0.0 && c.home_weight.is_finite()) {
                return bad(format!("cluster {id}: home_weight must be positive"));
            }
            if let Some(&h) = c.home_categories.iter().find(|&&h| h >= self.categories.len()) {
                return bad(format!("cluster {id}: home category {h} out of range"));
            }
            if !(c.app_count_mean.is_finite() && c.app_count_sd >= 0.0 && c.app_count_sd.is_finite()) {
                return bad(format!("cluster {id}: bad app-count distribution"));
            }
            for g in Genre::ALL {
                if let Some(p) = c.funnel.get(g).iter().find(|p| !prob(**p)) {
                    return bad(format!("cluster {id}: {} step probability {p} outside [0, 1]", g.name()));
                }
            }
        }
        for (r_idx, r) in self.planted_rules.iter().enumerate() {
            if r.stage == Stage::Impression {
                return bad(format!("planted rule {}: target stage must follow impression", r_idx + 1));
            }
            if let Some(c) = r.cluster {
                if c == 0 || c as usize > self.k() {
                    return bad(format!("planted rule {}: cluster {c} outside 1..={}", r_idx + 1, self.k()));
                }
            }
            if !(r.multiplier >= 0.0 && r.multiplier.is_finite()) {
                return bad(format!("planted rule {}: multiplier must be >= 0", r_idx + 1));
            }
        }
        // boosted steps must stay probabilities even when every rule applies
        for (j, c) in self.clusters.iter().enumerate() {
            let cluster = j as u32 + 1;
            for g in Genre::ALL {
                for stage in Stage::INTERACTIONS {
                    let boost: f64 = self
                        .planted_rules
                        .iter()
                        .filter(|r| r.stage == stage)
                        .filter(|r| r.cluster.is_none_or(|c| c == cluster) && r.genre.is_none_or(|rg| rg == g))
                        .map(|r| r.multiplier)
                        .product();
                    let p = c.funnel.get(g)[stage.ordinal() - 1] * boost;
                    if p > 1.0 {
                        return bad(format!(
                            "cluster {cluster}: boosted {} step into {} is {p} > 1",
                            g.name(),
                            stage.name()
                        ));
                    }
                }
            }
        }
        if self.adverts.total() == 0 {
            return bad("advert roster is empty".into());
        }
        if self.adverts_per_user == 0 || self.adverts_per_user > self.adverts.total() {
            return bad(format!("adverts_per_user must be in 1..={}", self.adverts.total()));
        }
        if self.window.days == 0 {
            return bad("window must span at least one day".into());
        }
        if !prob(self.duplicate_rate) || !prob(self.corrupt_rate) {
            return bad("duplicate_rate and corrupt_rate must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// One (user, advert) exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPair {
    pub advert: u32,
    /// Minutes after the window start.
    pub minute: u32,
    /// Last stage reached; every earlier stage was reached too.
    pub last: Stage,
    /// (stage, extra minutes) for each repeated event.
    pub duplicates: Vec<(Stage, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthUser {
    pub cluster: u32,
    /// Indices into [`Synthetic::app_names`], ascending.
    pub apps: Vec<u32>,
    pub pairs: Vec<TruthPair>,
}

/// A generated population and its ground truth.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub spec: SynthSpec,
    pub app_names: Vec<String>,
    pub advert_names: Vec<String>,
    pub advert_genres: Vec<Genre>,
    pub users: Vec<TruthUser>,
    /// App-count cohorts over the generated population.
    pub classifier: AppClassifier,
}

pub fn user_id(idx: usize) -> String {
    format!("u{idx:07}")
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

fn truncated_count(rng: &mut ChaCha8Rng, mean: f64, sd: f64, max: usize) -> usize {
    let clamp = |x: f64| (x.round().max(1.0) as usize).min(max);
    if sd == 0.0 {
        return clamp(mean);
    }
    let normal = Normal::new(mean, sd).expect("validated sd");
    for _ in 0..1000 {
        let n = normal.sample(rng).round();
        if n >= 1.0 && n <= max as f64 {
            return n as usize;
        }
    }
    clamp(mean)
}

fn map_users<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}

/// Draws a population. Each user has its own seed stream, so the result
/// does not depend on thread count.
pub fn generate(spec: &SynthSpec) -> Result<Synthetic, SynthError> {
    spec.validate()?;
    let n_cat = spec.categories.len();
    let per_cat = spec.apps_per_category;
    let app_names: Vec<String> = spec
        .categories
        .iter()
        .flat_map(|c| {
            let s = slug(c);
            (1..=per_cat).map(move |j| format!("{s}-{j:03}"))
        })
        .collect();
    let mut advert_names = Vec::new();
    let mut advert_genres = Vec::new();
    for g in Genre::ALL {
        for j in 1..=spec.adverts.count(g) {
            advert_names.push(format!("{}-ad{j}", g.name()));
            advert_genres.push(g);
        }
    }

    let cluster_pick = WeightedIndex::new(spec.clusters.iter().map(|c| c.weight)).expect("validated weights");
    let category_picks: Vec<WeightedIndex<f64>> = spec
        .clusters
        .iter()
        .map(|c| {
            let w = (0..n_cat).map(|k| if c.home_categories.contains(&k) { c.home_weight } else { 1.0 });
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();
    let max_apps = spec.n_apps();

    // phase 1: cluster and app set
    let profiles: Vec<(u32, Vec<u32>)> = map_users(spec.n_users, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2 * i as u64));
        let cluster = cluster_pick.sample(&mut rng);
        let c = &spec.clusters[cluster];
        let n = truncated_count(&mut rng, c.app_count_mean, c.app_count_sd, max_apps);
        let mut apps = BTreeSet::new();
        while apps.len() < n {
            let cat = category_picks[cluster].sample(&mut rng);
            let app = rng.gen_range(0..per_cat);
            apps.insert((cat * per_cat + app) as u32);
        }
        (cluster as u32 + 1, apps.into_iter().collect())
    });
    let classifier = AppClassifier::from_counts(profiles.iter().map(|(_, a)| a.len()), spec.class4_from);

    // phase 2: exposures and funnels
    let minutes = spec.window.days * 24 * 60;
    let users = map_users(spec.n_users, |i| {
        let (cluster, apps) = &profiles[i];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2 * i as u64 + 1));
        let class = classifier.classify(apps.len());
        let steps = &spec.clusters[*cluster as usize - 1].funnel;
        let mut shown = rand::seq::index::sample(&mut rng, advert_names.len(), spec.adverts_per_user).into_vec();
        shown.sort_unstable();
        let pairs = shown
            .into_iter()
            .map(|a| {
                let genre = advert_genres[a];
                let minute = rng.gen_range(0..minutes);
                let time = TimeOfDay::of_minute(minute % (24 * 60));
                let mut last = Stage::Impression;
                for stage in Stage::INTERACTIONS {
                    let boost: f64 = spec
                        .planted_rules
                        .iter()
                        .filter(|r| r.stage == stage && r.matches(*cluster, class, time, genre))
                        .map(|r| r.multiplier)
                        .product();
                    if !rng.gen_bool((steps.get(genre)[stage.ordinal() - 1] * boost).min(1.0)) {
                        break;
                    }
                    last = stage;
                }
                let mut duplicates = Vec::new();
                if spec.duplicate_rate > 0.0 {
                    for s in Stage::ALL.into_iter().take(last.ordinal() + 1) {
                        if rng.gen_bool(spec.duplicate_rate) {
                            duplicates.push((s, rng.gen_range(1..=120)));
                        }
                    }
                }
                TruthPair { advert: a as u32, minute, last, duplicates }
            })
            .collect();
        TruthUser { cluster: *cluster, apps: apps.clone(), pairs }
    });

    Ok(Synthetic { spec: spec.clone(), app_names, advert_names, advert_genres, users, classifier })
}

impl Synthetic {
    pub fn catalog(&self) -> AppCatalog {
        let per_cat = self.spec.apps_per_category;
        AppCatalog::from_pairs(
            self.spec.categories.clone(),
            self.app_names.iter().enumerate().map(|(i, a)| (a.clone(), i / per_cat)),
        )
    }

    pub fn registry(&self) -> AdvertRegistry {
        self.advert_names.iter().cloned().zip(self.advert_genres.iter().copied()).collect()
    }

    /// Planted cluster labels.
    pub fn truth_assignment(&self) -> Assignment {
        let mut a = Assignment::new(self.spec.k());
        for (i, u) in self.users.iter().enumerate() {
            a.insert(user_id(i), u.cluster);
        }
        a
    }

    pub fn labels(&self) -> Vec<u32> {
        self.users.iter().map(|u| u.cluster).collect()
    }

    pub fn event_count(&self) -> usize {
        self.users.iter().flat_map(|u| &u.pairs).map(|p| p.last.ordinal() + 1 + p.duplicates.len()).sum()
    }

    /// Every log event in output order: users ascending, then adverts,
    /// then stages, each repeat right after its original.
    pub fn for_each_record<F: FnMut(InteractionRecord)>(&self, mut sink: F) {
        let start = self.spec.window.start.and_hms_opt(0, 0, 0).expect("midnight");
        for (i, u) in self.users.iter().enumerate() {
            let user = user_id(i);
            let apps: BTreeSet<String> = u.apps.iter().map(|&a| self.app_names[a as usize].clone()).collect();
            for p in &u.pairs {
                let advert = &self.advert_names[p.advert as usize];
                let at = |stage: Stage, extra: u32| -> NaiveDateTime {
                    start + Duration::minutes(p.minute as i64 + stage.ordinal() as i64 + extra as i64)
                };
                let record = |stage: Stage, ts: NaiveDateTime, publisher: usize| InteractionRecord {
                    user: user.clone(),
                    apps: apps.clone(),
                    timestamp: ts,
                    stage,
                    advert: advert.clone(),
                    publisher: format!("pub{publisher}"),
                    site: format!("site{}", (i + p.advert as usize) % 7),
                };
                for stage in Stage::ALL.into_iter().take(p.last.ordinal() + 1) {
                    sink(record(stage, at(stage, 0), (i + stage.ordinal()) % 5));
                    for &(_, extra) in p.duplicates.iter().filter(|(s, _)| *s == stage) {
                        sink(record(stage, at(stage, extra), (i + stage.ordinal() + 1) % 5));
                    }
                }
            }
        }
    }

    /// Deduplicated store of every generated event.
    pub fn store(&self) -> FirstOccurrenceStore {
        let mut store = FirstOccurrenceStore::new();
        self.for_each_record(|r| store.insert(r));
        store
    }

    /// Writes `logs.jsonl`, `truth.jsonl`, `catalog.tsv`, `categories.txt`,
    /// `registry.tsv` and `spec.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        let mut logs = BufWriter::new(File::create(dir.join("logs.jsonl"))?);
        let mut corrupt_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.spec.seed, u64::MAX));
        let mut result = Ok(());
        self.for_each_record(|r| {
            if result.is_err() {
                return;
            }
            result = (|| -> io::Result<()> {
                let line = r.to_jsonl();
                writeln!(logs, "{line}")?;
                if self.spec.corrupt_rate > 0.0 && corrupt_rng.gen_bool(self.spec.corrupt_rate) {
                    let ts = crate::ingest::timestamp::format_timestamp(&r.timestamp);
                    writeln!(logs, "{}", line.replace(&ts, "2014-13-45T99:99"))?;
                }
                Ok(())
            })();
        });
        result?;
        logs.flush()?;

        let mut truth = BufWriter::new(File::create(dir.join("truth.jsonl"))?);
        for (i, u) in self.users.iter().enumerate() {
            let pairs: Vec<serde_json::Value> = u
                .pairs
                .iter()
                .map(|p| {
                    let stages: Vec<&str> = Stage::ALL.iter().take(p.last.ordinal() + 1).map(|s| s.name()).collect();
                    serde_json::json!({"advert": self.advert_names[p.advert as usize], "stages": stages})
                })
                .collect();
            let apps: Vec<&str> = u.apps.iter().map(|&a| self.app_names[a as usize].as_str()).collect();
            let line = serde_json::json!({"user": user_id(i), "cluster": u.cluster, "apps": apps, "pairs": pairs});
            writeln!(truth, "{line}")?;
        }
        truth.flush()?;

        fs::write(dir.join("catalog.tsv"), self.catalog().to_tsv())?;
        fs::write(dir.join("categories.txt"), self.spec.categories.join("\n") + "\n")?;
        fs::write(dir.join("registry.tsv"), self.registry().to_tsv())?;
        let spec = serde_json::to_string_pretty(&self.spec).map_err(|e| SynthError::Io(e.to_string()))?;
        fs::write(dir.join("spec.json"), spec + "\n")?;
        Ok(())
    }
}

/// Probability of each app count `1..=max` under the truncated, rounded
/// normal used by [`generate`]. Index 0 is unused.
fn count_pmf(mean: f64, sd: f64, max: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; max + 1];
    if sd == 0.0 {
        pmf[(mean.round().max(1.0) as usize).min(max)] = 1.0;
        return pmf;
    }
    let dist = NormalDist::new(mean, sd).expect("validated sd");
    for (n, p) in pmf.iter_mut().enumerate().skip(1) {
        *p = dist.cdf(n as f64 + 0.5) - dist.cdf(n as f64 - 0.5);
    }
    let total: f64 = pmf.iter().sum();
    if total <= 0.0 {
        pmf.iter_mut().for_each(|p| *p = 0.0);
        pmf[(mean.round().max(1.0) as usize).min(max)] = 1.0;
    } else {
        pmf.iter_mut().for_each(|p| *p /= total);
    }
    pmf
}

/// Population-level probabilities of the planted model.
struct Model<'a> {
    spec: &'a SynthSpec,
    cluster_share: Vec<f64>,
    // [cluster][class]
    class_share: Vec<[f64; 4]>,
    genre_share: [f64; 3],
}

impl<'a> Model<'a> {
    fn new(spec: &'a SynthSpec) -> Self {
        let total_w: f64 = spec.clusters.iter().map(|c| c.weight).sum();
        let cluster_share: Vec<f64> = spec.clusters.iter().map(|c| c.weight / total_w).collect();
        let max = spec.n_apps();
        let pmfs: Vec<Vec<f64>> =
            spec.clusters.iter().map(|c| count_pmf(c.app_count_mean, c.app_count_sd, max)).collect();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (share, pmf) in cluster_share.iter().zip(&pmfs) {
            for (n, p) in pmf.iter().enumerate() {
                m1 += share * p * n as f64;
                m2 += share * p * (n * n) as f64;
            }
        }
        let sd = (m2 - m1 * m1).max(0.0).sqrt();
        let classifier = AppClassifier::new(m1, sd, spec.class4_from);
        let class_share = pmfs
            .iter()
            .map(|pmf| {
                let mut s = [0.0; 4];
                for (n, p) in pmf.iter().enumerate().skip(1) {
                    s[classifier.classify(n) as usize - 1] += p;
                }
                s
            })
            .collect();
        let total_ads = spec.adverts.total() as f64;
        let genre_share = Genre::ALL.map(|g| spec.adverts.count(g) as f64 / total_ads);
        Model { spec, cluster_share, class_share, genre_share }
    }

    fn reach(&self, cluster: u32, class: AppCountClass, time: TimeOfDay, genre: Genre, stage: Stage) -> f64 {
        let steps = self.spec.clusters[cluster as usize - 1].funnel.get(genre);
        Stage::INTERACTIONS
            .iter()
            .take(stage.ordinal())
            .map(|&s| {
                let boost: f64 = self
                    .spec
                    .planted_rules
                    .iter()
                    .filter(|r| r.stage == s && r.matches(cluster, class, time, genre))
                    .map(|r| r.multiplier)
                    .product();
                (steps[s.ordinal() - 1] * boost).min(1.0)
            })
            .product()
    }

    /// Calls `f(cluster, class, time, genre, mass)` for every cohort cell
    /// of a random exposure.
    fn cells(&self, mut f: impl FnMut(u32, AppCountClass, TimeOfDay, Genre, f64)) {
        for (ci, share) in self.cluster_share.iter().enumerate() {
            for class in AppCountClass::ALL {
                let pc = self.class_share[ci][class as usize - 1];
                for time in TimeOfDay::ALL {
                    let pt = time.minutes() as f64 / (24.0 * 60.0);
                    for (gi, g) in Genre::ALL.into_iter().enumerate() {
                        let mass = share * pc * pt * self.genre_share[gi];
                        if mass > 0.0 {
                            f(ci as u32 + 1, class, time, g, mass);
                        }
                    }
                }
            }
        }
    }
}

/// Index value of planted cluster `cluster` for `genre` at `stage`
/// under the planted model, with app-count cohorts taken from the
/// population distribution. `None` when the index is undefined.
pub fn expected_index(spec: &SynthSpec, cluster: u32, genre: Genre, stage: Stage) -> Option<f64> {
    if cluster == 0 || cluster as usize > spec.k() || spec.adverts.count(genre) == 0 {
        return None;
    }
    let model = Model::new(spec);
    let (mut own, mut own_mass, mut all, mut all_mass) = (0.0, 0.0, 0.0, 0.0);
    model.cells(|c, class, time, g, mass| {
        if g != genre {
            return;
        }
        let r = mass * model.reach(c, class, time, g, stage);
        all += r;
        all_mass += mass;
        if c == cluster {
            own += r;
            own_mass += mass;
        }
    });
    if own_mass == 0.0 || all == 0.0 {
        return None;
    }
    Some((own / own_mass) / (all / all_mass))
}

/// Lift of `antecedent → stage` over baskets of every exposure (or only
/// `genre` exposures) under the planted model.
pub fn expected_rule_lift(spec: &SynthSpec, antecedent: &[Item], stage: Stage, genre: Option<Genre>) -> Option<f64> {
    let model = Model::new(spec);
    let (mut p_a, mut p_ab, mut p_b, mut total) = (0.0, 0.0, 0.0, 0.0);
    model.cells(|c, class, time, g, mass| {
        if genre.is_some_and(|want| want != g) {
            return;
        }
        let hit = antecedent.iter().all(|item| match *item {
            Item::Cluster(k) => k == c,
            Item::AppClass(k) => k == class,
            Item::Time(t) => t == time,
            Item::Stage(s) => s == Stage::Impression,
        });
        let r = model.reach(c, class, time, g, stage);
        total += mass;
        p_b += mass * r;
        if hit {
            p_a += mass;
            p_ab += mass * r;
        }
    });
    if p_a == 0.0 || p_b == 0.0 {
        return None;
    }
    Some(p_ab * total / (p_a * p_b))
}

/// Expected share of exposures in each app-count class for a planted
/// cluster.
pub fn expected_class_shares(spec: &SynthSpec, cluster: u32) -> Option<[f64; 4]> {
    let model = Model::new(spec);
    model.class_share.get((cluster as usize).checked_sub(1)?).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::adjusted_rand_index;
    use crate::ingest::{parse_record, LogFormat};
    use crate::metrics::{build_matrix, index_table};

    fn small() -> SynthSpec {
        let mut s = SynthSpec::planted(300, 3, 7, 0.6);
        s.duplicate_rate = 0.1;
        s
    }

    #[test]
    fn same_seed_same_population() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.users, b.users);
        let mut other = small();
        other.seed = 8;
        assert_ne!(generate(&other).unwrap().users, a.users);
    }

    #[test]
    fn every_user_sees_the_requested_adverts() {
        let syn = generate(&small()).unwrap();
        for u in &syn.users {
            assert_eq!(u.pairs.len(), 2);
            assert!(!u.apps.is_empty());
            assert!(u.apps.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn duplicates_do_not_change_the_store() {
        let syn = generate(&small()).unwrap();
        let mut clean = syn.clone();
        clean.users.iter_mut().flat_map(|u| &mut u.pairs).for_each(|p| p.duplicates.clear());
        assert!(syn.event_count() > clean.event_count());
        assert_eq!(syn.store(), clean.store());
    }

    #[test]
    fn records_reparse_strictly() {
        let syn = generate(&small()).unwrap();
        let mut n = 0;
        syn.for_each_record(|r| {
            n += 1;
            assert_eq!(parse_record(&r.to_jsonl(), LogFormat::Jsonl, n).unwrap(), r);
        });
        assert_eq!(n, syn.event_count());
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = small();
        s.clusters[0].funnel.finance[2] = 1.2;
        assert!(matches!(s.validate(), Err(SynthError::InvalidSpec(_))));
        let mut s = small();
        s.planted_rules.push(PlantedRule {
            cluster: Some(1),
            app_class: None,
            time: None,
            genre: None,
            stage: Stage::PlayVideo,
            multiplier: 3.0,
        });
        assert!(s.validate().is_err());
        let mut s = small();
        s.adverts_per_user = 7;
        assert!(s.validate().is_err());
        let mut s = small();
        s.clusters[1].home_categories.push(22);
        assert!(s.validate().is_err());
        let mut s = small();
        s.n_users = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn uniform_spec_has_unit_index() {
        let s = SynthSpec::planted(100, 4, 1, 0.5);
        for c in 1..=4 {
            for g in Genre::ALL {
                for st in Stage::INTERACTIONS {
                    assert!((expected_index(&s, c, g, st).unwrap() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doubled_tap_rate_index() {
        // two equal clusters, cluster 1 taps finance adverts at 0.4, cluster 2 at 0.2
        let mut s = SynthSpec::planted(100, 2, 1, 0.5);
        s.clusters[0].funnel.finance[0] = 0.4;
        s.clusters[1].funnel.finance[0] = 0.2;
        let ind = expected_index(&s, 1, Genre::Finance, Stage::Tap).unwrap();
        assert!((ind - 0.4 / 0.3).abs() < 1e-12);
        let ind2 = expected_index(&s, 2, Genre::Finance, Stage::Tap).unwrap();
        assert!((ind2 - 0.2 / 0.3).abs() < 1e-12);
        assert!((expected_index(&s, 1, Genre::Lifestyle, Stage::Tap).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planted_rule_lift_is_analytic() {
        let mut s = SynthSpec::planted(100, 2, 1, 0.5);
        s.planted_rules.push(PlantedRule {
            cluster: Some(1),
            app_class: None,
            time: Some(TimeOfDay::Daytime),
            genre: None,
            stage: Stage::PlayVideo,
            multiplier: 2.0,
        });
        // P(play | c1, day) = 2b, P(play) = b (1 + 0.5 * 11/24)
        let expected = 2.0 / (1.0 + 0.5 * 11.0 / 24.0);
        let got = expected_rule_lift(&s, &[Item::Cluster(1), Item::Time(TimeOfDay::Daytime)], Stage::PlayVideo, None)
            .unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn planted_clusters_separate_in_category_space() {
        let syn = generate(&SynthSpec::planted(600, 3, 11, 0.5)).unwrap();
        let store = syn.store();
        let table = crate::features::build_profiles(&store, &syn.catalog()).unwrap();
        let profiles: Vec<_> = table.rows.iter().map(|r| r.standardized()).collect();
        let params = crate::clustering::KMeansParams { k: 3, seed: 1, ..Default::default() };
        let (model, _) = crate::clustering::kmeans_fit(&profiles, &params).unwrap();
        let truth = syn.truth_assignment();
        let found: Vec<u32> = profiles.iter().map(|p| model.assign(&p.z)).collect();
        let planted: Vec<u32> = profiles.iter().map(|p| truth.label(&p.user).unwrap()).collect();
        let ari = adjusted_rand_index(&found, &planted);
        assert!(ari > 0.9, "ari {ari} sizes {:?}", model.sizes());
    }

    #[test]
    fn empirical_index_near_expected() {
        let mut s = SynthSpec::planted(4000, 2, 3, 0.7);
        s.clusters[0].funnel.entertainment[0] = 0.9;
        let syn = generate(&s).unwrap();
        let matrix = build_matrix(&syn.store(), &syn.registry()).unwrap();
        let table = index_table(&matrix, &syn.truth_assignment());
        let got = table.get(1, Genre::Entertainment, Stage::Tap).unwrap().index.unwrap();
        let want = expected_index(&s, 1, Genre::Entertainment, Stage::Tap).unwrap();
        assert!((got - want).abs() < 0.05, "{got} vs {want}");
    }

    #[test]
    fn writes_all_files() {
        let dir = std::env::temp_dir().join(format!("adseg-synth-{}", std::process::id()));
        let mut s = small();
        s.corrupt_rate = 0.05;
        let syn = generate(&s).unwrap();
        syn.write_to_dir(&dir).unwrap();
        for f in ["logs.jsonl", "truth.jsonl", "catalog.tsv", "categories.txt", "registry.tsv", "spec.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let logs = fs::read_to_string(dir.join("logs.jsonl")).unwrap();
        assert!(logs.lines().count() > syn.event_count());
        assert!(logs.contains("2014-13-45T99:99"));
        let first = fs::read(dir.join("logs.jsonl")).unwrap();
        syn.write_to_dir(&dir).unwrap();
        assert_eq!(fs::read(dir.join("logs.jsonl")).unwrap(), first);
        let spec: SynthSpec = serde_json::from_str(&fs::read_to_string(dir.join("spec.json")).unwrap()).unwrap();
        assert_eq!(spec, s);
        fs::remove_dir_all(&dir).unwrap();
    }
}
