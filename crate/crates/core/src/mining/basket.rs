use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cohort::{time_of_day_class, AppClassifier, AppCountClass, TimeOfDay};
use super::MiningError;
use crate::clustering::Assignment;
use crate::ingest::{AdvertRegistry, FirstOccurrenceStore, Genre, Stage};

/// Cohort dimension of an antecedent item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Cluster,
    AppClass,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    Cluster(u32),
    AppClass(AppCountClass),
    Time(TimeOfDay),
    Stage(Stage),
}

impl Item {
    /// `None` for interaction items, which only appear as consequents.
    pub fn dimension(self) -> Option<Dimension> {
        match self {
            Item::Cluster(_) => Some(Dimension::Cluster),
            Item::AppClass(_) => Some(Dimension::AppClass),
            Item::Time(_) => Some(Dimension::Time),
            Item::Stage(_) => None,
        }
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::Cluster(k) => write!(f, "cluster{k}"),
            Item::AppClass(c) => f.write_str(c.name()),
            Item::Time(t) => f.write_str(t.name()),
            Item::Stage(s) => f.write_str(s.item_name()),
        }
    }
}

impl FromStr for Item {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("cluster") {
            return k.parse().map(Item::Cluster).map_err(|_| format!("bad cluster item {s:?}"));
        }
        if let Ok(c) = s.parse::<AppCountClass>() {
            return Ok(Item::AppClass(c));
        }
        if let Ok(t) = s.parse::<TimeOfDay>() {
            return Ok(Item::Time(t));
        }
        s.parse::<Stage>().map(Item::Stage).map_err(|_| format!("unknown item {s:?}"))
    }
}

impl Serialize for Item {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Item {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Itemized (user, advert) impression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basket {
    pub user: String,
    pub advert: String,
    /// Sorted, unique.
    pub items: Vec<Item>,
}

impl Basket {
    pub fn new(user: impl Into<String>, advert: impl Into<String>, items: impl IntoIterator<Item = Item>) -> Self {
        let set: BTreeSet<Item> = items.into_iter().collect();
        Basket { user: user.into(), advert: advert.into(), items: set.into_iter().collect() }
    }

    pub fn contains(&self, item: Item) -> bool {
        self.items.binary_search(&item).is_ok()
    }

    pub fn contains_all(&self, items: &[Item]) -> bool {
        items.iter().all(|&i| self.contains(i))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BasketDb {
    pub baskets: Vec<Basket>,
}

impl BasketDb {
    pub fn new(baskets: Vec<Basket>) -> Self {
        BasketDb { baskets }
    }

    pub fn len(&self) -> usize {
        self.baskets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baskets.is_empty()
    }

    /// Distinct items in sorted order.
    pub fn universe(&self) -> Vec<Item> {
        let set: BTreeSet<Item> = self.baskets.iter().flat_map(|b| b.items.iter().copied()).collect();
        set.into_iter().collect()
    }

    pub fn count(&self, items: &[Item]) -> usize {
        self.baskets.iter().filter(|b| b.contains_all(items)).count()
    }

    /// Tab-separated: `user`, `advert`, then `;`-joined items.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "user\tadvert\titems")?;
        for b in &self.baskets {
            let items: Vec<String> = b.items.iter().map(Item::to_string).collect();
            writeln!(w, "{}\t{}\t{}", b.user, b.advert, items.join(";"))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, MiningError> {
        let mut baskets = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let fail = |message: String| MiningError::Format { line: line_no, message };
            let line = line.map_err(|e| fail(e.to_string()))?;
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(user), Some(advert), Some(items), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(fail("expected 3 tab-separated columns".into()));
            };
            let items = items
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<Item>, _>>()
                .map_err(fail)?;
            baskets.push(Basket::new(user, advert, items));
        }
        Ok(BasketDb { baskets })
    }
}

/// Which adverts contribute baskets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AdvertFilter {
    #[default]
    All,
    Genre(Genre),
    Advert(String),
}

impl FromStr for AdvertFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(AdvertFilter::All);
        }
        s.parse::<Genre>().map(AdvertFilter::Genre).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasketBuild {
    pub db: BasketDb,
    /// Impressed pairs skipped because the user has no cluster label.
    pub skipped_unclustered: usize,
}

/// App-count cohort boundaries from the union app-set sizes of every
/// clustered user present in the store.
pub fn classifier_for(
    store: &FirstOccurrenceStore,
    assignment: &Assignment,
    class4_from: super::cohort::Class4From,
) -> AppClassifier {
    let counts = store.users().filter(|(u, _)| assignment.label(u).is_some()).map(|(_, apps)| apps.len());
    AppClassifier::from_counts(counts, class4_from)
}

/// One basket per impressed (user, advert) pair that passes `filter`.
///
/// The time-of-day item comes from the pair's first impression; the
/// app-count item from the size of the user's app union in the store.
pub fn build_baskets(
    store: &FirstOccurrenceStore,
    assignment: &Assignment,
    registry: &AdvertRegistry,
    filter: &AdvertFilter,
    classifier: &AppClassifier,
) -> Result<BasketBuild, MiningError> {
    let mut baskets = Vec::new();
    let mut skipped_unclustered = 0;
    let mut entries = store.entries().peekable();
    while let Some((key, first)) = entries.next() {
        let mut stages = vec![(key.stage, first)];
        while let Some((next, ev)) = entries.peek() {
            if next.user != key.user || next.advert != key.advert {
                break;
            }
            stages.push((next.stage, ev));
            entries.next();
        }
        let genre =
            registry.genre(&key.advert).ok_or_else(|| MiningError::UnregisteredAdvert(key.advert.to_string()))?;
        let keep = match filter {
            AdvertFilter::All => true,
            AdvertFilter::Genre(g) => *g == genre,
            AdvertFilter::Advert(a) => **a == *key.advert,
        };
        let Some((_, impression)) = stages.iter().find(|(s, _)| *s == Stage::Impression) else {
            continue;
        };
        if !keep {
            continue;
        }
        let Some(cluster) = assignment.label(&key.user) else {
            skipped_unclustered += 1;
            continue;
        };
        let n_apps = store.user_apps(&key.user).map_or(0, |a| a.len());
        let items = [
            Item::Cluster(cluster),
            Item::AppClass(classifier.classify(n_apps)),
            Item::Time(time_of_day_class(&impression.timestamp)),
        ]
        .into_iter()
        .chain(stages.iter().map(|(s, _)| Item::Stage(*s)));
        baskets.push(Basket::new(key.user.to_string(), key.advert.to_string(), items));
    }
    Ok(BasketBuild { db: BasketDb { baskets }, skipped_unclustered })
}
