//! First-occurrence reduction of interaction logs.
//!
//! Only the earliest event per (user, advert, stage) is kept. When two
//! events for the same key share a timestamp, the one with the smaller
//! (publisher, site, app list) wins, so the result does not depend on the
//! order in which records arrive and two stores merge commutatively.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::record::{parse_record, InteractionRecord, LogFormat};
use super::stage::Stage;

/// Sorted, de-duplicated app identifiers shared between events.
pub type AppSet = Arc<[Arc<str>]>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub user: Arc<str>,
    pub advert: Arc<str>,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredEvent {
    pub timestamp: NaiveDateTime,
    pub publisher: Arc<str>,
    pub site: Arc<str>,
    pub apps: AppSet,
}

impl StoredEvent {
    fn precedes(&self, other: &StoredEvent) -> bool {
        (&self.timestamp, &self.publisher, &self.site, &self.apps[..])
            < (&other.timestamp, &other.publisher, &other.site, &other.apps[..])
    }
}

#[derive(Debug, Clone, Default)]
pub struct FirstOccurrenceStore {
    entries: BTreeMap<EventKey, StoredEvent>,
    user_apps: BTreeMap<Arc<str>, BTreeSet<Arc<str>>>,
    strings: HashSet<Arc<str>>,
    app_sets: HashSet<AppSet>,
}

impl PartialEq for FirstOccurrenceStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.user_apps == other.user_apps
    }
}

impl Eq for FirstOccurrenceStore {}

/// Reduces a stream of records to their first occurrences.
pub fn dedup_first<I>(records: I) -> FirstOccurrenceStore
where
    I: IntoIterator<Item = InteractionRecord>,
{
    let mut store = FirstOccurrenceStore::new();
    for rec in records {
        store.insert(rec);
    }
    store
}

impl FirstOccurrenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.strings.get(s) {
            return existing.clone();
        }
        let arc: Arc<str> = Arc::from(s);
        self.strings.insert(arc.clone());
        arc
    }

    fn intern_apps<'a>(&mut self, apps: impl IntoIterator<Item = &'a str>) -> AppSet {
        let mut list: Vec<Arc<str>> = apps.into_iter().map(|a| self.intern(a)).collect();
        list.sort();
        list.dedup();
        if let Some(existing) = self.app_sets.get(&list[..]) {
            return existing.clone();
        }
        let set: AppSet = list.into();
        self.app_sets.insert(set.clone());
        set
    }

    fn fold(&mut self, key: EventKey, event: StoredEvent) {
        let union = self.user_apps.entry(key.user.clone()).or_default();
        union.extend(event.apps.iter().cloned());
        match self.entries.entry(key) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(event);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                if event.precedes(slot.get()) {
                    slot.insert(event);
                }
            }
        }
    }

    pub fn insert(&mut self, record: InteractionRecord) {
        let key =
            EventKey { user: self.intern(&record.user), advert: self.intern(&record.advert), stage: record.stage };
        let event = StoredEvent {
            timestamp: record.timestamp,
            publisher: self.intern(&record.publisher),
            site: self.intern(&record.site),
            apps: self.intern_apps(record.apps.iter().map(String::as_str)),
        };
        self.fold(key, event);
    }

    /// Folds `other` into `self`; equal to deduplicating the concatenation
    /// of both inputs.
    pub fn merge(&mut self, other: &FirstOccurrenceStore) {
        for (key, event) in &other.entries {
            let key = EventKey { user: self.intern(&key.user), advert: self.intern(&key.advert), stage: key.stage };
            let event = StoredEvent {
                timestamp: event.timestamp,
                publisher: self.intern(&event.publisher),
                site: self.intern(&event.site),
                apps: self.intern_apps(event.apps.iter().map(|a| &**a)),
            };
            self.fold(key, event);
        }
        for (user, apps) in &other.user_apps {
            let user = self.intern(user);
            let apps: Vec<Arc<str>> = apps.iter().map(|a| self.intern(a)).collect();
            self.user_apps.entry(user).or_default().extend(apps);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, user: &str, advert: &str, stage: Stage) -> Option<&StoredEvent> {
        let key = EventKey { user: Arc::from(user), advert: Arc::from(advert), stage };
        self.entries.get(&key)
    }

    /// Entries in (user, advert, stage) order.
    pub fn entries(&self) -> impl Iterator<Item = (&EventKey, &StoredEvent)> {
        self.entries.iter()
    }

    /// Every app a user was seen with, across all of their records
    /// including discarded duplicates.
    pub fn user_apps(&self, user: &str) -> Option<&BTreeSet<Arc<str>>> {
        self.user_apps.get(user)
    }

    pub fn users(&self) -> impl Iterator<Item = (&Arc<str>, &BTreeSet<Arc<str>>)> {
        self.user_apps.iter()
    }

    pub fn user_count(&self) -> usize {
        self.user_apps.len()
    }

    /// Kept records, reconstructed in key order.
    pub fn records(&self) -> impl Iterator<Item = InteractionRecord> + '_ {
        self.entries.iter().map(|(k, e)| InteractionRecord {
            user: k.user.to_string(),
            apps: e.apps.iter().map(|a| a.to_string()).collect(),
            timestamp: e.timestamp,
            stage: k.stage,
            advert: k.advert.to_string(),
            publisher: e.publisher.to_string(),
            site: e.site.to_string(),
        })
    }

    /// Per-advert stage counts plus every place where a later stage was
    /// recorded more often than the stage before it. Diagnostic only.
    pub fn funnel_report(&self) -> FunnelReport {
        let mut adverts: BTreeMap<String, [usize; 8]> = BTreeMap::new();
        for key in self.entries.keys() {
            adverts.entry(key.advert.to_string()).or_default()[key.stage.ordinal()] += 1;
        }
        let mut violations = Vec::new();
        for (advert, counts) in &adverts {
            for s in 1..counts.len() {
                if counts[s] > counts[s - 1] {
                    violations.push(FunnelViolation {
                        advert: advert.clone(),
                        stage: Stage::ALL[s],
                        count: counts[s],
                        previous_count: counts[s - 1],
                    });
                }
            }
        }
        FunnelReport { adverts, violations }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = StoreHeader { adseg_store: 1, users: self.user_apps.len(), entries: self.entries.len() };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (user, apps) in &self.user_apps {
            let line = UserLine { user: user.to_string(), apps: apps.iter().map(|a| a.to_string()).collect() };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        for rec in self.records() {
            writeln!(w, "{}", rec.to_jsonl())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, StoreError> {
        let mut lines = r.lines().enumerate();
        let header: StoreHeader = match lines.next() {
            Some((_, line)) => {
                serde_json::from_str(&line?).map_err(|e| StoreError::Format { line: 1, message: e.to_string() })?
            }
            None => return Err(StoreError::Format { line: 1, message: "empty store file".into() }),
        };
        if header.adseg_store != 1 {
            return Err(StoreError::Format {
                line: 1,
                message: format!("unsupported store version {}", header.adseg_store),
            });
        }
        let mut store = FirstOccurrenceStore::new();
        let mut unions: Vec<UserLine> = Vec::with_capacity(header.users);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if unions.len() < header.users {
                let user: UserLine = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Format { line: line_no, message: e.to_string() })?;
                unions.push(user);
            } else {
                let rec = parse_record(&line, LogFormat::Jsonl, line_no)
                    .map_err(|e| StoreError::Format { line: line_no, message: e.to_string() })?;
                store.insert(rec);
            }
        }
        for u in unions {
            let user = store.intern(&u.user);
            let apps: Vec<Arc<str>> = u.apps.iter().map(|a| store.intern(a)).collect();
            store.user_apps.entry(user).or_default().extend(apps);
        }
        if store.entries.len() != header.entries || store.user_apps.len() != header.users {
            return Err(StoreError::Format {
                line: 1,
                message: format!(
                    "header declares {} users / {} entries, file holds {} / {}",
                    header.users,
                    header.entries,
                    store.user_apps.len(),
                    store.entries.len()
                ),
            });
        }
        Ok(store)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("store line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    adseg_store: u32,
    users: usize,
    entries: usize,
}

#[derive(Serialize, Deserialize)]
struct UserLine {
    user: String,
    apps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunnelViolation {
    pub advert: String,
    pub stage: Stage,
    pub count: usize,
    pub previous_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FunnelReport {
    pub adverts: BTreeMap<String, [usize; 8]>,
    pub violations: Vec<FunnelViolation>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::fixtures::table_records;

    #[test]
    fn keeps_earliest_impression() {
        let store = dedup_first(table_records());
        let kept = store.get("U7", "Advert1", Stage::Impression).unwrap();
        assert_eq!(kept.timestamp.to_string(), "2014-05-03 20:00:00");
        assert_eq!(store.len(), 7);
    }

    #[test]
    fn empty_stream() {
        let store = dedup_first(Vec::new());
        assert!(store.is_empty());
        assert_eq!(store.user_count(), 0);
    }

    #[test]
    fn app_union_includes_discarded_duplicates() {
        let mut recs = table_records();
        // a later duplicate impression carrying an extra app
        let mut late = recs[0].clone();
        late.timestamp += chrono::Duration::days(3);
        late.apps.insert("games9".into());
        recs.push(late);
        let store = dedup_first(recs);
        assert!(store.user_apps("U7").unwrap().iter().any(|a| &**a == "games9"));
        assert!(!store.get("U7", "Advert1", Stage::Impression).unwrap().apps.iter().any(|a| &**a == "games9"));
    }

    #[test]
    fn timestamp_ties_resolve_by_content() {
        let recs = table_records();
        let mut a = recs[0].clone();
        a.publisher = "PubB".into();
        let mut b = recs[0].clone();
        b.publisher = "PubA".into();
        let s1 = dedup_first(vec![a.clone(), b.clone()]);
        let s2 = dedup_first(vec![b, a]);
        assert_eq!(s1, s2);
        assert_eq!(&*s1.get("U7", "Advert1", Stage::Impression).unwrap().publisher, "PubA");
    }

    #[test]
    fn merge_equals_dedup_of_concatenation() {
        let recs = table_records();
        let (left, right) = recs.split_at(4);
        let mut merged = dedup_first(left.to_vec());
        merged.merge(&dedup_first(right.to_vec()));
        assert_eq!(merged, dedup_first(recs.clone()));
        let mut reversed = dedup_first(right.to_vec());
        reversed.merge(&dedup_first(left.to_vec()));
        assert_eq!(merged, reversed);
    }

    #[test]
    fn persisted_store_round_trips() {
        let store = dedup_first(table_records());
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let back = FirstOccurrenceStore::read_from(&buf[..]).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn funnel_report_flags_lossy_logs() {
        let recs: Vec<_> = table_records().into_iter().filter(|r| r.stage != Stage::Impression).collect();
        let report = dedup_first(recs).funnel_report();
        assert_eq!(report.adverts["Advert4"][Stage::Tap.ordinal()], 1);
        assert!(report.violations.iter().any(|v| v.stage == Stage::Tap && v.previous_count == 0));
    }
}
