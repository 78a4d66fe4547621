//! Set sizes, index values and basket counts against direct group-by
//! counts over the raw records.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use adseg_core::clustering::Assignment;
use adseg_core::ingest::{dedup_first, AdvertRegistry, Genre, InteractionRecord, Stage};
use adseg_core::metrics::{build_matrix, index_table};
use adseg_core::mining::{build_baskets, classifier_for, AdvertFilter, Class4From};
use adseg_core::synth::{generate, SynthSpec};
use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_records(n: usize, users: usize, seed: u64) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2014, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..n)
        .map(|_| {
            let u = rng.gen_range(0..users);
            InteractionRecord {
                user: format!("user{u}"),
                apps: [format!("app{}", u % 13)].into_iter().collect(),
                timestamp: start + chrono::Duration::minutes(rng.gen_range(0..60 * 24 * 30)),
                stage: Stage::ALL[rng.gen_range(0..8)],
                advert: format!("ad{}", rng.gen_range(0..9)),
                publisher: "p".into(),
                site: "s".into(),
            }
        })
        .collect()
}

fn registry() -> AdvertRegistry {
    (0..9).map(|a| (format!("ad{a}"), Genre::ALL[a % 3])).collect()
}

#[test]
fn reach_sets_match_group_by() {
    let records = random_records(10_000, 200, 1);
    let matrix = build_matrix(&dedup_first(records.clone()), &registry()).unwrap();
    let mut oracle: HashMap<(String, Stage), BTreeSet<String>> = HashMap::new();
    for r in &records {
        oracle.entry((r.advert.clone(), r.stage)).or_default().insert(r.user.clone());
    }
    for (advert, reach) in matrix.adverts() {
        for stage in Stage::ALL {
            let want = oracle.get(&(advert.to_string(), stage)).map_or(0, BTreeSet::len);
            assert_eq!(reach.users_at(stage).len(), want, "{advert} {stage:?}");
        }
    }
}

#[test]
fn index_table_matches_direct_counts() {
    let records = random_records(10_000, 200, 2);
    let mut assignment = Assignment::new(4);
    for u in 0..190 {
        assignment.insert(format!("user{u}"), (u % 4) as u32 + 1);
    }
    let reg = registry();
    let table = index_table(&build_matrix(&dedup_first(records.clone()), &reg).unwrap(), &assignment);
    // distinct (user, advert, stage) triples of clustered users
    let triples: BTreeSet<(String, String, Stage)> = records
        .iter()
        .filter(|r| assignment.label(&r.user).is_some())
        .map(|r| (r.user.clone(), r.advert.clone(), r.stage))
        .collect();
    let mut counts: BTreeMap<(u32, Genre, Stage), u64> = BTreeMap::new();
    for (u, a, s) in &triples {
        *counts.entry((assignment.label(u).unwrap(), reg.genre(a).unwrap(), *s)).or_default() += 1;
    }
    let get = |k: u32, g: Genre, s: Stage| *counts.get(&(k, g, s)).unwrap_or(&0) as f64;
    for cell in &table.cells {
        let g = cell.genre.unwrap();
        let (ce, ci) = (get(cell.cluster, g, cell.stage), get(cell.cluster, g, Stage::Impression));
        let ge: f64 = (1..=4).map(|k| get(k, g, cell.stage)).sum();
        let gi: f64 = (1..=4).map(|k| get(k, g, Stage::Impression)).sum();
        let want = (ce / ci) / (ge / gi);
        let got = cell.index.unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{cell:?} want {want}");
    }
}

#[test]
fn one_basket_per_impressed_pair() {
    let mut spec = SynthSpec::planted(2500, 4, 21, 0.6);
    spec.duplicate_rate = 0.05;
    let syn = generate(&spec).unwrap();
    let store = syn.store();
    let mut pairs = BTreeSet::new();
    syn.for_each_record(|r| {
        if r.stage == Stage::Impression {
            pairs.insert((r.user, r.advert));
        }
    });
    assert_eq!(pairs.len(), 5000);
    let assignment = syn.truth_assignment();
    let classifier = classifier_for(&store, &assignment, Class4From::Sigma);
    let built = build_baskets(&store, &assignment, &syn.registry(), &AdvertFilter::All, &classifier).unwrap();
    assert_eq!(built.db.len(), pairs.len());
    assert_eq!(built.skipped_unclustered, 0);
}
