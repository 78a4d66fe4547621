//! Independent reference implementations shared by the integration and
//! acceptance tests. Everything here is brute force on purpose.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use adseg_core::ingest::{InteractionRecord, Stage};
use adseg_core::mining::{AppCountClass, Basket, BasketDb, Item, TimeOfDay};
use chrono::NaiveDate;
use rand::prelude::*;

/// (antecedent label, consequent) -> (left support, support, confidence, lift)
pub type RuleTable = BTreeMap<(String, String), [f64; 4]>;

fn dim(item: &Item) -> Option<u8> {
    match item {
        Item::Cluster(_) => Some(0),
        Item::AppClass(_) => Some(1),
        Item::Time(_) => Some(2),
        Item::Stage(_) => None,
    }
}

/// Enumerates every cohort itemset up to `max_len` items (one per
/// dimension) and every consequent, keeping the rules that pass the
/// filters. Counts come from scanning the baskets directly.
pub fn exhaustive_rules(
    db: &BasketDb,
    min_left_support: f64,
    lift_floor: f64,
    consequents: &[Stage],
    max_len: usize,
) -> RuleTable {
    let universe: BTreeSet<Item> = db.baskets.iter().flat_map(|b| b.items.iter().copied()).collect();
    let cohort: Vec<Item> = universe.iter().copied().filter(|i| dim(i).is_some()).collect();
    let n = db.baskets.len() as u64;
    let count = |items: &[Item]| db.baskets.iter().filter(|b| items.iter().all(|i| b.items.contains(i))).count() as u64;
    let mut out = RuleTable::new();
    for mask in 1u32..(1 << cohort.len()) {
        let ant: Vec<Item> = (0..cohort.len()).filter(|b| mask >> b & 1 == 1).map(|b| cohort[b]).collect();
        if ant.len() > max_len {
            continue;
        }
        let dims: BTreeSet<u8> = ant.iter().filter_map(dim).collect();
        if dims.len() != ant.len() {
            continue;
        }
        let s_a = count(&ant);
        if s_a == 0 || (s_a as f64 / n as f64) < min_left_support {
            continue;
        }
        for &stage in consequents {
            let b = Item::Stage(stage);
            if !universe.contains(&b) {
                continue;
            }
            let s_b = count(&[b]);
            let mut both = ant.clone();
            both.push(b);
            let s_ab = count(&both);
            if s_ab == 0 || s_ab * n < s_a * s_b {
                continue;
            }
            let lift = (s_ab as f64 / s_a as f64) / (s_b as f64 / n as f64);
            if lift <= lift_floor {
                continue;
            }
            let label = ant.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
            out.insert(
                (label, b.to_string()),
                [s_a as f64 / n as f64, s_ab as f64 / n as f64, s_ab as f64 / s_a as f64, lift],
            );
        }
    }
    out
}

/// Random baskets over at most 12 distinct items: three clusters, three
/// app classes, three time classes and three consequent stages. Cohort
/// items are included independently, so a basket may hold several items
/// of one dimension.
pub fn random_db(rng: &mut impl Rng) -> BasketDb {
    let pool = [
        Item::Cluster(1),
        Item::Cluster(2),
        Item::Cluster(3),
        Item::AppClass(AppCountClass::Class1),
        Item::AppClass(AppCountClass::Class2),
        Item::AppClass(AppCountClass::Class4),
        Item::Time(TimeOfDay::Night),
        Item::Time(TimeOfDay::Daytime),
        Item::Time(TimeOfDay::Evening),
        Item::Stage(Stage::PlayVideo),
        Item::Stage(Stage::Video50),
        Item::Stage(Stage::VideoComplete),
    ];
    let n_items = rng.gen_range(3..=pool.len());
    let items: Vec<Item> = pool.choose_multiple(rng, n_items).copied().collect();
    let density: Vec<f64> = items.iter().map(|_| rng.gen_range(0.05..0.7)).collect();
    let n = rng.gen_range(1..=200);
    let baskets = (0..n)
        .map(|i| {
            let chosen = items.iter().zip(&density).filter(|(_, &p)| rng.gen_bool(p)).map(|(it, _)| *it);
            Basket::new(format!("u{i}"), "ad", chosen)
        })
        .collect();
    BasketDb::new(baskets)
}

/// 50 records over 4 users, 3 adverts and 3 stages with many repeated
/// keys and several exact timestamp ties.
pub fn colliding_records(seed: u64) -> Vec<InteractionRecord> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let day = NaiveDate::from_ymd_opt(2014, 5, 3).unwrap();
    (0..50)
        .map(|_| {
            let u = rng.gen_range(0..4);
            let apps: BTreeSet<String> = (0..rng.gen_range(1..4)).map(|j| format!("app{}", (u * 3 + j) % 7)).collect();
            InteractionRecord {
                user: format!("U{u}"),
                apps,
                timestamp: day.and_hms_opt(rng.gen_range(8..10), rng.gen_range(0..3) * 15, 0).unwrap(),
                stage: [Stage::Impression, Stage::Tap, Stage::PlayVideo][rng.gen_range(0..3)],
                advert: format!("Advert{}", rng.gen_range(1..4)),
                publisher: format!("Pub{}", rng.gen_range(1..3)),
                site: format!("Site{}", rng.gen_range(1..3)),
            }
        })
        .collect()
}

/// Share of points whose predicted label maps to the true label under the
/// best one-to-one relabelling (exhaustive over permutations, k ≤ 8).
pub fn best_permutation_accuracy(truth: &[u32], predicted: &[u32], k: usize) -> f64 {
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t as usize - 1][p as usize - 1] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..k).map(|t| confusion[t][p[t]]).sum();
        best = best.max(hits);
    });
    best as f64 / truth.len() as f64
}

fn permute(v: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == v.len() {
        f(v);
        return;
    }
    for i in at..v.len() {
        v.swap(at, i);
        permute(v, at + 1, f);
        v.swap(at, i);
    }
}

/// Minimum WCSS over every labelling of `points` into exactly `k`
/// non-empty groups.
pub fn exhaustive_min_wcss(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    let total = (k as u64).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let labels: Vec<usize> = (0..n)
            .map(|_| {
                let l = (c % k as u64) as usize;
                c /= k as u64;
                l
            })
            .collect();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            continue;
        }
        let wcss: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| p.iter().zip(&sums[l]).map(|(v, s)| (v - s / counts[l] as f64).powi(2)).sum::<f64>())
            .sum();
        best = best.min(wcss);
    }
    best
}
