//! Consequent-constrained rule mining with a left-support floor.
//!
//! Antecedents are cohort itemsets (at most one item per cohort dimension)
//! whose relative support is at least `min_left_support`; they are grown
//! level by level, Apriori style. Each frequent antecedent is then paired
//! with every requested interaction consequent.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::basket::{BasketDb, Item};
use super::MiningError;
use crate::ingest::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub min_left_support: f64,
    /// Rules need lift strictly above this.
    pub lift_floor: f64,
    pub consequents: Vec<Stage>,
    pub max_antecedent: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            min_left_support: 1e-5,
            lift_floor: 1.5,
            consequents: vec![Stage::PlayVideo, Stage::Video50, Stage::VideoComplete],
            max_antecedent: 3,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<(), MiningError> {
        if !(self.min_left_support > 0.0 && self.min_left_support <= 1.0) {
            return Err(MiningError::InvalidParameter(format!(
                "min_left_support {} outside (0, 1]",
                self.min_left_support
            )));
        }
        if !self.lift_floor.is_finite() || self.lift_floor < 0.0 {
            return Err(MiningError::InvalidParameter(format!("lift floor {} must be >= 0", self.lift_floor)));
        }
        if self.max_antecedent == 0 {
            return Err(MiningError::InvalidParameter("max_antecedent must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted cohort items.
    pub antecedent: Vec<Item>,
    pub consequent: Item,
    pub left_support: f64,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
    pub n_baskets: usize,
}

impl Rule {
    pub fn antecedent_label(&self) -> String {
        self.antecedent.iter().map(Item::to_string).collect::<Vec<_>>().join(";")
    }

    fn from_counts(antecedent: Vec<Item>, consequent: Item, s_a: u64, s_ab: u64, s_b: u64, n: u64) -> Rule {
        let nf = n as f64;
        Rule {
            antecedent,
            consequent,
            left_support: s_a as f64 / nf,
            support: s_ab as f64 / nf,
            confidence: s_ab as f64 / s_a as f64,
            lift: (s_ab as f64 * nf) / (s_a as f64 * s_b as f64),
            n_baskets: n as usize,
        }
    }
}

/// Lift descending, then support descending, then antecedent text, then
/// consequent.
pub fn rule_order(a: &Rule, b: &Rule) -> Ordering {
    b.lift
        .total_cmp(&a.lift)
        .then(b.support.total_cmp(&a.support))
        .then_with(|| a.antecedent_label().cmp(&b.antecedent_label()))
        .then(a.consequent.cmp(&b.consequent))
}

type Mask = u128;

struct Encoded {
    universe: Vec<Item>,
    masks: Vec<Mask>,
}

fn encode(db: &BasketDb) -> Result<Encoded, MiningError> {
    let universe = db.universe();
    if universe.len() > Mask::BITS as usize {
        return Err(MiningError::TooManyItems(universe.len()));
    }
    let index: HashMap<Item, usize> = universe.iter().enumerate().map(|(i, &it)| (it, i)).collect();
    let masks = db.baskets.iter().map(|b| b.items.iter().fold(0 as Mask, |m, it| m | (1 << index[it]))).collect();
    Ok(Encoded { universe, masks })
}

fn count_supports(masks: &[Mask], candidates: &[Mask]) -> Vec<u64> {
    let count_one = |c: &Mask| masks.iter().filter(|&&m| m & c == *c).count() as u64;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        candidates.par_iter().map(count_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    candidates.iter().map(count_one).collect()
}

pub fn mine_rules(db: &BasketDb, params: &MiningParams) -> Result<Vec<Rule>, MiningError> {
    params.validate()?;
    if db.is_empty() {
        return Err(MiningError::EmptyDatabase);
    }
    let enc = encode(db)?;
    let n = enc.masks.len() as u64;
    let meets_floor = |count: u64| count as f64 / n as f64 >= params.min_left_support;

    let cohort: Vec<(usize, Item)> =
        enc.universe.iter().copied().enumerate().filter(|(_, it)| it.dimension().is_some()).collect();
    let consequents: Vec<(Item, Mask)> = params
        .consequents
        .iter()
        .filter_map(|&s| {
            let item = Item::Stage(s);
            enc.universe.iter().position(|&u| u == item).map(|i| (item, (1 as Mask) << i))
        })
        .collect();

    // frequent antecedents: item indices (ascending) with their support count
    let mut support: HashMap<Mask, u64> = HashMap::new();
    let mut level: Vec<Vec<usize>> = Vec::new();
    let singles: Vec<Mask> = cohort.iter().map(|(i, _)| (1 as Mask) << i).collect();
    for (&(i, _), s) in cohort.iter().zip(count_supports(&enc.masks, &singles)) {
        if meets_floor(s) {
            support.insert((1 as Mask) << i, s);
            level.push(vec![i]);
        }
    }
    let mut frequent: Vec<Vec<usize>> = level.clone();

    let mut size = 1;
    while size < params.max_antecedent && level.len() > 1 {
        let known: HashSet<Mask> = level.iter().map(|s| to_mask(s)).collect();
        let mut candidates: Vec<Vec<usize>> = Vec::new();
        for (a_idx, a) in level.iter().enumerate() {
            for b in &level[a_idx + 1..] {
                if a[..size - 1] != b[..size - 1] {
                    continue;
                }
                let (last_a, last_b) = (a[size - 1], b[size - 1]);
                let mut joined = a.clone();
                joined.push(last_b);
                joined.sort_unstable();
                debug_assert_ne!(last_a, last_b);
                let dims: HashSet<_> = joined.iter().map(|&i| enc.universe[i].dimension()).collect();
                if dims.len() != joined.len() {
                    continue;
                }
                let all_subsets_frequent = (0..joined.len()).all(|drop| {
                    let sub: Vec<usize> =
                        joined.iter().enumerate().filter(|(j, _)| *j != drop).map(|(_, &v)| v).collect();
                    known.contains(&to_mask(&sub))
                });
                if all_subsets_frequent {
                    candidates.push(joined);
                }
            }
        }
        candidates.sort();
        candidates.dedup();
        let cand_masks: Vec<Mask> = candidates.iter().map(|c| to_mask(c)).collect();
        let counts = count_supports(&enc.masks, &cand_masks);
        level = Vec::new();
        for ((cand, mask), s) in candidates.into_iter().zip(cand_masks).zip(counts) {
            if meets_floor(s) {
                // anti-monotonicity: no subset may be rarer than the set
                debug_assert!((0..cand.len()).all(|drop| {
                    let sub: Vec<usize> =
                        cand.iter().enumerate().filter(|(j, _)| *j != drop).map(|(_, &v)| v).collect();
                    support[&to_mask(&sub)] >= s
                }));
                support.insert(mask, s);
                level.push(cand);
            }
        }
        frequent.extend(level.iter().cloned());
        size += 1;
    }

    let consequent_support: Vec<u64> = count_supports(&enc.masks, &consequents.iter().map(|c| c.1).collect::<Vec<_>>());
    let mut pair_masks = Vec::with_capacity(frequent.len() * consequents.len());
    for a in &frequent {
        let am = to_mask(a);
        for (_, bm) in &consequents {
            pair_masks.push(am | bm);
        }
    }
    let pair_counts = count_supports(&enc.masks, &pair_masks);

    let mut rules = Vec::new();
    let mut pair_iter = pair_counts.into_iter();
    for a in &frequent {
        let s_a = support[&to_mask(a)];
        for ((item, _), &s_b) in consequents.iter().zip(&consequent_support) {
            let s_ab = pair_iter.next().expect("one count per pair");
            if s_ab == 0 {
                continue;
            }
            // confidence >= Supp(B)/|D|, compared exactly
            if (s_ab as u128) * (n as u128) < (s_a as u128) * (s_b as u128) {
                continue;
            }
            if (s_ab as f64 * n as f64) <= params.lift_floor * (s_a as f64 * s_b as f64) {
                continue;
            }
            let antecedent = a.iter().map(|&i| enc.universe[i]).collect();
            rules.push(Rule::from_counts(antecedent, *item, s_a, s_ab, s_b, n));
        }
    }
    rules.sort_by(rule_order);
    Ok(rules)
}

fn to_mask(items: &[usize]) -> Mask {
    items.iter().fold(0, |m, &i| m | ((1 as Mask) << i))
}

pub const RULES_CSV_HEADER: [&str; 7] =
    ["antecedent", "consequent", "left_support", "support", "confidence", "lift", "n_baskets"];

pub fn write_rules_csv<W: Write>(rules: &[Rule], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RULES_CSV_HEADER)?;
    for r in rules {
        out.write_record([
            r.antecedent_label(),
            r.consequent.to_string(),
            r.left_support.to_string(),
            r.support.to_string(),
            r.confidence.to_string(),
            r.lift.to_string(),
            r.n_baskets.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rules_csv<R: Read>(r: R) -> Result<Vec<Rule>, MiningError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rules = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let fail = |message: String| MiningError::Format { line, message };
        let row = row.map_err(|e| fail(e.to_string()))?;
        if row.len() != RULES_CSV_HEADER.len() {
            return Err(fail(format!("expected {} columns", RULES_CSV_HEADER.len())));
        }
        let float = |i: usize| -> Result<f64, MiningError> {
            row[i].parse().map_err(|_| fail(format!("bad {} {:?}", RULES_CSV_HEADER[i], &row[i])))
        };
        let antecedent = row[0]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Item>, _>>()
            .map_err(fail)?;
        rules.push(Rule {
            antecedent,
            consequent: row[1].parse().map_err(fail)?,
            left_support: float(2)?,
            support: float(3)?,
            confidence: float(4)?,
            lift: float(5)?,
            n_baskets: row[6].parse().map_err(|_| fail(format!("bad n_baskets {:?}", &row[6])))?,
        });
    }
    Ok(rules)
}
