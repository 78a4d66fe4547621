//! Greedy choice of a rule set that covers enough baskets.

use serde::Serialize;

use super::apriori::Rule;
use super::basket::BasketDb;
use super::MiningError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub rules: Vec<Rule>,
    /// Fraction of baskets matching at least one selected antecedent.
    pub coverage: f64,
    pub covered: usize,
    /// Lift averaged over selected rules, weighted by the number of
    /// baskets each antecedent matches.
    pub mean_lift: f64,
    pub reached_target: bool,
}

/// Adds the rule with the largest marginal coverage until `min_coverage`
/// is reached or no rule covers anything new. Ties prefer higher lift,
/// then earlier position in `rules`.
pub fn select_rule_set(rules: &[Rule], db: &BasketDb, min_coverage: f64) -> Result<Selection, MiningError> {
    if rules.is_empty() {
        return Err(MiningError::NoRules);
    }
    if db.is_empty() {
        return Err(MiningError::EmptyDatabase);
    }
    let n = db.len();
    let matches: Vec<Vec<bool>> =
        rules.iter().map(|r| db.baskets.iter().map(|b| b.contains_all(&r.antecedent)).collect()).collect();
    let mut covered = vec![false; n];
    let mut n_covered = 0usize;
    let mut chosen: Vec<usize> = Vec::new();
    while (n_covered as f64) / (n as f64) < min_coverage {
        let best = (0..rules.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| (i, matches[i].iter().zip(&covered).filter(|(&m, &c)| m && !c).count()))
            .filter(|&(_, gain)| gain > 0)
            .max_by(|(ia, ga), (ib, gb)| ga.cmp(gb).then(rules[*ia].lift.total_cmp(&rules[*ib].lift)).then(ib.cmp(ia)));
        let Some((i, gain)) = best else { break };
        for (c, &m) in covered.iter_mut().zip(&matches[i]) {
            *c |= m;
        }
        n_covered += gain;
        chosen.push(i);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &chosen {
        let w = matches[i].iter().filter(|&&m| m).count() as f64;
        num += rules[i].lift * w;
        den += w;
    }
    let mean_lift = if den > 0.0 { num / den } else { 0.0 };
    if chosen.is_empty() || mean_lift <= 1.0 {
        return Err(MiningError::NoQualifyingSet { mean_lift });
    }
    let coverage = n_covered as f64 / n as f64;
    Ok(Selection {
        rules: chosen.iter().map(|&i| rules[i].clone()).collect(),
        coverage,
        covered: n_covered,
        mean_lift,
        reached_target: coverage >= min_coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Stage;
    use crate::mining::basket::{Basket, Item};

    fn rule(antecedent: Vec<Item>, lift: f64) -> Rule {
        Rule {
            antecedent,
            consequent: Item::Stage(Stage::PlayVideo),
            left_support: 0.5,
            support: 0.1,
            confidence: 0.2,
            lift,
            n_baskets: 4,
        }
    }

    fn db() -> BasketDb {
        let imp = Item::Stage(Stage::Impression);
        BasketDb::new(vec![
            Basket::new("a", "x", [Item::Cluster(1), imp]),
            Basket::new("b", "x", [Item::Cluster(1), imp]),
            Basket::new("c", "x", [Item::Cluster(2), imp]),
            Basket::new("d", "x", [Item::Cluster(2), imp]),
        ])
    }

    #[test]
    fn single_full_cover() {
        let imp = Item::Stage(Stage::Impression);
        let s = select_rule_set(&[rule(vec![imp], 2.0)], &db(), 0.5).unwrap();
        assert_eq!((s.coverage, s.mean_lift, s.rules.len()), (1.0, 2.0, 1));
    }

    #[test]
    fn two_disjoint_halves() {
        let rules = [rule(vec![Item::Cluster(1)], 2.0), rule(vec![Item::Cluster(2)], 1.6)];
        let s = select_rule_set(&rules, &db(), 0.9).unwrap();
        assert_eq!(s.rules.len(), 2);
        assert_eq!(s.coverage, 1.0);
        assert!((s.mean_lift - 1.8).abs() < 1e-12);
        assert!(s.reached_target);
    }

    #[test]
    fn errors() {
        assert_eq!(select_rule_set(&[], &db(), 0.5), Err(MiningError::NoRules));
        let weak = [rule(vec![Item::Cluster(1)], 0.8)];
        assert!(matches!(select_rule_set(&weak, &db(), 0.5), Err(MiningError::NoQualifyingSet { .. })));
        let unmatched = [rule(vec![Item::Cluster(9)], 3.0)];
        assert!(matches!(select_rule_set(&unmatched, &db(), 0.5), Err(MiningError::NoQualifyingSet { .. })));
    }
}
