//! Markdown report and the CSV bundle behind it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use adseg_core::ingest::{Genre, Stage};
use adseg_core::metrics::IndexTable;
use adseg_core::mining::{write_rules_csv, Rule, Selection};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::artifacts::{create, ModelFile};

/// Result of the rule-selection stage as persisted next to the rules.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SelectionOutcome {
    Selected(Selection),
    NoRules,
    NoQualifyingSet { mean_lift: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub category: String,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster: u32,
    pub size: usize,
    /// Largest positive centroid coordinates, largest first.
    pub high: Vec<Deviation>,
    /// Most negative centroid coordinates, most negative first.
    pub low: Vec<Deviation>,
}

pub fn cluster_summaries(model: &ModelFile, top: usize) -> Vec<ClusterSummary> {
    model
        .centroids
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut coords: Vec<Deviation> =
                c.iter().enumerate().map(|(j, &z)| Deviation { category: category_name(model, j), z }).collect();
            coords.sort_by(|a, b| b.z.total_cmp(&a.z).then_with(|| a.category.cmp(&b.category)));
            let high = coords.iter().filter(|d| d.z > 0.0).take(top).cloned().collect();
            let low = coords.iter().rev().filter(|d| d.z < 0.0).take(top).cloned().collect();
            ClusterSummary { cluster: i as u32 + 1, size: model.stats.sizes.get(i).copied().unwrap_or(0), high, low }
        })
        .collect()
}

fn category_name(model: &ModelFile, j: usize) -> String {
    model.categories.get(j).cloned().unwrap_or_else(|| format!("dim{j}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

pub fn render_markdown(
    model: &ModelFile,
    index: &IndexTable,
    rules: &[Rule],
    selection: Option<&SelectionOutcome>,
) -> String {
    let mut md = String::new();
    let s = &model.stats;
    let _ = writeln!(md, "# Segmentation report\n");
    let _ = writeln!(md, "- seed: {}", model.seed);
    let _ = writeln!(md, "- users clustered: {}", s.n_users);
    let _ = writeln!(md, "- k: {}", model.k());
    let _ = writeln!(md, "- WCSS {:.4}, BCSS {:.4}, TSS {:.4}", s.wcss, s.bcss, s.tss);
    let _ = writeln!(md, "- converged: {} after {} iterations\n", s.converged, s.iterations);

    let _ = writeln!(md, "## Clusters\n");
    for c in cluster_summaries(model, 3) {
        let share = if s.n_users > 0 { 100.0 * c.size as f64 / s.n_users as f64 } else { 0.0 };
        let _ = writeln!(md, "### Cluster {} ({} users, {:.1}%)\n", c.cluster, c.size, share);
        let list = |d: &[Deviation]| {
            if d.is_empty() {
                "none".to_string()
            } else {
                d.iter().map(|d| format!("{} ({:+.2})", d.category, d.z)).collect::<Vec<_>>().join(", ")
            }
        };
        let _ = writeln!(md, "- above average: {}", list(&c.high));
        let _ = writeln!(md, "- below average: {}\n", list(&c.low));
    }

    let _ = writeln!(md, "## Index values\n");
    let stages = Stage::INTERACTIONS;
    for genre in Genre::ALL {
        let _ = writeln!(md, "### {}\n", genre.name());
        let header: Vec<&str> = stages.iter().map(|s| s.name()).collect();
        let _ = writeln!(md, "| cluster | {} |", header.join(" | "));
        let _ = writeln!(md, "|---|{}", "---|".repeat(stages.len()));
        for k in 1..=model.k() as u32 {
            let row: Vec<String> =
                stages.iter().map(|&st| fmt_opt(index.get(k, genre, st).and_then(|c| c.index))).collect();
            let _ = writeln!(md, "| {k} | {} |", row.join(" | "));
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "## Rules\n");
    if rules.is_empty() {
        let _ = writeln!(md, "no rules passed filters\n");
    } else {
        let _ = writeln!(md, "| antecedent | consequent | lift | confidence | support | left support |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        for r in rules {
            let _ = writeln!(
                md,
                "| {} | {} | {:.3} | {:.4} | {:.3e} | {:.3e} |",
                r.antecedent_label(),
                r.consequent,
                r.lift,
                r.confidence,
                r.support,
                r.left_support
            );
        }
        let _ = writeln!(md);
    }

    if let Some(sel) = selection {
        let _ = writeln!(md, "## Rule selection\n");
        match sel {
            SelectionOutcome::Selected(s) => {
                let _ = writeln!(
                    md,
                    "{} rules cover {:.1}% of baskets (target {}), mean lift {:.3}\n",
                    s.rules.len(),
                    100.0 * s.coverage,
                    if s.reached_target { "reached" } else { "not reached" },
                    s.mean_lift
                );
                for r in &s.rules {
                    let _ = writeln!(md, "- {} → {} (lift {:.3})", r.antecedent_label(), r.consequent, r.lift);
                }
                let _ = writeln!(md);
            }
            SelectionOutcome::NoRules => {
                let _ = writeln!(md, "no rules to select from\n");
            }
            SelectionOutcome::NoQualifyingSet { mean_lift } => {
                let _ = writeln!(md, "no rule set with mean lift above 1 (best {mean_lift:.3})\n");
            }
        }
    }
    md
}

pub fn write_report(
    dir: &Path,
    model: &ModelFile,
    index: &IndexTable,
    rules: &[Rule],
    selection: Option<&SelectionOutcome>,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("report.md"), render_markdown(model, index, rules, selection))?;
    let mut w = csv::Writer::from_writer(create(&dir.join("centroids.csv"))?);
    w.write_record(["cluster", "category", "z"])?;
    for (i, c) in model.centroids.iter().enumerate() {
        for (j, z) in c.iter().enumerate() {
            w.write_record([(i + 1).to_string(), category_name(model, j), z.to_string()])?;
        }
    }
    w.flush()?;
    index.write_csv(create(&dir.join("index.csv"))?)?;
    write_rules_csv(rules, create(&dir.join("rules.csv"))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::{ModelStats, MODEL_FORMAT};
    use adseg_core::clustering::{Assignment, KMeansParams};
    use adseg_core::features::default_categories;
    use adseg_core::ingest::{dedup_first, fixtures, AdvertRegistry};
    use adseg_core::metrics::{build_matrix, index_table};
    use adseg_core::mining::read_rules_csv;
    use adseg_core::mining::{AppCountClass, Item};
    use anyhow::bail;
    use std::collections::BTreeMap;
    use std::io::Read;

    /// The tables behind a report, as reloaded from its CSV bundle.
    #[derive(Debug, Clone, PartialEq)]
    struct Bundle {
        categories: Vec<String>,
        centroids: Vec<Vec<f64>>,
        index: IndexTable,
        rules: Vec<Rule>,
    }

    fn read_centroids_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let mut reader = csv::Reader::from_reader(r);
        let mut categories: Vec<String> = Vec::new();
        let mut by_cluster: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row?;
            let line = idx + 2;
            if row.len() != 3 {
                bail!("centroids line {line}: expected 3 columns");
            }
            let cluster: usize = row[0].parse().with_context(|| format!("centroids line {line}: cluster"))?;
            let z: f64 = row[2].parse().with_context(|| format!("centroids line {line}: z"))?;
            let coords = by_cluster.entry(cluster).or_default();
            if cluster == 1 {
                categories.push(row[1].to_string());
            } else if categories.get(coords.len()).map(String::as_str) != Some(&row[1]) {
                bail!("centroids line {line}: category order differs from cluster 1");
            }
            coords.push(z);
        }
        if by_cluster.keys().copied().ne(1..=by_cluster.len()) {
            bail!("centroids: cluster labels are not 1..=k");
        }
        Ok((categories, by_cluster.into_values().collect()))
    }

    fn read_bundle(dir: &Path) -> Result<Bundle> {
        let open = |name: &str| fs::File::open(dir.join(name)).with_context(|| format!("opening {name}"));
        let (categories, centroids) = read_centroids_csv(open("centroids.csv")?)?;
        let index = IndexTable::read_csv(open("index.csv")?)?;
        let rules = read_rules_csv(open("rules.csv")?)?;
        Ok(Bundle { categories, centroids, index, rules })
    }

    fn model_with(centroids: Vec<Vec<f64>>) -> ModelFile {
        let k = centroids.len();
        ModelFile {
            format: MODEL_FORMAT.into(),
            seed: 3,
            categories: default_categories(),
            params: KMeansParams { k, ..Default::default() },
            centroids,
            stats: ModelStats {
                n_users: 10,
                sizes: vec![5; k],
                wcss: 1.0,
                bcss: 2.0,
                tss: 3.0,
                iterations: 4,
                converged: true,
                best_restart: 0,
                restart_wcss: vec![1.0],
                wcss_history: vec![2.0, 1.0],
                fit_sample: None,
            },
            assignments: "model.assignments.jsonl".into(),
        }
    }

    fn idx(name: &str) -> usize {
        default_categories().iter().position(|c| c == name).unwrap()
    }

    fn table() -> IndexTable {
        let store = dedup_first(fixtures::table_records());
        let registry = AdvertRegistry::parse(fixtures::TABLE_REGISTRY).unwrap();
        let mut a = Assignment::new(2);
        a.insert("U7", 1);
        a.insert("U23", 2);
        index_table(&build_matrix(&store, &registry).unwrap(), &a)
    }

    #[test]
    fn games_and_sports_lead_the_fingerprint() {
        let mut c = vec![0.1; 22];
        c[idx("games")] = 1.8;
        c[idx("sports")] = 1.2;
        c[idx("social networking")] = -0.9;
        c[idx("finance")] = -0.7;
        let model = model_with(vec![c, vec![0.0; 22]]);
        let s = &cluster_summaries(&model, 2)[0];
        let high: Vec<&str> = s.high.iter().map(|d| d.category.as_str()).collect();
        let low: Vec<&str> = s.low.iter().map(|d| d.category.as_str()).collect();
        assert_eq!(high, ["games", "sports"]);
        assert_eq!(low, ["social networking", "finance"]);
        let md = render_markdown(&model, &table(), &[], None);
        assert!(md.contains("above average: games (+1.80), sports (+1.20)"));
        assert!(md.contains("below average: social networking (-0.90), finance (-0.70)"));
    }

    #[test]
    fn empty_rule_list_is_stated() {
        let md = render_markdown(&model_with(vec![vec![0.0; 22]; 2]), &table(), &[], None);
        assert!(md.contains("no rules passed filters"));
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = model_with(vec![(0..22).map(|j| j as f64 / 7.0 - 1.0).collect(), vec![0.25; 22]]);
        let rules = vec![Rule {
            antecedent: vec![Item::Cluster(1), Item::AppClass(AppCountClass::Class1)],
            consequent: Item::Stage(Stage::PlayVideo),
            left_support: 1.0 / 3.0,
            support: 0.1,
            confidence: 0.3,
            lift: 2.3,
            n_baskets: 30,
        }];
        let index = table();
        write_report(dir.path(), &model, &index, &rules, None).unwrap();
        let bundle = read_bundle(dir.path()).unwrap();
        assert_eq!(bundle.categories, model.categories);
        assert_eq!(bundle.centroids, model.centroids);
        assert_eq!(bundle.index, index);
        assert_eq!(bundle.rules, rules);
        assert!(dir.path().join("report.md").exists());
    }
}
