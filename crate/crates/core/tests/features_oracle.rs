use adseg_core::features::{
    build_profiles, category_percentages, fit_standardizer, read_profiles, write_profiles, AppCatalog, CategoryProfile,
    MomentAccumulator,
};
use adseg_core::ingest::{dedup_first, fixtures};
use adseg_core::synth::{generate, SynthSpec};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_profiles(n: usize, dim: usize, seed: u64) -> Vec<CategoryProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            CategoryProfile { user: format!("u{i}"), n_apps: 10, pct: raw.iter().map(|v| v / total).collect() }
        })
        .collect()
}

#[test]
fn standardizer_matches_two_pass_moments() {
    let profiles = random_profiles(5000, 22, 4);
    let st = fit_standardizer(&profiles).unwrap();
    let n = profiles.len() as f64;
    for j in 0..22 {
        let mean = profiles.iter().map(|p| p.pct[j]).sum::<f64>() / n;
        let var = profiles.iter().map(|p| (p.pct[j] - mean).powi(2)).sum::<f64>() / n;
        assert!((st.mean[j] - mean).abs() < 1e-12);
        assert!((st.sd[j] - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn chunked_accumulation_matches_whole() {
    let profiles = random_profiles(999, 5, 9);
    let mut whole = MomentAccumulator::new(5);
    profiles.iter().for_each(|p| whole.push(&p.pct));
    let mut merged = MomentAccumulator::new(5);
    for chunk in profiles.chunks(97) {
        let mut part = MomentAccumulator::new(5);
        chunk.iter().for_each(|p| part.push(&p.pct));
        merged.merge(&part);
    }
    for (a, b) in whole.mean().iter().zip(merged.mean()) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in whole.population_sd().iter().zip(merged.population_sd()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn standardized_columns_have_zero_mean_unit_sd() {
    let syn = generate(&SynthSpec::planted(800, 4, 2, 0.5)).unwrap();
    let table = build_profiles(&syn.store(), &syn.catalog()).unwrap();
    let n = table.rows.len() as f64;
    for j in 0..22 {
        let mean = table.rows.iter().map(|r| r.z[j]).sum::<f64>() / n;
        let var = table.rows.iter().map(|r| (r.z[j] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
        if !table.meta.constant_coordinates.contains(&j) {
            assert!((var - 1.0).abs() < 1e-9, "column {j} var {var}");
        }
    }
}

#[test]
fn profiles_round_trip() {
    let syn = generate(&SynthSpec::planted(300, 3, 6, 0.5)).unwrap();
    let table = build_profiles(&syn.store(), &syn.catalog()).unwrap();
    let mut buf = Vec::new();
    write_profiles(&table.rows, &mut buf).unwrap();
    assert_eq!(read_profiles(&buf[..]).unwrap(), table.rows);
}

#[test]
fn u23_fractions_are_exact() {
    let store = dedup_first(fixtures::table_records());
    let apps = store.user_apps("U23").unwrap();
    let cats: Vec<String> = adseg_core::features::default_categories();
    let catalog = AppCatalog::from_pairs(
        cats.clone(),
        apps.iter().map(|a| {
            let name = if a.starts_with("finance") {
                "finance"
            } else if a.starts_with("entertainment") {
                "entertainment"
            } else {
                "lifestyles"
            };
            (a.to_string(), cats.iter().position(|c| c == name).unwrap())
        }),
    );
    let p = category_percentages("U23", apps.iter().map(|a| &**a), &catalog).unwrap();
    let idx = |name: &str| cats.iter().position(|c| c == name).unwrap();
    assert_eq!(p.pct[idx("finance")], 1.0 / 3.0);
    assert_eq!(p.pct[idx("entertainment")], 1.0 / 2.0);
    assert_eq!(p.pct[idx("lifestyles")], 1.0 / 6.0);
    let rest = cats.iter().filter(|c| !["finance", "entertainment", "lifestyles"].contains(&c.as_str()));
    assert!(rest.map(|c| p.pct[idx(c)]).all(|v| v == 0.0));
}
