//! Browser demo: generate a small synthetic population, cluster it, and
//! explore index values and mined rules. Every method returns JSON.

use adseg_core::clustering::{adjusted_rand_index, fit_points, Assignment, KMeansParams};
use adseg_core::features::{build_profiles, ProfileTable};
use adseg_core::ingest::{AdvertRegistry, FirstOccurrenceStore, Genre, Stage};
use adseg_core::metrics::{build_matrix, index_table, InteractionMatrix};
use adseg_core::mining::{build_baskets, classifier_for, mine_rules, AdvertFilter, Class4From, MiningParams};
use adseg_core::synth::{generate, SynthSpec, Synthetic};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    synthetic: Synthetic,
    store: FirstOccurrenceStore,
    registry: AdvertRegistry,
    matrix: InteractionMatrix,
    profiles: ProfileTable,
    assignment: Option<Assignment>,
}

#[derive(Serialize)]
struct ClusterView {
    label: u32,
    size: usize,
    top: Vec<(String, f64)>,
}

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// `clusters` planted segments over `users` users.
    #[wasm_bindgen(constructor)]
    pub fn new(users: usize, clusters: usize, seed: u32) -> Result<Demo, JsValue> {
        Demo::build(users, clusters, seed.into()).map_err(err)
    }

    pub fn users(&self) -> usize {
        self.profiles.rows.len()
    }

    pub fn events(&self) -> usize {
        self.synthetic.event_count()
    }

    /// Runs k-means and returns sizes, sums of squares, the agreement with
    /// the planted segments and each cluster's strongest categories.
    pub fn cluster(&mut self, k: usize, seed: u32, restarts: usize) -> Result<String, JsValue> {
        self.cluster_json(k, seed.into(), restarts).map_err(err)
    }

    /// Index values of every cluster for one genre and stage.
    pub fn index(&self, genre: &str, stage: &str) -> Result<String, JsValue> {
        self.index_json(genre, stage).map_err(err)
    }

    /// Rules above the given thresholds, strongest first.
    pub fn rules(&self, min_left_support: f64, lift: f64, limit: usize) -> Result<String, JsValue> {
        self.rules_json(min_left_support, lift, limit).map_err(err)
    }
}

impl Demo {
    fn build(users: usize, clusters: usize, seed: u64) -> Result<Demo, String> {
        let mut spec = SynthSpec::planted(users, clusters, seed, 0.6);
        for (j, c) in spec.clusters.iter_mut().enumerate() {
            // give each segment its own appetite for one genre
            let g = Genre::ALL[j % 3];
            c.funnel.get_mut(g)[0] = 0.85;
        }
        let synthetic = generate(&spec).map_err(|e| e.to_string())?;
        let store = synthetic.store();
        let registry = synthetic.registry();
        let matrix = build_matrix(&store, &registry).map_err(|e| e.to_string())?;
        let profiles = build_profiles(&store, &synthetic.catalog()).map_err(|e| e.to_string())?;
        Ok(Demo { synthetic, store, registry, matrix, profiles, assignment: None })
    }

    fn cluster_json(&mut self, k: usize, seed: u64, restarts: usize) -> Result<String, String> {
        let points: Vec<Vec<f64>> = self.profiles.rows.iter().map(|r| r.z.clone()).collect();
        let users = self.profiles.rows.iter().map(|r| r.user.clone()).collect();
        let params = KMeansParams { k, seed, restarts: restarts.max(1), ..Default::default() };
        let (model, report) = fit_points(&points, users, &params).map_err(|e| e.to_string())?;
        let truth = self.synthetic.truth_assignment();
        let planted: Vec<u32> = model.users.iter().map(|u| truth.label(u).unwrap_or(0)).collect();
        let sizes = model.sizes();
        let categories = &self.profiles.meta.categories;
        let views: Vec<ClusterView> = model
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut order: Vec<usize> = (0..c.len()).collect();
                order.sort_by(|&a, &b| c[b].total_cmp(&c[a]));
                ClusterView {
                    label: i as u32 + 1,
                    size: sizes[i],
                    top: order.iter().take(3).map(|&j| (categories[j].clone(), c[j])).collect(),
                }
            })
            .collect();
        let out = json!({
            "k": k,
            "wcss": report.wcss,
            "bcss": report.bcss,
            "tss": report.tss,
            "iterations": report.iterations,
            "ari": adjusted_rand_index(&planted, &model.labels),
            "clusters": views,
        });
        self.assignment = Some(model.assignment());
        Ok(out.to_string())
    }

    fn assignment(&self) -> Result<&Assignment, String> {
        self.assignment.as_ref().ok_or_else(|| "run clustering first".to_string())
    }

    fn index_json(&self, genre: &str, stage: &str) -> Result<String, String> {
        let genre: Genre = genre.parse().map_err(|e| format!("{e}"))?;
        let stage: Stage = stage.parse().map_err(|e| format!("{e}"))?;
        let table = index_table(&self.matrix, self.assignment()?);
        let cells: Vec<_> = table
            .cells
            .iter()
            .filter(|c| c.genre == Some(genre) && c.stage == stage)
            .map(|c| json!({ "cluster": c.cluster, "index": c.index, "rate": c.cluster_rate(), "impressions": c.cluster_impressions }))
            .collect();
        Ok(json!({ "genre": genre.name(), "stage": stage.name(), "cells": cells }).to_string())
    }

    fn rules_json(&self, min_left_support: f64, lift: f64, limit: usize) -> Result<String, String> {
        let assignment = self.assignment()?;
        let classifier = classifier_for(&self.store, assignment, Class4From::Sigma);
        let built = build_baskets(&self.store, assignment, &self.registry, &AdvertFilter::All, &classifier)
            .map_err(|e| e.to_string())?;
        let params = MiningParams { min_left_support, lift_floor: lift, ..Default::default() };
        params.validate().map_err(|e| e.to_string())?;
        let rules = mine_rules(&built.db, &params).map_err(|e| e.to_string())?;
        let shown: Vec<_> = rules
            .iter()
            .take(limit)
            .map(|r| {
                json!({
                    "antecedent": r.antecedent_label(),
                    "consequent": r.consequent.to_string(),
                    "left_support": r.left_support,
                    "confidence": r.confidence,
                    "lift": r.lift,
                    "matches": (r.support * r.n_baskets as f64).round() as u64,
                })
            })
            .collect();
        Ok(json!({ "baskets": built.db.len(), "total": rules.len(), "rules": shown }).to_string())
    }
}
