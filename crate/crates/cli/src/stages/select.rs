//! Sample selection, for the configured policy or the whole ablation ladder.

use std::collections::{BTreeMap, HashMap};

use polypaug_core::dataset::DatasetManifest;
use polypaug_core::selection::{ablation_policies, select, ScoredSample, SelectionPolicy};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::allowed;
use crate::error::{require, Result};
use crate::layout::{check_label, Layout, MAIN_LABEL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub label: String,
    pub policy: SelectionPolicy,
    pub use_refined_masks: bool,
    pub backends: Vec<String>,
    pub candidates: usize,
    /// Samples passing the filters, per dataset, before the cap.
    pub qualifying: BTreeMap<String, usize>,
    pub selected: BTreeMap<String, usize>,
}

/// Scored synthetic rows from the allowed backends.
pub fn candidates(scored: &DatasetManifest, backends: &[String]) -> Vec<ScoredSample> {
    scored
        .records
        .iter()
        .filter_map(|r| {
            let p = r.provenance.as_ref()?;
            if !allowed(backends, &p.backend) {
                return None;
            }
            Some(ScoredSample {
                sample_id: r.record_id.clone(),
                dataset_id: r.dataset_id.clone(),
                scores: p.scores?,
            })
        })
        .collect()
}

fn run(
    layout: &Layout,
    scored: &DatasetManifest,
    label: &str,
    policy: &SelectionPolicy,
    use_refined_masks: bool,
    backends: &[String],
) -> Result<SelectionSummary> {
    check_label(label)?;
    let pool = candidates(scored, backends);
    let ids = select(&pool, policy)?;
    let mut qualifying = BTreeMap::new();
    for s in pool.iter().filter(|s| policy.accepts(&s.scores)) {
        *qualifying.entry(s.dataset_id.clone()).or_insert(0) += 1;
    }
    let by_id: HashMap<&str, _> = scored.records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut selected = BTreeMap::new();
    let rows = ids
        .iter()
        .map(|id| {
            let mut r = by_id[id.as_str()].clone();
            if let Some(p) = r.provenance.as_mut() {
                p.selected = true;
            }
            *selected.entry(r.dataset_id.clone()).or_insert(0) += 1;
            r
        })
        .collect();
    let manifest = DatasetManifest::new(rows)?;
    manifest.write(layout.selected(label))?;
    manifest.write_csv(layout.selected(label).with_extension("csv"))?;
    let summary = SelectionSummary {
        label: label.to_string(),
        policy: policy.clone(),
        use_refined_masks,
        backends: backends.to_vec(),
        candidates: pool.len(),
        qualifying,
        selected,
    };
    polypaug_core::dataset::write_atomic(&layout.selection_summary(label), &serde_json::to_vec_pretty(&summary)?)?;
    tracing::info!(label, selected = ids.len(), candidates = pool.len(), "selection written");
    Ok(summary)
}

fn load_scored(layout: &Layout) -> Result<DatasetManifest> {
    require(&layout.scored(), "scored manifest", "refine-score")?;
    Ok(DatasetManifest::read(layout.scored())?)
}

/// Applies the configured policy under `label` (default `main`).
pub fn select_stage(config: &PipelineConfig, label: Option<&str>) -> Result<SelectionSummary> {
    let layout = Layout::new(&config.paths.work_dir);
    let scored = load_scored(&layout)?;
    let s = &config.selection;
    run(&layout, &scored, label.unwrap_or(MAIN_LABEL), &s.policy, s.use_refined_masks, &s.backends)
}

/// Writes one selection per ablation policy, labelled by the policy.
pub fn select_ablation(config: &PipelineConfig) -> Result<Vec<SelectionSummary>> {
    let layout = Layout::new(&config.paths.work_dir);
    let scored = load_scored(&layout)?;
    ablation_policies()
        .iter()
        .map(|a| {
            let policy = SelectionPolicy {
                align_threshold: config.selection.policy.align_threshold,
                confidence_threshold: config.selection.policy.confidence_threshold,
                ..a.policy.clone()
            };
            run(&layout, &scored, &a.label, &policy, a.use_refined_masks, &config.selection.backends)
        })
        .collect()
}
