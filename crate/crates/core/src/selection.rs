//! Picking the synthetic samples that go into fine-tuning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{SampleScores, ALIGN_THRESHOLD, CONFIDENCE_THRESHOLD};

/// Cap used by every ablation policy.
pub const ABLATION_CAP: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Keep the hardest samples first; equal confidence falls back to sample id.
    #[default]
    LowestConfidenceFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionPolicy {
    pub require_aligned: bool,
    pub require_hard: bool,
    pub align_threshold: f64,
    pub confidence_threshold: f64,
    pub per_dataset_cap: Option<usize>,
    pub tie_break: TieBreak,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            require_aligned: true,
            require_hard: true,
            align_threshold: ALIGN_THRESHOLD,
            confidence_threshold: CONFIDENCE_THRESHOLD,
            per_dataset_cap: None,
            tie_break: TieBreak::LowestConfidenceFirst,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("align_threshold", self.align_threshold),
            ("confidence_threshold", self.confidence_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidPolicy(format!("{name} {t} outside [0, 1]")));
            }
        }
        if self.per_dataset_cap == Some(0) {
            return Err(Error::InvalidPolicy("per_dataset_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether a sample passes the active filters (ignores the cap).
    pub fn accepts(&self, scores: &SampleScores) -> bool {
        (!self.require_aligned || scores.alignment >= self.align_threshold)
            && (!self.require_hard || scores.confidence <= self.confidence_threshold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub dataset_id: String,
    pub scores: SampleScores,
}

/// Filters by the policy's flags, then keeps at most `cap` of the hardest samples per
/// dataset. Output is ordered by dataset id, then rank.
pub fn select(samples: &[ScoredSample], policy: &SelectionPolicy) -> Result<Vec<String>> {
    policy.validate()?;
    let mut buckets: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples.iter().filter(|s| policy.accepts(&s.scores)) {
        buckets.entry(&s.dataset_id).or_default().push(s);
    }
    let mut out = Vec::new();
    for (dataset, mut bucket) in buckets {
        match policy.tie_break {
            TieBreak::LowestConfidenceFirst => bucket.sort_by(|a, b| {
                a.scores
                    .confidence
                    .total_cmp(&b.scores.confidence)
                    .then_with(|| a.sample_id.cmp(&b.sample_id))
            }),
        }
        let keep = policy.per_dataset_cap.unwrap_or(bucket.len()).min(bucket.len());
        tracing::debug!(dataset, qualifying = bucket.len(), kept = keep, "selection bucket");
        out.extend(bucket[..keep].iter().map(|s| s.sample_id.clone()));
    }
    if out.is_empty() {
        tracing::warn!("selection policy kept no samples");
    }
    Ok(out)
}

/// One cumulative ablation configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPolicy {
    pub label: String,
    /// Train on refined pseudo-masks instead of the boundary condition.
    pub use_refined_masks: bool,
    pub policy: SelectionPolicy,
}

/// The cumulative augmentation ablation: augmentation alone, plus refined masks, plus the
/// alignment filter, plus the hardness filter. Each keeps at most 200 samples per dataset.
pub fn ablation_policies() -> Vec<AblationPolicy> {
    let base = SelectionPolicy {
        require_aligned: false,
        require_hard: false,
        per_dataset_cap: Some(ABLATION_CAP),
        ..SelectionPolicy::default()
    };
    vec![
        AblationPolicy {
            label: "aug".into(),
            use_refined_masks: false,
            policy: base.clone(),
        },
        AblationPolicy {
            label: "aug+refine".into(),
            use_refined_masks: true,
            policy: base.clone(),
        },
        AblationPolicy {
            label: "aug+refine+aligned".into(),
            use_refined_masks: true,
            policy: SelectionPolicy {
                require_aligned: true,
                ..base.clone()
            },
        },
        AblationPolicy {
            label: "aug+refine+aligned+hard".into(),
            use_refined_masks: true,
            policy: SelectionPolicy {
                require_aligned: true,
                require_hard: true,
                ..base
            },
        },
    ]
}
