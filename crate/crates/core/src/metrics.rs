//! Overlap metrics, sample scoring, dataset aggregation and rank averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

/// Alignment score at or above which a sample is well aligned.
pub const ALIGN_THRESHOLD: f64 = 0.93;
/// Confidence score at or below which a sample is hard.
pub const CONFIDENCE_THRESHOLD: f64 = 0.9;

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok((inter, na, nb))
}

/// Dice coefficient `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok((2 * inter) as f64 / (na + nb) as f64)
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreThresholds {
    pub align: f64,
    pub confidence: f64,
}

impl Default for ScoreThresholds {
    fn default() -> Self {
        Self {
            align: ALIGN_THRESHOLD,
            confidence: CONFIDENCE_THRESHOLD,
        }
    }
}

/// Alignment and confidence of one synthetic sample, with the derived flags.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub alignment: f64,
    pub confidence: f64,
    pub well_aligned: bool,
    pub hard: bool,
}

impl SampleScores {
    pub fn from_values(alignment: f64, confidence: f64, thresholds: ScoreThresholds) -> Self {
        Self {
            alignment,
            confidence,
            well_aligned: alignment >= thresholds.align,
            hard: confidence <= thresholds.confidence,
        }
    }
}

/// Scores a refined pseudo-mask against its boundary condition (alignment) and the
/// baseline model's initial prediction (confidence).
pub fn score_sample(
    refined: &BinaryMask,
    condition: &BinaryMask,
    initial_pred: &BinaryMask,
) -> Result<SampleScores> {
    score_sample_with(refined, condition, initial_pred, ScoreThresholds::default())
}

pub fn score_sample_with(
    refined: &BinaryMask,
    condition: &BinaryMask,
    initial_pred: &BinaryMask,
    thresholds: ScoreThresholds,
) -> Result<SampleScores> {
    refined.check_same_dims(initial_pred)?;
    let alignment = dice(refined, condition)?;
    let confidence = dice(refined, initial_pred)?;
    Ok(SampleScores::from_values(alignment, confidence, thresholds))
}

/// Per-image evaluation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub dataset_id: String,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset_id: String,
    pub mdice: f64,
    pub miou: f64,
    pub n_images: usize,
}

/// Per-dataset means plus the unweighted mean across datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_dataset: Vec<DatasetScore>,
    pub overall_mdice: f64,
    pub overall_miou: f64,
}

// Sorting before summation makes the mean independent of input order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn aggregate(per_image: &[ImageScore]) -> Result<EvalReport> {
    if per_image.is_empty() {
        return Err(Error::EmptyInput("no per-image scores to aggregate"));
    }
    let mut buckets: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in per_image {
        let b = buckets.entry(&s.dataset_id).or_default();
        b.0.push(s.dice);
        b.1.push(s.iou);
    }
    let per_dataset: Vec<DatasetScore> = buckets
        .into_iter()
        .map(|(id, (mut d, mut i))| DatasetScore {
            dataset_id: id.to_string(),
            n_images: d.len(),
            mdice: stable_mean(&mut d),
            miou: stable_mean(&mut i),
        })
        .collect();
    Ok(report_from_datasets(per_dataset))
}

/// Builds a report from already-aggregated per-dataset rows.
pub fn report_from_datasets(per_dataset: Vec<DatasetScore>) -> EvalReport {
    let n = per_dataset.len() as f64;
    let overall_mdice = per_dataset.iter().map(|d| d.mdice).sum::<f64>() / n;
    let overall_miou = per_dataset.iter().map(|d| d.miou).sum::<f64>() / n;
    EvalReport {
        per_dataset,
        overall_mdice,
        overall_miou,
    }
}

impl EvalReport {
    /// One table row: mDice/mIoU per dataset followed by the overall columns.
    pub fn to_table(&self, label: &str) -> String {
        let mut header = format!("{:<24}", "run");
        let mut row = format!("{label:<24}");
        for d in &self.per_dataset {
            header.push_str(&format!(" | {:^15}", d.dataset_id));
            row.push_str(&format!(" | {:.3}   {:.3}", d.mdice, d.miou));
        }
        header.push_str(&format!(" | {:^15}", "Overall"));
        row.push_str(&format!(" | {:.3}   {:.3}", self.overall_mdice, self.overall_miou));
        let mut sub = format!("{:<24}", "");
        for _ in 0..=self.per_dataset.len() {
            sub.push_str(" | mDice   mIoU ");
        }
        format!("{header}\n{sub}\n{row}\n")
    }
}

/// One rater's ordering of a set of method outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub session_id: String,
    pub set_id: String,
    pub method_ranks_naturalness: BTreeMap<String, u32>,
    /// Only methods conditioned on a reference image appear here.
    #[serde(default)]
    pub method_ranks_similarity: BTreeMap<String, u32>,
    pub timestamp: u64,
}

/// Checks that `ranks` is a permutation of `1..=ranks.len()`.
pub fn check_permutation<'a>(ranks: impl IntoIterator<Item = &'a u32>) -> Result<()> {
    let ranks: Vec<u32> = ranks.into_iter().copied().collect();
    let k = ranks.len();
    let seen: BTreeSet<u32> = ranks.iter().copied().collect();
    if seen.len() != k || seen.iter().any(|&r| r == 0 || r as usize > k) {
        return Err(Error::InvalidPermutation { k, ranks });
    }
    Ok(())
}

/// A per-method criterion average, or not applicable for methods never ranked on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankAverage {
    Value(f64),
    NotApplicable,
}

impl RankAverage {
    pub fn value(&self) -> Option<f64> {
        match self {
            RankAverage::Value(v) => Some(*v),
            RankAverage::NotApplicable => None,
        }
    }
}

impl fmt::Display for RankAverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankAverage::Value(v) => write!(f, "{v:.3}"),
            RankAverage::NotApplicable => f.write_str("-"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub naturalness: RankAverage,
    pub similarity: RankAverage,
}

/// Per-method mean rank for each criterion.
pub fn average_rankings(records: &[RankingRecord]) -> Result<BTreeMap<String, MethodRanking>> {
    let first = records
        .first()
        .ok_or(Error::EmptyInput("no ranking records"))?;
    let methods: BTreeSet<&String> = first.method_ranks_naturalness.keys().collect();
    let sim_methods: BTreeSet<&String> = first.method_ranks_similarity.keys().collect();
    let mut nat_sum: BTreeMap<&str, u64> = BTreeMap::new();
    let mut sim_sum: BTreeMap<&str, u64> = BTreeMap::new();
    for rec in records {
        let m: BTreeSet<&String> = rec.method_ranks_naturalness.keys().collect();
        let s: BTreeSet<&String> = rec.method_ranks_similarity.keys().collect();
        if m != methods || s != sim_methods || !s.is_subset(&m) {
            return Err(Error::InconsistentMethodSet(rec.set_id.clone()));
        }
        check_permutation(rec.method_ranks_naturalness.values())?;
        check_permutation(rec.method_ranks_similarity.values())?;
        for (k, &v) in &rec.method_ranks_naturalness {
            *nat_sum.entry(k).or_default() += v as u64;
        }
        for (k, &v) in &rec.method_ranks_similarity {
            *sim_sum.entry(k).or_default() += v as u64;
        }
    }
    let n = records.len() as f64;
    Ok(methods
        .into_iter()
        .map(|m| {
            let naturalness = RankAverage::Value(nat_sum[m.as_str()] as f64 / n);
            let similarity = sim_sum
                .get(m.as_str())
                .map_or(RankAverage::NotApplicable, |&s| RankAverage::Value(s as f64 / n));
            (
                m.clone(),
                MethodRanking {
                    naturalness,
                    similarity,
                },
            )
        })
        .collect())
}
