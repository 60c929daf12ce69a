//! Review set construction.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use polypaug_core::dataset::{resolve_path, DatasetManifest, ManifestRecord, RecordKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ReviewError, Result};

/// One (background, inpainted region) pair rendered by every compared method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewSet {
    pub set_id: String,
    pub background_id: String,
    pub condition_id: String,
    /// Method name to generated image, in the configured method order.
    pub images: Vec<(String, PathBuf)>,
    pub background: Option<PathBuf>,
    /// Real lesion image the boundary condition was taken from.
    pub reference: Option<PathBuf>,
}

impl ReviewSet {
    pub fn image_slots(&self) -> usize {
        self.images.len()
    }
}

/// Rewrites relative image and mask paths against `dir`.
pub fn rebase(manifest: &DatasetManifest, dir: &Path) -> DatasetManifest {
    let records = manifest
        .records
        .iter()
        .cloned()
        .map(|mut r| {
            r.image_path = resolve_path(dir, &r.image_path).to_string_lossy().into_owned();
            r.mask_path = r
                .mask_path
                .map(|m| resolve_path(dir, &m).to_string_lossy().into_owned());
            r
        })
        .collect();
    DatasetManifest { records }
}

/// Samples `n_sets` pairs for which every method in `methods` produced an image.
///
/// `synthetic` supplies the generated images keyed by provenance backend; `base`
/// supplies background and reference images by record id. When a method has
/// several images for the same pair, the smallest record id wins.
pub fn build_review_sets(
    synthetic: &DatasetManifest,
    base: &DatasetManifest,
    methods: &[String],
    n_sets: usize,
    seed: u64,
) -> Result<Vec<ReviewSet>> {
    if methods.is_empty() {
        return Err(ReviewError::InvalidConfig("no methods to compare".into()));
    }
    let mut pairs: BTreeMap<(&str, &str), BTreeMap<&str, &ManifestRecord>> = BTreeMap::new();
    for rec in synthetic.records.iter().filter(|r| r.kind == RecordKind::Synthetic) {
        let Some(p) = &rec.provenance else { continue };
        let slot = pairs
            .entry((p.background_id.as_str(), p.condition_id.as_str()))
            .or_default()
            .entry(p.backend.as_str())
            .or_insert(rec);
        if rec.record_id < slot.record_id {
            *slot = rec;
        }
    }
    let mut complete: Vec<_> = pairs
        .into_iter()
        .filter(|(_, by)| methods.iter().all(|m| by.contains_key(m.as_str())))
        .collect();
    if complete.len() < n_sets {
        return Err(ReviewError::InsufficientCoverage {
            requested: n_sets,
            available: complete.len(),
        });
    }
    complete.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let lookup: HashMap<&str, &ManifestRecord> =
        base.records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    Ok(complete
        .into_iter()
        .take(n_sets)
        .enumerate()
        .map(|(i, ((bg, cond), by))| ReviewSet {
            set_id: format!("set-{:04}", i + 1),
            background_id: bg.to_string(),
            condition_id: cond.to_string(),
            images: methods
                .iter()
                .map(|m| (m.clone(), PathBuf::from(&by[m.as_str()].image_path)))
                .collect(),
            background: lookup.get(bg).map(|r| PathBuf::from(&r.image_path)),
            reference: lookup.get(cond).map(|r| PathBuf::from(&r.image_path)),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use polypaug_core::dataset::{Provenance, Split};

    fn synth(id: &str, bg: &str, cond: &str, backend: &str) -> ManifestRecord {
        ManifestRecord {
            record_id: id.into(),
            dataset_id: "toy".into(),
            split: Split::Train,
            image_path: format!("gen/{id}.png"),
            mask_path: Some(format!("gen/{id}_mask.png")),
            kind: RecordKind::Synthetic,
            provenance: Some(Provenance {
                condition_id: cond.into(),
                background_id: bg.into(),
                backend: backend.into(),
                seed: 0,
                scores: None,
                selected: false,
                region_path: None,
                condition_path: None,
                refined_path: None,
                initial_pred_path: None,
                placement: None,
            }),
            sequence_id: None,
        }
    }

    fn grid(n_pairs: usize, methods: &[&str]) -> DatasetManifest {
        let mut records = vec![];
        for p in 0..n_pairs {
            for m in methods {
                records.push(synth(&format!("{m}-{p}"), &format!("bg{p}"), &format!("c{p}"), m));
            }
        }
        DatasetManifest { records }
    }

    fn names(m: &[&str]) -> Vec<String> {
        m.iter().map(|s| s.to_string()).collect()
    }

    const FIVE: [&str; 5] = ["copy-paste", "poisson", "sd-baseline", "v1", "v2"];

    #[test]
    fn five_methods_times_120_sets() {
        let sets = build_review_sets(&grid(150, &FIVE), &DatasetManifest::default(), &names(&FIVE), 120, 3).unwrap();
        assert_eq!(sets.len(), 120);
        assert_eq!(sets.iter().map(ReviewSet::image_slots).sum::<usize>(), 600);
    }

    #[test]
    fn incomplete_pairs_do_not_count() {
        let mut m = grid(4, &FIVE);
        m.records.retain(|r| r.record_id != "v2-1");
        let err = build_review_sets(&m, &DatasetManifest::default(), &names(&FIVE), 4, 0).unwrap_err();
        assert!(matches!(err, ReviewError::InsufficientCoverage { requested: 4, available: 3 }));
        let sets = build_review_sets(&m, &DatasetManifest::default(), &names(&FIVE), 3, 0).unwrap();
        assert!(sets.iter().all(|s| s.background_id != "bg1"));
    }

    #[test]
    fn same_seed_same_sets() {
        let m = grid(30, &FIVE);
        let a = build_review_sets(&m, &DatasetManifest::default(), &names(&FIVE), 10, 9).unwrap();
        let b = build_review_sets(&m, &DatasetManifest::default(), &names(&FIVE), 10, 9).unwrap();
        let c = build_review_sets(&m, &DatasetManifest::default(), &names(&FIVE), 10, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn background_and_reference_come_from_base() {
        let mut base = grid(0, &[]);
        for (id, path) in [("bg0", "neg/bg0.png"), ("c0", "pos/c0.png")] {
            let mut r = synth(id, "", "", "");
            r.kind = RecordKind::RealNegative;
            r.image_path = path.into();
            r.mask_path = None;
            r.provenance = None;
            base.records.push(r);
        }
        let sets = build_review_sets(&grid(1, &["v1"]), &base, &names(&["v1"]), 1, 0).unwrap();
        assert_eq!(sets[0].background.as_deref(), Some(Path::new("neg/bg0.png")));
        assert_eq!(sets[0].reference.as_deref(), Some(Path::new("pos/c0.png")));
        let rebased = rebase(&base, Path::new("/data"));
        assert_eq!(rebased.records[0].image_path, "/data/neg/bg0.png");
    }
}
