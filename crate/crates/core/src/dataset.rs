//! Dataset manifests, splits, frame subsampling and directory importers.
//!
//! A manifest is UTF-8 JSON lines, one [`ManifestRecord`] per line. Relative
//! paths inside a manifest are resolved against the manifest file's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SampleScores;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    RealPositive,
    RealNegative,
    Synthetic,
}

/// Where a synthetic lesion was placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementSummary {
    pub target_center: (usize, usize),
    pub offset: (i64, i64),
    pub similarity_cost: f64,
}

/// Generation history of a synthetic record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub condition_id: String,
    pub background_id: String,
    pub backend: String,
    pub seed: u64,
    #[serde(default)]
    pub scores: Option<SampleScores>,
    #[serde(default)]
    pub selected: bool,
    /// Inpaint region after placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_path: Option<String>,
    /// Boundary condition after placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_pred_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub record_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub image_path: String,
    #[serde(default)]
    pub mask_path: Option<String>,
    pub kind: RecordKind,
    #[serde(default)]
    pub provenance: Option<Provenance>,
    /// Video sequence for frame-sampled datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidRecord {
                id: self.record_id.clone(),
                reason: reason.into(),
            })
        };
        match self.kind {
            RecordKind::RealNegative if self.mask_path.is_some() => bad("negative record has a mask"),
            RecordKind::RealPositive if self.mask_path.is_none() => bad("positive record has no mask"),
            RecordKind::Synthetic if self.provenance.is_none() => bad("synthetic record has no provenance"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::DuplicateId(r.record_id.clone()));
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn filter(&self, pred: impl Fn(&ManifestRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| pred(r)).cloned().collect(),
        }
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.split).or_default() += 1;
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|source| Error::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                source,
            })?);
        }
        Self::new(records)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text, path)
    }

    /// Writes via a temporary file in the same directory, then renames over `path`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    /// Flat CSV export for spreadsheets and reports.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record([
            "record_id", "dataset_id", "split", "kind", "image_path", "mask_path", "alignment", "confidence",
            "selected",
        ])
        .map_err(io_err)?;
        for r in &self.records {
            let scores = r.provenance.as_ref().and_then(|p| p.scores);
            let kind = serde_json::to_value(r.kind)?;
            w.write_record([
                r.record_id.as_str(),
                r.dataset_id.as_str(),
                &r.split.to_string(),
                kind.as_str().unwrap_or_default(),
                r.image_path.as_str(),
                r.mask_path.as_deref().unwrap_or(""),
                &scores.map(|s| s.alignment.to_string()).unwrap_or_default(),
                &scores.map(|s| s.confidence.to_string()).unwrap_or_default(),
                &r.provenance.as_ref().map(|p| p.selected.to_string()).unwrap_or_default(),
            ])
            .map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        write_atomic(path, &bytes)
    }
}

/// Resolves a manifest path against the directory containing the manifest.
pub fn resolve_path(manifest_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Largest-remainder apportionment of `n` items over `ratios`; ties go to the earlier slot.
pub fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    // guard against 599.99999... style representation error
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut remaining = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Seeded shuffle of the id-sorted records, then contiguous train/val/test partition.
pub fn split_dataset(
    mut records: Vec<ManifestRecord>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to split"));
    }
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(x > 0.0)) || ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(format!("{ratios:?}")));
    }
    records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..records.len()).rev() {
        let j = rng.random_range(0..=i);
        records.swap(i, j);
    }
    let counts = apportion(records.len(), &r);
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut i = 0;
    for (split, &count) in splits.iter().zip(&counts) {
        for rec in &mut records[i..i + count] {
            rec.split = *split;
        }
        i += count;
    }
    DatasetManifest::new(records)
}

/// Keeps every `rate`-th frame of each sequence, starting at the sequence's first frame.
/// Records without a sequence id form one sequence. Input order is the frame order.
pub fn subsample_frames(records: &[ManifestRecord], rate: usize) -> Vec<ManifestRecord> {
    let rate = rate.max(1);
    let mut index: BTreeMap<Option<&str>, usize> = BTreeMap::new();
    records
        .iter()
        .filter(|r| {
            let n = index.entry(r.sequence_id.as_deref()).or_default();
            let keep = *n % rate == 0;
            *n += 1;
            keep
        })
        .cloned()
        .collect()
}

/// Base records plus selected synthetic records, which may only join the train split.
pub fn merge_for_finetune(base: &DatasetManifest, synthetic: &DatasetManifest) -> Result<DatasetManifest> {
    if let Some(bad) = synthetic.records.iter().find(|r| r.split != Split::Train) {
        return Err(Error::InvalidRecord {
            id: bad.record_id.clone(),
            reason: format!("synthetic record in {} split", bad.split),
        });
    }
    let mut records = base.records.clone();
    records.extend(synthetic.records.iter().cloned());
    DatasetManifest::new(records)
}

/// Expected on-disk arrangement of a public dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum ImportLayout {
    /// `<root>/<images>/*.jpg` with same-stem masks in `<root>/<masks>/`, negatives in
    /// `<root>/<negatives>/`.
    Flat {
        images: String,
        masks: String,
        negatives: Option<String>,
    },
    /// `<root>/<frames>/<sequence>/*.jpg` with masks in `<root>/<masks>/<sequence>/`.
    Sequences {
        frames: String,
        masks: String,
        negatives: Option<String>,
    },
}

impl ImportLayout {
    pub fn flat() -> Self {
        ImportLayout::Flat {
            images: "images".into(),
            masks: "masks".into(),
            negatives: Some("negatives".into()),
        }
    }

    pub fn sequences() -> Self {
        ImportLayout::Sequences {
            frames: "Frame".into(),
            masks: "GT".into(),
            negatives: Some("negatives".into()),
        }
    }
}

const IMAGE_EXTS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let rd = match std::fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if p.is_file() && ext.is_some_and(|e| IMAGE_EXTS.contains(&e.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn find_mask(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Counts reported after an import.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub positives: usize,
    pub negatives: usize,
    pub sequences: usize,
    pub missing_masks: usize,
}

/// Scans a dataset directory into records, all in the train split (split afterwards).
pub fn import_dataset(
    root: &Path,
    dataset_id: &str,
    layout: &ImportLayout,
) -> Result<(Vec<ManifestRecord>, ImportSummary)> {
    let mut records = Vec::new();
    let mut summary = ImportSummary::default();
    let positive = |img: &Path, mask: PathBuf, id: String, seq: Option<String>| ManifestRecord {
        record_id: id,
        dataset_id: dataset_id.into(),
        split: Split::Train,
        image_path: path_str(img),
        mask_path: Some(path_str(&mask)),
        kind: RecordKind::RealPositive,
        provenance: None,
        sequence_id: seq,
    };
    let negatives = match layout {
        ImportLayout::Flat { images, masks, negatives } => {
            for img in list_images(&root.join(images))? {
                let s = stem(&img);
                match find_mask(&root.join(masks), &s) {
                    Some(m) => {
                        records.push(positive(&img, m, format!("{dataset_id}/{s}"), None));
                        summary.positives += 1;
                    }
                    None => summary.missing_masks += 1,
                }
            }
            negatives
        }
        ImportLayout::Sequences { frames, masks, negatives } => {
            let frame_root = root.join(frames);
            let mut seqs: Vec<PathBuf> = match std::fs::read_dir(&frame_root) {
                Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect(),
                Err(e) => return Err(Error::io(&frame_root, e)),
            };
            seqs.sort();
            summary.sequences = seqs.len();
            for seq in seqs {
                let name = stem(&seq);
                for img in list_images(&seq)? {
                    let s = stem(&img);
                    match find_mask(&root.join(masks).join(&name), &s) {
                        Some(m) => {
                            records.push(positive(&img, m, format!("{dataset_id}/{name}/{s}"), Some(name.clone())));
                            summary.positives += 1;
                        }
                        None => summary.missing_masks += 1,
                    }
                }
            }
            negatives
        }
    };
    if let Some(neg) = negatives {
        for img in list_images(&root.join(neg))? {
            records.push(ManifestRecord {
                record_id: format!("{dataset_id}/neg/{}", stem(&img)),
                dataset_id: dataset_id.into(),
                split: Split::Train,
                image_path: path_str(&img),
                mask_path: None,
                kind: RecordKind::RealNegative,
                provenance: None,
                sequence_id: None,
            });
            summary.negatives += 1;
        }
    }
    Ok((records, summary))
}

/// Subset sizes of the standard SUN-SEG recipe (train and val at 1/30, the easy and hard
/// test sets at 1/10), for comparison against locally imported counts.
pub const SUN_SEG_EXPECTED_SUBSETS: [(&str, usize); 4] =
    [("train", 848), ("val", 186), ("test-easy", 1_742), ("test-hard", 1_274)];
