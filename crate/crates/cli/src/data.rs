//! Loading manifest rows into model inputs.

use std::path::Path;

use polypaug_core::dataset::{resolve_path, ManifestRecord};
use polypaug_core::io::{load_image, load_mask};
use polypaug_core::{BinaryMask, RasterImage};
use polypaug_refiner::TrainSample;
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Image, inpaint region and label of one record, at file resolution.
pub struct Triple {
    pub image: RasterImage,
    pub region: BinaryMask,
    pub mask: BinaryMask,
}

fn mask_of(dir: &Path, rec: &ManifestRecord, label_path: Option<&str>) -> Result<BinaryMask> {
    let path = label_path
        .or(rec.mask_path.as_deref())
        .ok_or_else(|| CliError::Config(format!("record {} has no mask", rec.record_id)))?;
    Ok(load_mask(resolve_path(dir, path))?)
}

/// Loads a record. Synthetic rows use their stored inpaint region; real rows and
/// `ignore_region` use an all-ones region. `label_path` replaces the record's mask.
pub fn load_triple(dir: &Path, rec: &ManifestRecord, label_path: Option<&str>, ignore_region: bool) -> Result<Triple> {
    let image = load_image(resolve_path(dir, &rec.image_path))?;
    let (h, w) = image.dims();
    let mask = if rec.mask_path.is_none() && label_path.is_none() {
        BinaryMask::empty(h, w)
    } else {
        mask_of(dir, rec, label_path)?
    };
    let region_path = rec.provenance.as_ref().and_then(|p| p.region_path.as_deref());
    let region = match region_path {
        Some(p) if !ignore_region => load_mask(resolve_path(dir, p))?,
        _ => BinaryMask::full(h, w),
    };
    Ok(Triple { image, region, mask })
}

/// Prepares training samples in parallel, keeping record order.
pub fn samples(
    dir: &Path,
    records: &[&ManifestRecord],
    input_size: usize,
    label_paths: Option<&[Option<String>]>,
    ignore_region: bool,
) -> Result<Vec<TrainSample>> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let label = label_paths.and_then(|l| l[i].as_deref());
            let t = load_triple(dir, rec, label, ignore_region)?;
            Ok(TrainSample::prepare(&t.image, &t.region, &t.mask, input_size)?)
        })
        .collect()
}

/// `true` when `list` is empty or contains `id`.
pub fn allowed(list: &[String], id: &str) -> bool {
    list.is_empty() || list.iter().any(|d| d == id)
}
