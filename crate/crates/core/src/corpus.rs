//! Procedural stand-in for the endoscopy datasets, for CPU-scale runs.
//!
//! Each domain has its own mucosa palette and texture scale. Positives are
//! produced by running the toy backend on a domain background with a random
//! elliptical boundary condition, so the lesion mask is known exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, DatasetManifest, ManifestRecord, Provenance, RecordKind, Split};
use crate::error::Result;
use crate::imaging::{BinaryMask, RasterImage};
use crate::inpaint::{inpaint, InpaintRequest, ToyBackend, Variant};
use crate::io::{save_image, save_mask};
use crate::seed;

const PALETTE: [[f32; 3]; 4] = [
    [0.82, 0.55, 0.47],
    [0.74, 0.47, 0.42],
    [0.88, 0.66, 0.55],
    [0.69, 0.44, 0.40],
];

/// Texture parameters of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub name: String,
    pub base: [f32; 3],
    /// Lattice spacing of the coarse noise octave, in pixels.
    pub cell: usize,
    pub contrast: f32,
}

impl DomainStyle {
    pub fn preset(index: usize, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base: PALETTE[index % PALETTE.len()],
            cell: 8 + 4 * (index % 3),
            contrast: 0.25 + 0.05 * (index % 4) as f32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub size: usize,
    pub domains: Vec<String>,
    pub positives_per_domain: usize,
    pub negatives_per_domain: usize,
    /// Train/val/test counts of the refiner set.
    pub refiner_split: [usize; 3],
    pub min_axis: f64,
    pub max_axis: f64,
    pub region_dilation: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 64,
            domains: ["alpha", "beta", "gamma", "delta"].map(String::from).to_vec(),
            positives_per_domain: 60,
            negatives_per_domain: 30,
            refiner_split: [300, 60, 60],
            min_axis: 6.0,
            max_axis: 14.0,
            region_dilation: 6,
            seed: 7,
        }
    }
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in [0, 1] over a random lattice with the given spacing.
pub fn value_noise(h: usize, w: usize, cell: usize, rng: &mut impl Rng) -> Vec<f32> {
    let cell = cell.max(1);
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.random::<f32>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = r as f32 / cell as f32;
        let (y0, ty) = (y.floor() as usize, smoothstep(y.fract()));
        for c in 0..w {
            let x = c as f32 / cell as f32;
            let (x0, tx) = (x.floor() as usize, smoothstep(x.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(y0, x0) + tx * (at(y0, x0 + 1) - at(y0, x0));
            let bot = at(y0 + 1, x0) + tx * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0));
            out.push(top + ty * (bot - top));
        }
    }
    out
}

/// Lesion-free textured background for a domain.
pub fn toy_background(style: &DomainStyle, size: usize, seed: u64) -> Result<RasterImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = value_noise(size, size, style.cell, &mut rng);
    let fine = value_noise(size, size, 3, &mut rng);
    let shade: f32 = rng.random_range(0.9..1.1);
    RasterImage::from_fn(size, size, 3, |r, c, k| {
        let i = r * size + c;
        let lum = 1.0 + style.contrast * (coarse[i] - 0.5) + 0.08 * (fine[i] - 0.5);
        style.base[k] * lum * shade
    })
}

/// Rotated ellipse with semi-axes drawn from `[min_axis, max_axis]`, centered so the
/// axis-aligned extent stays inside the frame.
pub fn random_ellipse(h: usize, w: usize, min_axis: f64, max_axis: f64, rng: &mut impl Rng) -> BinaryMask {
    let a: f64 = rng.random_range(min_axis..=max_axis);
    let b: f64 = rng.random_range(min_axis..=max_axis);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s, co) = theta.sin_cos();
    let ext_r = ((a * s).powi(2) + (b * co).powi(2)).sqrt();
    let ext_c = ((a * co).powi(2) + (b * s).powi(2)).sqrt();
    let pick = |extent: f64, len: usize, rng: &mut dyn rand::RngCore| {
        let lo = extent.min(len as f64 / 2.0);
        let hi = (len as f64 - extent).max(lo);
        rng.random_range(lo..=hi)
    };
    let cr = pick(ext_r, h, rng);
    let cc = pick(ext_c, w, rng);
    BinaryMask::from_fn(h, w, |r, c| {
        let dy = r as f64 + 0.5 - cr;
        let dx = c as f64 + 0.5 - cc;
        let u = dx * co + dy * s;
        let v = -dx * s + dy * co;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
}

/// A generated image with its inpaint region and exact lesion mask.
#[derive(Clone, Debug)]
pub struct ToySample {
    pub image: RasterImage,
    pub region: BinaryMask,
    pub mask: BinaryMask,
}

/// Pastes a random ellipse lesion into `background` with the toy backend.
pub fn toy_sample(background: RasterImage, config: &CorpusConfig, seed: u64) -> Result<ToySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = background.dims();
    let mask = random_ellipse(h, w, config.min_axis, config.max_axis, &mut rng);
    let region = mask.dilate(config.region_dilation);
    let request = InpaintRequest::new(background, region.clone(), mask.clone()).with_seed(seed);
    let image = inpaint(&request, &ToyBackend::new(Variant::V1))?;
    Ok(ToySample { image, region, mask })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub base_records: usize,
    pub refiner_records: usize,
    pub split_counts: Vec<(String, usize)>,
}

pub const BASE_MANIFEST: &str = "base.jsonl";
pub const REFINER_MANIFEST: &str = "refiner.jsonl";

fn split_of(i: usize, n: usize) -> Split {
    let counts = crate::dataset::apportion(n, &[0.6, 0.2, 0.2]);
    if i < counts[0] {
        Split::Train
    } else if i < counts[0] + counts[1] {
        Split::Val
    } else {
        Split::Test
    }
}

/// Writes the corpus under `dir`: `base.jsonl` with real positives and negatives per
/// domain (positives split 60/20/20, negatives all train), and `refiner.jsonl` with
/// synthetic triples whose provenance carries the inpaint region.
pub fn write_corpus(dir: &Path, config: &CorpusConfig) -> Result<CorpusSummary> {
    let size = config.size;
    let mut jobs = Vec::new();
    for (d, name) in config.domains.iter().enumerate() {
        for i in 0..config.positives_per_domain {
            jobs.push((d, name.as_str(), i, true));
        }
        for i in 0..config.negatives_per_domain {
            jobs.push((d, name.as_str(), i, false));
        }
    }
    let base: Vec<ManifestRecord> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(d, name, i, positive))| -> Result<ManifestRecord> {
            let style = DomainStyle::preset(d, name);
            let s = seed::derive(config.seed, j as u64);
            let bg = toy_background(&style, size, s)?;
            if positive {
                let id = format!("{name}/pos{i:04}");
                let sample = toy_sample(bg, config, seed::splitmix64(s))?;
                let image_path = format!("images/{name}/pos{i:04}.png");
                let mask_path = format!("masks/{name}/pos{i:04}.png");
                save_image(&sample.image, dir.join(&image_path))?;
                save_mask(&sample.mask, dir.join(&mask_path))?;
                Ok(ManifestRecord {
                    record_id: id,
                    dataset_id: name.to_string(),
                    split: split_of(i, config.positives_per_domain),
                    image_path,
                    mask_path: Some(mask_path),
                    kind: RecordKind::RealPositive,
                    provenance: None,
                    sequence_id: None,
                })
            } else {
                let image_path = format!("images/{name}/neg{i:04}.png");
                save_image(&bg, dir.join(&image_path))?;
                Ok(ManifestRecord {
                    record_id: format!("{name}/neg{i:04}"),
                    dataset_id: name.to_string(),
                    split: Split::Train,
                    image_path,
                    mask_path: None,
                    kind: RecordKind::RealNegative,
                    provenance: None,
                    sequence_id: None,
                })
            }
        })
        .collect::<Result<_>>()?;
    let base = DatasetManifest::new(base)?;
    base.write(dir.join(BASE_MANIFEST))?;

    let [n_train, n_val, n_test] = config.refiner_split;
    let n_ref = n_train + n_val + n_test;
    let refiner_seed = seed::splitmix64(config.seed ^ 0x5EED);
    let refiner: Vec<ManifestRecord> = (0..n_ref)
        .into_par_iter()
        .map(|i| -> Result<ManifestRecord> {
            let d = i % config.domains.len().max(1);
            let name = config.domains.get(d).map(String::as_str).unwrap_or("toy");
            let style = DomainStyle::preset(d, name);
            let s = seed::derive(refiner_seed, i as u64);
            let bg = toy_background(&style, size, s)?;
            let gen_seed = seed::splitmix64(s);
            let sample = toy_sample(bg, config, gen_seed)?;
            let stem = format!("refiner/{i:05}");
            let image_path = format!("{stem}_image.png");
            let mask_path = format!("{stem}_mask.png");
            let region_path = format!("{stem}_region.png");
            save_image(&sample.image, dir.join(&image_path))?;
            save_mask(&sample.mask, dir.join(&mask_path))?;
            save_mask(&sample.region, dir.join(&region_path))?;
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            Ok(ManifestRecord {
                record_id: format!("refiner/{i:05}"),
                dataset_id: name.to_string(),
                split,
                image_path,
                mask_path: Some(mask_path.clone()),
                kind: RecordKind::Synthetic,
                provenance: Some(Provenance {
                    condition_id: format!("ellipse{i:05}"),
                    background_id: format!("{name}/bg{i:05}"),
                    backend: "toy-v1".into(),
                    seed: gen_seed,
                    scores: None,
                    selected: false,
                    region_path: Some(region_path),
                    condition_path: Some(mask_path),
                    refined_path: None,
                    initial_pred_path: None,
                    placement: None,
                }),
                sequence_id: None,
            })
        })
        .collect::<Result<_>>()?;
    let refiner = DatasetManifest::new(refiner)?;
    refiner.write(dir.join(REFINER_MANIFEST))?;

    let mut split_counts: Vec<(String, usize)> = base
        .split_counts()
        .into_iter()
        .map(|(s, n)| (format!("base/{s}"), n))
        .collect();
    split_counts.extend(refiner.split_counts().into_iter().map(|(s, n)| (format!("refiner/{s}"), n)));
    let summary = CorpusSummary {
        base_records: base.len(),
        refiner_records: refiner.len(),
        split_counts,
    };
    write_atomic(&dir.join("corpus.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_range_and_determinism() {
        let a = value_noise(20, 30, 6, &mut ChaCha8Rng::seed_from_u64(1));
        let b = value_noise(20, 30, 6, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ellipse_area_close_to_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_ellipse(64, 64, 10.0, 10.0, &mut rng);
            let area = std::f64::consts::PI * 100.0;
            assert!((m.count() as f64 - area).abs() < 0.08 * area, "{}", m.count());
        }
    }

    #[test]
    fn sample_lesion_is_inside_region() {
        let cfg = CorpusConfig::default();
        let bg = toy_background(&DomainStyle::preset(0, "a"), 64, 1).unwrap();
        let s = toy_sample(bg.clone(), &cfg, 2).unwrap();
        assert!(s.mask.is_subset_of(&s.region).unwrap());
        let outside = s.region.complement();
        for (r, c) in outside.foreground() {
            assert_eq!(s.image.pixel(r, c), bg.pixel(r, c));
        }
    }

    #[test]
    fn small_corpus_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            domains: vec!["a".into(), "b".into()],
            positives_per_domain: 5,
            negatives_per_domain: 2,
            refiner_split: [3, 1, 1],
            ..CorpusConfig::default()
        };
        let summary = write_corpus(dir.path(), &cfg).unwrap();
        assert_eq!((summary.base_records, summary.refiner_records), (14, 5));
        let base = DatasetManifest::read(dir.path().join(BASE_MANIFEST)).unwrap();
        let first = std::fs::read(dir.path().join(BASE_MANIFEST)).unwrap();
        write_corpus(dir.path(), &cfg).unwrap();
        assert_eq!(std::fs::read(dir.path().join(BASE_MANIFEST)).unwrap(), first);
        assert_eq!(base.filter(|r| r.kind == RecordKind::RealNegative).len(), 4);
    }
}
