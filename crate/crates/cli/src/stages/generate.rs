//! Plan, place and inpaint synthetic samples.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use polypaug_core::dataset::{
    resolve_path, DatasetManifest, ManifestRecord, PlacementSummary, Provenance, RecordKind, Split,
};
use polypaug_core::inpaint::{
    inpaint, plan_generation, Background, BackendDescriptor, ClassicBackend, Condition, HttpBackend,
    HttpBackendConfig, InpaintBackend, PlanOptions, PlannedRequest, ToyBackend, Variant,
};
use polypaug_core::io::{load_image, load_mask, save_image, save_mask};
use polypaug_core::placement::place_conditions;
use polypaug_core::{crop_to_bbox, BinaryMask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, PipelineConfig, Stage};
use crate::data::allowed;
use crate::error::{require, CliError, Result};
use crate::layout::Layout;

/// Requests processed between manifest checkpoints.
const CHUNK: usize = 64;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub planned_requests: usize,
    pub methods: Vec<String>,
    pub generated: usize,
    pub reused: usize,
    pub failed: usize,
    pub rows: usize,
}

pub fn make_backend(config: &PipelineConfig, variant: Variant) -> Result<Arc<dyn InpaintBackend>> {
    Ok(match variant {
        Variant::CopyPaste | Variant::Poisson => Arc::new(ClassicBackend::new(variant)?),
        _ if config.backend.kind == BackendKind::Toy => Arc::new(ToyBackend::new(variant)),
        _ => {
            let descriptor = match variant {
                Variant::V1 => BackendDescriptor::v1_controlnet(),
                Variant::V2 => BackendDescriptor::v2_controlnet(),
                Variant::SdBaseline => BackendDescriptor::sd_inpaint(),
                other => return Err(CliError::Config(format!("no remote backend for {other}"))),
            };
            Arc::new(HttpBackend::new(
                descriptor,
                HttpBackendConfig {
                    endpoint: config.backend.endpoint.clone(),
                    timeout_secs: config.backend.timeout_secs,
                    retries: config.backend.retries,
                    max_in_flight: config.workers.max_in_flight,
                },
            )?)
        }
    })
}

/// Conditions (training positives) and backgrounds (negatives) from the base manifest.
pub fn pools(config: &PipelineConfig, base: &DatasetManifest, dir: &Path) -> Result<(Vec<Condition>, Vec<Background>)> {
    let mut positives: Vec<&ManifestRecord> = base
        .records
        .iter()
        .filter(|r| {
            r.kind == RecordKind::RealPositive
                && r.split == Split::Train
                && allowed(&config.engine.condition_datasets, &r.dataset_id)
        })
        .collect();
    positives.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    if let Some(n) = config.engine.max_conditions {
        positives.truncate(n);
    }
    let conditions = positives
        .par_iter()
        .map(|r| -> Result<Condition> {
            let image = load_image(resolve_path(dir, &r.image_path))?;
            let mask = load_mask(resolve_path(dir, r.mask_path.as_deref().unwrap_or_default()))?;
            let surface = crop_to_bbox(&image, &mask, 0)?;
            Ok(Condition {
                id: r.record_id.clone(),
                mask: Arc::new(mask),
                surface: Some(Arc::new(surface)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let backgrounds = base
        .records
        .par_iter()
        .filter(|r| r.kind == RecordKind::RealNegative && allowed(&config.engine.background_datasets, &r.dataset_id))
        .map(|r| -> Result<Background> {
            Ok(Background {
                id: r.record_id.clone(),
                dataset_id: r.dataset_id.clone(),
                image: Arc::new(load_image(resolve_path(dir, &r.image_path))?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((conditions, backgrounds))
}

fn border_exclusion(h: usize, w: usize, width: usize) -> Option<BinaryMask> {
    (width > 0).then(|| BinaryMask::from_fn(h, w, |r, c| r < width || c < width || r + width >= h || c + width >= w))
}

struct Placed {
    region: BinaryMask,
    condition: BinaryMask,
    summary: Option<PlacementSummary>,
}

fn place(config: &PipelineConfig, planned: &PlannedRequest) -> Result<Placed> {
    let req = &planned.request;
    let (Some(surface), true) = (&req.surface_reference, config.placement.enabled) else {
        return Ok(Placed {
            region: (*req.inpaint_region).clone(),
            condition: (*req.boundary_condition).clone(),
            summary: None,
        });
    };
    let (h, w) = req.background.dims();
    let exclusion = border_exclusion(h, w, config.placement.exclude_border);
    let p = place_conditions(
        &req.background,
        &req.inpaint_region,
        &req.boundary_condition,
        surface,
        &config.placement.params(),
        exclusion.as_ref(),
    )?;
    Ok(Placed {
        region: p.moved_inpaint_region,
        condition: p.moved_condition,
        summary: Some(PlacementSummary {
            target_center: p.target_center,
            offset: p.offset,
            similarity_cost: p.similarity_cost,
        }),
    })
}

fn stem(index: usize) -> String {
    format!("{index:06}")
}

/// Generates one planned request with every backend; a failed placement fails them all.
fn run_request(
    config: &PipelineConfig,
    layout: &Layout,
    index: usize,
    planned: &PlannedRequest,
    backends: &[Arc<dyn InpaintBackend>],
    todo: &[bool],
) -> Vec<std::result::Result<ManifestRecord, String>> {
    let placed = match place(config, planned) {
        Ok(p) => p,
        Err(e) => return todo.iter().filter(|&&t| t).map(|_| Err(format!("placement: {e}"))).collect(),
    };
    let region_rel = format!("generate/regions/{}.png", stem(index));
    let mask_rel = format!("generate/masks/{}.png", stem(index));
    let saved = save_mask(&placed.region, layout.path(&region_rel))
        .and_then(|_| save_mask(&placed.condition, layout.path(&mask_rel)));
    if let Err(e) = saved {
        return todo.iter().filter(|&&t| t).map(|_| Err(e.to_string())).collect();
    }
    let region = Arc::new(placed.region);
    let condition = Arc::new(placed.condition);
    backends
        .iter()
        .zip(todo)
        .filter(|(_, &t)| t)
        .map(|(backend, _)| {
            let d = backend.descriptor();
            let mut request = planned.request.clone();
            request.inpaint_region = region.clone();
            request.boundary_condition = condition.clone();
            if !d.variant.accepts_surface() {
                request.surface_reference = None;
            }
            let image_rel = format!("generate/{}/{}.png", d.name, stem(index));
            inpaint(&request, backend.as_ref())
                .and_then(|img| save_image(&img, layout.path(&image_rel)))
                .map(|_| ManifestRecord {
                    record_id: format!("{}/{}", d.name, stem(index)),
                    dataset_id: planned.dataset_id.clone(),
                    split: Split::Train,
                    image_path: image_rel.clone(),
                    mask_path: Some(mask_rel.clone()),
                    kind: RecordKind::Synthetic,
                    provenance: Some(Provenance {
                        condition_id: planned.condition_id.clone(),
                        background_id: planned.background_id.clone(),
                        backend: d.name.clone(),
                        seed: request.seed,
                        scores: None,
                        selected: false,
                        region_path: Some(region_rel.clone()),
                        condition_path: Some(mask_rel.clone()),
                        refined_path: None,
                        initial_pred_path: None,
                        placement: placed.summary.clone(),
                    }),
                    sequence_id: None,
                })
                .map_err(|e| format!("{}: {e}", d.name))
        })
        .collect()
}

/// Runs the generation plan with the configured backends.
pub fn generate(config: &PipelineConfig) -> Result<GenerateSummary> {
    let backends: Vec<Arc<dyn InpaintBackend>> = config
        .backend
        .methods
        .iter()
        .map(|&v| make_backend(config, v))
        .collect::<Result<_>>()?;
    generate_with(config, &backends)
}

/// Runs the generation plan with `backends`, reusing rows of an earlier run
/// whose seed matches and whose image is still on disk.
pub fn generate_with(config: &PipelineConfig, backends: &[Arc<dyn InpaintBackend>]) -> Result<GenerateSummary> {
    let base_path = &config.paths.base_manifest;
    require(base_path, "base manifest", "make-corpus")?;
    let layout = Layout::new(&config.paths.work_dir);
    let base = DatasetManifest::read(base_path)?;
    let (conditions, backgrounds) = pools(config, &base, base_path.parent().unwrap_or(Path::new(".")))?;
    let plan = plan_generation(
        &conditions,
        &backgrounds,
        config.engine.backgrounds_per_condition,
        config.stage_seed(Stage::Generate),
        PlanOptions {
            region_dilation: config.engine.dilation,
            noise_strength: config.engine.noise_strength,
            sampling_steps: config.engine.steps,
        },
    )?;
    let names: Vec<String> = backends.iter().map(|b| b.descriptor().name.clone()).collect();

    let out_path = layout.generated();
    let mut previous: HashMap<String, ManifestRecord> = if out_path.exists() {
        DatasetManifest::read(&out_path)?
            .records
            .into_iter()
            .map(|r| (r.record_id.clone(), r))
            .collect()
    } else {
        HashMap::new()
    };
    let reusable = |id: &str, seed: u64, previous: &HashMap<String, ManifestRecord>| {
        previous.get(id).is_some_and(|r| {
            r.provenance.as_ref().is_some_and(|p| p.seed == seed)
                && layout.path(&r.image_path).exists()
                && r.mask_path.as_ref().is_some_and(|m| layout.path(m).exists())
        })
    };

    let mut summary = GenerateSummary {
        planned_requests: plan.len(),
        methods: names.clone(),
        ..Default::default()
    };
    let mut rows: Vec<ManifestRecord> = Vec::with_capacity(plan.len() * names.len());
    let limit = config.engine.max_failure_rate;
    for (chunk_index, chunk) in plan.chunks(CHUNK).enumerate() {
        let offset = chunk_index * CHUNK;
        let results: Vec<(Vec<bool>, Vec<std::result::Result<ManifestRecord, String>>)> = chunk
            .par_iter()
            .enumerate()
            .map(|(j, planned)| {
                let index = offset + j;
                let todo: Vec<bool> = names
                    .iter()
                    .map(|n| !reusable(&format!("{n}/{}", stem(index)), planned.request.seed, &previous))
                    .collect();
                let fresh = if todo.iter().any(|&t| t) {
                    run_request(config, &layout, index, planned, backends, &todo)
                } else {
                    vec![]
                };
                (todo, fresh)
            })
            .collect();
        for (j, (todo, mut fresh)) in results.into_iter().enumerate() {
            let index = offset + j;
            fresh.reverse();
            for (n, pending) in names.iter().zip(todo) {
                let id = format!("{n}/{}", stem(index));
                if !pending {
                    rows.push(previous.remove(&id).expect("checked"));
                    summary.reused += 1;
                    continue;
                }
                match fresh.pop().expect("one result per pending method") {
                    Ok(rec) => {
                        rows.push(rec);
                        summary.generated += 1;
                    }
                    Err(e) => {
                        tracing::warn!(request = index, "generation failed: {e}");
                        summary.failed += 1;
                    }
                }
            }
        }
        DatasetManifest::new(rows.clone())?.write(&out_path)?;
        let attempted = summary.generated + summary.failed;
        if attempted > 0 && summary.failed as f64 > limit * attempted as f64 {
            return Err(CliError::FailureRateExceeded {
                failed: summary.failed,
                attempted,
                limit: limit * 100.0,
            });
        }
    }
    summary.rows = rows.len();
    tracing::info!(?summary, "generation finished");
    Ok(summary)
}
