//! make-corpus, train-refiner, train-baseline and finetune.

use std::path::Path;
use std::time::Instant;

use polypaug_core::corpus::{write_corpus, CorpusSummary};
use polypaug_core::dataset::{merge_for_finetune, DatasetManifest, RecordKind, Split};
use polypaug_core::seed;
use polypaug_refiner::{checkpoint, evaluate_mdice, train, EpochStats, Refiner, TrainSample, TrainSchedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, Stage};
use crate::data::{allowed, samples};
use crate::error::{io_err, require, CliError, Result};
use crate::layout::Layout;
use crate::stages::select::SelectionSummary;

pub fn make_corpus(config: &PipelineConfig) -> Result<CorpusSummary> {
    let mut corpus = config.corpus.clone();
    corpus.seed = seed::derive(config.stage_seed(Stage::Corpus), corpus.seed);
    Ok(write_corpus(&config.paths.corpus_dir, &corpus)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: String,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Held-out mDice of the kept weights, at model input resolution.
    pub test_mdice: Option<f64>,
    pub fingerprint: String,
}

pub(crate) fn fingerprint(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

struct Fit<'a> {
    stage: &'static str,
    model: Refiner,
    train: Vec<TrainSample>,
    val: Vec<TrainSample>,
    test: Vec<TrainSample>,
    schedule: TrainSchedule,
    out: &'a Path,
    fingerprint: String,
}

fn summary_path(ckpt: &Path) -> std::path::PathBuf {
    ckpt.with_extension("json")
}

/// Returns the stored summary when `ckpt` was produced from identical inputs.
fn up_to_date(ckpt: &Path, fingerprint: &str) -> Option<TrainSummary> {
    let text = std::fs::read(summary_path(ckpt)).ok()?;
    let summary: TrainSummary = serde_json::from_slice(&text).ok()?;
    (ckpt.exists() && summary.fingerprint == fingerprint).then_some(summary)
}

fn fit(job: Fit) -> Result<TrainSummary> {
    let started = Instant::now();
    tracing::info!(
        stage = job.stage,
        train = job.train.len(),
        val = job.val.len(),
        parameters = job.model.parameter_count(),
        "training"
    );
    let outcome = train(job.model, &job.train, &job.val, &job.schedule)?;
    let test_mdice = if job.test.is_empty() {
        None
    } else {
        Some(evaluate_mdice(&outcome.model, &job.test)?)
    };
    let summary = TrainSummary {
        stage: job.stage.into(),
        train_samples: job.train.len(),
        val_samples: job.val.len(),
        test_samples: job.test.len(),
        initial_loss: outcome.initial_loss,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        test_mdice,
        fingerprint: job.fingerprint,
    };
    checkpoint::save(&outcome.model, serde_json::to_value(&summary)?, job.out)?;
    polypaug_core::dataset::write_atomic(&summary_path(job.out), &serde_json::to_vec_pretty(&summary)?)?;
    tracing::info!(
        stage = job.stage,
        best_epoch = summary.best_epoch,
        test_mdice = ?summary.test_mdice,
        secs = started.elapsed().as_secs_f64(),
        "saved {}",
        job.out.display()
    );
    Ok(summary)
}

fn seeded(schedule: &TrainSchedule, stage_seed: u64) -> TrainSchedule {
    TrainSchedule {
        seed: seed::derive(stage_seed, schedule.seed),
        ..schedule.clone()
    }
}

fn dir_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Trains the region-gated refiner on the refiner manifest's train split,
/// keeping the best validation epoch and reporting test mDice.
pub fn train_refiner(config: &PipelineConfig, force: bool) -> Result<TrainSummary> {
    let manifest_path = &config.paths.refiner_manifest;
    require(manifest_path, "refiner manifest", "make-corpus")?;
    let layout = Layout::new(&config.paths.work_dir);
    let out = layout.refiner_checkpoint();
    let section = serde_json::to_vec(&(&config.refiner, config.seeds.global))?;
    let fp = fingerprint(&[b"refiner", &section, &read(manifest_path)?]);
    if !force {
        if let Some(s) = up_to_date(&out, &fp) {
            tracing::info!("refiner weights up to date");
            return Ok(s);
        }
    }
    let manifest = DatasetManifest::read(manifest_path)?;
    let dir = dir_of(manifest_path);
    let size = config.refiner.model.input_size;
    let by_split = |split: Split| -> Result<Vec<TrainSample>> {
        let recs: Vec<_> = manifest
            .records
            .iter()
            .filter(|r| r.split == split && r.mask_path.is_some())
            .collect();
        samples(dir, &recs, size, None, false)
    };
    fit(Fit {
        stage: "refiner",
        model: Refiner::new(config.refiner.model.clone(), config.stage_seed(Stage::RefinerInit))?,
        train: by_split(Split::Train)?,
        val: by_split(Split::Val)?,
        test: by_split(Split::Test)?,
        schedule: seeded(&config.refiner.schedule, config.stage_seed(Stage::RefinerTrain)),
        out: &out,
        fingerprint: fp,
    })
}

fn base_positives(config: &PipelineConfig, manifest: &DatasetManifest, split: Split) -> DatasetManifest {
    manifest.filter(|r| {
        r.kind == RecordKind::RealPositive && r.split == split && allowed(&config.baseline.train_datasets, &r.dataset_id)
    })
}

/// Stage-1 segmentation training on real positives with an all-ones region.
pub fn train_baseline(config: &PipelineConfig, force: bool) -> Result<TrainSummary> {
    let manifest_path = &config.paths.base_manifest;
    require(manifest_path, "base manifest", "make-corpus")?;
    let layout = Layout::new(&config.paths.work_dir);
    let out = layout.baseline_checkpoint();
    let section = serde_json::to_vec(&(&config.baseline, config.seeds.global))?;
    let fp = fingerprint(&[b"baseline", &section, &read(manifest_path)?]);
    if !force {
        if let Some(s) = up_to_date(&out, &fp) {
            tracing::info!("baseline weights up to date");
            return Ok(s);
        }
    }
    let manifest = DatasetManifest::read(manifest_path)?;
    let dir = dir_of(manifest_path);
    let size = config.baseline.model.input_size;
    let load = |split| -> Result<Vec<TrainSample>> {
        let m = base_positives(config, &manifest, split);
        samples(dir, &m.records.iter().collect::<Vec<_>>(), size, None, true)
    };
    fit(Fit {
        stage: "baseline",
        model: Refiner::new(config.baseline.model.clone(), config.stage_seed(Stage::BaselineInit))?,
        train: load(Split::Train)?,
        val: load(Split::Val)?,
        test: load(Split::Test)?,
        schedule: seeded(&config.baseline.schedule, config.stage_seed(Stage::BaselineTrain)),
        out: &out,
        fingerprint: fp,
    })
}

/// Stage-2 training from the stage-1 weights on real positives plus the
/// synthetic rows selected under `label`.
pub fn finetune(config: &PipelineConfig, label: &str, force: bool) -> Result<TrainSummary> {
    crate::layout::check_label(label)?;
    let layout = Layout::new(&config.paths.work_dir);
    let selected_path = layout.selected(label);
    require(&selected_path, "selected manifest", "select")?;
    let base_ckpt = layout.baseline_checkpoint();
    require(&base_ckpt, "stage-1 weights", "train-baseline")?;
    require(&config.paths.base_manifest, "base manifest", "make-corpus")?;
    let summary: SelectionSummary = serde_json::from_slice(&read(&layout.selection_summary(label))?)?;
    let out = layout.finetuned_checkpoint(label);
    let section = serde_json::to_vec(&(&config.finetune, &config.baseline.train_datasets, config.seeds.global))?;
    let fp = fingerprint(&[
        b"finetune",
        &section,
        &read(&config.paths.base_manifest)?,
        &read(&selected_path)?,
        &read(&base_ckpt)?,
    ]);
    if !force {
        if let Some(s) = up_to_date(&out, &fp) {
            tracing::info!(label, "fine-tuned weights up to date");
            return Ok(s);
        }
    }
    let (model, _) = checkpoint::load(&base_ckpt, None)?;
    let size = model.config().input_size;
    let base = DatasetManifest::read(&config.paths.base_manifest)?;
    let base_dir = dir_of(&config.paths.base_manifest);
    let selected = DatasetManifest::read(&selected_path)?;
    let real_train = base_positives(config, &base, Split::Train);
    let merged = merge_for_finetune(&real_train, &selected)?;
    tracing::info!(label, real = real_train.len(), synthetic = selected.len(), merged = merged.len(), "fine-tune set");

    let labels: Vec<Option<String>> = selected
        .records
        .iter()
        .map(|r| {
            if summary.use_refined_masks {
                r.provenance
                    .as_ref()
                    .and_then(|p| p.refined_path.clone())
                    .ok_or_else(|| CliError::Config(format!("{} has no refined mask; run `polypaug refine-score`", r.record_id)))
                    .map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let mut train_set = samples(base_dir, &real_train.records.iter().collect::<Vec<_>>(), size, None, true)?;
    train_set.extend(samples(
        &layout.work_dir,
        &selected.records.iter().collect::<Vec<_>>(),
        size,
        Some(&labels),
        true,
    )?);
    let val_m = base_positives(config, &base, Split::Val);
    let val = samples(base_dir, &val_m.records.iter().collect::<Vec<_>>(), size, None, true)?;
    fit(Fit {
        stage: "finetune",
        model,
        train: train_set,
        val,
        test: vec![],
        schedule: seeded(&config.finetune.schedule, config.stage_seed(Stage::Finetune)),
        out: &out,
        fingerprint: fp,
    })
}
