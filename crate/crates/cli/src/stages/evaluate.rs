//! Test-set evaluation of one or more runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use polypaug_core::dataset::{DatasetManifest, RecordKind, Split};
use polypaug_core::metrics::{aggregate, dice, iou, report_from_datasets, EvalReport, ImageScore};
use polypaug_refiner::checkpoint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::{allowed, load_triple};
use crate::error::{io_err, require, CliError, Result};
use crate::layout::{check_label, Layout, MAIN_LABEL, NO_AUG_LABEL};
use crate::stages::score::{FullFrame, MaskModel};
use crate::stages::select::SelectionSummary;

/// Which ablation components a run used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub aug: bool,
    pub refine: bool,
    pub aligned: bool,
    pub hard: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub components: Components,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub runs: Vec<RunReport>,
}

/// Scores `model` on the test positives of `datasets` (all when empty).
/// Columns follow `datasets` when given, dataset id order otherwise.
pub fn evaluate_model(model: &dyn MaskModel, base: &DatasetManifest, dir: &Path, datasets: &[String]) -> Result<EvalReport> {
    let test: Vec<_> = base
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::RealPositive && r.split == Split::Test && allowed(datasets, &r.dataset_id))
        .collect();
    if test.is_empty() {
        return Err(CliError::Config("no test positives for the evaluation datasets".into()));
    }
    let scores: Vec<ImageScore> = test
        .par_iter()
        .map(|r| -> Result<ImageScore> {
            let t = load_triple(dir, r, None, true)?;
            let pred = model.predict(&t)?;
            Ok(ImageScore {
                dataset_id: r.dataset_id.clone(),
                dice: dice(&pred, &t.mask)?,
                iou: iou(&pred, &t.mask)?,
            })
        })
        .collect::<Result<_>>()?;
    let report = aggregate(&scores)?;
    if datasets.is_empty() {
        return Ok(report);
    }
    let mut ordered = Vec::with_capacity(datasets.len());
    for d in datasets {
        let row = report
            .per_dataset
            .iter()
            .find(|s| &s.dataset_id == d)
            .ok_or_else(|| CliError::Config(format!("evaluation dataset `{d}` has no test positives")))?;
        ordered.push(row.clone());
    }
    Ok(report_from_datasets(ordered))
}

/// Resolves a run label to its weights and ablation components.
fn resolve_run(layout: &Layout, label: &str) -> Result<(PathBuf, Components)> {
    check_label(label)?;
    if label == NO_AUG_LABEL {
        let p = layout.baseline_checkpoint();
        require(&p, "stage-1 segmentation weights", "train-baseline")?;
        return Ok((p, Components::default()));
    }
    let p = layout.finetuned_checkpoint(label);
    require(&p, "fine-tuned weights", "finetune")?;
    let summary_path = layout.selection_summary(label);
    let bytes = std::fs::read(&summary_path).map_err(io_err(&summary_path))?;
    let s: SelectionSummary = serde_json::from_slice(&bytes)?;
    Ok((
        p,
        Components {
            aug: true,
            refine: s.use_refined_masks,
            aligned: s.policy.require_aligned,
            hard: s.policy.require_hard,
        },
    ))
}

/// Evaluates `runs` (default: `no-aug` and `main`) and writes reports to `eval/`.
pub fn evaluate(config: &PipelineConfig, runs: &[String]) -> Result<Evaluation> {
    let layout = Layout::new(&config.paths.work_dir);
    require(&config.paths.base_manifest, "base manifest", "make-corpus")?;
    let labels: Vec<String> = if runs.is_empty() {
        vec![NO_AUG_LABEL.into(), MAIN_LABEL.into()]
    } else {
        runs.to_vec()
    };
    let base = DatasetManifest::read(&config.paths.base_manifest)?;
    let dir = config.paths.base_manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(labels.len());
    for label in &labels {
        let (ckpt, components) = resolve_run(&layout, label)?;
        let (model, _) = checkpoint::load(&ckpt, None)?;
        let report = evaluate_model(&FullFrame(model), &base, dir, &config.eval.datasets)?;
        tracing::info!(label, overall_mdice = report.overall_mdice, overall_miou = report.overall_miou, "evaluated");
        out.push(RunReport {
            label: label.clone(),
            components,
            report,
        });
    }
    let evaluation = Evaluation { runs: out };
    let eval_dir = layout.eval_dir();
    let write = |name: &str, bytes: &[u8]| polypaug_core::dataset::write_atomic(&eval_dir.join(name), bytes);
    write("report.json", &serde_json::to_vec_pretty(&evaluation)?)?;
    write("table2.txt", table2(&evaluation.runs).as_bytes())?;
    if evaluation.runs.len() > 1 {
        write("table3.txt", table3(&evaluation.runs).as_bytes())?;
    }
    Ok(evaluation)
}

/// Per-dataset mDice/mIoU columns followed by the overall mean, one row per run.
pub fn table2(runs: &[RunReport]) -> String {
    let Some(first) = runs.first() else { return String::new() };
    let w = label_width(runs);
    let mut header = format!("{:<w$}", "Method");
    let mut sub = format!("{:<w$}", "");
    for d in &first.report.per_dataset {
        let _ = write!(header, " | {:^12}", d.dataset_id);
        sub.push_str(" | mDice   mIoU");
    }
    let _ = write!(header, " | {:^12}", "Overall");
    sub.push_str(" | mDice   mIoU");
    let mut out = format!("{header}\n{sub}\n");
    for r in runs {
        let _ = write!(out, "{:<w$}", r.label);
        for d in &r.report.per_dataset {
            let _ = write!(out, " | {:.3}  {:.3}", d.mdice, d.miou);
        }
        let _ = writeln!(out, " | {:.3}  {:.3}", r.report.overall_mdice, r.report.overall_miou);
    }
    out
}

/// Ablation layout: component check marks, then overall mDice and mIoU.
pub fn table3(runs: &[RunReport]) -> String {
    let mark = |b: bool| if b { "x" } else { "-" };
    let w = label_width(runs);
    let mut out = format!(
        "{:<w$} | {:^5} | {:^6} | {:^7} | {:^4} | {:^13} | {:^12}\n",
        "Run", "Aug", "Refine", "Aligned", "Hard", "Overall mDice", "Overall mIoU"
    );
    for r in runs {
        let c = r.components;
        let _ = writeln!(
            out,
            "{:<w$} | {:^5} | {:^6} | {:^7} | {:^4} | {:^13.3} | {:^12.3}",
            r.label,
            mark(c.aug),
            mark(c.refine),
            mark(c.aligned),
            mark(c.hard),
            r.report.overall_mdice,
            r.report.overall_miou
        );
    }
    out
}

fn label_width(runs: &[RunReport]) -> usize {
    runs.iter().map(|r| r.label.len()).max().unwrap_or(0).max(20)
}
