//! Where each stage reads and writes inside the work directory.
//!
//! Stage manifests live at the top of the work directory and store paths
//! relative to it, so two work directories produced from the same config can be
//! compared byte for byte.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const GENERATED: &str = "generated.jsonl";
pub const SCORED: &str = "scored.jsonl";
pub const MAIN_LABEL: &str = "main";
/// Evaluation label for the stage-1 weights.
pub const NO_AUG_LABEL: &str = "no-aug";

#[derive(Clone, Debug)]
pub struct Layout {
    pub work_dir: PathBuf,
}

impl Layout {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            work_dir: work_dir.into(),
        }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.work_dir.join(rel)
    }

    pub fn refiner_checkpoint(&self) -> PathBuf {
        self.path("models/refiner.ckpt")
    }

    pub fn baseline_checkpoint(&self) -> PathBuf {
        self.path("models/baseline.ckpt")
    }

    pub fn generated(&self) -> PathBuf {
        self.path(GENERATED)
    }

    pub fn scored(&self) -> PathBuf {
        self.path(SCORED)
    }

    pub fn score_stamp(&self) -> PathBuf {
        self.path("scored.stamp")
    }

    pub fn selected(&self, label: &str) -> PathBuf {
        self.path(format!("selected-{label}.jsonl"))
    }

    pub fn selection_summary(&self, label: &str) -> PathBuf {
        self.path(format!("selected-{label}.json"))
    }

    pub fn finetuned_checkpoint(&self, label: &str) -> PathBuf {
        self.path(format!("models/finetuned-{label}.ckpt"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.path("eval")
    }

    pub fn review_store(&self) -> PathBuf {
        self.path("review")
    }
}

/// Labels become file names; keep them to a safe alphabet.
pub fn check_label(label: &str) -> Result<()> {
    let ok = !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '+' | '.'))
        && !label.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("invalid run label `{label}`")))
    }
}
