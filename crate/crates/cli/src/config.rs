//! Pipeline configuration, one TOML file for every stage.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every section has defaults, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use polypaug_core::corpus::CorpusConfig;
use polypaug_core::inpaint::{Variant, DEFAULT_NOISE_STRENGTH, DEFAULT_REGION_DILATION, DEFAULT_SAMPLING_STEPS};
use polypaug_core::placement::PlacementParams;
use polypaug_core::selection::SelectionPolicy;
use polypaug_refiner::{RefinerConfig, TrainSchedule};
use polypaug_review::ReviewConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

/// Overrides `backend.endpoint` when set.
pub const ENDPOINT_ENV: &str = "POLYPAUG_ADAPTER_ENDPOINT";
/// Upper bound on fine-tuning epochs.
pub const MAX_FINETUNE_EPOCHS: usize = 25;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seeds: Seeds,
    pub workers: Workers,
    pub corpus: CorpusConfig,
    pub backend: BackendConfig,
    pub placement: PlacementConfig,
    pub engine: EngineConfig,
    pub refiner: TrainingSection,
    pub baseline: BaselineSection,
    pub selection: SelectionConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub review: ReviewSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Real positives and negatives.
    pub base_manifest: PathBuf,
    /// (image, region, mask) triples for the refiner.
    pub refiner_manifest: PathBuf,
    /// Output of `make-corpus`.
    pub corpus_dir: PathBuf,
    /// Every stage writes below this directory.
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            base_manifest: "corpus/base.jsonl".into(),
            refiner_manifest: "corpus/refiner.jsonl".into(),
            corpus_dir: "corpus".into(),
            work_dir: "work".into(),
        }
    }
}

/// Stage seeds are derived from `global` with fixed per-stage tags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub global: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workers {
    /// Threads for data-parallel stage work; 0 uses every core.
    pub threads: usize,
    /// Concurrent requests to a remote backend.
    pub max_in_flight: usize,
}

impl Default for Workers {
    fn default() -> Self {
        Self {
            threads: 0,
            max_in_flight: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// In-process deterministic compositor.
    #[default]
    Toy,
    /// Diffusion model behind the HTTP adapter.
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Methods run for every planned request. Copy-paste and Poisson always run locally.
    pub methods: Vec<Variant>,
    pub endpoint: String,
    pub timeout_secs: f64,
    pub retries: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Toy,
            methods: vec![Variant::V2],
            endpoint: "http://127.0.0.1:7860/inpaint".into(),
            timeout_secs: 300.0,
            retries: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    /// Move conditions to the best color-matching background patch.
    pub enabled: bool,
    pub stride: usize,
    pub exhaustive: bool,
    /// Width of a frame along the image border that placement must avoid.
    pub exclude_border: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            stride: PlacementParams::default().stride,
            exhaustive: false,
            exclude_border: 0,
        }
    }
}

impl PlacementConfig {
    pub fn params(&self) -> PlacementParams {
        PlacementParams {
            stride: self.stride,
            exhaustive: self.exhaustive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub noise_strength: f64,
    pub steps: u32,
    /// Disk radius growing a condition mask into its inpaint region.
    pub dilation: usize,
    pub backgrounds_per_condition: usize,
    /// Take at most this many conditions, in record id order.
    pub max_conditions: Option<usize>,
    /// Datasets whose training positives supply conditions; empty means all.
    pub condition_datasets: Vec<String>,
    /// Datasets whose negatives supply backgrounds; empty means all.
    pub background_datasets: Vec<String>,
    /// Abort when more than this fraction of requests fail.
    pub max_failure_rate: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            noise_strength: DEFAULT_NOISE_STRENGTH,
            steps: DEFAULT_SAMPLING_STEPS,
            dilation: DEFAULT_REGION_DILATION,
            backgrounds_per_condition: 40,
            max_conditions: None,
            condition_datasets: vec![],
            background_datasets: vec![],
            max_failure_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub model: RefinerConfig,
    pub schedule: TrainSchedule,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            model: RefinerConfig::default(),
            schedule: TrainSchedule::default(),
        }
    }
}

/// Stage-1 segmentation model: the refiner network run with an all-ones region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub model: RefinerConfig,
    pub schedule: TrainSchedule,
    /// Datasets the stage-1 model trains and validates on; empty means all.
    pub train_datasets: Vec<String>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            model: RefinerConfig::default(),
            schedule: TrainSchedule::default(),
            train_datasets: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub policy: SelectionPolicy,
    /// Label fine-tuning data with refined masks instead of the boundary condition.
    pub use_refined_masks: bool,
    /// Backend names eligible for selection; empty means all.
    pub backends: Vec<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            policy: SelectionPolicy::default(),
            use_refined_masks: true,
            backends: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub schedule: TrainSchedule,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            schedule: TrainSchedule {
                epochs: MAX_FINETUNE_EPOCHS,
                learning_rate: 1e-5,
                ..TrainSchedule::default()
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Datasets reported, in column order; empty means every dataset with test images.
    pub datasets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    /// Backend names compared in each set, in report row order.
    pub methods: Vec<String>,
    pub n_sets: usize,
    pub bind: String,
    /// Built frontend served at `/`.
    pub static_dir: Option<PathBuf>,
    pub service: ReviewConfig,
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self {
            methods: ["copy-paste", "poisson", "sd-inpaint", "controlnet-v1", "controlnet-v2"]
                .map(String::from)
                .to_vec(),
            n_sets: 120,
            bind: "127.0.0.1:8080".into(),
            static_dir: None,
            service: ReviewConfig {
                similarity_methods: ["sd-inpaint", "controlnet-v1", "controlnet-v2"].map(String::from).to_vec(),
                ..ReviewConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Reads `path`, resolves relative paths against its directory and applies
    /// the endpoint environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::Config(format!("config file {} not found", path.display()))
            } else {
                io_err(path)(e)
            }
        })?;
        let mut config = Self::parse(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.is_empty() {
                config.backend.endpoint = endpoint;
            }
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.base_manifest, &mut p.refiner_manifest, &mut p.corpus_dir, &mut p.work_dir] {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        if let Some(s) = &mut self.review.static_dir {
            if s.is_relative() {
                *s = dir.join(&*s);
            }
        }
    }

    /// Value and range checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.global > i64::MAX as u64 {
            return bad(format!("seeds.global {} does not fit a TOML integer", self.seeds.global));
        }
        let e = &self.engine;
        if !(0.0..=1.0).contains(&e.noise_strength) {
            return bad(format!("engine.noise_strength {} outside [0, 1]", e.noise_strength));
        }
        if e.steps == 0 {
            return bad("engine.steps must be positive".into());
        }
        if e.backgrounds_per_condition == 0 {
            return bad("engine.backgrounds_per_condition must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.max_failure_rate) {
            return bad(format!("engine.max_failure_rate {} outside [0, 1]", e.max_failure_rate));
        }
        if self.placement.stride == 0 {
            return bad("placement.stride must be positive".into());
        }
        if self.backend.methods.is_empty() {
            return bad("backend.methods is empty".into());
        }
        if self.backend.kind == BackendKind::Http && self.backend.methods.contains(&Variant::Toy) {
            return bad("the toy variant has no remote backend".into());
        }
        if self.backend.timeout_secs <= 0.0 {
            return bad("backend.timeout_secs must be positive".into());
        }
        for (name, model) in [("refiner", &self.refiner.model), ("baseline", &self.baseline.model)] {
            model
                .validate()
                .map_err(|err| CliError::Config(format!("{name}.model: {err}")))?;
        }
        for (name, s) in [
            ("refiner", &self.refiner.schedule),
            ("baseline", &self.baseline.schedule),
            ("finetune", &self.finetune.schedule),
        ] {
            if s.epochs == 0 || s.batch_size == 0 || !(s.learning_rate > 0.0) {
                return bad(format!("{name}.schedule needs positive epochs, batch_size and learning_rate"));
            }
        }
        if self.finetune.schedule.epochs > MAX_FINETUNE_EPOCHS {
            return bad(format!(
                "finetune.schedule.epochs {} exceeds {MAX_FINETUNE_EPOCHS}",
                self.finetune.schedule.epochs
            ));
        }
        if self.baseline.model.input_size != self.refiner.model.input_size {
            tracing::debug!("baseline and refiner use different input sizes");
        }
        self.selection
            .policy
            .validate()
            .map_err(|err| CliError::Config(format!("selection.policy: {err}")))?;
        if self.review.methods.is_empty() {
            return bad("review.methods is empty".into());
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        polypaug_core::seed::derive(self.seeds.global, stage as u64)
    }
}

/// Tags mixed into the global seed.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Corpus = 1,
    RefinerInit = 2,
    RefinerTrain = 3,
    BaselineInit = 4,
    BaselineTrain = 5,
    Generate = 6,
    Finetune = 7,
    Review = 8,
}
