#![allow(dead_code)]

use std::path::Path;

use polypaug_cli::config::PipelineConfig;

/// Two-domain corpus at 64 px with tiny models; every path under `dir`.
pub fn small_config(dir: &Path) -> PipelineConfig {
    let text = r#"
[seeds]
global = 11

[corpus]
domains = ["alpha", "beta"]
positives_per_domain = 10
negatives_per_domain = 4
refiner_split = [16, 4, 4]

[backend]
methods = ["v2"]

[engine]
dilation = 6
backgrounds_per_condition = 2
max_conditions = 3
condition_datasets = ["alpha"]

[refiner.model]
input_size = 32
loss_kernel = 7

[refiner.schedule]
epochs = 1

[baseline]
train_datasets = ["alpha"]

[baseline.model]
input_size = 32
loss_kernel = 7

[baseline.schedule]
epochs = 1

[finetune.schedule]
epochs = 1
"#;
    let mut config = PipelineConfig::parse(text).unwrap();
    config.resolve_paths(dir);
    config
}

pub fn write_config(dir: &Path, config: &PipelineConfig) -> std::path::PathBuf {
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, config.to_toml().unwrap()).unwrap();
    path
}
