//! Pipeline driver for polyp inpainting augmentation.
//!
//! Each subcommand of the `polypaug` binary maps to one function in
//! [`stages`]; stages communicate only through files under the work directory
//! (see [`layout`]), so any stage can be rerun or resumed on its own.

pub mod config;
pub mod data;
pub mod error;
pub mod layout;
pub mod stages;

pub use config::{PipelineConfig, Stage};
pub use error::{exit_code, CliError, Result};
pub use layout::Layout;

/// Runs `f` inside a rayon pool sized by `workers.threads` (0 = all cores).
pub fn with_pool<T: Send>(config: &PipelineConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.threads)
        .build()
        .map_err(|e| CliError::Config(format!("workers.threads: {e}")))?;
    pool.install(f)
}
