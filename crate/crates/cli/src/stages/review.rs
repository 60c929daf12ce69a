//! Blinded ranking service over the generated images.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use polypaug_core::dataset::DatasetManifest;
use polypaug_review::sets::rebase;
use polypaug_review::{build_review_sets, RankingStore, ReviewService};

use crate::config::{PipelineConfig, Stage};
use crate::error::{io_err, require, CliError, Result};
use crate::layout::Layout;

/// Mean alignment per backend over the scored manifest.
pub fn alignment_by_backend(scored: &DatasetManifest) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for p in scored.records.iter().filter_map(|r| r.provenance.as_ref()) {
        if let Some(s) = p.scores {
            let e = acc.entry(p.backend.clone()).or_default();
            e.0 += s.alignment;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

/// Builds the service with its store under `work_dir/review`.
pub fn build_service(config: &PipelineConfig) -> Result<ReviewService> {
    let layout = Layout::new(&config.paths.work_dir);
    let generated = layout.generated();
    require(&generated, "generated manifest", "generate")?;
    require(&config.paths.base_manifest, "base manifest", "make-corpus")?;
    let synthetic = rebase(&DatasetManifest::read(&generated)?, &layout.work_dir);
    let base_dir = config.paths.base_manifest.parent().unwrap_or(Path::new("."));
    let base = rebase(&DatasetManifest::read(&config.paths.base_manifest)?, base_dir);
    let r = &config.review;
    let sets = build_review_sets(&synthetic, &base, &r.methods, r.n_sets, config.stage_seed(Stage::Review))?;
    let store = RankingStore::open(&layout.review_store(), r.service.snapshot_every)?;
    let mut service = ReviewService::new(r.service.clone(), sets, store)?;
    if layout.scored().exists() {
        service = service.with_alignment(alignment_by_backend(&DatasetManifest::read(&layout.scored())?));
    }
    Ok(service)
}

/// Serves the review API until interrupted.
pub fn serve_review(config: &PipelineConfig, bind: Option<&str>, static_dir: Option<PathBuf>) -> Result<()> {
    let bind = bind.unwrap_or(&config.review.bind);
    let addr: SocketAddr = bind
        .parse()
        .map_err(|e| CliError::Config(format!("review.bind `{bind}`: {e}")))?;
    let service = Arc::new(build_service(config)?);
    tracing::info!(sets = service.sets().len(), "review sets ready");
    let static_dir = static_dir.or_else(|| config.review.static_dir.clone());
    let token = config.review.service.admin_token.clone();
    let rt = tokio::runtime::Runtime::new().map_err(io_err(Path::new(bind)))?;
    rt.block_on(polypaug_review::http::serve(service, token, static_dir, addr))
        .map_err(io_err(Path::new(bind)))
}
