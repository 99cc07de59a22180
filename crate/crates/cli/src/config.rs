//! Engine configuration: one JSON file feeds the CLI subcommands and the
//! HTTP service identically.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use serde::Deserialize;

use omni_core::execution::{
    ExecLimits, Executors, VerbalizeCaps, DEFAULT_MAX_ROWS, DEFAULT_PER_ENDPOINT_CAP,
};
use omni_core::gateway::{
    BoundedProvider, HttpProvider, Provider, ScriptedProvider, TracedProvider,
    DEFAULT_LLM_CONCURRENCY,
};
use omni_core::pipeline::Pipeline;
use omni_core::selection::DEFAULT_SELECTION_K;
use omni_core::Catalog;

pub type DynPipeline = Pipeline<Arc<dyn Provider>>;

#[derive(Debug, Clone, Deserialize)]
pub struct EngineConfig {
    /// Catalog config file; relative to this config's directory.
    pub catalog: PathBuf,
    pub provider: ProviderConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub limits: LimitsConfig,
    #[serde(default = "default_llm_concurrency")]
    pub llm_concurrency: usize,
    #[serde(default = "default_endpoint_cap")]
    pub per_endpoint_cap: usize,
    /// JSONL log of every LLM request/response, if set.
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    /// Canned responses from an ordered script table (offline runs).
    Scripted { script: PathBuf },
    /// OpenAI-compatible endpoint configured via OMNI_LLM_* env vars.
    Http,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LimitsConfig {
    pub timeout_secs: f64,
    pub max_rows: usize,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        LimitsConfig {
            timeout_secs: 30.0,
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

fn default_k() -> usize {
    DEFAULT_SELECTION_K
}

fn default_llm_concurrency() -> usize {
    DEFAULT_LLM_CONCURRENCY
}

fn default_endpoint_cap() -> usize {
    DEFAULT_PER_ENDPOINT_CAP
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Loads the config and assembles a ready pipeline from it.
pub fn build_pipeline(config_path: &Path) -> anyhow::Result<(DynPipeline, EngineConfig)> {
    let raw = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let config: EngineConfig =
        serde_json::from_str(&raw).with_context(|| "parsing engine config")?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let catalog = Catalog::load(&resolve(&base, &config.catalog))?;

    let base_provider: Box<dyn Provider> = match &config.provider {
        ProviderConfig::Scripted { script } => {
            Box::new(ScriptedProvider::from_file(&resolve(&base, script))?)
        }
        ProviderConfig::Http => Box::new(HttpProvider::from_env()?),
    };
    let traced: Box<dyn Provider> = match &config.trace_path {
        Some(path) => Box::new(TracedProvider::new(base_provider, &resolve(&base, path))?),
        None => base_provider,
    };
    let provider: Arc<dyn Provider> =
        Arc::new(BoundedProvider::new(traced, config.llm_concurrency));

    let pipeline = Pipeline {
        catalog,
        provider,
        executors: Executors::new(config.per_endpoint_cap),
        limits: ExecLimits {
            timeout: Duration::from_secs_f64(config.limits.timeout_secs),
            max_rows: config.limits.max_rows,
        },
        caps: VerbalizeCaps::default(),
    };
    Ok((pipeline, config))
}
