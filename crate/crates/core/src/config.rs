//! Run configuration. Every default is the value used to build the original
//! dataset; a config file only needs to name what it changes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::clustering::{DEFAULT_CAP_PER_CLUSTER, DEFAULT_K, DEFAULT_MAX_ITER, DEFAULT_SAMPLE_N, DEFAULT_TOL};
use crate::datasetgen::{DEFAULT_GPT4_CLUSTER_ORDINALS, DEFAULT_GPT4_PER_CLUSTER};
use crate::error::{Error, Result};
use crate::evalkit::{DEFAULT_ANLS_TAU, DEFAULT_TARGETS};
use crate::filtering::FilterThresholds;
use crate::llmclient::{TemperatureProfile, DEFAULT_MODEL, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
use crate::textlayout::{LayoutParams, DEFAULT_DOWNSAMPLE_TARGET, DEFAULT_MASK_DILATION_PX};

pub const DEFAULT_KEEP_COUNT: usize = 14;
pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub metadata: Option<PathBuf>,
    pub ocr_dir: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    #[serde(flatten)]
    pub thresholds: FilterThresholds,
    pub dedup: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            thresholds: FilterThresholds::default(),
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub sample_n: usize,
    /// Required by every sampling stage; there is no implicit seed.
    pub seed: Option<u64>,
    /// Number of clusters the curator is expected to keep.
    pub keep_count: usize,
    pub cap: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Refit on the full pool instead of reusing the model fit on the sample.
    pub refit: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k: DEFAULT_K,
            sample_n: DEFAULT_SAMPLE_N,
            seed: None,
            keep_count: DEFAULT_KEEP_COUNT,
            cap: DEFAULT_CAP_PER_CLUSTER,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            refit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategorizationConfig {
    pub threshold: f64,
}

impl Default for CategorizationConfig {
    fn default() -> Self {
        CategorizationConfig {
            threshold: DEFAULT_CATEGORY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    #[serde(flatten)]
    pub params: LayoutParams,
    pub downsample_target: u32,
    pub mask_dilation_px: u32,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            params: LayoutParams::default(),
            downsample_target: DEFAULT_DOWNSAMPLE_TARGET,
            mask_dilation_px: DEFAULT_MASK_DILATION_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: Option<u64>,
    /// 1-based positions in the keep-list.
    pub gpt4_cluster_ordinals: Vec<usize>,
    pub gpt4_per_cluster: usize,
    pub salvage: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: None,
            gpt4_cluster_ordinals: DEFAULT_GPT4_CLUSTER_ORDINALS.to_vec(),
            gpt4_per_cluster: DEFAULT_GPT4_PER_CLUSTER,
            salvage: false,
        }
    }
}

impl DatasetConfig {
    pub fn gpt4_pool_size(&self) -> usize {
        self.gpt4_cluster_ordinals.len() * self.gpt4_per_cluster
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// Names of the environment variables holding endpoint, key and model.
    pub endpoint_env: String,
    pub api_key_env: String,
    pub model_env: String,
    /// Used when the model variable is unset.
    pub model: String,
    pub temperatures: TemperatureProfile,
    pub max_in_flight: usize,
    /// Maximum HTTP attempts per run.
    pub budget: Option<u64>,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub jitter: f64,
    pub timeout_s: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            endpoint_env: ENV_ENDPOINT.into(),
            api_key_env: ENV_API_KEY.into(),
            model_env: ENV_MODEL.into(),
            model: DEFAULT_MODEL.into(),
            temperatures: TemperatureProfile::default(),
            max_in_flight: 4,
            budget: None,
            max_attempts: 5,
            base_backoff_ms: 2_000,
            max_backoff_ms: 60_000,
            jitter: 0.2,
            timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau: f64,
    pub font_targets: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau: DEFAULT_ANLS_TAU,
            font_targets: DEFAULT_TARGETS.collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub filter: FilterConfig,
    pub clustering: ClusteringConfig,
    pub categorization: CategorizationConfig,
    pub layout: LayoutConfig,
    pub dataset: DatasetConfig,
    pub llm: LlmSettings,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::parse(None, e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.thresholds.validate()?;
        self.layout.params.validate()?;
        self.llm.temperatures.validate()?;
        let c = &self.clustering;
        if c.k == 0 || c.sample_n < c.k {
            return Err(Error::validation(format!(
                "clustering needs 0 < k <= sample_n, got k={} sample_n={}",
                c.k, c.sample_n
            )));
        }
        if c.keep_count == 0 || c.keep_count > c.k || c.cap == 0 {
            return Err(Error::validation(
                "clustering.keep_count must lie in 1..=k and cap must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.categorization.threshold) {
            return Err(Error::validation("categorization.threshold must lie in [0,1]"));
        }
        if self.layout.downsample_target == 0 {
            return Err(Error::validation("layout.downsample_target must be positive"));
        }
        let d = &self.dataset;
        if d.gpt4_cluster_ordinals.iter().any(|&o| o == 0 || o > c.keep_count) {
            return Err(Error::validation(format!(
                "dataset.gpt4_cluster_ordinals must lie in 1..={}",
                c.keep_count
            )));
        }
        if self.llm.max_in_flight == 0 || self.llm.max_attempts == 0 {
            return Err(Error::validation(
                "llm.max_in_flight and llm.max_attempts must be at least 1",
            ));
        }
        if !(0.0..1.0 / 3.0).contains(&self.llm.jitter) {
            return Err(Error::validation("llm.jitter must lie in [0, 1/3)"));
        }
        if !(0.0..=1.0).contains(&self.eval.tau) {
            return Err(Error::validation("eval.tau must lie in [0,1]"));
        }
        if self.eval.font_targets.is_empty() || self.eval.font_targets.contains(&0) {
            return Err(Error::validation("eval.font_targets must be non-empty and positive"));
        }
        Ok(())
    }
}
