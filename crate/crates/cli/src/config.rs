//! Pipeline configuration file (TOML). Every field has a default, command
//! line flags override the file, and relative paths resolve against the
//! file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use relmod_core::corpus::DEFAULT_COVERAGE_THRESHOLD;
use relmod_core::eval::Metric;
use relmod_core::pathfind::{PathConfig, Traversal, DEFAULT_EXPANSION_BUDGET, DEFAULT_K, DEFAULT_MAX_HOPS};
use relmod_core::scorer::{DecodeParams, NgramConfig};
use relmod_core::select::{ConfidenceParams, EncodingScheme, SelectMethod};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub kg: KgFiles,
    pub corpus: CorpusConfig,
    pub paths: PathsConfig,
    pub scorer: ScorerConfig,
    pub remote: Option<RemoteConfig>,
    pub select: SelectConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            threads: 0,
            kg: KgFiles::default(),
            corpus: CorpusConfig::default(),
            paths: PathsConfig::default(),
            scorer: ScorerConfig::default(),
            remote: None,
            select: SelectConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgFiles {
    pub triples: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub relations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub definitions: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub coverage_threshold: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { definitions: None, parses: None, coverage_threshold: DEFAULT_COVERAGE_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub k: usize,
    pub max_hops: usize,
    pub inverse: bool,
    pub expansion_budget: u64,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { k: DEFAULT_K, max_hops: DEFAULT_MAX_HOPS, inverse: false, expansion_budget: DEFAULT_EXPANSION_BUDGET }
    }
}

impl PathsConfig {
    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            k: self.k,
            max_hops: self.max_hops,
            traversal: if self.inverse { Traversal::WithInverse } else { Traversal::Forward },
            expansion_budget: self.expansion_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub order: usize,
    pub lm_weights: Vec<f64>,
    pub copy_weight: f64,
    pub smoothing: f64,
    pub beam_width: usize,
    pub max_len: usize,
    /// Trained baseline model used by `generate` and `select`.
    pub model: Option<PathBuf>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        let n = NgramConfig::default();
        let d = DecodeParams::default();
        ScorerConfig {
            order: n.order,
            lm_weights: n.lm_weights,
            copy_weight: n.copy_weight,
            smoothing: n.smoothing,
            beam_width: d.beam_width,
            max_len: d.max_len,
            model: None,
        }
    }
}

impl ScorerConfig {
    pub fn ngram(&self) -> NgramConfig {
        NgramConfig {
            order: self.order,
            lm_weights: self.lm_weights.clone(),
            copy_weight: self.copy_weight,
            smoothing: self.smoothing,
        }
    }

    pub fn decode(&self) -> DecodeParams {
        DecodeParams { beam_width: self.beam_width, max_len: self.max_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub auth_token: Option<String>,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub method: SelectMethod,
    pub hop_penalty: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig { method: SelectMethod::Confidence, hop_penalty: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub encoding: EncodingScheme,
    pub subsample: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fractions: [0.8, 0.1, 0.1], encoding: EncodingScheme::Shortest, subsample: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { metrics: vec![Metric::Bleu, Metric::RougeL, Metric::Meteor] }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(x) = p {
        if x.is_relative() {
            *x = base.join(&*x);
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.kg.triples,
            &mut cfg.kg.entities,
            &mut cfg.kg.relations,
            &mut cfg.corpus.definitions,
            &mut cfg.corpus.parses,
            &mut cfg.scorer.model,
        ] {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corpus.coverage_threshold) {
            bail!("corpus.coverage_threshold must be in [0, 1]");
        }
        if self.paths.k == 0 {
            bail!("paths.k must be at least 1");
        }
        if self.paths.max_hops == 0 {
            bail!("paths.max_hops must be at least 1");
        }
        self.scorer.ngram().validate()?;
        self.scorer.decode().validate()?;
        let f = self.split.fractions;
        if f.iter().any(|x| x.is_nan() || *x <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bail!("split.fractions must be positive and sum to 1, got {f:?}");
        }
        if !(self.split.subsample > 0.0 && self.split.subsample <= 1.0) {
            bail!("split.subsample must be in (0, 1]");
        }
        if !self.select.hop_penalty.is_finite() {
            bail!("select.hop_penalty must be finite");
        }
        if let Some(r) = &self.remote {
            if !(r.timeout_secs > 0.0 && r.timeout_secs.is_finite()) {
                bail!("remote.timeout_secs must be positive");
            }
        }
        if self.eval.metrics.is_empty() {
            bail!("eval.metrics must not be empty");
        }
        Ok(())
    }

    pub fn confidence_params(&self) -> ConfidenceParams {
        ConfidenceParams { decode: self.scorer.decode(), hop_penalty: self.select.hop_penalty }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
