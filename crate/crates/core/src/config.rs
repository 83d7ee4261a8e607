//! Declarative run configuration for an enhancement run (TOML).
//!
//! ```toml
//! input = "annotations.jsonl"
//! output = "runs/cc3m"
//! shards = 4
//! workers = 2
//! drop_policy = "drop"
//! seed = 7
//!
//! [shear]
//! max_tokens = 30          # or "auto": mean raw-caption length
//!
//! [[pool]]
//! model_id = "minigpt4"
//! protocol = "openai_compat"
//! base_url = "http://localhost:8001"
//! preset = "minigpt4"
//! generation = { max_new_tokens = 40 }
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::read_annotations;
use crate::gateway::{CaptionerEndpoint, GenerationConfig};
use crate::orchestrator::DropPolicy;
use crate::shear::{compute_shear_limit, Fallback, ShearPolicy, TokenizerSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("input does not exist: {0}")]
    MissingInput(PathBuf),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoLimit {
    Auto,
}

/// Explicit token budget or one derived from the raw captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenLimit {
    Fixed(usize),
    Derived(AutoLimit),
}

impl Default for TokenLimit {
    fn default() -> Self {
        TokenLimit::Fixed(ShearPolicy::default().max_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShearConfig {
    pub max_tokens: TokenLimit,
    pub min_clause_chars: usize,
    pub clause_terminators: Vec<char>,
    pub fallback: Fallback,
    pub tokenizer: TokenizerSpec,
}

impl Default for ShearConfig {
    fn default() -> Self {
        let p = ShearPolicy::default();
        Self {
            max_tokens: TokenLimit::default(),
            min_clause_chars: p.min_clause_chars,
            clause_terminators: p.clause_terminators,
            fallback: p.fallback,
            tokenizer: p.tokenizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    #[serde(flatten)]
    pub endpoint: CaptionerEndpoint,
    /// Named generation preset the overrides apply on top of.
    #[serde(default)]
    pub preset: Option<String>,
    /// Field-by-field overrides of the preset.
    #[serde(default)]
    pub generation: Option<serde_json::Value>,
}

impl PoolMember {
    pub fn generation_config(&self) -> Result<GenerationConfig, ConfigError> {
        let id = &self.endpoint.model_id;
        let base = match &self.preset {
            Some(name) => GenerationConfig::preset(name)
                .ok_or_else(|| ConfigError::Invalid(format!("{id}: unknown preset `{name}`")))?,
            None => GenerationConfig::default(),
        };
        let Some(overrides) = &self.generation else {
            return Ok(base);
        };
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(ConfigError::Invalid(format!("{id}: generation must be a table")));
        };
        let mut merged = serde_json::to_value(&base).expect("generation config serializes");
        let fields = merged.as_object_mut().expect("struct serializes to an object");
        for (k, v) in overrides {
            if !fields.contains_key(k) {
                return Err(ConfigError::Invalid(format!("{id}: unknown generation field `{k}`")));
            }
            fields.insert(k.clone(), v.clone());
        }
        serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(format!("{id}: generation: {e}")))
    }
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Base for relative image references; defaults to the input's directory.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    #[serde(default)]
    pub pool: Vec<PoolMember>,
    #[serde(default)]
    pub shear: ShearConfig,
    #[serde(default = "default_one")]
    pub shards: usize,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default)]
    pub drop_policy: DropPolicy,
    /// Sampling seed for members that do not set their own.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub input: PathBuf,
    pub output: PathBuf,
    pub image_root: PathBuf,
    pub pool: Vec<(CaptionerEndpoint, GenerationConfig)>,
    pub shear: ShearPolicy,
    pub shards: usize,
    pub workers: usize,
    pub drop_policy: DropPolicy,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses the file and makes relative paths relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.input);
        rebase(&mut cfg.output);
        if let Some(root) = cfg.image_root.as_mut() {
            rebase(root);
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ResolvedRun, ConfigError> {
        if !self.input.is_file() {
            return Err(ConfigError::MissingInput(self.input.clone()));
        }
        if self.pool.is_empty() {
            return Err(ConfigError::Invalid("pool must list at least one endpoint".into()));
        }
        if self.shards < 1 || self.workers < 1 {
            return Err(ConfigError::Invalid("shards and workers must be >= 1".into()));
        }
        let mut pool = Vec::with_capacity(self.pool.len());
        for member in &self.pool {
            member
                .endpoint
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let mut generation = member.generation_config()?;
            if generation.seed.is_none() {
                generation.seed = self.seed;
            }
            generation
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", member.endpoint.model_id)))?;
            pool.push((member.endpoint.clone(), generation));
        }
        let mut ids: Vec<&str> = pool.iter().map(|(e, _)| e.model_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("pool model ids must be unique".into()));
        }

        let s = &self.shear;
        let max_tokens = match s.max_tokens {
            TokenLimit::Fixed(t) => t,
            TokenLimit::Derived(AutoLimit::Auto) => {
                let invalid = |e: crate::dataset::DatasetError| {
                    ConfigError::Invalid(format!("reading raw captions: {e}"))
                };
                let captions = read_annotations(&self.input)
                    .map_err(invalid)?
                    .map(|r| r.map(|(_, e)| e.caption))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(invalid)?;
                compute_shear_limit(captions.iter(), &s.tokenizer)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
        };
        let shear = ShearPolicy {
            max_tokens,
            min_clause_chars: s.min_clause_chars,
            clause_terminators: s.clause_terminators.clone(),
            fallback: s.fallback,
            tokenizer: s.tokenizer,
        };
        shear
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let image_root = self.image_root.clone().unwrap_or_else(|| {
            self.input
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        });
        Ok(ResolvedRun {
            input: self.input.clone(),
            output: self.output.clone(),
            image_root,
            pool,
            shear,
            shards: self.shards,
            workers: self.workers,
            drop_policy: self.drop_policy,
        })
    }
}
