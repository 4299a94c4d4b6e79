//! Run configuration: thresholds, retrieval parameters, ablation switches,
//! gateway endpoints and the external test runner.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bm25::Bm25Params;
use crate::context::DEFAULT_TOP_K;
use crate::error::{Error, Result};
use crate::session::DEFAULT_TAU;

/// Pipeline components that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Static context: judge, retrieval and pruning run in round 1 only.
    Ctxmem,
    /// No post-round pruning of context memory.
    Ctxast,
    /// No forgetting detection or regeneration.
    Sessast,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctxmem" => Ok(Ablation::Ctxmem),
            "ctxast" => Ok(Ablation::Ctxast),
            "sessast" => Ok(Ablation::Sessast),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected ctxmem, ctxast or sessast)"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Ctxmem => "ctxmem",
            Ablation::Ctxast => "ctxast",
            Ablation::Sessast => "sessast",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_base_url: Option<String>,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            embedding_base_url: None,
            embedding_model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    /// Command template; `{test}` is replaced with the test identifier.
    pub command: String,
    pub timeout_secs: u64,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            command: "python -m pytest -q {test}".into(),
            timeout_secs: 60,
        }
    }
}

impl RunnerConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Instruction-similarity threshold for links and conflict candidacy.
    pub tau: f64,
    pub top_k: usize,
    pub bm25: Bm25Params,
    /// Regenerations allowed per round after a detected conflict.
    pub regeneration_limit: u32,
    /// Re-run the detector on regenerated code.
    pub rerun_detector: bool,
    /// Character budget for context-memory values in the generation prompt.
    pub context_char_budget: usize,
    pub ablations: BTreeSet<Ablation>,
    pub gateway: GatewayConfig,
    pub runner: RunnerConfig,
    /// Include globs for repository indexing.
    pub include: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            top_k: DEFAULT_TOP_K,
            bm25: Bm25Params::default(),
            regeneration_limit: 1,
            rerun_detector: false,
            context_char_budget: 60_000,
            ablations: BTreeSet::new(),
            gateway: GatewayConfig::default(),
            runner: RunnerConfig::default(),
            include: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [-1, 1], got {}", self.tau)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.bm25.k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25.b) {
            return Err(Error::Config("bm25 requires k1 >= 0 and 0 <= b <= 1".into()));
        }
        if !self.runner.command.contains("{test}") {
            return Err(Error::Config("runner.command must contain `{test}`".into()));
        }
        Ok(())
    }

    pub fn ablated(&self, ablation: Ablation) -> bool {
        self.ablations.contains(&ablation)
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablations.insert(ablation);
        self
    }

    /// Hex SHA-256 of the canonical JSON form; stored in snapshots so a
    /// resumed session can tell whether its settings changed.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_vec(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
