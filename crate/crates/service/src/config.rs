//! Service configuration: a flat `key = value` file plus environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use journal_core::engine::EngineConfig;
use journal_core::memory::ScoringParams;
use journal_core::providers::{ProviderConfig, SecretRef, CHAT_KEY_ENV, IMAGE_KEY_ENV};
use journal_core::store::{Store, DATA_DIR_ENV};
use serde::Deserialize;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_DATA_DIR: &str = "./journal-data";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Every key is optional; absent keys take the defaults below.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
    pub mock_providers: Option<bool>,
    pub seed: Option<u64>,

    pub w_e: Option<f64>,
    pub w_r: Option<f64>,
    pub w_c: Option<f64>,
    pub lambda: Option<f64>,
    pub short_term_window: Option<f64>,
    pub forget_threshold: Option<f64>,
    pub k: Option<usize>,
    pub context_turns: Option<usize>,

    pub image_enabled: Option<bool>,
    pub diary_includes_memories: Option<bool>,
    pub llm_extraction: Option<bool>,

    pub chat_endpoint: Option<String>,
    pub chat_model: Option<String>,
    pub image_endpoint: Option<String>,
    pub image_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub max_concurrency: Option<usize>,
}

impl FileConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub mock_providers: bool,
    pub seed: u64,
    pub engine: EngineConfig,
    pub llm_extraction: bool,
    pub chat: ProviderConfig,
    pub chat_model: String,
    pub image: ProviderConfig,
    pub image_model: String,
}

impl ServiceConfig {
    /// Builds the effective configuration. `PERSODE_DATA_DIR` overrides the
    /// file's `data_dir`; credentials are only ever read from the environment.
    pub fn resolve(file: FileConfig) -> Result<Self, ConfigError> {
        let defaults = ScoringParams::default();
        let params = ScoringParams {
            w_e: file.w_e.unwrap_or(defaults.w_e),
            w_r: file.w_r.unwrap_or(defaults.w_r),
            w_c: file.w_c.unwrap_or(defaults.w_c),
            lambda: file.lambda.unwrap_or(defaults.lambda),
            short_term_window: file.short_term_window.unwrap_or(defaults.short_term_window),
            forget_threshold: file.forget_threshold.unwrap_or(defaults.forget_threshold),
        };
        let base = EngineConfig::default();
        let engine = EngineConfig {
            params,
            k: file.k.unwrap_or(base.k),
            context_turns: file.context_turns.unwrap_or(base.context_turns),
            image_enabled: file.image_enabled.unwrap_or(base.image_enabled),
            diary_includes_memories: file.diary_includes_memories.unwrap_or(base.diary_includes_memories),
            ..base
        };

        let provider = |endpoint: Option<String>, default: &str, key_env: &str| {
            let mut p = ProviderConfig::new(endpoint.unwrap_or_else(|| default.to_string()), SecretRef::env(key_env));
            if let Some(t) = file.timeout_secs {
                p.timeout = Duration::from_secs(t);
            }
            if let Some(r) = file.max_retries {
                p.max_retries = r;
            }
            if let Some(b) = file.backoff_ms {
                p.backoff_base = Duration::from_millis(b);
            }
            if let Some(c) = file.max_concurrency {
                p.max_concurrency = c;
            }
            p
        };
        let chat = provider(
            file.chat_endpoint.clone(),
            "https://api.openai.com/v1/chat/completions",
            CHAT_KEY_ENV,
        );
        let image = provider(
            file.image_endpoint.clone(),
            "https://api.openai.com/v1/images/generations",
            IMAGE_KEY_ENV,
        );

        let mut engine = engine;
        engine.chat_retry = chat.retry_policy();
        engine.image_retry = image.retry_policy();
        engine.validate().map_err(|e| ConfigError(e.to_string()))?;
        chat.validate().map_err(|e| ConfigError(e.to_string()))?;
        image.validate().map_err(|e| ConfigError(e.to_string()))?;

        Ok(Self {
            port: file.port.unwrap_or(DEFAULT_PORT),
            data_dir: Store::data_dir_from_env(file.data_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))),
            mock_providers: file.mock_providers.unwrap_or(false),
            seed: file.seed.unwrap_or(0),
            engine,
            llm_extraction: file.llm_extraction.unwrap_or(false),
            chat,
            chat_model: file.chat_model.unwrap_or_else(|| "gpt-4o".to_string()),
            image,
            image_model: file.image_model.unwrap_or_else(|| "dall-e-3".to_string()),
        })
    }
}

/// The environment variables the service reads.
pub const ENV_VARS: [&str; 3] = [DATA_DIR_ENV, CHAT_KEY_ENV, IMAGE_KEY_ENV];
