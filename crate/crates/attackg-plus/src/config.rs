//! Run configuration: defaults, optional TOML config file, environment
//! overrides (ATTACKG_*), in that order.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{Backend, BackendMode, EndpointConfig, ModelParams, RetryPolicy};
use crate::stages::StageOptions;

pub const DEFAULT_ATTACK_BUNDLE: &str = "data/enterprise-attack.json";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_MODEL: &str = "default-model";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid {key}: {detail}")]
    Invalid { key: &'static str, detail: String },
    #[error("replay mode requires a fixture directory (fixture_dir / ATTACKG_FIXTURE_DIR)")]
    ReplayNeedsFixtures,
    #[error("{0} mode requires an endpoint base_url and api_key")]
    LiveNeedsEndpoint(&'static str),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: BackendMode,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub rate_limit_per_minute: Option<u32>,
    pub fixture_dir: Option<PathBuf>,
    pub attack_bundle: PathBuf,
    pub out_dir: PathBuf,
    pub chunk_chars: usize,
    pub description_chars: usize,
    pub workers: usize,
    pub t_low: usize,
    pub top_k: usize,
    pub pdf_command: String,
    /// Directory of prompt wording overrides (<stage>.txt).
    pub prompts_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: BackendMode::Replay,
            base_url: None,
            api_key: None,
            model: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: None,
            retries: crate::gateway::DEFAULT_RETRIES,
            backoff_ms: crate::gateway::DEFAULT_BACKOFF_MS,
            rate_limit_per_minute: None,
            fixture_dir: None,
            attack_bundle: DEFAULT_ATTACK_BUNDLE.into(),
            out_dir: DEFAULT_OUT_DIR.into(),
            chunk_chars: crate::stages::rewriter::DEFAULT_CHUNK_BUDGET,
            description_chars: crate::catalog::DEFAULT_DESCRIPTION_BUDGET,
            workers: 0,
            t_low: crate::eval::DEFAULT_T_LOW,
            top_k: crate::eval::DEFAULT_TOP_K,
            pdf_command: crate::ingest::DEFAULT_PDF_COMMAND.into(),
            prompts_dir: None,
        }
    }
}

/// The config file mirrors [`RunConfig`] with every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<String>,
    base_url: Option<String>,
    api_key: Option<String>,
    model: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    retries: Option<u32>,
    backoff_ms: Option<u64>,
    rate_limit_per_minute: Option<u32>,
    fixture_dir: Option<PathBuf>,
    attack_bundle: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    chunk_chars: Option<usize>,
    description_chars: Option<usize>,
    workers: Option<usize>,
    t_low: Option<usize>,
    top_k: Option<usize>,
    pdf_command: Option<String>,
    prompts_dir: Option<PathBuf>,
}

fn parse_mode(raw: &str) -> Result<BackendMode, ConfigError> {
    raw.parse().map_err(|detail| ConfigError::Invalid {
        key: "mode",
        detail,
    })
}

impl RunConfig {
    /// Defaults, overlaid with the config file (if given), overlaid with
    /// ATTACKG_* environment variables.
    pub fn load(config_path: Option<&Path>) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let file: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            config.apply_file(file)?;
        }
        config.apply_env()?;
        Ok(config)
    }

    fn apply_file(&mut self, file: FileConfig) -> Result<(), ConfigError> {
        if let Some(mode) = file.mode {
            self.mode = parse_mode(&mode)?;
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(value) = file.$field { self.$field = value; })*
            };
        }
        take!(
            model, temperature, retries, backoff_ms, attack_bundle, out_dir, chunk_chars,
            description_chars, workers, t_low, top_k, pdf_command
        );
        if file.base_url.is_some() {
            self.base_url = file.base_url;
        }
        if file.api_key.is_some() {
            self.api_key = file.api_key;
        }
        if file.max_tokens.is_some() {
            self.max_tokens = file.max_tokens;
        }
        if file.rate_limit_per_minute.is_some() {
            self.rate_limit_per_minute = file.rate_limit_per_minute;
        }
        if file.fixture_dir.is_some() {
            self.fixture_dir = file.fixture_dir;
        }
        if file.prompts_dir.is_some() {
            self.prompts_dir = file.prompts_dir;
        }
        Ok(())
    }

    fn apply_env(&mut self) -> Result<(), ConfigError> {
        let get = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        if let Some(mode) = get("ATTACKG_MODE") {
            self.mode = parse_mode(&mode)?;
        }
        if let Some(value) = get("ATTACKG_BASE_URL") {
            self.base_url = Some(value);
        }
        if let Some(value) = get("ATTACKG_API_KEY") {
            self.api_key = Some(value);
        }
        if let Some(value) = get("ATTACKG_MODEL") {
            self.model = value;
        }
        if let Some(value) = get("ATTACKG_TEMPERATURE") {
            self.temperature = value.parse().map_err(|_| ConfigError::Invalid {
                key: "ATTACKG_TEMPERATURE",
                detail: value,
            })?;
        }
        if let Some(value) = get("ATTACKG_RETRIES") {
            self.retries = value.parse().map_err(|_| ConfigError::Invalid {
                key: "ATTACKG_RETRIES",
                detail: value,
            })?;
        }
        if let Some(value) = get("ATTACKG_FIXTURE_DIR") {
            self.fixture_dir = Some(value.into());
        }
        if let Some(value) = get("ATTACKG_BUNDLE") {
            self.attack_bundle = value.into();
        }
        if let Some(value) = get("ATTACKG_PDF_CMD") {
            self.pdf_command = value;
        }
        if let Some(value) = get("ATTACKG_PROMPTS_DIR") {
            self.prompts_dir = Some(value.into());
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn stage_options(&self) -> StageOptions {
        StageOptions {
            chunk_chars: self.chunk_chars,
            description_chars: self.description_chars,
            prompts_dir: self.prompts_dir.clone(),
        }
    }

    /// Validate mode prerequisites and build the backend.
    pub fn backend(&self) -> Result<Backend, ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid {
                key: "temperature",
                detail: format!("{} is outside [0, 2]", self.temperature),
            });
        }
        let params = self.model_params();
        let retry = RetryPolicy {
            retries: self.retries,
            backoff_ms: self.backoff_ms,
        };
        let backend = match self.mode {
            BackendMode::Replay => {
                let dir = self
                    .fixture_dir
                    .clone()
                    .ok_or(ConfigError::ReplayNeedsFixtures)?;
                Backend::replay(dir, params)
            }
            BackendMode::Record => {
                let endpoint = self.endpoint("record")?;
                let dir = self
                    .fixture_dir
                    .clone()
                    .ok_or(ConfigError::ReplayNeedsFixtures)?;
                Backend::record(endpoint, dir, params)
            }
            BackendMode::Live => Backend::live(self.endpoint("live")?, params),
        };
        Ok(backend
            .with_retry(retry)
            .with_rate_limit(self.rate_limit_per_minute))
    }

    fn endpoint(&self, mode: &'static str) -> Result<EndpointConfig, ConfigError> {
        match (&self.base_url, &self.api_key) {
            (Some(base_url), Some(api_key)) => Ok(EndpointConfig {
                base_url: base_url.clone(),
                api_key: Some(api_key.clone()),
            }),
            _ => Err(ConfigError::LiveNeedsEndpoint(mode)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_replay_with_temperature_zero() {
        let config = RunConfig::default();
        assert_eq!(config.mode, BackendMode::Replay);
        assert_eq!(config.temperature, 0.0);
        assert_eq!(config.chunk_chars, 12_000);
        assert_eq!(config.t_low, 3);
    }

    #[test]
    fn file_overlays_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "mode = \"live\"\nbase_url = \"http://example.test/v1\"\napi_key = \"k\"\nmodel = \"m1\"\ntemperature = 0.3\nchunk_chars = 5000\n",
        )
        .unwrap();
        let config = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(config.mode, BackendMode::Live);
        assert_eq!(config.model, "m1");
        assert_eq!(config.temperature, 0.3);
        assert_eq!(config.chunk_chars, 5000);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "no_such_key = 1\n").unwrap();
        assert!(matches!(
            RunConfig::load(Some(&path)),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn replay_requires_fixture_dir() {
        let config = RunConfig::default();
        assert!(matches!(
            config.backend(),
            Err(ConfigError::ReplayNeedsFixtures)
        ));
    }

    #[test]
    fn live_requires_endpoint_and_key() {
        let config = RunConfig {
            mode: BackendMode::Live,
            ..Default::default()
        };
        assert!(matches!(
            config.backend(),
            Err(ConfigError::LiveNeedsEndpoint("live"))
        ));
        let config = RunConfig {
            mode: BackendMode::Live,
            base_url: Some("http://example.test".into()),
            api_key: Some("k".into()),
            ..Default::default()
        };
        assert!(config.backend().is_ok());
    }

    #[test]
    fn temperature_outside_range_is_invalid() {
        let config = RunConfig {
            temperature: 3.0,
            fixture_dir: Some("fixtures".into()),
            ..Default::default()
        };
        assert!(matches!(
            config.backend(),
            Err(ConfigError::Invalid { key: "temperature", .. })
        ));
    }
}
