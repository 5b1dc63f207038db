use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::ModelEndpoint;
use crate::prompt::{ModelProfile, Sampling, TEMPLATE_VERSION};

/// Key of the reasoning model in `endpoints`.
pub const REASONER_KEY: &str = "reasoner";

/// Prefix for endpoint overrides: `HREFLEX_ENDPOINT_<ID>_URL` / `_TOKEN`, where
/// `<ID>` is the endpoint key upper-cased with non-alphanumerics mapped to `_`.
pub const ENV_PREFIX: &str = "HREFLEX_ENDPOINT_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_quorum() -> usize {
    1
}

fn default_template_version() -> String {
    TEMPLATE_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerSettings {
    #[serde(default = "ReasonerSettings::default_name")]
    pub display_name: String,
    #[serde(default = "ReasonerSettings::default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

impl ReasonerSettings {
    fn default_name() -> String {
        "Reasoning model".into()
    }

    fn default_max_tokens() -> u32 {
        1024
    }

    pub fn sampling(&self) -> Sampling {
        Sampling { max_tokens: self.max_tokens, temperature: self.temperature }
    }
}

impl Default for ReasonerSettings {
    fn default() -> Self {
        ReasonerSettings {
            display_name: Self::default_name(),
            max_tokens: Self::default_max_tokens(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub store_path: PathBuf,
    #[serde(default = "default_quorum")]
    pub min_quorum: usize,
    #[serde(default = "default_template_version")]
    pub template_version: String,
    /// Directory of template overrides; built-in templates otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    /// Global bound on concurrent model requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub include_history: bool,
    #[serde(default)]
    pub reasoner: ReasonerSettings,
    pub profiles: Vec<ModelProfile>,
    /// Consortium endpoints keyed by model id, plus the `reasoner` entry.
    pub endpoints: BTreeMap<String, ModelEndpoint>,
}

impl PipelineConfig {
    /// Reads a TOML config, resolves relative paths against the file's
    /// directory, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.store_path.is_relative() {
            config.store_path = base.join(&config.store_path);
        }
        if let Some(dir) = &config.template_dir {
            if dir.is_relative() {
                config.template_dir = Some(base.join(dir));
            }
        }
        config.apply_env_overrides(std::env::vars());
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn reasoning_endpoint(&self) -> &ModelEndpoint {
        &self.endpoints[REASONER_KEY]
    }

    pub fn apply_env_overrides<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) {
        let keys: Vec<(String, String)> = self.endpoints.keys().map(|k| (env_key(k), k.clone())).collect();
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            for (env_id, key) in &keys {
                let Some(field) = rest.strip_prefix(env_id.as_str()) else { continue };
                let endpoint = self.endpoints.get_mut(key).expect("key from map");
                match field {
                    "_URL" => endpoint.url = value.clone(),
                    "_TOKEN" => endpoint.auth_token = Some(value.clone()),
                    _ => {}
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.min_quorum < 1 {
            return invalid("min_quorum must be >= 1".into());
        }
        if self.profiles.is_empty() {
            return invalid("at least one model profile is required".into());
        }
        if !self.endpoints.contains_key(REASONER_KEY) {
            return invalid(format!("endpoints must contain a `{REASONER_KEY}` entry"));
        }
        let mut seen = HashSet::new();
        for p in &self.profiles {
            p.validate().map_err(ConfigError::Invalid)?;
            if p.model_id == REASONER_KEY {
                return invalid(format!("`{REASONER_KEY}` is reserved for the reasoning endpoint"));
            }
            if !seen.insert(p.model_id.as_str()) {
                return invalid(format!("duplicate model_id `{}`", p.model_id));
            }
            if !self.endpoints.contains_key(&p.model_id) {
                return invalid(format!("profile `{}` has no endpoint", p.model_id));
            }
        }
        for e in self.endpoints.values() {
            e.validate().map_err(ConfigError::Invalid)?;
        }
        if self.parallelism == Some(0) {
            return invalid("parallelism must be >= 1 when set".into());
        }
        Ok(())
    }
}

fn env_key(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
store_path = "store"
min_quorum = 2

[[profiles]]
model_id = "pixtral"
display_name = "Pixtral-Vision"
priority = 1

[[profiles]]
model_id = "llama-vision"
display_name = "Llama-Vision"
priority = 2
temperature = 0.2

[endpoints.pixtral]
url = "http://localhost:11434/api/chat"
model_name = "pixtral-hreflex"
timeout_ms = 60000

[endpoints.llama-vision]
url = "http://localhost:11435/api/chat"
model_name = "llama-vision-hreflex"
timeout_ms = 60000
retry = { max_attempts = 3, backoff_base_ms = 200, backoff_factor = 2.0 }

[endpoints.reasoner]
url = "http://localhost:11436/api/chat"
model_name = "gpt-oss"
timeout_ms = 120000
"#;

    #[test]
    fn parses_and_validates() {
        let c = PipelineConfig::from_toml(SAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.min_quorum, 2);
        assert_eq!(c.template_version, "v1");
        assert_eq!(c.reasoning_endpoint().model_name, "gpt-oss");
        assert_eq!(c.endpoints["llama-vision"].retry.max_attempts, 3);
        assert_eq!(c.profiles[0].max_tokens, 512);
        let again = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn env_overrides_url_and_token_only() {
        let mut c = PipelineConfig::from_toml(SAMPLE).unwrap();
        c.apply_env_overrides([
            ("HREFLEX_ENDPOINT_LLAMA_VISION_URL".to_string(), "http://gpu:9000/api/chat".to_string()),
            ("HREFLEX_ENDPOINT_REASONER_TOKEN".to_string(), "s3cret".to_string()),
            ("HREFLEX_ENDPOINT_PIXTRAL_TIMEOUT".to_string(), "1".to_string()),
        ]);
        assert_eq!(c.endpoints["llama-vision"].url, "http://gpu:9000/api/chat");
        assert_eq!(c.reasoning_endpoint().auth_token.as_deref(), Some("s3cret"));
        assert_eq!(c.endpoints["pixtral"].timeout_ms, 60000);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = PipelineConfig::from_toml(SAMPLE).unwrap();

        let mut c = base.clone();
        c.min_quorum = 0;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.endpoints.remove(REASONER_KEY);
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.endpoints.remove("pixtral");
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.profiles.push(c.profiles[0].clone());
        assert!(c.validate().is_err());

        let mut c = base;
        c.profiles[0].max_tokens = 0;
        assert!(c.validate().is_err());
    }
}
