//! Harness configuration file.
//!
//! ```toml
//! [providers.openai]
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! model = "gpt-4o"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [profiles.mixed]
//! seed = 11
//! p_over = 0.2
//! p_conserv = 0.1
//! ```
//!
//! Credentials are never read from the file, only from the environment
//! variable each provider names.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::provider::{HttpProviderConfig, ProfileError, SubjectProfile};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: unknown section `{0}`")]
    UnknownSection(String),
    #[error("provider `{name}`: {message}")]
    Provider { name: String, message: String },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("no provider named `{0}` in config")]
    UnknownProvider(String),
    #[error("no profile named `{0}` in config")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HarnessConfig {
    pub providers: BTreeMap<String, HttpProviderConfig>,
    pub profiles: BTreeMap<String, SubjectProfile>,
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut config = Self::default();
        for (key, value) in &table {
            let section = value
                .as_table()
                .ok_or_else(|| ConfigError::Parse(format!("`{key}` must be a table")))?;
            match key.as_str() {
                "providers" => {
                    for (name, v) in section {
                        let mut p: HttpProviderConfig =
                            v.clone().try_into().map_err(|e: toml::de::Error| {
                                ConfigError::Provider {
                                    name: name.clone(),
                                    message: e.to_string(),
                                }
                            })?;
                        if p.id.is_empty() {
                            p.id = name.clone();
                        }
                        if p.max_in_flight == 0 || p.max_attempts == 0 {
                            return Err(ConfigError::Provider {
                                name: name.clone(),
                                message: "max_in_flight and max_attempts must be positive".into(),
                            });
                        }
                        config.providers.insert(name.clone(), p);
                    }
                }
                "profiles" => {
                    for (name, v) in section {
                        let t = v.as_table().ok_or_else(|| {
                            ConfigError::Parse(format!("profile `{name}` must be a table"))
                        })?;
                        config
                            .profiles
                            .insert(name.clone(), SubjectProfile::from_table(name, t)?);
                    }
                }
                other => return Err(ConfigError::UnknownSection(other.to_string())),
            }
        }
        Ok(config)
    }

    pub fn provider(&self, name: &str) -> Result<&HttpProviderConfig, ConfigError> {
        self.providers
            .get(name)
            .ok_or_else(|| ConfigError::UnknownProvider(name.to_string()))
    }

    /// A configured profile, or the built-in `echo` profile when none by
    /// that name is configured.
    pub fn profile(&self, name: &str) -> Result<SubjectProfile, ConfigError> {
        match self.profiles.get(name) {
            Some(p) => Ok(p.clone()),
            None if name == "echo" => Ok(SubjectProfile::echo(0)),
            None => Err(ConfigError::UnknownProfile(name.to_string())),
        }
    }
}
