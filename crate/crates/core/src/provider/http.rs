//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, CompletionRequest, GatewayError, ProviderFailure};

fn default_auth_header() -> String {
    "Authorization".to_string()
}

fn default_auth_prefix() -> String {
    "Bearer ".to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_in_flight() -> usize {
    super::DEFAULT_MAX_IN_FLIGHT
}

fn default_max_attempts() -> u32 {
    super::DEFAULT_MAX_ATTEMPTS
}

fn default_base_delay_ms() -> u64 {
    500
}

/// One `[providers.<id>]` section of the config file. Credentials are never
/// stored here, only the name of the environment variable holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    #[serde(default)]
    pub id: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_delay_ms")]
    pub base_delay_ms: u64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    credential: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: HttpProviderConfig) -> Result<Self, GatewayError> {
        let credential = std::env::var(&config.api_key_env)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| GatewayError::Auth {
                request_id: "<setup>".to_string(),
                message: format!(
                    "environment variable {} is not set for provider {}",
                    config.api_key_env, config.id
                ),
            })?;
        Self::with_credential(config, credential)
    }

    pub fn with_credential(
        config: HttpProviderConfig,
        credential: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport {
                request_id: "<setup>".to_string(),
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            config,
            credential: credential.into(),
            client,
        })
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }
}

impl ChatProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, ProviderFailure> {
        let body = ChatRequestBody {
            model: &request.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt_text,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .header(
                self.config.auth_header.as_str(),
                format!("{}{}", self.config.auth_prefix, self.credential),
            )
            .json(&body)
            .send()
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;

        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .text()
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;

        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderFailure::Unauthorized { status }),
            429 => return Err(ProviderFailure::RateLimited { retry_after }),
            408 | 500..=599 => return Err(ProviderFailure::Unavailable { status }),
            _ => return Err(ProviderFailure::Rejected { status, body: text }),
        }

        let parsed: ChatResponseBody = serde_json::from_str(&text)
            .map_err(|e| ProviderFailure::Malformed(format!("invalid response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderFailure::Malformed("response has no message content".into()))
    }
}
