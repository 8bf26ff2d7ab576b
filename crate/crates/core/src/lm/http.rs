//! Blocking HTTP backend for OpenAI-compatible endpoints.

use std::time::Duration;

use ureq::Agent;

use super::wire::{ChatBody, ChatReply, CompletionBody, CompletionReply};
use super::{CompletionBackend, CompletionRequest, CompletionResponse, EndpointConfig, LmError};

pub struct HttpBackend {
    agent: Agent,
    base_url: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

fn is_loopback(url: &str) -> bool {
    let rest = url.split("://").nth(1).unwrap_or(url);
    let host = rest.split(['/', ':']).next().unwrap_or("");
    matches!(host, "127.0.0.1" | "localhost" | "0.0.0.0") || rest.starts_with("[::1]")
}

impl HttpBackend {
    pub fn new(config: &EndpointConfig) -> Result<Self, LmError> {
        let api_key = match &config.api_key_env {
            Some(name) => Some(std::env::var(name).map_err(|_| {
                LmError::EndpointUnavailable(format!("environment variable {name} is not set"))
            })?),
            None => None,
        };
        let base_url = config.base_url.trim_end_matches('/').to_string();
        let mut builder = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs.max(1))))
            .http_status_as_error(false);
        if is_loopback(&base_url) {
            builder = builder.proxy(None);
        }
        Ok(Self {
            agent: builder.build().into(),
            base_url,
            api_key,
        })
    }

    fn post(&self, path: &str, body: String) -> Result<String, LmError> {
        let url = format!("{}{path}", self.base_url);
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LmError::Transient {
                status: 0,
                message: format!("{url}: {e}"),
            },
            other => LmError::EndpointUnavailable(format!("{url}: {other}")),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LmError::MalformedResponse(format!("{url}: {e}")))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(LmError::Transient { status, message: text }),
            _ => Err(LmError::Rejected { status, message: text }),
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LmError> {
        let malformed = |e: serde_json::Error| LmError::MalformedResponse(e.to_string());
        if request.chat {
            let body = serde_json::to_string(&ChatBody::from_request(request)).map_err(malformed)?;
            let raw = self.post("/v1/chat/completions", body)?;
            serde_json::from_str::<ChatReply>(&raw).map_err(malformed)?.into_response()
        } else {
            let body = serde_json::to_string(&CompletionBody::from_request(request)).map_err(malformed)?;
            let raw = self.post("/v1/completions", body)?;
            serde_json::from_str::<CompletionReply>(&raw).map_err(malformed)?.into_response()
        }
    }
}
