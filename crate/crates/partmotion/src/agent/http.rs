//! Chat-completions HTTP backend.
//!
//! Speaks the common `POST {endpoint}` chat shape: the prompt goes out as
//! a single user message at temperature 0 and the reply is read from
//! `choices[0].message.content`. The API key comes from the
//! `FRANKEN_AGENT_API_KEY` environment variable.

use std::time::Duration;

use serde_json::json;

use crate::agent::{AgentBackend, BackendError};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "FRANKEN_AGENT_API_KEY";

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> HttpBackend {
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("default TLS backend is always available"),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<HttpBackend, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::MissingApiKey { var: API_KEY_ENV })?;
        Ok(HttpBackend::new(endpoint, model, key, timeout))
    }

    fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

impl AgentBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let unavailable = |detail: String| BackendError::Unavailable(detail);
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(prompt))
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(unavailable(format!("{} returned {status}", self.endpoint)));
        }
        let body: serde_json::Value = resp.json().map_err(|e| unavailable(e.to_string()))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                unavailable("response is missing choices[0].message.content".to_string())
            })
    }
}
