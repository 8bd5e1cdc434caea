//! HTTP-backed text generation, with the template stub as the default.

use std::time::Duration;

use kinlink_core::backends::{BackendError, GenerationContext, Generator, StubGenerator, MAX_REPLY_CODE_POINTS};
use serde::Deserialize;

use crate::config::RemoteConfig;

/// Posts the generation context as JSON and expects `{"text": "..."}` back.
///
/// Blocking; call it off the async runtime.
pub struct RemoteGenerator {
    client: reqwest::blocking::Client,
    endpoint: String,
    key: Option<String>,
}

#[derive(Deserialize)]
struct Reply {
    text: String,
}

impl RemoteGenerator {
    pub fn new(cfg: &RemoteConfig) -> Result<Self, String> {
        let key = match &cfg.key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { client, endpoint: cfg.endpoint.clone(), key })
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, ctx: &GenerationContext) -> Result<String, BackendError> {
        let unavailable = |e: reqwest::Error| BackendError::Unavailable(e.to_string());
        let mut req = self.client.post(&self.endpoint).json(ctx);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let reply: Reply = req.send().and_then(|r| r.error_for_status()).and_then(|r| r.json()).map_err(unavailable)?;
        let text = reply.text.trim();
        if text.is_empty() {
            return Err(BackendError::Unavailable("empty reply".into()));
        }
        Ok(text.chars().take(MAX_REPLY_CODE_POINTS).collect())
    }
}

pub enum ServiceGenerator {
    Stub(StubGenerator),
    Remote(RemoteGenerator),
}

impl Generator for ServiceGenerator {
    fn generate(&self, ctx: &GenerationContext) -> Result<String, BackendError> {
        match self {
            ServiceGenerator::Stub(g) => g.generate(ctx),
            ServiceGenerator::Remote(g) => g.generate(ctx),
        }
    }
}
