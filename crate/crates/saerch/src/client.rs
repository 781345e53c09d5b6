//! HTTP clients for chat completions and embeddings.

use std::time::Duration;

use saerch_core::autointerp::{CompletionClient, CompletionRequest, Role};
use serde::Deserialize;
use serde_json::json;

use crate::config::{CompletionSection, EmbeddingSection};
use crate::error::{Error, Result};

/// Transport retries after the first attempt.
pub const TRANSPORT_RETRIES: u32 = 3;

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn token_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|t| !t.is_empty())
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(String),
}

/// Runs `f` up to `1 + retries` times, sleeping `base · 2^i` between attempts.
fn with_retries<T>(retries: u32, base: Duration, mut f: impl FnMut() -> Attempt<T>) -> std::result::Result<T, String> {
    let mut last = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            std::thread::sleep(base * 2u32.pow(attempt - 1));
        }
        match f() {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fail(msg) => return Err(msg),
            Attempt::Retry(msg) => {
                log::warn!("request failed (attempt {}): {msg}", attempt + 1);
                last = msg;
            }
        }
    }
    Err(format!("giving up after {} attempts: {last}", retries + 1))
}

fn post_json<T: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: &serde_json::Value,
    backoff: Duration,
) -> std::result::Result<T, String> {
    with_retries(TRANSPORT_RETRIES, backoff, || {
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fail(format!("HTTP {status}: {text}"));
        }
        match resp.body_mut().read_json::<T>() {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(format!("unexpected response body: {e}")),
        }
    })
}

/// Chat-completion client; every prompt is sent as a single user message.
pub struct HttpCompletionClient {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    default_model: String,
    role_models: Vec<(Role, String)>,
    backoff: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpCompletionClient {
    pub fn new(section: &CompletionSection) -> Self {
        Self {
            agent: agent(section.timeout_secs),
            url: join_url(&section.base_url, &section.path),
            token: token_from_env(&section.token_env),
            default_model: section.interpreter_model.clone(),
            role_models: vec![
                (Role::Predictor, section.predictor_model.clone()),
                (Role::FamilyPredictor, section.predictor_model.clone()),
            ],
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_model(mut self, role: Role, model: &str) -> Self {
        self.role_models.retain(|(r, _)| *r != role);
        self.role_models.push((role, model.to_string()));
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn model_for(&self, role: Role) -> &str {
        self.role_models.iter().find(|(r, _)| *r == role).map_or(&self.default_model, |(_, m)| m)
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> saerch_core::Result<String> {
        let body = json!({
            "model": self.model_for(request.role),
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let resp: ChatResponse = post_json(&self.agent, &self.url, self.token.as_deref(), &body, self.backoff)
            .map_err(saerch_core::Error::Client)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| saerch_core::Error::Client("response had no message content".into()))
    }
}

/// Source of raw (un-normalized) embeddings.
pub trait EmbeddingClient: Send + Sync {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub struct HttpEmbeddingClient {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    model: String,
    backoff: Duration,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl HttpEmbeddingClient {
    pub fn new(section: &EmbeddingSection) -> Self {
        Self {
            agent: agent(section.timeout_secs),
            url: join_url(&section.base_url, &section.path),
            token: token_from_env(&section.token_env),
            model: section.model.clone(),
            backoff: Duration::from_millis(500),
        }
    }
}

impl EmbeddingClient for HttpEmbeddingClient {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({ "model": self.model, "input": texts });
        let resp: EmbeddingResponse = post_json(&self.agent, &self.url, self.token.as_deref(), &body, self.backoff)
            .map_err(Error::EmbedUnavailable)?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, d) in resp.data.into_iter().enumerate() {
            let i = d.index.unwrap_or(pos);
            if i < out.len() {
                out[i] = d.embedding;
            }
        }
        if out.iter().any(Vec::is_empty) {
            return Err(Error::EmbedUnavailable("response is missing embeddings".into()));
        }
        Ok(out)
    }
}

/// Fixed text → vector table; unknown texts are unavailable.
#[derive(Debug, Clone, Default)]
pub struct StaticEmbeddingClient {
    pub vectors: std::collections::HashMap<String, Vec<f64>>,
}

impl StaticEmbeddingClient {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(Self { vectors: crate::formats::read_json(path)? })
    }
}

impl EmbeddingClient for StaticEmbeddingClient {
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.vectors.get(t).cloned().ok_or_else(|| Error::EmbedUnavailable(t.clone()))).collect()
    }
}
