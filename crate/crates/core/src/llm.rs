//! Language-model provider used for topic labels and answer generation.
//!
//! The stub kind is deterministic and never touches the network; each
//! caller defines its own stub output. The remote kind speaks a
//! chat-completions style protocol with temperature 0.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EngineConfig, RemoteConfig};

pub mod prompts {
    pub const LABEL: &str = include_str!("../prompts/label_v1.txt");
    pub const ROUTE: &str = include_str!("../prompts/route_v1.txt");
    pub const CORPUS_ANSWER: &str = include_str!("../prompts/corpus_answer_v1.txt");
    pub const DOCUMENT_ANSWER: &str = include_str!("../prompts/document_answer_v1.txt");

    /// Fills `{name}` placeholders and drops the template's header line.
    pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
        let body = template.split_once('\n').map_or(template, |(first, rest)| {
            if first.starts_with("# prompt:") {
                rest
            } else {
                template
            }
        });
        vars.iter().fold(body.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
    }
}

#[derive(Debug, Clone)]
pub enum LlmProvider {
    Stub,
    Remote(RemoteLlm),
}

impl LlmProvider {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self> {
        match &cfg.llm {
            Some(remote) if !remote.endpoint.is_empty() => Ok(LlmProvider::Remote(RemoteLlm::new(remote.clone())?)),
            _ => Ok(LlmProvider::Stub),
        }
    }

    pub fn is_stub(&self) -> bool {
        matches!(self, LlmProvider::Stub)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Clone)]
pub struct RemoteLlm {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteLlm {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::ProviderUnavailable { message: e.to_string(), failed_ids: vec![] })?;
        Ok(Self { cfg, client })
    }

    /// Sends one user prompt and returns the first choice's text.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let req = ChatRequest {
            model: &self.cfg.model,
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: 0.0,
            max_tokens: self.cfg.max_tokens,
        };
        let unavailable = |e: String| Error::ProviderUnavailable { message: e, failed_ids: vec![] };
        let resp: ChatResponse = self
            .client
            .post(&self.cfg.endpoint)
            .json(&req)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| unavailable(e.to_string()))?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| unavailable("completion had no choices".into()))
    }
}
