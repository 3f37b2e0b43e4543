//! OpenAI-compatible chat-completions client and JSON extraction from
//! free-form completions.

use std::collections::VecDeque;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{post_json, with_retries, Exchange, Retry, RetryOutcome, RetryPolicy};

pub const API_KEY_ENV: &str = "WAKE_AGENT_API_KEY";
pub const BASE_URL_ENV: &str = "WAKE_AGENT_LLM_URL";
pub const DEFAULT_TEMPERATURE: f64 = 0.35;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("LLM endpoint rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("LLM endpoint unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("malformed completion: {0}")]
    Decode(String),
}

pub trait ChatBackend: Send {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatSettings {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry: RetryPolicy,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: "wake-agent".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpChat {
    settings: ChatSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(settings: ChatSettings, api_key: Option<String>) -> Self {
        Self { agent: settings.retry.agent(), settings, api_key }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }
}

impl ChatBackend for HttpChat {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let req = ChatRequest {
            model: &self.settings.model,
            messages,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        };
        let url = self.url();
        let body = with_retries(&self.settings.retry, |_| {
            match post_json(&self.agent, &url, &req, self.api_key.as_deref()) {
                Exchange::Response { status, body } if (200..300).contains(&status) => Ok(body),
                Exchange::Response { status, body } if (400..500).contains(&status) && status != 429 => {
                    Err(Retry::Fatal(LlmError::Rejected { status, body }))
                }
                Exchange::Response { status, .. } => Err(Retry::Again(format!("HTTP {status}"))),
                Exchange::Transport(reason) => Err(Retry::Again(reason)),
            }
        })
        .map_err(|e| match e {
            RetryOutcome::Fatal(e) => e,
            RetryOutcome::Exhausted { attempts, last } => LlmError::Unavailable { attempts, reason: last },
        })?;
        let resp: ChatResponse = serde_json::from_str(&body).map_err(|e| LlmError::Decode(e.to_string()))?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Decode("no choices".into()))
    }
}

/// Replays fixed completions; used for offline runs and tests.
#[derive(Debug, Clone, Default)]
pub struct CannedChat {
    replies: VecDeque<String>,
    pub transcript: Vec<Vec<ChatMessage>>,
}

impl CannedChat {
    pub fn new(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { replies: replies.into_iter().map(Into::into).collect(), transcript: Vec::new() }
    }
}

impl ChatBackend for CannedChat {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        self.transcript.push(messages.to_vec());
        self.replies
            .pop_front()
            .ok_or_else(|| LlmError::Unavailable { attempts: 1, reason: "canned replies exhausted".into() })
    }
}

/// Parses `T` from a completion: the whole text, else the first fenced code
/// block, else the outermost `{…}` span.
pub fn extract_json<T: DeserializeOwned>(text: &str) -> Option<T> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    if let Some(block) = fenced_block(trimmed) {
        if let Ok(v) = serde_json::from_str(block.trim()) {
            return Some(v);
        }
    }
    let (start, end) = (trimmed.find('{')?, trimmed.rfind('}')?);
    if end <= start {
        return None;
    }
    serde_json::from_str(&trimmed[start..=end]).ok()
}

fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let rest = &text[open + 3..];
    // skip an info string such as `json`
    let body_start = rest.find('\n').map(|i| i + 1).unwrap_or(0);
    let rest = &rest[body_start..];
    let close = rest.find("```")?;
    Some(&rest[..close])
}
