//! Uniform access to chat-completion and embedding providers.
//!
//! Everything above this module talks to a [`Provider`]. Two backends exist:
//! [`OpenAiProvider`] speaks the OpenAI-compatible HTTP protocol and
//! [`MockProvider`] replays scripted completions and derives embeddings from a
//! seeded hash so the whole pipeline runs offline. [`Gateway`] wraps either one
//! with retries, a concurrency cap and text-vector normalization.

mod mock;
mod openai;
mod retry;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{seeded_vector, MockMatch, MockProvider, MockReply, MockScript};
pub use openai::OpenAiProvider;
pub use retry::Gateway;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// Image attached to a message, sent inline as a data URL.
#[derive(Clone, PartialEq, Eq)]
pub struct InlineImage {
    pub mime: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for InlineImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InlineImage")
            .field("mime", &self.mime)
            .field("len", &self.bytes.len())
            .finish()
    }
}

impl InlineImage {
    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// Raw JSON arguments exactly as the model produced them.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub images: Vec<InlineImage>,
    pub tool_calls: Vec<ToolCall>,
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            images: Vec::new(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn assistant_tool_call(call: ToolCall) -> Self {
        let mut msg = Self::new(Role::Assistant, "");
        msg.tool_calls.push(call);
        msg
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        let mut msg = Self::new(Role::Tool, content);
        msg.tool_call_id = Some(call_id.into());
        msg
    }

    pub fn with_images(mut self, images: Vec<InlineImage>) -> Self {
        self.images = images;
        self
    }
}

/// A function the model may call, described by a JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

/// What a chat request is for. Not sent on the wire; used for routing in the
/// mock provider and for logging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    AgentStep,
    ForcedFinal,
    Summary,
    ImageDescription,
    SearchFilter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub purpose: Purpose,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSchema>,
    /// Force the model to answer through one of `tools`.
    pub require_tool: bool,
    pub temperature: f32,
}

impl ChatRequest {
    pub fn new(purpose: Purpose, messages: Vec<ChatMessage>) -> Self {
        Self {
            purpose,
            messages,
            tools: Vec::new(),
            require_tool: false,
            temperature: 0.2,
        }
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>, require_tool: bool) -> Self {
        self.tools = tools;
        self.require_tool = require_tool;
        self
    }

    pub fn offers_tool(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    pub fn last_message(&self) -> Option<&ChatMessage> {
        self.messages.last()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completion {
    pub text: Option<String>,
    pub tool_calls: Vec<ToolCall>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            tool_calls: Vec::new(),
        }
    }

    pub fn tool_call(name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Self {
            text: None,
            tool_calls: vec![ToolCall {
                id: "call_0".into(),
                name: name.into(),
                arguments: arguments.into(),
            }],
        }
    }
}

/// Which embedding space a text is projected into. `Multimodal` is the text
/// tower of the image model, so its vectors are comparable with image vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedSpace {
    Text,
    Multimodal,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("empty input")]
    EmptyInput,
    #[error("mock script exhausted for {0:?} request")]
    ScriptExhausted(Purpose),
    #[error("injected failure: {0}")]
    Injected(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout | GatewayError::Injected(_) => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait Provider: Send + Sync {
    async fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;

    async fn embed_text(
        &self,
        space: EmbedSpace,
        texts: &[String],
    ) -> Result<Vec<Vec<f32>>, GatewayError>;

    async fn embed_image(&self, bytes: &[u8]) -> Result<Vec<f32>, GatewayError>;
}

/// Connection and model settings for a live provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored in configuration.
    pub api_key_env: String,
    pub chat_model: String,
    pub text_embedding_model: String,
    pub image_embedding_model: String,
    /// Endpoint serving image (and multimodal text) embeddings. Defaults to
    /// `base_url`.
    pub image_base_url: Option<String>,
    pub timeout_secs: u64,
    pub retry_budget: u32,
    pub backoff_ms: u64,
    pub max_concurrent: usize,
    pub temperature: f32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            chat_model: "gpt-4.1-2025-04-14".into(),
            text_embedding_model: "text-embedding-3-large".into(),
            image_embedding_model: "google/siglip-so400m-patch14-384".into(),
            image_base_url: None,
            timeout_secs: 60,
            retry_budget: 2,
            backoff_ms: 250,
            max_concurrent: 8,
            temperature: 0.2,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_secs == 0 {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(GatewayError::Config("max_concurrent must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        Ok(())
    }
}
