use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{
    ChatMessage, ChatRequest, Completion, EmbedSpace, GatewayError, Provider, ProviderConfig, ToolCall,
};
use crate::gateway::InlineImage;

/// Client for any server speaking the OpenAI-compatible chat-completions and
/// embeddings protocol. Performs exactly one HTTP request per call; retries
/// belong to [`super::Gateway`].
pub struct OpenAiProvider {
    client: reqwest::Client,
    config: ProviderConfig,
    api_key: Option<String>,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            tracing::warn!(env = %config.api_key_env, "no API key in environment; sending unauthenticated requests");
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { client, config, api_key })
    }

    fn endpoint(base: &str, path: &str) -> String {
        format!("{}/{}", base.trim_end_matches('/'), path)
    }

    async fn post(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        tracing::debug!(%url, model = %body["model"], "provider request");
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Http {
                status: status.as_u16(),
                body: redact(crate::text::prefix_chars(&text, 512), self.api_key.as_deref()),
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::InvalidResponse(e.to_string()))
    }

    fn image_base(&self) -> &str {
        self.config.image_base_url.as_deref().unwrap_or(&self.config.base_url)
    }
}

/// Removes any occurrence of the secret from text destined for logs or errors.
pub(crate) fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "[REDACTED]"),
        _ => text.to_string(),
    }
}

fn message_json(msg: &ChatMessage) -> Value {
    let content = if msg.images.is_empty() {
        json!(msg.content)
    } else {
        let mut parts = vec![json!({ "type": "text", "text": msg.content })];
        parts.extend(
            msg.images
                .iter()
                .map(|img: &InlineImage| json!({ "type": "image_url", "image_url": { "url": img.data_url() } })),
        );
        Value::Array(parts)
    };
    let mut v = json!({ "role": msg.role, "content": content });
    if !msg.tool_calls.is_empty() {
        v["tool_calls"] = msg
            .tool_calls
            .iter()
            .map(|c| json!({ "id": c.id, "type": "function", "function": { "name": c.name, "arguments": c.arguments } }))
            .collect();
    }
    if let Some(id) = &msg.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

pub(crate) fn chat_body(model: &str, req: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "temperature": req.temperature,
        "messages": req.messages.iter().map(message_json).collect::<Vec<_>>(),
    });
    if !req.tools.is_empty() {
        body["tools"] = req
            .tools
            .iter()
            .map(|t| json!({ "type": "function", "function": { "name": t.name, "description": t.description, "parameters": t.parameters } }))
            .collect();
        body["tool_choice"] = json!(if req.require_tool { "required" } else { "auto" });
    }
    body
}

pub(crate) fn parse_chat_response(v: &Value) -> Result<Completion, GatewayError> {
    let message = v
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message".into()))?;
    let text = message["content"].as_str().map(str::to_string);
    let tool_calls = message["tool_calls"]
        .as_array()
        .map(|calls| {
            calls
                .iter()
                .enumerate()
                .map(|(i, c)| ToolCall {
                    id: c["id"].as_str().map(str::to_string).unwrap_or_else(|| format!("call_{i}")),
                    name: c.pointer("/function/name").and_then(Value::as_str).unwrap_or_default().to_string(),
                    arguments: c
                        .pointer("/function/arguments")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(Completion { text, tool_calls })
}

pub(crate) fn parse_embeddings(v: &Value, expected: usize) -> Result<Vec<Vec<f32>>, GatewayError> {
    let data = v["data"]
        .as_array()
        .ok_or_else(|| GatewayError::InvalidResponse("missing data array".into()))?;
    let mut rows: Vec<(usize, Vec<f32>)> = data
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let idx = item["index"].as_u64().map(|x| x as usize).unwrap_or(i);
            let vec = item["embedding"]
                .as_array()
                .ok_or_else(|| GatewayError::InvalidResponse("missing embedding".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding".into()))?;
            Ok((idx, vec))
        })
        .collect::<Result<_, GatewayError>>()?;
    rows.sort_by_key(|(i, _)| *i);
    if rows.len() != expected {
        return Err(GatewayError::InvalidResponse(format!(
            "expected {expected} embeddings, got {}",
            rows.len()
        )));
    }
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

#[async_trait]
impl Provider for OpenAiProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let url = Self::endpoint(&self.config.base_url, "chat/completions");
        let mut req = request.clone();
        req.temperature = self.config.temperature;
        let v = self.post(&url, &chat_body(&self.config.chat_model, &req)).await?;
        parse_chat_response(&v)
    }

    async fn embed_text(&self, space: EmbedSpace, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let (base, model) = match space {
            EmbedSpace::Text => (self.config.base_url.as_str(), &self.config.text_embedding_model),
            EmbedSpace::Multimodal => (self.image_base(), &self.config.image_embedding_model),
        };
        let url = Self::endpoint(base, "embeddings");
        let v = self.post(&url, &json!({ "model": model, "input": texts })).await?;
        parse_embeddings(&v, texts.len())
    }

    async fn embed_image(&self, bytes: &[u8]) -> Result<Vec<f32>, GatewayError> {
        let mime = image::guess_format(bytes)
            .map(|f| f.to_mime_type())
            .unwrap_or("application/octet-stream");
        let url = Self::endpoint(self.image_base(), "embeddings");
        let data_url = InlineImage { mime: mime.into(), bytes: bytes.to_vec() }.data_url();
        let v = self
            .post(&url, &json!({ "model": self.config.image_embedding_model, "input": [data_url] }))
            .await?;
        Ok(parse_embeddings(&v, 1)?.remove(0))
    }
}
