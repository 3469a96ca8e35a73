use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ChatRequest, Completion, EmbedSpace, GatewayError, Provider, Purpose, Role};
use crate::text;

/// Deterministic pseudo-embedding: SHA-256 over `(seed, domain, input)` seeds
/// a ChaCha8 stream that yields `dim` uniform values in [-1, 1), which are then
/// scaled to unit length.
pub fn seeded_vector(seed: u64, domain: &str, input: &[u8], dim: usize) -> Vec<f32> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(input);
    let mut key = [0u8; 32];
    key.copy_from_slice(&hasher.finalize());
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    text::normalize(&mut v);
    v
}

#[derive(Debug, Clone)]
pub enum MockReply {
    Complete(Completion),
    /// Transient (retryable) failure.
    Fail(String),
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply::Complete(Completion::text(text))
    }

    pub fn tool(name: &str, arguments: serde_json::Value) -> Self {
        MockReply::Complete(Completion::tool_call(name, arguments.to_string()))
    }

    /// A tool call whose argument string is taken verbatim, valid JSON or not.
    pub fn raw_tool(name: &str, arguments: &str) -> Self {
        MockReply::Complete(Completion::tool_call(name, arguments))
    }
}

type Predicate = Arc<dyn Fn(&ChatRequest) -> bool + Send + Sync>;
type Responder = Arc<dyn Fn(&ChatRequest) -> MockReply + Send + Sync>;

#[derive(Clone)]
pub enum MockMatch {
    Any,
    Purpose(Purpose),
    /// Some message in the request contains the substring.
    Contains(String),
    Custom(Predicate),
}

impl MockMatch {
    fn matches(&self, req: &ChatRequest) -> bool {
        match self {
            MockMatch::Any => true,
            MockMatch::Purpose(p) => req.purpose == *p,
            MockMatch::Contains(s) => req.messages.iter().any(|m| m.content.contains(s.as_str())),
            MockMatch::Custom(f) => f(req),
        }
    }
}

enum Replies {
    Queue(VecDeque<MockReply>),
    Func(Responder),
}

struct MockRoute {
    matcher: MockMatch,
    replies: Replies,
}

/// Ordered routing table of scripted replies plus the embedding rule.
///
/// A request is served by the first route whose matcher accepts it and which
/// still has a reply available; queued replies are consumed, function
/// responders are not.
pub struct MockScript {
    seed: u64,
    text_dim: usize,
    multimodal_dim: usize,
    routes: Vec<MockRoute>,
}

impl MockScript {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            text_dim: dim,
            multimodal_dim: dim,
            routes: Vec::new(),
        }
    }

    pub fn with_multimodal_dim(mut self, dim: usize) -> Self {
        self.multimodal_dim = dim;
        self
    }

    pub fn route(mut self, matcher: MockMatch, replies: impl IntoIterator<Item = MockReply>) -> Self {
        self.routes.push(MockRoute {
            matcher,
            replies: Replies::Queue(replies.into_iter().collect()),
        });
        self
    }

    pub fn responder(
        mut self,
        matcher: MockMatch,
        f: impl Fn(&ChatRequest) -> MockReply + Send + Sync + 'static,
    ) -> Self {
        self.routes.push(MockRoute {
            matcher,
            replies: Replies::Func(Arc::new(f)),
        });
        self
    }

    /// Self-sufficient script for running the whole service without network
    /// access: summaries echo the chunk opening, images get hash-derived
    /// captions, the search filter keeps every candidate, and the agent does
    /// one content search and then answers from what it found.
    pub fn offline(seed: u64, dim: usize) -> Self {
        Self::new(seed, dim)
            .responder(MockMatch::Purpose(Purpose::Summary), |req| {
                let body = last_user(req).unwrap_or_default();
                MockReply::text(format!("Summary: {}", text::prefix_chars(body.trim(), 160)))
            })
            .responder(MockMatch::Purpose(Purpose::ImageDescription), |req| {
                let digest = req
                    .messages
                    .iter()
                    .flat_map(|m| m.images.iter())
                    .map(|img| hex::encode(&Sha256::digest(&img.bytes)[..4]))
                    .next()
                    .unwrap_or_else(|| "unknown".into());
                MockReply::tool(
                    "record_image_description",
                    json!({
                        "caption": format!("Figure {digest}"),
                        "description": format!("Extracted textbook figure {digest}."),
                    }),
                )
            })
            .responder(MockMatch::Purpose(Purpose::SearchFilter), |req| {
                let re = Regex::new(r"(?m)^- id=(\S+)").expect("static regex");
                let ids: Vec<String> = req
                    .messages
                    .iter()
                    .flat_map(|m| re.captures_iter(&m.content).map(|c| c[1].to_string()).collect::<Vec<_>>())
                    .collect();
                MockReply::tool("select_blocks", json!({ "block_ids": ids }))
            })
            .responder(MockMatch::Purpose(Purpose::AgentStep), offline_agent_step)
            .responder(MockMatch::Purpose(Purpose::ForcedFinal), offline_final)
    }
}

fn last_user(req: &ChatRequest) -> Option<&str> {
    req.messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
}

fn offline_agent_step(req: &ChatRequest) -> MockReply {
    let searched = req.last_message().is_some_and(|m| m.role != Role::User);
    if searched || !req.offers_tool("content_search") {
        return offline_final(req);
    }
    let query = last_user(req).unwrap_or_default().to_string();
    let image_capable = req
        .tools
        .iter()
        .find(|t| t.name == "content_search")
        .is_some_and(|t| t.parameters["properties"].get("image_queries").is_some());
    let mut args = json!({
        "query_reflection": "The question is clear enough to search directly.",
        "search_content_reflection": "No content has been retrieved yet.",
        "action_reasoning": "Search the textbook before answering.",
        "text_queries": [query.clone()],
    });
    if image_capable {
        args["image_queries"] = json!([query]);
    }
    MockReply::tool("content_search", args)
}

fn offline_final(req: &ChatRequest) -> MockReply {
    let source = Regex::new(r#"<source doc="([^"]+)" blocks="([0-9,]+)">"#).expect("static regex");
    let image = Regex::new(r#"<image src="block://([^/"]+)/(\d+)">\s*caption: ([^\n]*)"#).expect("static regex");
    let start = req.messages.iter().rposition(|m| m.role == Role::User).unwrap_or(0);
    let context: String = req.messages[start..]
        .iter()
        .filter(|m| m.role == Role::Tool)
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");

    let mut answer = String::new();
    if let Some(c) = source.captures(&context) {
        let ids: Vec<&str> = c[2].split(',').take(2).collect();
        answer.push_str(&format!(
            "Here is what the textbook says about this topic [[cite:{}:{}]].",
            &c[1],
            ids.join(",")
        ));
    } else {
        answer.push_str("I could not find this topic in the textbook.");
    }
    if req.offers_tool("content_search") || req.purpose == Purpose::ForcedFinal {
        if let Some(c) = image.captures(&context) {
            answer.push_str(&format!(
                "\n\n<figure><img src=\"block://{}/{}\" alt=\"{}\"><figcaption>{}</figcaption></figure>",
                &c[1], &c[2], &c[3], &c[3]
            ));
        }
    }
    answer.push_str("\n\nCan you explain this in your own words?");
    MockReply::tool(
        "final_response",
        json!({
            "query_reflection": "",
            "search_content_reflection": "Retrieved content covers the question.",
            "action_reasoning": "Answer now.",
            "content": answer,
        }),
    )
}

/// Scripted, fully deterministic provider.
pub struct MockProvider {
    script: Mutex<MockScript>,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    purposes: Mutex<Vec<Purpose>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            script: Mutex::new(script),
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
            purposes: Mutex::new(Vec::new()),
        }
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    /// Purposes of every chat request received so far, in arrival order.
    pub fn purposes(&self) -> Vec<Purpose> {
        self.purposes.lock().expect("mock lock").clone()
    }

    fn dims(&self) -> (u64, usize, usize) {
        let s = self.script.lock().expect("mock lock");
        (s.seed, s.text_dim, s.multimodal_dim)
    }
}

#[async_trait]
impl Provider for MockProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.purposes.lock().expect("mock lock").push(request.purpose);
        let reply = {
            let mut script = self.script.lock().expect("mock lock");
            let mut found = None;
            for route in script.routes.iter_mut() {
                if !route.matcher.matches(request) {
                    continue;
                }
                match &mut route.replies {
                    Replies::Queue(q) => {
                        if let Some(r) = q.pop_front() {
                            found = Some(r);
                            break;
                        }
                    }
                    Replies::Func(f) => {
                        found = Some(f(request));
                        break;
                    }
                }
            }
            found
        };
        match reply {
            Some(MockReply::Complete(c)) => Ok(c),
            Some(MockReply::Fail(msg)) => Err(GatewayError::Injected(msg)),
            None => Err(GatewayError::ScriptExhausted(request.purpose)),
        }
    }

    async fn embed_text(&self, space: EmbedSpace, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        let (seed, text_dim, mm_dim) = self.dims();
        let (domain, dim) = match space {
            EmbedSpace::Text => ("text", text_dim),
            EmbedSpace::Multimodal => ("multimodal", mm_dim),
        };
        Ok(texts
            .iter()
            .map(|t| seeded_vector(seed, domain, t.as_bytes(), dim))
            .collect())
    }

    async fn embed_image(&self, bytes: &[u8]) -> Result<Vec<f32>, GatewayError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        let (seed, _, mm_dim) = self.dims();
        Ok(seeded_vector(seed, "image", bytes, mm_dim))
    }
}
