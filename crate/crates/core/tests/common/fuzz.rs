//! Random provider scripts for the agent loop and the checks every turn
//! must pass.
#![allow(dead_code)]

use std::sync::Arc;

use mudoc_core::agent::{run_turn, AgentConfig, AgentContext, AgentMode, AgentState, HistoryEntry};
use mudoc_core::fixtures::{figure_block, text_block, IndexBuilder, RecordingBackend};
use mudoc_core::gateway::{MockMatch, MockProvider, MockReply, MockScript};
use mudoc_core::generation::StreamEvent;
use mudoc_core::index::Index;
use mudoc_core::ingest::Block;
use mudoc_core::retrieval::RetrievalConfig;
use rand::rngs::StdRng;
use rand::Rng;
use serde_json::json;
use tokio::sync::mpsc;

/// Document `bio` with 40 blocks: even ids are text, odd ids are figures,
/// matching what [`RecordingBackend`] hands out.
pub fn fuzz_index() -> Arc<Index> {
    let blocks: Vec<Block> = (0..40)
        .map(|i| if i % 2 == 1 { figure_block("bio", i, 1 + i / 8) } else { text_block("bio", i, 1 + i / 8, "t") })
        .collect();
    Arc::new(IndexBuilder::new().document("bio", 5, blocks).build().unwrap())
}

fn reflections() -> serde_json::Value {
    json!({"query_reflection": "q", "search_content_reflection": "s", "action_reasoning": "a"})
}

fn with(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    for (k, v) in extra.as_object().unwrap() {
        base[k] = v.clone();
    }
    base
}

fn random_content(rng: &mut StdRng) -> String {
    let mut s = String::from("Meiosis halves the chromosome number");
    for _ in 0..rng.random_range(0..4) {
        match rng.random_range(0..4) {
            0 => s.push_str(&format!(" [[cite:bio:{}]]", 2 * rng.random_range(0..20))),
            1 => s.push_str(&format!(
                "\n<figure><img src=\"block://bio/{0}\" alt=\"f\"><figcaption>Figure {0}</figcaption></figure>\n",
                2 * rng.random_range(0..20) + 1
            )),
            2 => s.push_str(" [[cite:bio:9999]]"),
            _ => s.push_str(" and so on."),
        }
    }
    s
}

/// One scripted provider reply drawn from all four actions plus protocol
/// violations and transient failures.
pub fn random_reply(rng: &mut StdRng) -> MockReply {
    match rng.random_range(0..20) {
        0..=4 => MockReply::tool("initial_search", with(reflections(), json!({"query": "synapsis"}))),
        5..=9 => {
            let texts: Vec<String> = (0..rng.random_range(0..3)).map(|i| format!("meiosis {i}")).collect();
            let images: Vec<String> = (0..rng.random_range(0..3)).map(|i| format!("diagram {i}")).collect();
            let texts = if texts.is_empty() && images.is_empty() { vec!["meiosis".to_string()] } else { texts };
            MockReply::tool("content_search", with(reflections(), json!({"text_queries": texts, "image_queries": images})))
        }
        10..=11 => MockReply::tool("confirm_intent", with(reflections(), json!({"question": "Do you mean meiosis I?"}))),
        12..=15 => MockReply::tool("final_response", with(reflections(), json!({"content": random_content(rng)}))),
        16 => MockReply::text("no tool call"),
        17 => MockReply::raw_tool("final_response", "{broken"),
        18 => MockReply::tool("content_search", json!({"text_queries": []})),
        _ => MockReply::Fail("transient".into()),
    }
}

pub struct TurnReport {
    pub ok: bool,
    pub iterations: usize,
    pub text_calls: usize,
    pub image_calls: usize,
    pub figure_events: usize,
}

/// Runs one fuzzed turn and checks termination, caps, history discipline
/// and mode safety. Returns an error string describing the first violation.
pub async fn fuzz_turn(rng: &mut StdRng, mode: AgentMode, index: Arc<Index>) -> Result<TurnReport, String> {
    let replies: Vec<MockReply> = (0..rng.random_range(0..12)).map(|_| random_reply(rng)).collect();
    let provider = Arc::new(MockProvider::new(MockScript::new(1, 4).route(MockMatch::Any, replies)));
    let backend = Arc::new(RecordingBackend::new("bio", rng.random_range(0..15), rng.random_range(0..9)));
    let max_iterations = rng.random_range(1..=8);
    let ctx = AgentContext {
        provider: provider.clone(),
        backend: backend.clone(),
        index,
        retrieval: RetrievalConfig::default(),
        config: AgentConfig { max_iterations, ..Default::default() },
    };
    let mut state = AgentState::new(mode, max_iterations);
    state.history.push(HistoryEntry::User { content: "earlier question".into() });
    state.history.push(HistoryEntry::Assistant { content: "earlier answer".into() });
    let before = state.clone();

    let (tx, mut rx) = mpsc::channel(1024);
    let result = run_turn(&mut state, "What happens in prophase I?", &ctx, &tx).await;
    drop(tx);
    let mut events = Vec::new();
    while let Some(e) = rx.recv().await {
        events.push(e);
    }
    let log = backend.log();
    for (_, k) in &log.text_calls {
        if *k > 10 {
            return Err(format!("text search asked for {k}"));
        }
    }
    for (_, k) in &log.image_calls {
        if *k > 5 {
            return Err(format!("image search asked for {k}"));
        }
    }
    if mode == AgentMode::TexDoC && !log.image_calls.is_empty() {
        return Err("text-only session called image retrieval".into());
    }
    let figure_events = events.iter().filter(|e| matches!(e, StreamEvent::Figure(_))).count();
    if mode == AgentMode::TexDoC && figure_events > 0 {
        return Err("text-only session emitted a figure".into());
    }
    if provider.chat_calls() > 2 * max_iterations {
        return Err(format!("{} provider calls for {max_iterations} iterations", provider.chat_calls()));
    }
    let new_entries = &state.history[before.history.len().min(state.history.len())..];
    match &result {
        Ok(outcome) => {
            if outcome.iterations > max_iterations {
                return Err(format!("{} iterations > {max_iterations}", outcome.iterations));
            }
            if state.history[..before.history.len()] != before.history[..] {
                return Err("earlier history modified".into());
            }
            let tool_results = new_entries.iter().filter(|e| matches!(e, HistoryEntry::ToolResult { .. })).count();
            if tool_results != outcome.searches {
                return Err(format!("{tool_results} tool results for {} searches", outcome.searches));
            }
            let trace = state.traces.last().ok_or("no trace recorded")?;
            for it in &trace.iterations {
                if it.text_results > 10 || it.image_results > 5 {
                    return Err("result cap exceeded".into());
                }
                if matches!(it.action, mudoc_core::agent::AgentAction::InitialSearch { .. }) && it.text_results > 3 {
                    return Err("initial search returned more than 3".into());
                }
            }
            if events.last() != Some(&StreamEvent::Done) || events.iter().filter(|e| **e == StreamEvent::Done).count() != 1 {
                return Err("stream does not end with a single Done".into());
            }
        }
        Err(_) => {
            if state != before {
                return Err("failed turn changed the state".into());
            }
            if !matches!(events.last(), Some(StreamEvent::Error { .. })) {
                return Err("failed turn did not end with an Error event".into());
            }
        }
    }
    Ok(TurnReport {
        ok: result.is_ok(),
        iterations: result.as_ref().map(|o| o.iterations).unwrap_or(0),
        text_calls: log.text_calls.len(),
        image_calls: log.image_calls.len(),
        figure_events,
    })
}
