use std::sync::Arc;

use tokio::sync::mpsc;

use super::protocol::{step, StepOutput, StepRequest};
use super::{AgentAction, AgentConfig, AgentError, AgentState, HistoryEntry, IterationRecord, TurnTrace};
use crate::gateway::Provider;
use crate::generation::{build_system_prompt, reconstruct, Phase, StreamEvent, StreamTransformer};
use crate::index::Index;
use crate::retrieval::{ImageHit, RetrievalConfig, SearchBackend, TextSpan};

/// Everything a turn needs besides the session state.
#[derive(Clone)]
pub struct AgentContext {
    pub provider: Arc<dyn Provider>,
    pub backend: Arc<dyn SearchBackend>,
    pub index: Arc<Index>,
    pub retrieval: RetrievalConfig,
    pub config: AgentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Disposition {
    Continue { text_results: usize, image_results: usize, error: Option<String> },
    /// Generative action; carries the text to show the student.
    EndTurn(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub turn: usize,
    pub iterations: usize,
    pub searches: usize,
    /// Every event sent for the turn, in order.
    pub events: Vec<StreamEvent>,
    /// The response as rendered, re-serialized from the content events.
    pub response: String,
}

/// Retrieved passages in the tool-result format the model reads.
pub fn format_spans(spans: &[TextSpan]) -> String {
    let mut out = String::new();
    for s in spans {
        let ids: Vec<String> = s.block_ids.iter().map(u32::to_string).collect();
        out.push_str(&format!("<source doc=\"{}\" blocks=\"{}\">\n", s.doc_id, ids.join(",")));
        for (id, text) in s.block_ids.iter().zip(&s.block_texts) {
            if !text.is_empty() {
                out.push_str(&format!("[{id}] {}\n", text.trim()));
            }
        }
        out.push_str("</source>\n");
    }
    out
}

pub fn format_images(hits: &[ImageHit]) -> String {
    hits.iter()
        .map(|h| {
            format!(
                "<image src=\"block://{}/{}\">\ncaption: {}\ndescription: {}\n</image>\n",
                h.doc_id, h.block_id, h.caption, h.description
            )
        })
        .collect()
}

/// Executes one action. Searches append a tool call and its result to the
/// history; generative actions append the assistant message and end the turn.
/// A failed search is reported to the model in the tool result.
pub async fn apply_action(
    state: &mut AgentState,
    call_id: &str,
    out: &StepOutput,
    backend: &dyn SearchBackend,
    cfg: &RetrievalConfig,
) -> Disposition {
    let (mut spans, mut images, mut error) = (Vec::new(), Vec::new(), None);
    match &out.action {
        AgentAction::FinalResponse { content } | AgentAction::ConfirmIntent { question: content } => {
            state.history.push(HistoryEntry::Assistant { content: content.clone() });
            return Disposition::EndTurn(content.clone());
        }
        AgentAction::InitialSearch { query } => match backend.text_search(std::slice::from_ref(query), cfg.initial_k).await {
            Ok(mut s) => {
                s.truncate(cfg.initial_k);
                spans = s;
            }
            Err(e) => error = Some(e.to_string()),
        },
        AgentAction::ContentSearch { text_queries, image_queries } => {
            if !text_queries.is_empty() {
                match backend.text_search(text_queries, cfg.content_text_k).await {
                    Ok(mut s) => {
                        s.truncate(cfg.content_text_k);
                        spans = s;
                    }
                    Err(e) => error = Some(e.to_string()),
                }
            }
            if state.mode.has_images() && !image_queries.is_empty() {
                match backend.image_search(image_queries, cfg.content_image_k).await {
                    Ok(mut h) => {
                        h.truncate(cfg.content_image_k);
                        images = h;
                    }
                    Err(e) => error = Some(e.to_string()),
                }
            }
        }
    }

    let mut content = String::new();
    if let Some(e) = &error {
        content.push_str(&format!("Search failed: {e}\n"));
    }
    if spans.is_empty() && images.is_empty() && error.is_none() {
        content.push_str("No matching textbook content was found.\n");
    }
    content.push_str(&format_spans(&spans));
    content.push_str(&format_images(&images));
    state.history.push(HistoryEntry::ToolCall {
        call_id: call_id.into(),
        name: out.tool.clone(),
        arguments: out.arguments.clone(),
    });
    state.history.push(HistoryEntry::ToolResult { call_id: call_id.into(), name: out.tool.clone(), content });
    Disposition::Continue { text_results: spans.len(), image_results: images.len(), error }
}

struct Emitter<'a> {
    sink: &'a mpsc::Sender<StreamEvent>,
    sent: Vec<StreamEvent>,
}

impl Emitter<'_> {
    async fn emit(&mut self, event: StreamEvent) -> Result<(), AgentError> {
        self.sink.send(event.clone()).await.map_err(|_| AgentError::Disconnected)?;
        self.sent.push(event);
        Ok(())
    }
}

/// Runs one user turn to completion, sending events to `sink`.
///
/// On any failure, including the receiver going away, the history and the
/// traces are restored to their state before the turn and an `Error` event is
/// sent when possible.
pub async fn run_turn(
    state: &mut AgentState,
    user_message: &str,
    ctx: &AgentContext,
    sink: &mpsc::Sender<StreamEvent>,
) -> Result<TurnOutcome, AgentError> {
    let (history_len, traces_len) = (state.history.len(), state.traces.len());
    let result = turn_inner(state, user_message, ctx, sink).await;
    if let Err(e) = &result {
        state.history.truncate(history_len);
        state.traces.truncate(traces_len);
        tracing::warn!(error = %e, "turn failed, history rolled back");
        if !matches!(e, AgentError::Disconnected) {
            let _ = sink.send(StreamEvent::Error { message: e.to_string() }).await;
        }
    }
    state.iteration = 0;
    result
}

async fn turn_inner(
    state: &mut AgentState,
    user_message: &str,
    ctx: &AgentContext,
    sink: &mpsc::Sender<StreamEvent>,
) -> Result<TurnOutcome, AgentError> {
    let turn = state.traces.len();
    let prompt = build_system_prompt(state.mode);
    let mut out = Emitter { sink, sent: Vec::new() };
    state.traces.push(TurnTrace { turn, user_message: user_message.into(), iterations: Vec::new() });
    state.history.push(HistoryEntry::User { content: user_message.into() });
    state.iteration = 0;
    let mut searches = 0;

    loop {
        out.emit(StreamEvent::Status { phase: Phase::Reasoning }).await?;
        let forced = state.iteration + 1 >= state.max_iterations;
        let request = StepRequest { system_prompt: &prompt.text, forced, history_budget: ctx.config.history_budget };
        let step_out = step(state, ctx.provider.as_ref(), &request).await?;
        state.iteration += 1;
        let iteration = state.iteration;
        let phase = if step_out.action.is_search() { Phase::Searching } else { Phase::Generating };
        out.emit(StreamEvent::Status { phase }).await?;

        let call_id = format!("turn{turn}-step{iteration}");
        let disposition = apply_action(state, &call_id, &step_out, ctx.backend.as_ref(), &ctx.retrieval).await;
        let (text_results, image_results, search_error) = match &disposition {
            Disposition::Continue { text_results, image_results, error } => (*text_results, *image_results, error.clone()),
            Disposition::EndTurn(_) => (0, 0, None),
        };
        if let Some(t) = state.traces.last_mut() {
            t.iterations.push(IterationRecord {
                iteration,
                forced,
                trace: step_out.trace.clone(),
                action: step_out.action.clone(),
                text_results,
                image_results,
                search_error,
            });
        }
        out.emit(StreamEvent::TraceAvailable { turn, iteration }).await?;

        match disposition {
            Disposition::Continue { .. } => searches += 1,
            Disposition::EndTurn(content) => {
                let mut transformer = StreamTransformer::new(state.mode, ctx.index.clone());
                let chars: Vec<char> = content.chars().collect();
                for piece in chars.chunks(ctx.config.stream_piece_chars.max(1)) {
                    for ev in transformer.push(&piece.iter().collect::<String>()) {
                        out.emit(ev).await?;
                    }
                }
                for ev in transformer.finish() {
                    out.emit(ev).await?;
                }
                out.emit(StreamEvent::Done).await?;
                let response = reconstruct(&out.sent);
                return Ok(TurnOutcome { turn, iterations: iteration, searches, events: out.sent, response });
            }
        }
    }
}
