//! Bounded ReAct loop: each iteration the model reflects three times and then
//! takes exactly one action. Search actions append their results to the
//! conversation history; a generative action ends the turn.

mod protocol;
mod turn;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use protocol::{step, tool_schemas, StepOutput, StepRequest, CONFIRM_INTENT, CONTENT_SEARCH, FINAL_RESPONSE, INITIAL_SEARCH};
pub use turn::{apply_action, format_images, format_spans, run_turn, AgentContext, Disposition, TurnOutcome};

use crate::gateway::{ChatMessage, GatewayError, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentMode {
    MuDoC,
    TexDoC,
}

impl AgentMode {
    pub fn has_images(self) -> bool {
        self == AgentMode::MuDoC
    }
}

/// The three reflections that precede every action, recorded as sent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub query_reflection: String,
    pub search_content_reflection: String,
    pub action_reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AgentAction {
    InitialSearch { query: String },
    ContentSearch { text_queries: Vec<String>, image_queries: Vec<String> },
    ConfirmIntent { question: String },
    FinalResponse { content: String },
}

impl AgentAction {
    pub fn is_search(&self) -> bool {
        matches!(self, AgentAction::InitialSearch { .. } | AgentAction::ContentSearch { .. })
    }
}

/// One entry of the conversation the model sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEntry {
    User { content: String },
    Assistant { content: String },
    ToolCall { call_id: String, name: String, arguments: String },
    ToolResult { call_id: String, name: String, content: String },
}

impl HistoryEntry {
    pub fn to_message(&self) -> ChatMessage {
        match self {
            HistoryEntry::User { content } => ChatMessage::user(content.clone()),
            HistoryEntry::Assistant { content } => ChatMessage::assistant(content.clone()),
            HistoryEntry::ToolCall { call_id, name, arguments } => ChatMessage::assistant_tool_call(ToolCall {
                id: call_id.clone(),
                name: name.clone(),
                arguments: arguments.clone(),
            }),
            HistoryEntry::ToolResult { call_id, content, .. } => ChatMessage::tool_result(call_id.clone(), content.clone()),
        }
    }

    fn chars(&self) -> usize {
        match self {
            HistoryEntry::User { content } | HistoryEntry::Assistant { content } => content.len(),
            HistoryEntry::ToolCall { arguments, .. } => arguments.len(),
            HistoryEntry::ToolResult { content, .. } => content.len(),
        }
    }
}

/// What happened in one iteration, kept for the on-demand trace view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub forced: bool,
    pub trace: ReasoningTrace,
    pub action: AgentAction,
    pub text_results: usize,
    pub image_results: usize,
    pub search_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub turn: usize,
    pub user_message: String,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_iterations: usize,
    /// Prior turns are re-sent verbatim while the history stays under this
    /// many bytes; the oldest turns are dropped first.
    pub history_budget: usize,
    /// Size of the pieces a non-streamed final response is fed through the
    /// stream transformer in.
    pub stream_piece_chars: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { max_iterations: 6, history_budget: 200_000, stream_piece_chars: 24 }
    }
}

/// Conversation state of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub mode: AgentMode,
    pub history: Vec<HistoryEntry>,
    pub iteration: usize,
    pub max_iterations: usize,
    pub traces: Vec<TurnTrace>,
}

impl AgentState {
    pub fn new(mode: AgentMode, max_iterations: usize) -> Self {
        Self { mode, history: Vec::new(), iteration: 0, max_iterations, traces: Vec::new() }
    }

    /// History as chat messages, dropping whole leading turns while over
    /// `budget` bytes. The turn in progress is always kept.
    pub fn messages(&self, budget: usize) -> Vec<ChatMessage> {
        let mut start = 0;
        let mut total: usize = self.history.iter().map(HistoryEntry::chars).sum();
        let current = self
            .history
            .iter()
            .rposition(|e| matches!(e, HistoryEntry::User { .. }))
            .unwrap_or(0);
        while total > budget && start < current {
            let next = self.history[start + 1..]
                .iter()
                .position(|e| matches!(e, HistoryEntry::User { .. }))
                .map_or(current, |p| start + 1 + p)
                .min(current);
            total -= self.history[start..next].iter().map(HistoryEntry::chars).sum::<usize>();
            start = next;
        }
        self.history[start..].iter().map(HistoryEntry::to_message).collect()
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("provider failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("model did not follow the action protocol: {0}")]
    Protocol(String),
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("client disconnected")]
    Disconnected,
}
