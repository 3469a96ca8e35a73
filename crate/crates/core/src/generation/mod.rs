//! Prompt assembly and the transducer that turns the model's final-response
//! text into structured stream events.

mod citation;
mod prompt;
mod stream;

use serde::{Deserialize, Serialize};

pub use citation::{resolve_citation, BlockLocation, CitationError};
pub use prompt::{build_system_prompt, SystemPrompt, PROMPT_VERSION};
pub use stream::{reconstruct, StreamTransformer, CITE_OPEN, FIGURE_CLOSE, FIGURE_OPEN};

/// In-text citation of one or more blocks of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationRef {
    pub doc_id: String,
    pub block_ids: Vec<u32>,
}

impl CitationRef {
    /// Canonical marker: `[[cite:<doc_id>:<id>(,<id>)*]]`.
    pub fn marker(&self) -> String {
        let ids: Vec<String> = self.block_ids.iter().map(u32::to_string).collect();
        format!("{CITE_OPEN}{}:{}]]", self.doc_id, ids.join(","))
    }
}

/// Inline figure taken from the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FigureRef {
    pub doc_id: String,
    pub block_id: u32,
    /// Caption as written by the model.
    pub caption: String,
    /// Markup exactly as it appeared in the model output.
    pub markup: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Reasoning,
    Searching,
    Generating,
}

/// One server-push event of a chat turn. The SSE event name is the variant
/// name; the data line is the JSON serialization (tagged with `type`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum StreamEvent {
    TextDelta { text: String },
    Citation(CitationRef),
    Figure(FigureRef),
    Status { phase: Phase },
    TraceAvailable { turn: usize, iteration: usize },
    Error { message: String },
    Done,
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::TextDelta { .. } => "TextDelta",
            StreamEvent::Citation(_) => "Citation",
            StreamEvent::Figure(_) => "Figure",
            StreamEvent::Status { .. } => "Status",
            StreamEvent::TraceAvailable { .. } => "TraceAvailable",
            StreamEvent::Error { .. } => "Error",
            StreamEvent::Done => "Done",
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        StreamEvent::TextDelta { text: text.into() }
    }

    /// The raw model text this event stands for; `None` for control events.
    pub fn raw(&self) -> Option<String> {
        match self {
            StreamEvent::TextDelta { text } => Some(text.clone()),
            StreamEvent::Citation(c) => Some(c.marker()),
            StreamEvent::Figure(f) => Some(f.markup.clone()),
            _ => None,
        }
    }
}
