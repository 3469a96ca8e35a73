use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::agent::AgentMode;

/// Bump whenever any prompt asset changes.
pub const PROMPT_VERSION: &str = "tutor-prompt/3";

const TUTOR: &str = include_str!("../../prompts/tutor.txt");
const PEDAGOGY: &str = include_str!("../../prompts/pedagogy.txt");
const VISUALS: &str = include_str!("../../prompts/visuals.txt");
const CITATION_GRAMMAR: &str = include_str!("../../prompts/citation_grammar.txt");
const FIGURE_GRAMMAR: &str = include_str!("../../prompts/figure_grammar.txt");
const AGENT: &str = include_str!("../../prompts/agent.txt");
const AGENT_IMAGES: &str = include_str!("../../prompts/agent_images.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemPrompt {
    pub text: String,
    pub version: &'static str,
    /// Hex SHA-256 of `text`.
    pub sha256: String,
}

/// Assembles the tutor's system prompt. TexDoC gets neither the visual
/// guidance nor the figure grammar.
pub fn build_system_prompt(mode: AgentMode) -> SystemPrompt {
    let mut sections = vec![TUTOR, PEDAGOGY];
    if mode == AgentMode::MuDoC {
        sections.push(VISUALS);
    }
    sections.push(CITATION_GRAMMAR);
    if mode == AgentMode::MuDoC {
        sections.push(FIGURE_GRAMMAR);
    }
    sections.push(AGENT);
    if mode == AgentMode::MuDoC {
        sections.push(AGENT_IMAGES);
    }
    let text = sections.iter().map(|s| s.trim_end()).collect::<Vec<_>>().join("\n\n");
    let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
    SystemPrompt { text, version: PROMPT_VERSION, sha256 }
}
