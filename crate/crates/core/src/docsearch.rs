//! Stateless semantic search: hybrid retrieval proposes blocks, an LLM
//! filter picks and orders the relevant ones.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Provider, Purpose, ToolSchema};
use crate::index::Index;
use crate::ingest::{BBox, BlockKind};
use crate::retrieval::{RetrievalError, SearchBackend};
use crate::text::prefix_chars;

const FILTER_PROMPT: &str = include_str!("../prompts/search_filter.txt");
pub const FILTER_TOOL: &str = "select_blocks";
pub const MAX_RESULTS: usize = 10;
const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum DocSearchError {
    #[error("invalid query: {0}")]
    Validation(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationResult {
    pub doc_id: String,
    pub block_id: u32,
    pub kind: BlockKind,
    pub page: u32,
    pub bbox: BBox,
    /// First 200 characters of a text block, or a figure's caption.
    pub snippet: String,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOutcome {
    Filtered,
    /// The filter failed; results are in hybrid-score order.
    Fallback,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<NavigationResult>,
    pub filter: FilterOutcome,
    pub candidates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DocSearchConfig {
    /// Chunks retrieved as candidates.
    pub text_k: usize,
    /// Figures retrieved as candidates.
    pub image_k: usize,
}

impl Default for DocSearchConfig {
    fn default() -> Self {
        Self { text_k: 10, image_k: 5 }
    }
}

struct Candidate {
    key: String,
    result: NavigationResult,
    score: f64,
}

fn filter_tool() -> ToolSchema {
    ToolSchema {
        name: FILTER_TOOL.into(),
        description: "Select the relevant blocks, most relevant first.".into(),
        parameters: json!({
            "type": "object",
            "properties": {
                "block_ids": { "type": "array", "items": { "type": "string" }, "description": "Ids of the form DOC:BLOCK." }
            },
            "required": ["block_ids"]
        }),
    }
}

async fn candidates(
    query: &str,
    index: &Index,
    backend: &dyn SearchBackend,
    cfg: &DocSearchConfig,
) -> Result<Vec<Candidate>, RetrievalError> {
    let queries = [query.to_string()];
    let mut out: Vec<Candidate> = Vec::new();
    let mut push = |doc_id: &str, block_id: u32, snippet: String, score: f64| {
        if let Some(b) = index.block(doc_id, block_id) {
            out.push(Candidate {
                key: format!("{doc_id}:{block_id}"),
                result: NavigationResult {
                    doc_id: doc_id.into(),
                    block_id,
                    kind: b.kind,
                    page: b.page,
                    bbox: b.bbox,
                    snippet,
                    rank: 0,
                },
                score,
            });
        }
    };
    for span in backend.text_search(&queries, cfg.text_k).await? {
        for (id, text) in span.block_ids.iter().zip(&span.block_texts) {
            if !text.trim().is_empty() {
                push(&span.doc_id, *id, prefix_chars(text.trim(), SNIPPET_CHARS).to_string(), span.score);
            }
        }
    }
    for hit in backend.image_search(&queries, cfg.image_k).await? {
        push(&hit.doc_id, hit.block_id, hit.caption.clone(), hit.score);
    }
    // hybrid order; stable, so text precedes figures at equal score
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut seen = HashSet::new();
    out.retain(|c| seen.insert(c.key.clone()));
    Ok(out)
}

async fn llm_filter(query: &str, cands: &[Candidate], provider: &dyn Provider) -> Result<Vec<usize>, String> {
    let mut listing = format!("Query: {query}\n\nCandidates:\n");
    for c in cands {
        let kind = match c.result.kind {
            BlockKind::Text => "text",
            BlockKind::Figure => "figure",
        };
        listing.push_str(&format!("- id={}\n  {kind}: {}\n", c.key, c.result.snippet.replace('\n', " ")));
    }
    let req = ChatRequest::new(Purpose::SearchFilter, vec![ChatMessage::system(FILTER_PROMPT), ChatMessage::user(listing)])
        .with_tools(vec![filter_tool()], true);
    let completion = provider.chat(&req).await.map_err(|e| e.to_string())?;
    let call = completion
        .tool_calls
        .iter()
        .find(|c| c.name == FILTER_TOOL)
        .ok_or("no select_blocks call")?;
    let args: Value = serde_json::from_str(&call.arguments).map_err(|e| e.to_string())?;
    let ids = args["block_ids"].as_array().ok_or("block_ids is not an array")?;
    let mut picked = Vec::new();
    for id in ids {
        let Some(id) = id.as_str() else { continue };
        match cands.iter().position(|c| c.key == id.trim()) {
            Some(i) if !picked.contains(&i) => picked.push(i),
            Some(_) => {}
            None => tracing::warn!(id, "filter selected a block outside the candidates"),
        }
    }
    Ok(picked)
}

/// Runs one search. Reads nothing but its arguments and writes nothing.
pub async fn doc_search(
    query: &str,
    index: &Index,
    backend: &dyn SearchBackend,
    provider: &dyn Provider,
    cfg: &DocSearchConfig,
) -> Result<SearchResponse, DocSearchError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(DocSearchError::Validation("query is empty".into()));
    }
    let cands = candidates(query, index, backend, cfg).await?;
    if cands.is_empty() {
        return Ok(SearchResponse { results: Vec::new(), filter: FilterOutcome::NoCandidates, candidates: 0 });
    }
    let (order, filter) = match llm_filter(query, &cands, provider).await {
        Ok(order) => (order, FilterOutcome::Filtered),
        Err(e) => {
            tracing::warn!(error = %e, "search filter failed, using hybrid order");
            ((0..cands.len()).collect(), FilterOutcome::Fallback)
        }
    };
    let results = order
        .into_iter()
        .take(MAX_RESULTS)
        .enumerate()
        .map(|(rank, i)| NavigationResult { rank: rank + 1, ..cands[i].result.clone() })
        .collect();
    Ok(SearchResponse { results, filter, candidates: cands.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{figure_block, text_block, IndexBuilder, RecordingBackend};
    use crate::gateway::{MockMatch, MockProvider, MockReply, MockScript};

    fn index() -> Index {
        let blocks = (0..60)
            .map(|i| if i % 2 == 1 { figure_block("bio", i, 2) } else { text_block("bio", i, 1, &format!("Passage {i}")) })
            .collect();
        IndexBuilder::new().document("bio", 3, blocks).build().unwrap()
    }

    fn filter(ids: Value) -> MockProvider {
        MockProvider::new(MockScript::new(0, 4).route(MockMatch::Any, [MockReply::tool(FILTER_TOOL, json!({ "block_ids": ids }))]))
    }

    #[tokio::test]
    async fn filter_selects_and_orders() {
        let backend = RecordingBackend::new("bio", 2, 0);
        let r = doc_search("synapsis", &index(), &backend, &filter(json!(["bio:2", "bio:0"])), &Default::default())
            .await
            .unwrap();
        assert_eq!(r.filter, FilterOutcome::Filtered);
        assert_eq!(r.results.iter().map(|n| (n.block_id, n.rank)).collect::<Vec<_>>(), vec![(2, 1), (0, 2)]);
        assert_eq!(r.results[0].snippet, "Passage 1 about meiosis.");
    }

    #[tokio::test]
    async fn truncated_to_ten() {
        let backend = RecordingBackend::new("bio", 20, 5);
        let ids: Vec<String> = (0..15).map(|i| format!("bio:{}", 2 * i)).collect();
        let r = doc_search("meiosis", &index(), &backend, &filter(json!(ids)), &Default::default()).await.unwrap();
        assert_eq!(r.candidates, 15);
        assert_eq!(r.results.len(), 10);
        assert_eq!(r.results.iter().map(|n| n.rank).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    }

    #[tokio::test]
    async fn hallucinated_and_duplicate_ids_dropped() {
        let backend = RecordingBackend::new("bio", 3, 2);
        let r = doc_search("q", &index(), &backend, &filter(json!(["bio:99", "bio:3", "bio:3", "x", 7])), &Default::default())
            .await
            .unwrap();
        assert_eq!(r.results.len(), 1);
        assert_eq!((r.results[0].block_id, r.results[0].kind), (3, BlockKind::Figure));
        assert_eq!(r.results[0].snippet, "Figure 1");
    }

    #[tokio::test]
    async fn filter_failure_falls_back_to_hybrid_order() {
        let backend = RecordingBackend::new("bio", 4, 2);
        let failing = MockProvider::new(MockScript::new(0, 4));
        let r = doc_search("q", &index(), &backend, &failing, &Default::default()).await.unwrap();
        assert_eq!(r.filter, FilterOutcome::Fallback);
        assert_eq!(r.results.iter().map(|n| n.block_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 6]);
    }

    #[tokio::test]
    async fn empty_query_rejected() {
        let backend = RecordingBackend::new("bio", 4, 2);
        let r = doc_search("  ", &index(), &backend, &filter(json!([])), &Default::default()).await;
        assert!(matches!(r, Err(DocSearchError::Validation(_))));
        assert!(backend.log().text_calls.is_empty());
    }
}
