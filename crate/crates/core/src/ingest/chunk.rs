use serde::{Deserialize, Serialize};

use super::{Block, BlockKind, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub min_chunk_chars: usize,
    /// Fraction of the previous chunk's blocks the next chunk re-uses.
    pub overlap_fraction: f64,
    /// Concurrent provider calls during enrichment and embedding.
    pub max_in_flight: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_chunk_chars: 8000,
            overlap_fraction: 0.5,
            max_in_flight: 4,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let fail = |message: &str| IngestError::Validation {
            record: "ingest config".into(),
            message: message.into(),
        };
        if self.min_chunk_chars == 0 {
            return Err(fail("min_chunk_chars must be positive"));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 1.0) {
            return Err(fail("overlap_fraction must lie strictly between 0 and 1"));
        }
        if self.max_in_flight == 0 {
            return Err(fail("max_in_flight must be positive"));
        }
        Ok(())
    }
}

/// Unit of text retrieval: a run of consecutive text blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub block_ids: Vec<u32>,
    pub text: String,
    pub char_count: usize,
    #[serde(default)]
    pub summary: String,
    #[serde(skip)]
    pub content_vector: Vec<f32>,
    #[serde(skip)]
    pub summary_vector: Vec<f32>,
}

impl Chunk {
    pub fn first_block(&self) -> u32 {
        self.block_ids[0]
    }
}

/// Groups the text blocks of one document into overlapping chunks.
///
/// A chunk grows until it holds at least `min_chunk_chars` characters and at
/// least two blocks, or the document runs out. The next chunk starts
/// `ceil(overlap_fraction * n)` blocks into the previous one (clamped to
/// `1..=n-1`), so neighbours always share a block. The last chunk may be short.
pub fn build_chunks(blocks: &[Block], cfg: &IngestConfig) -> Vec<Chunk> {
    let text: Vec<&Block> = blocks.iter().filter(|b| b.kind == BlockKind::Text).collect();
    let Some(first) = text.first() else {
        return Vec::new();
    };
    let doc_id = first.doc_id.clone();
    let lens: Vec<usize> = text.iter().map(|b| b.text.chars().count()).collect();

    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        // joined length = sum of block lengths + (n - 1) separators
        let mut end = start;
        let mut chars = 0usize;
        while end < text.len() {
            chars += lens[end] + usize::from(end > start);
            end += 1;
            if chars >= cfg.min_chunk_chars && end - start >= 2 {
                break;
            }
        }
        let members = &text[start..end];
        let joined = members.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join("\n");
        debug_assert_eq!(joined.chars().count(), chars);
        chunks.push(Chunk {
            chunk_id: format!("{doc_id}/{}", chunks.len()),
            doc_id: doc_id.clone(),
            block_ids: members.iter().map(|b| b.block_id).collect(),
            char_count: chars,
            text: joined,
            summary: String::new(),
            content_vector: Vec::new(),
            summary_vector: Vec::new(),
        });
        if end == text.len() {
            break;
        }
        let n = end - start;
        let step = ((cfg.overlap_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        start += step;
    }
    chunks
}
