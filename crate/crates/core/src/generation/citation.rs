use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CitationRef;
use crate::index::Index;
use crate::ingest::{BBox, BlockKind};

#[derive(Debug, Error, PartialEq)]
pub enum CitationError {
    #[error("block {doc_id}:{block_id} not found")]
    NotFound { doc_id: String, block_id: u32 },
    #[error("citation lists no blocks")]
    Empty,
}

/// Where a cited block sits in the source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLocation {
    pub doc_id: String,
    pub block_id: u32,
    pub kind: BlockKind,
    pub page: u32,
    pub bbox: BBox,
}

/// Page and bounding box of every cited block, in block order.
pub fn resolve_citation(index: &Index, citation: &CitationRef) -> Result<Vec<BlockLocation>, CitationError> {
    if citation.block_ids.is_empty() {
        return Err(CitationError::Empty);
    }
    let mut ids = citation.block_ids.clone();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let block = index.block(&citation.doc_id, id).ok_or_else(|| CitationError::NotFound {
                doc_id: citation.doc_id.clone(),
                block_id: id,
            })?;
            Ok(BlockLocation {
                doc_id: block.doc_id.clone(),
                block_id: block.block_id,
                kind: block.kind,
                page: block.page,
                bbox: block.bbox,
            })
        })
        .collect()
}
