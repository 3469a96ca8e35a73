//! Hybrid sparse + dense retrieval over chunks and figure records.
//!
//! Text ranking leans on embeddings (0.75 dense / 0.25 BM25); image ranking
//! leans on keywords in the generated captions and descriptions (0.75 BM25 /
//! 0.25 dense). Both signals are min-max normalized over the candidate pool
//! of each query before weighting.

pub mod bm25;
mod hybrid;
mod postprocess;

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hybrid::{min_max, search_images_with, search_text_with, sort_fused, weighted, Fused, TIE_RESOLUTION};
pub use postprocess::postprocess_text;

use crate::gateway::{EmbedSpace, GatewayError, Provider};
use crate::index::Index;
use bm25::Bm25Params;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding the query failed: {0}")]
    Embedding(#[from] GatewayError),
    #[error("invalid retrieval config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub dense: f64,
    pub sparse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub text_dense_weight: f64,
    pub text_sparse_weight: f64,
    pub image_sparse_weight: f64,
    pub image_dense_weight: f64,
    pub bm25: Bm25Params,
    pub initial_k: usize,
    pub content_text_k: usize,
    pub content_image_k: usize,
    pub docsearch_k: usize,
    /// Size of each of the dense and sparse top lists that form the pool.
    pub candidate_pool: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            text_dense_weight: 0.75,
            text_sparse_weight: 0.25,
            image_sparse_weight: 0.75,
            image_dense_weight: 0.25,
            bm25: Bm25Params::default(),
            initial_k: 3,
            content_text_k: 10,
            content_image_k: 5,
            docsearch_k: 10,
            candidate_pool: 50,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let pair_ok = |a: f64, b: f64| a >= 0.0 && b >= 0.0 && ((a + b) - 1.0).abs() < 1e-9;
        if !pair_ok(self.text_dense_weight, self.text_sparse_weight) {
            return Err(RetrievalError::Config("text weights must be non-negative and sum to 1".into()));
        }
        if !pair_ok(self.image_dense_weight, self.image_sparse_weight) {
            return Err(RetrievalError::Config("image weights must be non-negative and sum to 1".into()));
        }
        let ks = [self.initial_k, self.content_text_k, self.content_image_k, self.docsearch_k, self.candidate_pool];
        if ks.contains(&0) {
            return Err(RetrievalError::Config("result limits must be positive".into()));
        }
        Ok(())
    }

    pub fn text_weights(&self) -> Weights {
        Weights { dense: self.text_dense_weight, sparse: self.text_sparse_weight }
    }

    pub fn image_weights(&self) -> Weights {
        Weights { dense: self.image_dense_weight, sparse: self.image_sparse_weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    /// Position in `Index::chunks()`.
    pub chunk_index: usize,
    pub chunk_id: String,
    pub doc_id: String,
    pub first_block: u32,
    pub dense_score: f64,
    pub sparse_score: f64,
    pub hybrid_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredImage {
    pub doc_id: String,
    pub block_id: u32,
    pub dense_score: f64,
    pub sparse_score: f64,
    pub hybrid_score: f64,
}

/// Merged, de-duplicated run of blocks from one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSpan {
    pub doc_id: String,
    pub block_ids: Vec<u32>,
    /// Text of each block, aligned with `block_ids`.
    pub block_texts: Vec<String>,
    /// Non-empty block texts joined with newlines.
    pub text: String,
    pub chunk_ids: Vec<String>,
    /// Best hybrid score among the merged chunks.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHit {
    pub doc_id: String,
    pub block_id: u32,
    pub caption: String,
    pub description: String,
    pub score: f64,
}

/// What the agent and the search tool need from retrieval.
#[async_trait]
pub trait SearchBackend: Send + Sync {
    /// Runs every query, keeps the `k` best distinct chunks, and returns
    /// them as merged spans in reading order.
    async fn text_search(&self, queries: &[String], k: usize) -> Result<Vec<TextSpan>, RetrievalError>;

    /// Runs every query and keeps the `k` best distinct figures.
    async fn image_search(&self, queries: &[String], k: usize) -> Result<Vec<ImageHit>, RetrievalError>;
}

/// Index plus the provider used to embed queries.
#[derive(Clone)]
pub struct Retriever {
    index: Arc<Index>,
    provider: Arc<dyn Provider>,
    config: RetrievalConfig,
}

impl Retriever {
    pub fn new(index: Arc<Index>, provider: Arc<dyn Provider>, config: RetrievalConfig) -> Self {
        Self { index, provider, config }
    }

    pub fn index(&self) -> &Arc<Index> {
        &self.index
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    async fn embed_query(&self, space: EmbedSpace, query: &str) -> Result<Vec<f32>, RetrievalError> {
        let mut v = self.provider.embed_text(space, &[query.to_string()]).await?;
        Ok(v.pop().unwrap_or_default())
    }

    pub async fn search_text(&self, query: &str, k: usize) -> Result<Vec<ScoredChunk>, RetrievalError> {
        if self.index.chunks().is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let qv = self.embed_query(EmbedSpace::Text, query).await?;
        Ok(search_text_with(&self.index, query, &qv, k, &self.config))
    }

    pub async fn search_images(&self, query: &str, k: usize) -> Result<Vec<ScoredImage>, RetrievalError> {
        if self.index.images().is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let qv = self.embed_query(EmbedSpace::Multimodal, query).await?;
        Ok(search_images_with(&self.index, query, &qv, k, &self.config))
    }

    /// Best `k` distinct chunks across several queries, by best hybrid score.
    pub async fn search_text_multi(&self, queries: &[String], k: usize) -> Result<Vec<ScoredChunk>, RetrievalError> {
        let mut best: HashMap<usize, ScoredChunk> = HashMap::new();
        for q in queries.iter().filter(|q| !q.trim().is_empty()) {
            for hit in self.search_text(q, k).await? {
                match best.get(&hit.chunk_index) {
                    Some(prev) if prev.hybrid_score >= hit.hybrid_score => {}
                    _ => {
                        best.insert(hit.chunk_index, hit);
                    }
                }
            }
        }
        let mut fused: Vec<Fused<usize>> = best
            .values()
            .map(|h| Fused { key: h.chunk_index, tie_block: h.first_block, hybrid: h.hybrid_score })
            .collect();
        sort_fused(&mut fused);
        Ok(fused.into_iter().take(k).filter_map(|f| best.remove(&f.key)).collect())
    }

    pub async fn search_images_multi(&self, queries: &[String], k: usize) -> Result<Vec<ScoredImage>, RetrievalError> {
        let mut best: HashMap<(String, u32), ScoredImage> = HashMap::new();
        for q in queries.iter().filter(|q| !q.trim().is_empty()) {
            for hit in self.search_images(q, k).await? {
                let key = (hit.doc_id.clone(), hit.block_id);
                match best.get(&key) {
                    Some(prev) if prev.hybrid_score >= hit.hybrid_score => {}
                    _ => {
                        best.insert(key, hit);
                    }
                }
            }
        }
        let mut fused: Vec<Fused<(String, u32)>> = best
            .iter()
            .map(|(key, h)| Fused { key: key.clone(), tie_block: h.block_id, hybrid: h.hybrid_score })
            .collect();
        sort_fused(&mut fused);
        Ok(fused.into_iter().take(k).filter_map(|f| best.remove(&f.key)).collect())
    }

    pub fn image_hit(&self, hit: &ScoredImage) -> ImageHit {
        let record = self.index.image_record(&hit.doc_id, hit.block_id);
        ImageHit {
            doc_id: hit.doc_id.clone(),
            block_id: hit.block_id,
            caption: record.map(|r| r.caption.clone()).unwrap_or_default(),
            description: record.map(|r| r.description.clone()).unwrap_or_default(),
            score: hit.hybrid_score,
        }
    }
}

#[async_trait]
impl SearchBackend for Retriever {
    async fn text_search(&self, queries: &[String], k: usize) -> Result<Vec<TextSpan>, RetrievalError> {
        let hits = self.search_text_multi(queries, k).await?;
        Ok(postprocess_text(&hits, &self.index))
    }

    async fn image_search(&self, queries: &[String], k: usize) -> Result<Vec<ImageHit>, RetrievalError> {
        let hits = self.search_images_multi(queries, k).await?;
        Ok(hits.iter().map(|h| self.image_hit(h)).collect())
    }
}
