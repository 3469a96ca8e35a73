//! Weighted fusion of dense and sparse scores over a bounded candidate pool.

use crate::index::Index;
use crate::text::{cosine, tokenize};

use super::{RetrievalConfig, ScoredChunk, ScoredImage, Weights};

/// Scores closer than this are treated as equal and fall through to the
/// block-id tie rule.
pub const TIE_RESOLUTION: f64 = 1e-12;

/// Per-pool min-max scaling to [0, 1]. A pool whose values are all equal
/// (including a single candidate) maps to 1.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|v| if range > 0.0 { (v - lo) / range } else { 1.0 })
        .collect()
}

fn quantize(score: f64) -> i64 {
    (score / TIE_RESOLUTION).round() as i64
}

/// Candidate with already normalized scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused<K> {
    pub key: K,
    pub tie_block: u32,
    pub hybrid: f64,
}

/// Orders by descending hybrid score, then ascending `tie_block`, then key.
pub fn sort_fused<K: Ord>(items: &mut [Fused<K>]) {
    items.sort_by(|a, b| {
        quantize(b.hybrid)
            .cmp(&quantize(a.hybrid))
            .then(a.tie_block.cmp(&b.tie_block))
            .then(a.key.cmp(&b.key))
    });
}

/// Combines normalized dense and sparse scores.
pub fn weighted(w: Weights, dense_norm: f64, sparse_norm: f64) -> f64 {
    w.dense * dense_norm + w.sparse * sparse_norm
}

/// Indices of the top `pool` entries by dense score plus the top `pool`
/// entries with a positive sparse score, in ascending index order.
fn candidate_pool(dense: &[f64], sparse: &[f64], pool: usize) -> Vec<usize> {
    let top = |scores: &[f64], positive_only: bool| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !positive_only || scores[i] > 0.0).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        idx.truncate(pool);
        idx
    };
    let mut all = top(dense, false);
    all.extend(top(sparse, true));
    all.sort_unstable();
    all.dedup();
    all
}

struct Pooled {
    index: usize,
    dense: f64,
    sparse: f64,
    hybrid: f64,
}

fn fuse_pool(dense: &[f64], sparse: &[f64], weights: Weights, pool: usize, tie_block: impl Fn(usize) -> u32) -> Vec<Pooled> {
    let members = candidate_pool(dense, sparse, pool);
    let d: Vec<f64> = members.iter().map(|&i| dense[i]).collect();
    let s: Vec<f64> = members.iter().map(|&i| sparse[i]).collect();
    let (dn, sn) = (min_max(&d), min_max(&s));
    let mut fused: Vec<Fused<usize>> = members
        .iter()
        .enumerate()
        .map(|(j, &i)| Fused { key: i, tie_block: tie_block(i), hybrid: weighted(weights, dn[j], sn[j]) })
        .collect();
    sort_fused(&mut fused);
    fused
        .into_iter()
        .map(|f| Pooled { index: f.key, dense: dense[f.key], sparse: sparse[f.key], hybrid: f.hybrid })
        .collect()
}

/// Hybrid text search against a precomputed query embedding.
pub fn search_text_with(index: &Index, query: &str, query_vector: &[f32], k: usize, cfg: &RetrievalConfig) -> Vec<ScoredChunk> {
    let chunks = index.chunks();
    if chunks.is_empty() || k == 0 {
        return Vec::new();
    }
    let dense: Vec<f64> = chunks
        .iter()
        .map(|c| cosine(query_vector, &c.content_vector).max(cosine(query_vector, &c.summary_vector)))
        .collect();
    let sparse = index.text_terms().score_terms(&tokenize(query), cfg.bm25);
    debug_assert_eq!(sparse.len(), chunks.len());
    fuse_pool(&dense, &sparse, cfg.text_weights(), cfg.candidate_pool, |i| chunks[i].first_block())
        .into_iter()
        .take(k)
        .map(|p| {
            let c = &chunks[p.index];
            ScoredChunk {
                chunk_index: p.index,
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                first_block: c.first_block(),
                dense_score: p.dense,
                sparse_score: p.sparse,
                hybrid_score: p.hybrid,
            }
        })
        .collect()
}

/// Hybrid image search against a query embedded in the multimodal space.
pub fn search_images_with(index: &Index, query: &str, query_vector: &[f32], k: usize, cfg: &RetrievalConfig) -> Vec<ScoredImage> {
    let images = index.images();
    if images.is_empty() || k == 0 {
        return Vec::new();
    }
    let dense: Vec<f64> = images.iter().map(|r| cosine(query_vector, &r.combined_vector)).collect();
    let sparse = index.image_terms().score_terms(&tokenize(query), cfg.bm25);
    fuse_pool(&dense, &sparse, cfg.image_weights(), cfg.candidate_pool, |i| images[i].block_id)
        .into_iter()
        .take(k)
        .map(|p| {
            let r = &images[p.index];
            ScoredImage {
                doc_id: r.doc_id.clone(),
                block_id: r.block_id,
                dense_score: p.dense,
                sparse_score: p.sparse,
                hybrid_score: p.hybrid,
            }
        })
        .collect()
}
