mod common;

use std::sync::Arc;

use common::oracles;
use mudoc_core::fixtures::{figure_block, text_block, IndexBuilder};
use mudoc_core::gateway::{MockProvider, MockScript};
use mudoc_core::index::Index;
use mudoc_core::ingest::Block;
use mudoc_core::retrieval::{
    postprocess_text, search_images_with, search_text_with, RetrievalConfig, Retriever, ScoredChunk, SearchBackend,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const VOCAB: [&str; 8] = ["meiosis", "mitosis", "chromatid", "synapsis", "gamete", "zygote", "spindle", "tetrad"];

fn random_text(rng: &mut StdRng, words: std::ops::Range<usize>) -> String {
    let words = rng.random_range(words);
    (0..words).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn random_vec(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Chunk i covers text blocks 2i and 2i+1.
fn random_text_index(rng: &mut StdRng, n: usize) -> Index {
    let blocks: Vec<Block> = (0..2 * n as u32)
        .map(|id| text_block("doc", id, 1, &random_text(rng, 1..8)))
        .collect();
    let mut b = IndexBuilder::new().document("doc", 1, blocks);
    for i in 0..n as u32 {
        let summary = random_text(rng, 0..4);
        b = b.chunk("doc", &[2 * i, 2 * i + 1], &summary, random_vec(rng, 4), random_vec(rng, 4));
    }
    b.build().unwrap()
}

#[test]
fn text_ranking_matches_weighted_sum_oracle() {
    let cfg = RetrievalConfig::default();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let index = random_text_index(&mut rng, n);
        let query = random_text(&mut rng, 1..4);
        let qv = random_vec(&mut rng, 4);

        let chunks = index.chunks();
        let dense: Vec<f64> = chunks
            .iter()
            .map(|c| oracles::cosine(&qv, &c.content_vector).max(oracles::cosine(&qv, &c.summary_vector)))
            .collect();
        let corpus: Vec<Vec<String>> = chunks.iter().map(|c| oracles::terms(&format!("{}\n{}", c.text, c.summary))).collect();
        let sparse = oracles::bm25(&oracles::terms(&query), &corpus, 1.2, 0.75);
        let ties: Vec<u32> = chunks.iter().map(|c| c.block_ids[0]).collect();
        let want = oracles::hybrid_order(&dense, &sparse, &ties, 0.75, 0.25);

        let got: Vec<usize> = search_text_with(&index, &query, &qv, n, &cfg).iter().map(|s| s.chunk_index).collect();
        assert_eq!(got, want);
        let top3: Vec<usize> = search_text_with(&index, &query, &qv, 3, &cfg).iter().map(|s| s.chunk_index).collect();
        assert_eq!(top3, want[..want.len().min(3)]);
    }
}

#[test]
fn image_ranking_matches_weighted_sum_oracle() {
    let cfg = RetrievalConfig::default();
    let mut rng = StdRng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..=20u32);
        let blocks: Vec<Block> = (0..n).map(|id| figure_block("doc", id, 1)).collect();
        let mut b = IndexBuilder::new().document("doc", 1, blocks);
        for id in 0..n {
            let caption = random_text(&mut rng, 3..4);
            let description = random_text(&mut rng, 0..6);
            b = b.image("doc", id, &caption, &description, random_vec(&mut rng, 4), random_vec(&mut rng, 4));
        }
        let index = b.build().unwrap();
        let query = random_text(&mut rng, 2..3);
        let qv = random_vec(&mut rng, 4);

        let dense: Vec<f64> = index.images().iter().map(|r| oracles::cosine(&qv, &r.combined_vector)).collect();
        let corpus: Vec<Vec<String>> = index.images().iter().map(|r| oracles::terms(&r.search_text)).collect();
        let sparse = oracles::bm25(&oracles::terms(&query), &corpus, 1.2, 0.75);
        let ties: Vec<u32> = index.images().iter().map(|r| r.block_id).collect();
        let want: Vec<u32> = oracles::hybrid_order(&dense, &sparse, &ties, 0.25, 0.75)
            .into_iter()
            .map(|i| index.images()[i].block_id)
            .collect();
        let got: Vec<u32> = search_images_with(&index, &query, &qv, n as usize, &cfg).iter().map(|s| s.block_id).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn k_larger_than_pool_returns_everything() {
    let mut rng = StdRng::seed_from_u64(3);
    let index = random_text_index(&mut rng, 4);
    let hits = search_text_with(&index, "meiosis", &[1.0, 0.0, 0.0, 0.0], 50, &RetrievalConfig::default());
    assert_eq!(hits.len(), 4);
    assert!(hits.windows(2).all(|w| w[0].hybrid_score >= w[1].hybrid_score));
    assert!(hits.iter().all(|h| (0.0..=1.0).contains(&h.hybrid_score)));
}

#[test]
fn keyword_match_wins_image_ranking_at_equal_dense() {
    let blocks = vec![figure_block("bio", 0, 1), figure_block("bio", 1, 1), figure_block("bio", 2, 1)];
    let v = vec![1.0, 0.0];
    let index = IndexBuilder::new()
        .document("bio", 1, blocks)
        .image("bio", 0, "cell wall", "plant structure", v.clone(), v.clone())
        .image("bio", 1, "synapsis tetrad", "homologous chromosomes pairing", v.clone(), v.clone())
        .image("bio", 2, "ribosome", "protein synthesis", v.clone(), v.clone())
        .build()
        .unwrap();
    let hits = search_images_with(&index, "synapsis tetrad", &v, 5, &RetrievalConfig::default());
    assert_eq!(hits[0].block_id, 1);
}

#[test]
fn image_cap_of_five() {
    let blocks: Vec<Block> = (0..9).map(|id| figure_block("bio", id, 1)).collect();
    let mut b = IndexBuilder::new().document("bio", 1, blocks);
    for id in 0..9 {
        b = b.image("bio", id, "meiosis stage", "chromosomes", vec![1.0, id as f32], vec![0.5, 0.5]);
    }
    let index = b.build().unwrap();
    let cfg = RetrievalConfig::default();
    assert_eq!(search_images_with(&index, "meiosis", &[1.0, 0.0], cfg.content_image_k, &cfg).len(), 5);
}

#[tokio::test]
async fn empty_index_searches_return_nothing_without_embedding() {
    let mock = Arc::new(MockProvider::new(MockScript::new(1, 4)));
    let retriever = Retriever::new(Arc::new(Index::empty()), mock.clone(), RetrievalConfig::default());
    assert!(retriever.search_text("meiosis", 3).await.unwrap().is_empty());
    assert!(retriever.search_images("meiosis", 3).await.unwrap().is_empty());
    assert_eq!(mock.embed_calls(), 0);
}

fn scored(index: &Index, chunk_index: usize, score: f64) -> ScoredChunk {
    let c = &index.chunks()[chunk_index];
    ScoredChunk {
        chunk_index,
        chunk_id: c.chunk_id.clone(),
        doc_id: c.doc_id.clone(),
        first_block: c.block_ids[0],
        dense_score: 0.0,
        sparse_score: 0.0,
        hybrid_score: score,
    }
}

fn twelve_block_index(chunks: &[&[u32]]) -> Index {
    let blocks: Vec<Block> = (0..12).map(|id| text_block("bio", id, 1, &format!("block {id}"))).collect();
    let mut b = IndexBuilder::new().document("bio", 1, blocks);
    for c in chunks {
        b = b.chunk("bio", c, "", vec![1.0], vec![1.0]);
    }
    b.build().unwrap()
}

#[test]
fn overlapping_chunks_merge_into_one_span() {
    let index = twelve_block_index(&[&[2, 3, 4], &[4, 5]]);
    let spans = postprocess_text(&[scored(&index, 1, 0.9), scored(&index, 0, 0.5)], &index);
    assert_eq!(spans.len(), 1);
    assert_eq!(spans[0].block_ids, vec![2, 3, 4, 5]);
    assert_eq!(spans[0].text, "block 2\nblock 3\nblock 4\nblock 5");
    assert_eq!(spans[0].chunk_ids, vec!["bio/0", "bio/1"]);
    assert!((spans[0].score - 0.9).abs() < 1e-12);
}

#[test]
fn disjoint_chunks_follow_reading_order() {
    let index = twelve_block_index(&[&[10, 11], &[2, 3]]);
    let spans = postprocess_text(&[scored(&index, 0, 0.9), scored(&index, 1, 0.5)], &index);
    let ids: Vec<Vec<u32>> = spans.iter().map(|s| s.block_ids.clone()).collect();
    assert_eq!(ids, vec![vec![2, 3], vec![10, 11]]);
}

#[test]
fn random_overlapping_retrievals_pass_validator() {
    let mut rng = StdRng::seed_from_u64(99);
    for _ in 0..200 {
        let runs: Vec<Vec<u32>> = (0..rng.random_range(1..10))
            .map(|_| {
                let start = rng.random_range(0..10u32);
                let len = rng.random_range(1..=(12 - start).min(4));
                (start..start + len).collect()
            })
            .collect();
        let refs: Vec<&[u32]> = runs.iter().map(Vec::as_slice).collect();
        let index = twelve_block_index(&refs);
        let results: Vec<ScoredChunk> = (0..runs.len()).map(|i| scored(&index, i, rng.random())).collect();
        let spans = postprocess_text(&results, &index);
        let out: Vec<(String, Vec<u32>)> = spans.iter().map(|s| (s.doc_id.clone(), s.block_ids.clone())).collect();
        let inputs: Vec<(String, Vec<u32>)> = runs.iter().map(|r| ("bio".to_string(), r.clone())).collect();
        oracles::check_spans(&out, &inputs).unwrap();
    }
}

#[tokio::test]
async fn multi_query_search_caps_distinct_results() {
    let mut rng = StdRng::seed_from_u64(5);
    let index = Arc::new(random_text_index(&mut rng, 25));
    let mock = Arc::new(MockProvider::new(MockScript::new(1, 4)));
    let retriever = Retriever::new(index, mock, RetrievalConfig::default());
    let queries: Vec<String> = ["meiosis gamete", "spindle", "zygote tetrad"].iter().map(|s| s.to_string()).collect();
    let hits = retriever.search_text_multi(&queries, 10).await.unwrap();
    assert_eq!(hits.len(), 10);
    let mut ids: Vec<usize> = hits.iter().map(|h| h.chunk_index).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 10);
    let spans = retriever.text_search(&queries, 3).await.unwrap();
    assert!(spans.len() <= 3);
}
