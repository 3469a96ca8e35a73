//! Okapi BM25 over lowercased alphanumeric terms.
//!
//! `score(q, d) = Σ_{t ∈ distinct(q)} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))`
//! with `idf(t) = max(0, ln((N − df + 0.5) / (df + 0.5)))`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Collection statistics needed to score a single document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub doc_count: u32,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, u32>,
}

impl CorpusStats {
    pub fn from_documents<S: AsRef<str>>(docs: &[Vec<S>]) -> Self {
        let mut doc_freq = HashMap::new();
        let mut total = 0usize;
        for doc in docs {
            total += doc.len();
            let distinct: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
            for t in distinct {
                *doc_freq.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        let avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self { doc_count: docs.len() as u32, avg_len, doc_freq }
    }
}

pub fn idf(doc_count: u32, doc_freq: u32) -> f64 {
    let (n, df) = (doc_count as f64, doc_freq as f64);
    ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

fn term_weight(tf: u32, doc_len: u32, avg_len: f64, idf: f64, p: Bm25Params) -> f64 {
    if tf == 0 || idf == 0.0 {
        return 0.0;
    }
    let tf = tf as f64;
    let len_ratio = if avg_len > 0.0 { doc_len as f64 / avg_len } else { 0.0 };
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * len_ratio))
}

/// BM25 of one tokenized document against a tokenized query.
pub fn bm25_score<S: AsRef<str>, T: AsRef<str>>(
    query_terms: &[S],
    document_terms: &[T],
    stats: &CorpusStats,
    params: Bm25Params,
) -> f64 {
    if stats.doc_count == 0 {
        return 0.0;
    }
    let distinct: BTreeSet<&str> = query_terms.iter().map(AsRef::as_ref).collect();
    let doc_len = document_terms.len() as u32;
    distinct
        .into_iter()
        .map(|q| {
            let tf = document_terms.iter().filter(|t| t.as_ref() == q).count() as u32;
            let df = stats.doc_freq.get(q).copied().unwrap_or(0);
            term_weight(tf, doc_len, stats.avg_len, idf(stats.doc_count, df), params)
        })
        .sum()
}

/// Term → postings index over a fixed list of documents, scoring every
/// document for a query in one pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lens: Vec<u32>,
    avg_len: f64,
}

impl InvertedIndex {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_terms(docs.into_iter().map(tokenize))
    }

    pub fn from_terms<I, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lens = Vec::new();
        for (doc, terms) in docs.into_iter().enumerate() {
            doc_lens.push(terms.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &terms {
                *tf.entry(t.as_ref()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push((doc as u32, count));
            }
        }
        let avg_len = if doc_lens.is_empty() {
            0.0
        } else {
            doc_lens.iter().map(|&l| l as f64).sum::<f64>() / doc_lens.len() as f64
        };
        Self { postings, doc_lens, avg_len }
    }

    pub fn len(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lens.is_empty()
    }

    /// Scores every document for an already tokenized query.
    pub fn score_terms<S: AsRef<str>>(&self, query_terms: &[S], params: Bm25Params) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_lens.len()];
        let n = self.doc_lens.len() as u32;
        let distinct: BTreeSet<&str> = query_terms.iter().map(AsRef::as_ref).collect();
        for term in distinct {
            let Some(list) = self.postings.get(term) else { continue };
            let w = idf(n, list.len() as u32);
            for &(doc, tf) in list {
                scores[doc as usize] += term_weight(tf, self.doc_lens[doc as usize], self.avg_len, w, params);
            }
        }
        scores
    }

    pub fn score(&self, query: &str, params: Bm25Params) -> Vec<f64> {
        self.score_terms(&tokenize(query), params)
    }
}
