//! Reference implementations that share no code with the crate under test.
#![allow(dead_code)]

use std::collections::BTreeSet;

/// Okapi BM25 straight from the formula, distinct query terms, IDF floored at 0.
pub fn bm25(query: &[String], corpus: &[Vec<String>], k1: f64, b: f64) -> Vec<f64> {
    let n = corpus.len() as f64;
    if corpus.is_empty() {
        return Vec::new();
    }
    let avg = corpus.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q: BTreeSet<&String> = query.iter().collect();
    corpus
        .iter()
        .map(|doc| {
            q.iter()
                .map(|term| {
                    let df = corpus.iter().filter(|d| d.contains(term)).count() as f64;
                    let idf = f64::max(0.0, ((n - df + 0.5) / (df + 0.5)).ln());
                    let tf = doc.iter().filter(|t| t == term).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let ratio = if avg > 0.0 { doc.len() as f64 / avg } else { 0.0 };
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * ratio))
                })
                .sum()
        })
        .collect()
}

/// Lowercase alphanumeric tokenizer, written independently.
pub fn terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Brute-force weighted-sum ordering: min-max both signals over the whole
/// pool, weight, then repeatedly pick the best remaining candidate (scores
/// within 1e-12 are equal; lower tie block wins, then lower position).
pub fn hybrid_order(dense: &[f64], sparse: &[f64], tie_block: &[u32], w_dense: f64, w_sparse: f64) -> Vec<usize> {
    let norm = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 1.0 }).collect()
    };
    let (dn, sn) = (norm(dense), norm(sparse));
    let score: Vec<i64> = (0..dense.len())
        .map(|i| ((w_dense * dn[i] + w_sparse * sn[i]) * 1e12).round() as i64)
        .collect();
    let mut remaining: Vec<usize> = (0..dense.len()).collect();
    let mut order = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for j in 1..remaining.len() {
            let (a, c) = (remaining[j], remaining[best]);
            let better = score[a] > score[c]
                || (score[a] == score[c] && (tie_block[a] < tie_block[c] || (tie_block[a] == tie_block[c] && a < c)));
            if better {
                best = j;
            }
        }
        order.push(remaining.remove(best));
    }
    order
}

/// Independent scan of chunk postconditions. `text_ids` is the document's
/// text-block id sequence, `lens` the joined character counts per chunk.
pub fn check_chunks(text_ids: &[u32], chunks: &[Vec<u32>], lens: &[usize], min_chars: usize) -> Result<(), String> {
    let covered: BTreeSet<u32> = chunks.iter().flatten().copied().collect();
    let all: BTreeSet<u32> = text_ids.iter().copied().collect();
    if covered != all {
        return Err(format!("coverage: {} of {} blocks", covered.len(), all.len()));
    }
    for (i, c) in chunks.iter().enumerate() {
        let pos = text_ids.iter().position(|x| *x == c[0]).ok_or("unknown block")?;
        if text_ids[pos..pos + c.len()] != c[..] {
            return Err(format!("chunk {i} is not a consecutive run"));
        }
        if i + 1 < chunks.len() {
            if lens[i] < min_chars {
                return Err(format!("non-tail chunk {i} has {} chars", lens[i]));
            }
            if !chunks[i + 1].iter().any(|b| c.contains(b)) {
                return Err(format!("chunks {i} and {} do not overlap", i + 1));
            }
            if chunks[i + 1][0] <= c[0] {
                return Err(format!("chunk {} does not start after chunk {i}", i + 1));
            }
        }
    }
    Ok(())
}

/// Spans of one document must be strictly increasing by first block, never
/// repeat a block, and cover every input chunk's blocks.
pub fn check_spans(spans: &[(String, Vec<u32>)], inputs: &[(String, Vec<u32>)]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for w in spans.windows(2) {
        if w[0].0 == w[1].0 && w[0].1[0] >= w[1].1[0] {
            return Err("spans not in reading order".into());
        }
        if w[0].0 > w[1].0 {
            return Err("spans not grouped by document".into());
        }
    }
    for (doc, blocks) in spans {
        if blocks.windows(2).any(|w| w[0] >= w[1]) {
            return Err("blocks inside a span not strictly increasing".into());
        }
        for b in blocks {
            if !seen.insert((doc.clone(), *b)) {
                return Err(format!("block {doc}:{b} appears twice"));
            }
        }
    }
    for (doc, blocks) in inputs {
        for b in blocks {
            if !seen.contains(&(doc.clone(), *b)) {
                return Err(format!("input block {doc}:{b} missing from output"));
            }
        }
    }
    Ok(())
}
