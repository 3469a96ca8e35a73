use std::collections::BTreeSet;

use crate::index::Index;

use super::{ScoredChunk, TextSpan};

/// Merges retrieved chunks that share blocks and orders the result the way
/// the document reads: by document, then by first block.
pub fn postprocess_text(results: &[ScoredChunk], index: &Index) -> Vec<TextSpan> {
    let chunks = index.chunks();
    let members: Vec<(&ScoredChunk, BTreeSet<u32>)> = results
        .iter()
        .filter_map(|r| chunks.get(r.chunk_index).map(|c| (r, c.block_ids.iter().copied().collect())))
        .collect();

    // union-find over result positions
    let mut parent: Vec<usize> = (0..members.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let same_doc = members[i].0.doc_id == members[j].0.doc_id;
            if same_doc && !members[i].1.is_disjoint(&members[j].1) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }

    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..members.len() {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(i),
            None => groups.push((root, vec![i])),
        }
    }

    let mut spans: Vec<TextSpan> = groups
        .into_iter()
        .map(|(_, group)| {
            let doc_id = members[group[0]].0.doc_id.clone();
            let blocks: BTreeSet<u32> = group.iter().flat_map(|&i| members[i].1.iter().copied()).collect();
            let block_texts: Vec<String> = blocks
                .iter()
                .map(|&b| index.block(&doc_id, b).map(|b| b.text.clone()).unwrap_or_default())
                .collect();
            let text = block_texts.iter().filter(|t| !t.is_empty()).cloned().collect::<Vec<_>>().join("\n");
            let mut chunk_ids: Vec<String> = group.iter().map(|&i| members[i].0.chunk_id.clone()).collect();
            chunk_ids.sort();
            chunk_ids.dedup();
            let score = group.iter().map(|&i| members[i].0.hybrid_score).fold(f64::NEG_INFINITY, f64::max);
            TextSpan { doc_id, block_ids: blocks.into_iter().collect(), block_texts, text, chunk_ids, score }
        })
        .collect();
    spans.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.block_ids[0].cmp(&b.block_ids[0])));
    spans
}
