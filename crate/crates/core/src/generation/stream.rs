use std::sync::{Arc, LazyLock};

use regex::Regex;

use super::{CitationRef, FigureRef, StreamEvent};
use crate::agent::AgentMode;
use crate::index::Index;
use crate::ingest::is_valid_doc_id;

pub const CITE_OPEN: &str = "[[cite:";
pub const FIGURE_OPEN: &str = "<figure";
pub const FIGURE_CLOSE: &str = "</figure>";

/// Longest citation body held back while waiting for `]]`.
const MAX_CITATION: usize = 256;
/// Longest figure markup held back while waiting for `</figure>`.
const MAX_FIGURE: usize = 4096;

static IMG_SRC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"<img\b[^>]*?\bsrc\s*=\s*"block://([^"/]*)/([^"]*)""#).expect("static regex"));
static FIGCAPTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<figcaption[^>]*>(.*?)</figcaption>").expect("static regex"));
static ALT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"\balt\s*=\s*"([^"]*)""#).expect("static regex"));

enum Candidate {
    Citation,
    Figure,
    /// The buffer ends in something that may still become a marker opener.
    Partial,
}

enum Scan {
    Wait,
    /// A complete marker of this many bytes; `None` if it does not resolve.
    Complete(usize, Option<StreamEvent>),
    Malformed,
}

fn parse_block_id(s: &str) -> Option<u32> {
    let canonical = s == "0" || (!s.is_empty() && !s.starts_with('0') && s.bytes().all(|b| b.is_ascii_digit()));
    if canonical {
        s.parse().ok()
    } else {
        None
    }
}

fn citation_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | ':' | ',')
}

/// Incremental transducer from raw final-response tokens to stream events.
///
/// Text that might be the start of a citation marker or figure markup is held
/// back until it can be decided. Markers that do not parse or point at blocks
/// missing from the index are passed through as plain text.
pub struct StreamTransformer {
    mode: AgentMode,
    index: Arc<Index>,
    buf: String,
    degraded: usize,
    stripped: usize,
}

impl StreamTransformer {
    pub fn new(mode: AgentMode, index: Arc<Index>) -> Self {
        Self { mode, index, buf: String::new(), degraded: 0, stripped: 0 }
    }

    /// Feeds one token and returns the events that became decidable.
    pub fn push(&mut self, token: &str) -> Vec<StreamEvent> {
        self.buf.push_str(token);
        self.drain(false)
    }

    /// Flushes whatever is still buffered at the end of the stream.
    pub fn finish(&mut self) -> Vec<StreamEvent> {
        self.drain(true)
    }

    /// Markers passed through as text so far.
    pub fn degraded(&self) -> usize {
        self.degraded
    }

    /// Figures removed because the mode has no image pipeline.
    pub fn stripped(&self) -> usize {
        self.stripped
    }

    fn next_candidate(&self) -> Option<(usize, Candidate)> {
        for (i, _) in self.buf.char_indices() {
            let rest = &self.buf[i..];
            if rest.starts_with(CITE_OPEN) {
                return Some((i, Candidate::Citation));
            }
            if let Some(after) = rest.strip_prefix(FIGURE_OPEN) {
                match after.chars().next() {
                    None => return Some((i, Candidate::Partial)),
                    Some(c) if c == '>' || c.is_whitespace() => return Some((i, Candidate::Figure)),
                    _ => continue,
                }
            }
            if CITE_OPEN.starts_with(rest) || FIGURE_OPEN.starts_with(rest) {
                return Some((i, Candidate::Partial));
            }
        }
        None
    }

    fn drain(&mut self, last: bool) -> Vec<StreamEvent> {
        let mut events = Vec::new();
        let mut text = String::new();
        loop {
            let Some((start, kind)) = self.next_candidate() else {
                text.push_str(&self.buf);
                self.buf.clear();
                break;
            };
            text.push_str(&self.buf[..start]);
            self.buf.drain(..start);
            let scan = match kind {
                Candidate::Partial if last => Scan::Malformed,
                Candidate::Partial => break,
                Candidate::Citation => self.scan_citation(),
                Candidate::Figure => self.scan_figure(),
            };
            match scan {
                Scan::Wait if !last => break,
                Scan::Wait | Scan::Malformed => {
                    if matches!(kind, Candidate::Citation | Candidate::Figure) {
                        self.degraded += 1;
                        tracing::warn!(pending = %crate::text::prefix_chars(&self.buf, 40), "malformed marker passed through as text");
                    }
                    // Only the opening character is released; the rest is rescanned.
                    let first = self.buf.chars().next().map_or(1, char::len_utf8);
                    text.extend(self.buf.drain(..first));
                }
                Scan::Complete(len, Some(event)) => {
                    if !text.is_empty() {
                        events.push(StreamEvent::text(std::mem::take(&mut text)));
                    }
                    events.push(event);
                    self.buf.drain(..len);
                }
                Scan::Complete(len, None) => {
                    let raw: String = self.buf.drain(..len).collect();
                    let is_figure = raw.starts_with(FIGURE_OPEN);
                    if is_figure && self.mode == AgentMode::TexDoC {
                        self.stripped += 1;
                        tracing::warn!("figure markup stripped in text-only mode");
                    } else {
                        self.degraded += 1;
                        tracing::warn!(marker = %raw, "unresolvable reference passed through as text");
                        text.push_str(&raw);
                    }
                }
            }
        }
        if !text.is_empty() {
            events.push(StreamEvent::text(text));
        }
        events
    }

    fn scan_citation(&self) -> Scan {
        let body_start = CITE_OPEN.len();
        let rest = &self.buf[body_start..];
        for (pos, c) in rest.char_indices() {
            if citation_char(c) {
                if pos > MAX_CITATION {
                    return Scan::Malformed;
                }
                continue;
            }
            if c != ']' {
                return Scan::Malformed;
            }
            return match rest[pos + 1..].chars().next() {
                None => Scan::Wait,
                Some(']') => Scan::Complete(body_start + pos + 2, self.citation(&rest[..pos])),
                Some(_) => Scan::Malformed,
            };
        }
        if rest.len() > MAX_CITATION {
            Scan::Malformed
        } else {
            Scan::Wait
        }
    }

    fn citation(&self, body: &str) -> Option<StreamEvent> {
        let (doc_id, ids) = body.split_once(':')?;
        if !is_valid_doc_id(doc_id) {
            return None;
        }
        let block_ids: Vec<u32> = ids.split(',').map(parse_block_id).collect::<Option<_>>()?;
        if block_ids.iter().any(|&b| self.index.block(doc_id, b).is_none()) {
            return None;
        }
        Some(StreamEvent::Citation(CitationRef { doc_id: doc_id.into(), block_ids }))
    }

    fn scan_figure(&self) -> Scan {
        match self.buf.find(FIGURE_CLOSE) {
            Some(p) => {
                let len = p + FIGURE_CLOSE.len();
                Scan::Complete(len, self.figure(&self.buf[..len]))
            }
            None if self.buf.len() > MAX_FIGURE => Scan::Malformed,
            None => Scan::Wait,
        }
    }

    fn figure(&self, markup: &str) -> Option<StreamEvent> {
        if self.mode == AgentMode::TexDoC {
            return None;
        }
        let src = IMG_SRC.captures(markup)?;
        let doc_id = &src[1];
        let block_id = parse_block_id(&src[2])?;
        if !is_valid_doc_id(doc_id) || !self.index.is_figure(doc_id, block_id) {
            return None;
        }
        let caption = FIGCAPTION
            .captures(markup)
            .or_else(|| ALT.captures(markup))
            .map(|c| c[1].trim().to_string())
            .unwrap_or_default();
        Some(StreamEvent::Figure(FigureRef { doc_id: doc_id.into(), block_id, caption, markup: markup.into() }))
    }
}

/// Canonical re-serialization of the content events of a stream.
pub fn reconstruct(events: &[StreamEvent]) -> String {
    events.iter().filter_map(StreamEvent::raw).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{figure_block, text_block, IndexBuilder};
    use crate::ingest::Block;
    use proptest::prelude::*;

    fn index() -> Arc<Index> {
        let blocks: Vec<Block> = (0..100)
            .map(|i| if i == 77 { figure_block("bio", i, 9) } else { text_block("bio", i, 1, "t") })
            .collect();
        Arc::new(IndexBuilder::new().document("bio", 12, blocks).build().unwrap())
    }

    fn run(mode: AgentMode, tokens: &[&str]) -> (Vec<StreamEvent>, StreamTransformer) {
        let mut t = StreamTransformer::new(mode, index());
        let mut out = Vec::new();
        for tok in tokens {
            out.extend(t.push(tok));
        }
        out.extend(t.finish());
        (out, t)
    }

    const FIG: &str = r#"<figure><img src="block://bio/77" alt="Stages"><figcaption>Stages of meiosis I</figcaption></figure>"#;

    #[test]
    fn citation_split_across_tokens() {
        let (ev, _) = run(AgentMode::MuDoC, &["Crossing over occurs [[cite:", "bio:41,42]] early."]);
        assert_eq!(
            ev,
            vec![
                StreamEvent::text("Crossing over occurs "),
                StreamEvent::Citation(CitationRef { doc_id: "bio".into(), block_ids: vec![41, 42] }),
                StreamEvent::text(" early."),
            ]
        );
    }

    #[test]
    fn figure_in_mudoc() {
        let (ev, _) = run(AgentMode::MuDoC, &["See:\n", &FIG[..20], &FIG[20..], "\nDone."]);
        let figs: Vec<_> = ev.iter().filter_map(|e| if let StreamEvent::Figure(f) = e { Some(f) } else { None }).collect();
        assert_eq!(figs.len(), 1);
        assert_eq!((figs[0].doc_id.as_str(), figs[0].block_id), ("bio", 77));
        assert_eq!(figs[0].caption, "Stages of meiosis I");
        assert_eq!(reconstruct(&ev), format!("See:\n{FIG}\nDone."));
    }

    #[test]
    fn figure_stripped_in_texdoc() {
        let (ev, t) = run(AgentMode::TexDoC, &["A ", FIG, " B"]);
        assert!(ev.iter().all(|e| !matches!(e, StreamEvent::Figure(_))));
        assert_eq!(reconstruct(&ev), "A  B");
        assert_eq!(t.stripped(), 1);
    }

    #[test]
    fn unresolvable_references_degrade_to_text() {
        let raw = "x [[cite:bio:9999]] y [[cite:chem:1]] <figure><img src=\"block://bio/3\"></figure> z";
        let (ev, t) = run(AgentMode::MuDoC, &[raw]);
        assert_eq!(ev, vec![StreamEvent::text(raw)]);
        assert_eq!(t.degraded(), 3);
    }

    #[test]
    fn malformed_and_unterminated_markers() {
        for raw in ["[[cite:bio: 1]]", "[[cite:bio:01]]", "[[cite:bio:1", "[[cite:bio:1]", "[[cite:", "[[ci", "<figure>never closed", "<fig"] {
            let (ev, _) = run(AgentMode::MuDoC, &[raw]);
            assert_eq!(reconstruct(&ev), raw);
            assert!(ev.iter().all(|e| matches!(e, StreamEvent::TextDelta { .. })), "{raw}");
        }
    }

    #[test]
    fn partial_openers_are_held_back() {
        let mut t = StreamTransformer::new(AgentMode::MuDoC, index());
        assert_eq!(t.push("text [["), vec![StreamEvent::text("text ")]);
        assert_eq!(t.push("ci"), vec![]);
        assert_eq!(t.push("te:bio:3]] ok"), vec![
            StreamEvent::Citation(CitationRef { doc_id: "bio".into(), block_ids: vec![3] }),
            StreamEvent::text(" ok"),
        ]);
        assert_eq!(t.push("<figures are nice"), vec![StreamEvent::text("<figures are nice")]);
    }

    #[test]
    fn unicode_text_passes_through() {
        let (ev, _) = run(AgentMode::MuDoC, &["Zellteilung → Meiose ", "[[cite:bio:5]]", " ✓"]);
        assert_eq!(reconstruct(&ev), "Zellteilung → Meiose [[cite:bio:5]] ✓");
    }

    fn piece() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-zA-Z ,.\\[\\]<>:/é]{0,12}",
            (0u32..120).prop_map(|b| format!("[[cite:bio:{b}]]")),
            (0u32..120, 0u32..120).prop_map(|(a, b)| format!("[[cite:bio:{a},{b}]]")),
            Just(FIG.to_string()),
            Just("[[cite:".to_string()),
            Just("<figure>".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_under_random_splits(pieces in prop::collection::vec(piece(), 0..12), cuts in prop::collection::vec(0usize..200, 0..20)) {
            let raw: String = pieces.concat();
            let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % (raw.len() + 1)).filter(|&c| raw.is_char_boundary(c)).collect();
            bounds.sort_unstable();
            bounds.dedup();
            let mut tokens = Vec::new();
            let mut prev = 0;
            for b in bounds.into_iter().chain([raw.len()]) {
                tokens.push(&raw[prev..b]);
                prev = b;
            }
            let (ev, _) = run(AgentMode::MuDoC, &tokens);
            prop_assert_eq!(reconstruct(&ev), raw.clone());
            let (whole, _) = run(AgentMode::MuDoC, &[raw.as_str()]);
            let structured = |v: &[StreamEvent]| v.iter().filter(|e| !matches!(e, StreamEvent::TextDelta { .. })).cloned().collect::<Vec<_>>();
            prop_assert_eq!(structured(&ev), structured(&whole));
        }
    }
}
