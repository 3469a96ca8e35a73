use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Position on a page in page-normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, width, height]: [f64; 4]) -> Self {
        Self { x, y, width, height }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.width, b.height]
    }
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x) && unit(self.y) && unit(self.width) && unit(self.height) && self.width > 0.0 && self.height > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Text,
    Figure,
}

/// One layout unit of a source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub doc_id: String,
    pub block_id: u32,
    pub page: u32,
    pub bbox: BBox,
    pub kind: BlockKind,
    #[serde(default)]
    pub text: String,
    /// Path of the extracted image, relative to the layout file. Figures only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Parsed layout-analysis output for one source file.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutDocument {
    pub doc_id: String,
    pub pages: u32,
    pub blocks: Vec<Block>,
}

impl LayoutDocument {
    pub fn text_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.kind == BlockKind::Text)
    }
}

/// Document ids end up inside citation markers, so they are restricted to a
/// marker-safe alphabet.
pub fn is_valid_doc_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    pages: u32,
    blocks: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct RawBlock {
    id: u64,
    page: u32,
    bbox: [f64; 4],
    kind: RawKind,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    image_file: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Text,
    Figure,
}

/// Parses one layout-analysis JSON file.
///
/// Reading order is ascending record `id`; output blocks are renumbered
/// `0..n` in that order.
pub fn parse_layout(raw: &[u8]) -> Result<LayoutDocument, IngestError> {
    let doc: RawDocument = serde_json::from_slice(raw).map_err(|e| IngestError::Parse {
        record: "document".into(),
        message: e.to_string(),
    })?;
    if !is_valid_doc_id(&doc.doc_id) {
        return Err(IngestError::Validation {
            record: "document".into(),
            message: format!("doc_id {:?} must match [A-Za-z0-9_.-]+", doc.doc_id),
        });
    }

    let mut records = Vec::with_capacity(doc.blocks.len());
    let mut seen = HashSet::new();
    for (pos, value) in doc.blocks.into_iter().enumerate() {
        let label = match value.get("id").and_then(|v| v.as_u64()) {
            Some(id) => format!("block record {pos} (id {id})"),
            None => format!("block record {pos}"),
        };
        let rec: RawBlock = serde_json::from_value(value).map_err(|e| IngestError::Parse {
            record: label.clone(),
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id) {
            return Err(IngestError::Parse { record: label, message: "duplicate id".into() });
        }
        validate(&rec, doc.pages, &label)?;
        records.push(rec);
    }
    records.sort_by_key(|r| r.id);

    let blocks = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| Block {
            doc_id: doc.doc_id.clone(),
            block_id: i as u32,
            page: r.page,
            bbox: BBox::from(r.bbox),
            kind: match r.kind {
                RawKind::Text => BlockKind::Text,
                RawKind::Figure => BlockKind::Figure,
            },
            text: r.text.unwrap_or_default(),
            image_ref: r.image_file,
        })
        .collect();

    Ok(LayoutDocument { doc_id: doc.doc_id, pages: doc.pages, blocks })
}

fn validate(rec: &RawBlock, pages: u32, label: &str) -> Result<(), IngestError> {
    let fail = |message: String| IngestError::Validation { record: label.to_string(), message };
    if rec.page == 0 || rec.page > pages {
        return Err(fail(format!("page {} outside 1..={pages}", rec.page)));
    }
    if !BBox::from(rec.bbox).is_valid() {
        return Err(fail(format!("bbox {:?} outside the unit square or degenerate", rec.bbox)));
    }
    match rec.kind {
        RawKind::Figure if rec.image_file.as_deref().is_none_or(str::is_empty) => {
            Err(fail("figure without image_file".into()))
        }
        RawKind::Text if rec.image_file.is_some() => Err(fail("text block with image_file".into())),
        _ => Ok(()),
    }
}
