//! Immutable retrieval index produced by ingestion.
//!
//! On disk an index is a directory:
//!
//! ```text
//! metadata.json    documents, blocks, chunks and image records (no vectors)
//! vectors.bin      little-endian f32 vectors, see `write_vectors`
//! inverted.json    BM25 postings for the text and image corpora
//! images/<doc>/<block>    extracted figure bytes
//! pages/<doc>/<page>      optional pre-rendered page images
//! ```
//!
//! Every file carries the `INDEX_FORMAT` tag (the binary file in its header).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Block, BlockKind, Chunk, ImageRecord};
use crate::retrieval::bm25::InvertedIndex;

pub const INDEX_FORMAT: &str = "mudoc-index/1";
const VECTOR_MAGIC: &[u8; 8] = b"MDVEC001";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported index format {found:?} (expected {INDEX_FORMAT:?})")]
    Format { found: String },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub doc_id: String,
    pub pages: u32,
    /// Indexed by `block_id`.
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredImage {
    pub mime: String,
    pub bytes: Vec<u8>,
}

type BlockKey = (String, u32);

pub struct Index {
    documents: BTreeMap<String, DocumentEntry>,
    chunks: Vec<Chunk>,
    images: Vec<ImageRecord>,
    text_terms: InvertedIndex,
    image_terms: InvertedIndex,
    image_bytes: HashMap<BlockKey, StoredImage>,
    page_images: HashMap<BlockKey, StoredImage>,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("documents", &self.documents.len())
            .field("chunks", &self.chunks.len())
            .field("images", &self.images.len())
            .finish()
    }
}

/// Text the sparse ranker sees for a chunk: content followed by summary.
pub fn chunk_search_text(chunk: &Chunk) -> String {
    format!("{}\n{}", chunk.text, chunk.summary)
}

fn uniform_dim<'a>(what: &str, vectors: impl Iterator<Item = &'a Vec<f32>>) -> Result<usize, IndexError> {
    let mut dim = None;
    for v in vectors {
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(IndexError::DimensionMismatch(format!("{what}: {d} vs {}", v.len())))
            }
            _ => {}
        }
    }
    match dim {
        Some(0) => Err(IndexError::DimensionMismatch(format!("{what}: empty vector"))),
        d => Ok(d.unwrap_or(0)),
    }
}

impl Index {
    pub fn new(
        documents: Vec<DocumentEntry>,
        chunks: Vec<Chunk>,
        images: Vec<ImageRecord>,
        image_bytes: HashMap<BlockKey, StoredImage>,
        page_images: HashMap<BlockKey, StoredImage>,
    ) -> Result<Self, IndexError> {
        uniform_dim(
            "chunk vectors",
            chunks.iter().flat_map(|c| [&c.content_vector, &c.summary_vector]),
        )?;
        uniform_dim(
            "image vectors",
            images.iter().flat_map(|r| [&r.image_vector, &r.caption_vector, &r.combined_vector]),
        )?;
        let mut docs = BTreeMap::new();
        for d in documents {
            if d.blocks.iter().enumerate().any(|(i, b)| b.block_id as usize != i || b.doc_id != d.doc_id) {
                return Err(IndexError::Corrupt(format!("blocks of {} are not numbered 0..n", d.doc_id)));
            }
            docs.insert(d.doc_id.clone(), d);
        }
        let text_terms = InvertedIndex::build(chunks.iter().map(chunk_search_text).collect::<Vec<_>>().iter().map(String::as_str));
        let image_terms = InvertedIndex::build(images.iter().map(|r| r.search_text.as_str()));
        Ok(Self {
            documents: docs,
            chunks,
            images,
            text_terms,
            image_terms,
            image_bytes,
            page_images,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new(), HashMap::new(), HashMap::new()).expect("empty index is valid")
    }

    pub fn documents(&self) -> impl Iterator<Item = &DocumentEntry> {
        self.documents.values()
    }

    pub fn document(&self, doc_id: &str) -> Option<&DocumentEntry> {
        self.documents.get(doc_id)
    }

    pub fn block(&self, doc_id: &str, block_id: u32) -> Option<&Block> {
        self.documents.get(doc_id)?.blocks.get(block_id as usize)
    }

    pub fn is_figure(&self, doc_id: &str, block_id: u32) -> bool {
        self.block(doc_id, block_id).is_some_and(|b| b.kind == BlockKind::Figure)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image_record(&self, doc_id: &str, block_id: u32) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.doc_id == doc_id && r.block_id == block_id)
    }

    pub fn text_terms(&self) -> &InvertedIndex {
        &self.text_terms
    }

    pub fn image_terms(&self) -> &InvertedIndex {
        &self.image_terms
    }

    pub fn image_bytes(&self, doc_id: &str, block_id: u32) -> Option<&StoredImage> {
        self.image_bytes.get(&(doc_id.to_string(), block_id))
    }

    pub fn page_image(&self, doc_id: &str, page: u32) -> Option<&StoredImage> {
        self.page_images.get(&(doc_id.to_string(), page))
    }

    pub fn text_dim(&self) -> usize {
        self.chunks.first().map_or(0, |c| c.content_vector.len())
    }

    pub fn multimodal_dim(&self) -> usize {
        self.images.first().map_or(0, |r| r.combined_vector.len())
    }

    /// `(text entries, image entries)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.chunks.len(), self.images.len())
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;
        let mut image_files = Vec::new();
        for ((doc, block), img) in sorted(&self.image_bytes) {
            let rel = format!("images/{doc}/{block}");
            write_file(&dir.join(&rel), &img.bytes)?;
            image_files.push(FileEntry { doc_id: doc.clone(), number: *block, mime: img.mime.clone(), path: rel });
        }
        let mut page_files = Vec::new();
        for ((doc, page), img) in sorted(&self.page_images) {
            let rel = format!("pages/{doc}/{page}");
            write_file(&dir.join(&rel), &img.bytes)?;
            page_files.push(FileEntry { doc_id: doc.clone(), number: *page, mime: img.mime.clone(), path: rel });
        }
        let meta = Metadata {
            format: INDEX_FORMAT.into(),
            documents: self.documents.values().cloned().collect(),
            chunks: self.chunks.clone(),
            images: self.images.clone(),
            image_files,
            page_files,
        };
        fs::write(dir.join("metadata.json"), serde_json::to_vec_pretty(&meta)?)?;
        let inverted = InvertedFile {
            format: INDEX_FORMAT.into(),
            text: self.text_terms.clone(),
            image: self.image_terms.clone(),
        };
        fs::write(dir.join("inverted.json"), serde_json::to_vec(&inverted)?)?;
        let mut out = fs::File::create(dir.join("vectors.bin"))?;
        write_vectors(&mut out, &self.chunks, &self.images)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let meta: Metadata = serde_json::from_slice(&fs::read(dir.join("metadata.json"))?)?;
        check_format(&meta.format)?;
        let inverted: InvertedFile = serde_json::from_slice(&fs::read(dir.join("inverted.json"))?)?;
        check_format(&inverted.format)?;
        let (mut chunks, mut images) = (meta.chunks, meta.images);
        let mut file = fs::File::open(dir.join("vectors.bin"))?;
        read_vectors(&mut file, &mut chunks, &mut images)?;
        if inverted.text.len() != chunks.len() || inverted.image.len() != images.len() {
            return Err(IndexError::Corrupt("inverted index does not match metadata".into()));
        }
        let load_files = |entries: Vec<FileEntry>| -> Result<HashMap<BlockKey, StoredImage>, IndexError> {
            entries
                .into_iter()
                .map(|e| {
                    let bytes = fs::read(dir.join(&e.path))?;
                    Ok(((e.doc_id, e.number), StoredImage { mime: e.mime, bytes }))
                })
                .collect()
        };
        let mut index = Index::new(
            meta.documents,
            chunks,
            images,
            load_files(meta.image_files)?,
            load_files(meta.page_files)?,
        )?;
        index.text_terms = inverted.text;
        index.image_terms = inverted.image;
        Ok(index)
    }
}

fn sorted<V>(map: &HashMap<BlockKey, V>) -> Vec<(&BlockKey, &V)> {
    let mut v: Vec<_> = map.iter().collect();
    v.sort_by(|a, b| a.0.cmp(b.0));
    v
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

fn check_format(found: &str) -> Result<(), IndexError> {
    if found == INDEX_FORMAT {
        Ok(())
    } else {
        Err(IndexError::Format { found: found.to_string() })
    }
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    doc_id: String,
    number: u32,
    mime: String,
    path: String,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format: String,
    documents: Vec<DocumentEntry>,
    chunks: Vec<Chunk>,
    images: Vec<ImageRecord>,
    image_files: Vec<FileEntry>,
    page_files: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct InvertedFile {
    format: String,
    text: InvertedIndex,
    image: InvertedIndex,
}

/// Layout: magic, then u32 text_dim, u32 multimodal_dim, u32 chunk count,
/// u32 image count, then per chunk `content ‖ summary`, then per image
/// `image ‖ caption ‖ combined`. All little-endian.
fn write_vectors(out: &mut impl Write, chunks: &[Chunk], images: &[ImageRecord]) -> std::io::Result<()> {
    let text_dim = chunks.first().map_or(0, |c| c.content_vector.len());
    let mm_dim = images.first().map_or(0, |r| r.combined_vector.len());
    out.write_all(VECTOR_MAGIC)?;
    for n in [text_dim, mm_dim, chunks.len(), images.len()] {
        out.write_all(&(n as u32).to_le_bytes())?;
    }
    let vecs = chunks
        .iter()
        .flat_map(|c| [&c.content_vector, &c.summary_vector])
        .chain(images.iter().flat_map(|r| [&r.image_vector, &r.caption_vector, &r.combined_vector]));
    for v in vecs {
        for x in v {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_vectors(input: &mut impl Read, chunks: &mut [Chunk], images: &mut [ImageRecord]) -> Result<(), IndexError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != VECTOR_MAGIC {
        return Err(IndexError::Format { found: String::from_utf8_lossy(&magic).into_owned() });
    }
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *h = u32::from_le_bytes(b);
    }
    let [text_dim, mm_dim, n_chunks, n_images] = header.map(|h| h as usize);
    if n_chunks != chunks.len() || n_images != images.len() {
        return Err(IndexError::Corrupt("vector counts do not match metadata".into()));
    }
    let mut read_vec = |dim: usize| -> Result<Vec<f32>, IndexError> {
        let mut buf = vec![0u8; dim * 4];
        input.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    };
    for c in chunks.iter_mut() {
        c.content_vector = read_vec(text_dim)?;
        c.summary_vector = read_vec(text_dim)?;
    }
    for r in images.iter_mut() {
        r.image_vector = read_vec(mm_dim)?;
        r.caption_vector = read_vec(mm_dim)?;
        r.combined_vector = read_vec(mm_dim)?;
    }
    Ok(())
}
