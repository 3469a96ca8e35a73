//! Ingestion: layout-analysis JSON → blocks → overlapping chunks → summaries,
//! image captions and dense vectors → [`Index`].

mod chunk;
mod enrich;
mod layout;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use futures::{stream, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{build_chunks, Chunk, IngestConfig};
pub use enrich::{describe_image, sniff_image, summarize_chunk, IMAGE_TOOL};
pub use layout::{is_valid_doc_id, parse_layout, BBox, Block, BlockKind, LayoutDocument};

use crate::gateway::{EmbedSpace, GatewayError, Provider};
use crate::index::{DocumentEntry, Index, IndexError, StoredImage};
use crate::text;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("parse error in {record}: {message}")]
    Parse { record: String, message: String },
    #[error("invalid {record}: {message}")]
    Validation { record: String, message: String },
    #[error("chunk {0} has no text")]
    EmptyChunk(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("provider failed while {context}: {source}")]
    Provider {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("provider returned no usable {0}")]
    EmptyResponse(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A figure block with its generated text and vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub doc_id: String,
    pub block_id: u32,
    pub caption: String,
    pub description: String,
    /// Caption and description; the sparse corpus for image search.
    pub search_text: String,
    #[serde(skip)]
    pub image_vector: Vec<f32>,
    #[serde(skip)]
    pub caption_vector: Vec<f32>,
    #[serde(skip)]
    pub combined_vector: Vec<f32>,
}

impl ImageRecord {
    pub fn new(doc_id: impl Into<String>, block_id: u32, caption: String, description: String) -> Self {
        let search_text = format!("{caption}\n{description}");
        Self {
            doc_id: doc_id.into(),
            block_id,
            caption,
            description,
            search_text,
            image_vector: Vec::new(),
            caption_vector: Vec::new(),
            combined_vector: Vec::new(),
        }
    }
}

/// Elementwise mean of two equal-length vectors.
pub fn mean_vector(a: &[f32], b: &[f32]) -> Result<Vec<f32>, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch(format!("image {} vs caption {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect())
}

/// Extracted bytes of one figure block.
#[derive(Debug, Clone)]
pub struct FigureAsset {
    pub doc_id: String,
    pub block_id: u32,
    pub image: StoredImage,
}

/// Everything ingestion needs from one source file.
#[derive(Debug, Clone)]
pub struct SourceDocument {
    pub layout: LayoutDocument,
    pub figures: Vec<FigureAsset>,
    /// Optional pre-rendered page images keyed by 1-based page number.
    pub pages: Vec<(u32, StoredImage)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Reads every `*.json` layout file in `dir` (sorted by name) together with
/// the figure images they reference. Page images are picked up from
/// `<dir>/<doc_id>/pages/<n>.<ext>` when present.
pub fn load_source_dir(dir: &Path) -> Result<Vec<SourceDocument>, IngestError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut docs = Vec::new();
    for file in files {
        let raw = std::fs::read(&file).map_err(io_err(&file))?;
        let layout = parse_layout(&raw)?;
        let base = file.parent().unwrap_or(dir);
        let mut figures = Vec::new();
        for b in layout.blocks.iter().filter(|b| b.kind == BlockKind::Figure) {
            let path = base.join(b.image_ref.as_deref().unwrap_or_default());
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let mime = sniff_image(&bytes)?.to_string();
            figures.push(FigureAsset {
                doc_id: layout.doc_id.clone(),
                block_id: b.block_id,
                image: StoredImage { mime, bytes },
            });
        }
        let mut pages = Vec::new();
        let page_dir = base.join(&layout.doc_id).join("pages");
        for n in 1..=layout.pages {
            for ext in ["png", "jpg", "jpeg", "webp"] {
                let path = page_dir.join(format!("{n}.{ext}"));
                if path.is_file() {
                    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
                    let mime = sniff_image(&bytes)?.to_string();
                    pages.push((n, StoredImage { mime, bytes }));
                    break;
                }
            }
        }
        docs.push(SourceDocument { layout, figures, pages });
    }
    Ok(docs)
}

/// Full ingestion: chunk, summarize, describe figures, embed, index.
pub async fn ingest_documents(
    sources: Vec<SourceDocument>,
    provider: &dyn Provider,
    cfg: &IngestConfig,
) -> Result<Index, IngestError> {
    cfg.validate()?;
    let mut chunks = Vec::new();
    for src in &sources {
        for c in build_chunks(&src.layout.blocks, cfg) {
            if c.text.trim().is_empty() {
                tracing::warn!(chunk = %c.chunk_id, "skipping chunk without text");
                continue;
            }
            chunks.push(c);
        }
    }
    tracing::info!(chunks = chunks.len(), "summarizing chunks");
    let summaries: Vec<String> = stream::iter(chunks.iter())
        .map(|c| summarize_chunk(c, provider))
        .buffered(cfg.max_in_flight)
        .try_collect()
        .await?;
    for (c, s) in chunks.iter_mut().zip(summaries) {
        c.summary = s;
    }

    let figures: Vec<&FigureAsset> = sources.iter().flat_map(|s| s.figures.iter()).collect();
    tracing::info!(figures = figures.len(), "describing figures");
    let records: Vec<ImageRecord> = stream::iter(figures.iter())
        .map(|f| async move {
            let (caption, description) = describe_image(&f.image.bytes, provider).await?;
            Ok::<_, IngestError>(ImageRecord::new(f.doc_id.clone(), f.block_id, caption, description))
        })
        .buffered(cfg.max_in_flight)
        .try_collect()
        .await?;

    let mut image_bytes = HashMap::new();
    let mut page_images = HashMap::new();
    let mut documents = Vec::new();
    for src in sources {
        for f in src.figures {
            image_bytes.insert((f.doc_id, f.block_id), f.image);
        }
        for (n, img) in src.pages {
            page_images.insert((src.layout.doc_id.clone(), n), img);
        }
        documents.push(DocumentEntry {
            doc_id: src.layout.doc_id,
            pages: src.layout.pages,
            blocks: src.layout.blocks,
        });
    }
    embed_and_index(documents, chunks, records, image_bytes, page_images, provider, cfg.max_in_flight).await
}

const EMBED_BATCH: usize = 32;

async fn embed_batched(
    provider: &dyn Provider,
    space: EmbedSpace,
    texts: Vec<String>,
    in_flight: usize,
) -> Result<Vec<Vec<f32>>, IngestError> {
    let batches: Vec<Vec<Vec<f32>>> = stream::iter(texts.chunks(EMBED_BATCH).map(<[String]>::to_vec))
        .map(|batch| async move {
            provider.embed_text(space, &batch).await.map_err(|source| IngestError::Provider {
                context: "embedding text".into(),
                source,
            })
        })
        .buffered(in_flight.max(1))
        .try_collect()
        .await?;
    Ok(batches.into_iter().flatten().collect())
}

/// Computes every dense vector and assembles the immutable index.
///
/// Chunks need summaries and image records need captions before this runs.
pub async fn embed_and_index(
    documents: Vec<DocumentEntry>,
    mut chunks: Vec<Chunk>,
    mut images: Vec<ImageRecord>,
    image_bytes: HashMap<(String, u32), StoredImage>,
    page_images: HashMap<(String, u32), StoredImage>,
    provider: &dyn Provider,
    in_flight: usize,
) -> Result<Index, IngestError> {
    let contents = embed_batched(provider, EmbedSpace::Text, chunks.iter().map(|c| c.text.clone()).collect(), in_flight).await?;
    let summaries =
        embed_batched(provider, EmbedSpace::Text, chunks.iter().map(|c| c.summary.clone()).collect(), in_flight).await?;
    for ((c, mut content), mut summary) in chunks.iter_mut().zip(contents).zip(summaries) {
        text::normalize(&mut content);
        text::normalize(&mut summary);
        c.content_vector = content;
        c.summary_vector = summary;
    }

    let captions =
        embed_batched(provider, EmbedSpace::Multimodal, images.iter().map(|r| r.caption.clone()).collect(), in_flight).await?;
    let image_vectors: Vec<Vec<f32>> = stream::iter(images.iter())
        .map(|r| {
            let bytes = image_bytes.get(&(r.doc_id.clone(), r.block_id));
            async move {
                let bytes = bytes.ok_or_else(|| {
                    IngestError::Image(format!("no image bytes for {}/{}", r.doc_id, r.block_id))
                })?;
                provider.embed_image(&bytes.bytes).await.map_err(|source| IngestError::Provider {
                    context: format!("embedding image {}/{}", r.doc_id, r.block_id),
                    source,
                })
            }
        })
        .buffered(in_flight.max(1))
        .try_collect()
        .await?;
    for ((r, image_vector), caption_vector) in images.iter_mut().zip(image_vectors).zip(captions) {
        r.combined_vector = mean_vector(&image_vector, &caption_vector)?;
        r.image_vector = image_vector;
        r.caption_vector = caption_vector;
    }

    Ok(Index::new(documents, chunks, images, image_bytes, page_images)?)
}
