//! Builders for small in-memory corpora and indices with hand-picked vectors.
//! Used by the test suites and handy for experiments.

use std::collections::HashMap;

use crate::index::{DocumentEntry, Index, IndexError, StoredImage};
use crate::retrieval::{ImageHit, RetrievalError, SearchBackend, TextSpan};
use crate::ingest::{BBox, Block, BlockKind, Chunk, FigureAsset, ImageRecord, LayoutDocument, SourceDocument};

pub fn text_block(doc_id: &str, block_id: u32, page: u32, text: &str) -> Block {
    Block {
        doc_id: doc_id.into(),
        block_id,
        page,
        bbox: BBox { x: 0.1, y: 0.05 + 0.01 * (block_id % 50) as f64, width: 0.8, height: 0.04 },
        kind: BlockKind::Text,
        text: text.into(),
        image_ref: None,
    }
}

pub fn figure_block(doc_id: &str, block_id: u32, page: u32) -> Block {
    Block {
        kind: BlockKind::Figure,
        text: String::new(),
        image_ref: Some(format!("figures/{doc_id}-{block_id}.png")),
        bbox: BBox { x: 0.2, y: 0.3, width: 0.6, height: 0.4 },
        ..text_block(doc_id, block_id, page, "")
    }
}

/// A 4×4 PNG whose pixels depend on `seed`.
pub fn toy_png(seed: u8) -> Vec<u8> {
    let img = image::RgbImage::from_fn(4, 4, |x, y| image::Rgb([seed, (x * 50) as u8, (y * 50) as u8]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("encode png");
    out.into_inner()
}

/// Assembles an [`Index`] from explicit chunks and image records.
#[derive(Default)]
pub struct IndexBuilder {
    documents: Vec<DocumentEntry>,
    chunks: Vec<Chunk>,
    images: Vec<ImageRecord>,
    image_bytes: HashMap<(String, u32), StoredImage>,
}

impl IndexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn document(mut self, doc_id: &str, pages: u32, blocks: Vec<Block>) -> Self {
        self.documents.push(DocumentEntry { doc_id: doc_id.into(), pages, blocks });
        self
    }

    /// Adds a chunk over `block_ids`; text is joined from the document's blocks.
    pub fn chunk(mut self, doc_id: &str, block_ids: &[u32], summary: &str, content_vector: Vec<f32>, summary_vector: Vec<f32>) -> Self {
        let doc = self.documents.iter().find(|d| d.doc_id == doc_id).expect("document added first");
        let text = block_ids
            .iter()
            .map(|&b| doc.blocks[b as usize].text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        self.chunks.push(Chunk {
            chunk_id: format!("{doc_id}/{}", self.chunks.len()),
            doc_id: doc_id.into(),
            block_ids: block_ids.to_vec(),
            char_count: text.chars().count(),
            text,
            summary: summary.into(),
            content_vector,
            summary_vector,
        });
        self
    }

    pub fn image(mut self, doc_id: &str, block_id: u32, caption: &str, description: &str, image_vector: Vec<f32>, caption_vector: Vec<f32>) -> Self {
        let mut r = ImageRecord::new(doc_id, block_id, caption.into(), description.into());
        r.combined_vector = image_vector.iter().zip(&caption_vector).map(|(a, b)| (a + b) / 2.0).collect();
        r.image_vector = image_vector;
        r.caption_vector = caption_vector;
        self.images.push(r);
        self.image_bytes.insert(
            (doc_id.into(), block_id),
            StoredImage { mime: "image/png".into(), bytes: toy_png(block_id as u8) },
        );
        self
    }

    pub fn build(self) -> Result<Index, IndexError> {
        Index::new(self.documents, self.chunks, self.images, self.image_bytes, HashMap::new())
    }
}

const TOPICS: [&str; 10] = [
    "Meiosis is a form of cell division that halves the chromosome number to produce haploid gametes.",
    "During prophase I homologous chromosomes pair up in a process called synapsis and form tetrads.",
    "Crossing over exchanges segments between non-sister chromatids at chiasmata, increasing genetic variation.",
    "In metaphase I tetrads align at the metaphase plate with random orientation of each homologous pair.",
    "Anaphase I separates homologous chromosomes while sister chromatids remain attached at the centromere.",
    "Telophase I and cytokinesis produce two haploid cells, each chromosome still made of two chromatids.",
    "Meiosis II resembles mitosis: sister chromatids separate to yield four genetically distinct haploid cells.",
    "Nondisjunction occurs when chromosomes fail to separate, producing gametes with abnormal chromosome numbers.",
    "Sexual reproduction combines gametes at fertilization, restoring the diploid number in the zygote.",
    "Mitosis, unlike meiosis, produces two genetically identical diploid daughter cells for growth and repair.",
];

/// A 20-block biology document (`bio`) with four figures on six pages,
/// including the figure image bytes.
pub fn toy_biology_document() -> SourceDocument {
    let mut blocks = Vec::new();
    let mut figures = Vec::new();
    let mut topic = 0;
    for id in 0..20u32 {
        let page = id / 4 + 1;
        if id % 5 == 4 {
            blocks.push(figure_block("bio", id, page));
            figures.push(FigureAsset {
                doc_id: "bio".into(),
                block_id: id,
                image: StoredImage { mime: "image/png".into(), bytes: toy_png(id as u8) },
            });
        } else {
            let text = format!("{} {}", TOPICS[topic % TOPICS.len()], "Cells and chromosomes. ".repeat(3));
            blocks.push(text_block("bio", id, page, &text));
            topic += 1;
        }
    }
    SourceDocument {
        layout: LayoutDocument { doc_id: "bio".into(), pages: 6, blocks },
        figures,
        pages: Vec::new(),
    }
}

/// Counts of what a [`RecordingBackend`] was asked for.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchLog {
    pub text_calls: Vec<(Vec<String>, usize)>,
    pub image_calls: Vec<(Vec<String>, usize)>,
}

/// Search backend with a fixed supply of synthetic results that records
/// every call. Returns `min(k, available)` items per call, or fails when
/// `fail` is set.
pub struct RecordingBackend {
    pub doc_id: String,
    pub text_available: usize,
    pub images_available: usize,
    pub fail: bool,
    log: std::sync::Mutex<SearchLog>,
}

impl RecordingBackend {
    pub fn new(doc_id: &str, text_available: usize, images_available: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            text_available,
            images_available,
            fail: false,
            log: Default::default(),
        }
    }

    pub fn failing(mut self) -> Self {
        self.fail = true;
        self
    }

    pub fn log(&self) -> SearchLog {
        self.log.lock().expect("log lock").clone()
    }
}

#[async_trait::async_trait]
impl SearchBackend for RecordingBackend {
    async fn text_search(&self, queries: &[String], k: usize) -> Result<Vec<TextSpan>, RetrievalError> {
        self.log.lock().expect("log lock").text_calls.push((queries.to_vec(), k));
        if self.fail {
            return Err(RetrievalError::Config("injected search failure".into()));
        }
        Ok((0..k.min(self.text_available) as u32)
            .map(|i| {
                let text = format!("Passage {i} about meiosis.");
                TextSpan {
                    doc_id: self.doc_id.clone(),
                    block_ids: vec![2 * i],
                    block_texts: vec![text.clone()],
                    text,
                    chunk_ids: vec![format!("{}/{i}", self.doc_id)],
                    score: 1.0 / (i + 1) as f64,
                }
            })
            .collect())
    }

    async fn image_search(&self, queries: &[String], k: usize) -> Result<Vec<ImageHit>, RetrievalError> {
        self.log.lock().expect("log lock").image_calls.push((queries.to_vec(), k));
        if self.fail {
            return Err(RetrievalError::Config("injected search failure".into()));
        }
        Ok((0..k.min(self.images_available) as u32)
            .map(|i| ImageHit {
                doc_id: self.doc_id.clone(),
                block_id: 2 * i + 1,
                caption: format!("Figure {i}"),
                description: format!("Diagram {i} of a dividing cell."),
                score: 1.0 / (i + 1) as f64,
            })
            .collect())
    }
}
