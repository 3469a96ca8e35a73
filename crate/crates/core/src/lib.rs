pub mod agent;
pub mod docsearch;
pub mod fixtures;
pub mod gateway;
pub mod generation;
pub mod index;
pub mod ingest;
pub mod retrieval;
pub mod text;
