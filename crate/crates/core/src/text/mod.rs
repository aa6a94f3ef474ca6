//! Sentence-embedding ingestion and the shared `MMX1` matrix format.

pub mod hash_embed;
pub mod mmx;

pub use hash_embed::{hash_embed, TEXT_WIDTH};
pub use mmx::{read_embeddings, write_embeddings, EmbeddingMatrix, MmxError};
