//! Evidence bank and retrieval over a knowledge base.

mod bank;
mod rag;

pub use bank::{
    BankEntry, BankMode, BankSnapshot, EvidenceBank, EvidenceItem, ExpertFailure, GeneralContext, Section,
};
pub use rag::{
    chunk_documents, cosine, hash_bucket, load_knowledge_dir, Document, Embedder, KnowledgeChunk,
    RetrievedSnippet, VectorIndex, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE, DEFAULT_HASH_DIM, DEFAULT_TOP_K,
};
