//! Knowledge chunking, embedding and exact cosine retrieval.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::orchestration::tokenize;

pub const DEFAULT_CHUNK_SIZE: usize = 800;
pub const DEFAULT_CHUNK_OVERLAP: usize = 120;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_HASH_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Reads every regular file of a directory as one document; the document
/// id is the file name. Files are visited in name order.
pub fn load_knowledge_dir(dir: &Path) -> Result<Vec<Document>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok(Document::new(p.file_name().unwrap().to_string_lossy(), text))
        })
        .collect()
}

/// A span of a source document, `[start, end)` in characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub id: usize,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    #[serde(skip)]
    pub embedding: Vec<f64>,
}

/// Sliding-window chunking. A window ends at the last paragraph break in
/// its second half when there is one, otherwise at `size` characters; the
/// next window starts `overlap` characters before the previous end.
pub fn chunk_documents(docs: &[Document], size: usize, overlap: usize) -> Result<Vec<KnowledgeChunk>> {
    if size <= overlap {
        return Err(Error::invalid(format!(
            "chunk size {size} must exceed overlap {overlap}"
        )));
    }
    let mut chunks = Vec::new();
    for doc in docs {
        let chars: Vec<char> = doc.text.chars().collect();
        let n = chars.len();
        let mut start = 0;
        while start < n {
            let hard_end = (start + size).min(n);
            let end = if hard_end == n {
                n
            } else {
                let earliest = (start + overlap + 1).max(start + size / 2);
                (earliest.max(2)..=hard_end)
                    .rev()
                    .find(|&p| chars[p - 2] == '\n' && chars[p - 1] == '\n')
                    .unwrap_or(hard_end)
            };
            chunks.push(KnowledgeChunk {
                id: chunks.len(),
                doc_id: doc.id.clone(),
                start,
                end,
                text: chars[start..end].iter().collect(),
                embedding: Vec::new(),
            });
            if end == n {
                break;
            }
            start = end - overlap;
        }
    }
    Ok(chunks)
}

/// Text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Embedder {
    /// Token counts hashed into `dimension` buckets, L2-normalized.
    DeterministicHash { dimension: usize },
    /// OpenAI-style `/embeddings` endpoint.
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key: Option<String>,
    },
}

impl Default for Embedder {
    fn default() -> Self {
        Embedder::DeterministicHash {
            dimension: DEFAULT_HASH_DIM,
        }
    }
}

/// Bucket of a token in the hashing embedder.
pub fn hash_bucket(token: &str, dimension: usize) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) % dimension as u64) as usize
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

impl Embedder {
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        match self {
            Embedder::DeterministicHash { dimension } => {
                let mut tokens = tokenize(text);
                if tokens.is_empty() {
                    tokens.push(text.trim().to_lowercase());
                }
                let mut v = vec![0.0; *dimension];
                for t in &tokens {
                    v[hash_bucket(t, *dimension)] += 1.0;
                }
                Ok(normalize(v))
            }
            Embedder::Remote { endpoint, model, api_key } => remote_embed(endpoint, model, api_key.as_deref(), text).map(normalize),
        }
    }
}

#[cfg(feature = "remote")]
fn remote_embed(endpoint: &str, model: &str, api_key: Option<&str>, text: &str) -> Result<Vec<f64>> {
    let mut req = ureq::post(endpoint).timeout(std::time::Duration::from_secs(30));
    if let Some(key) = api_key {
        req = req.set("Authorization", &format!("Bearer {key}"));
    }
    let resp: serde_json::Value = req
        .send_json(serde_json::json!({ "model": model, "input": text }))
        .map_err(|e| Error::BackendUnavailable(e.to_string()))?
        .into_json()
        .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
    let vec = resp["data"][0]["embedding"]
        .as_array()
        .ok_or_else(|| Error::BackendUnavailable("embedding response has no data[0].embedding".into()))?;
    vec.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::BackendUnavailable("non-numeric embedding".into()))
        })
        .collect()
}

#[cfg(not(feature = "remote"))]
fn remote_embed(_: &str, _: &str, _: Option<&str>, _: &str) -> Result<Vec<f64>> {
    Err(Error::BackendUnavailable("built without remote support".into()))
}

/// Rounds to 12 decimals so mathematically equal scores compare equal.
fn round_score(s: f64) -> f64 {
    (s * 1e12).round() / 1e12
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// A retrieved chunk with its cosine score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSnippet {
    pub chunk_id: usize,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub text: String,
}

/// Exact (full-scan) cosine index. Built once, then read-only.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    embedder: Embedder,
    chunks: Vec<KnowledgeChunk>,
}

impl VectorIndex {
    pub fn build(embedder: Embedder, mut chunks: Vec<KnowledgeChunk>) -> Result<Self> {
        let mut dim = None;
        for c in &mut chunks {
            c.embedding = embedder.embed(&c.text)?;
            match dim {
                None => dim = Some(c.embedding.len()),
                Some(d) if d != c.embedding.len() => {
                    return Err(Error::invalid("embedding dimension changed within the index"))
                }
                _ => {}
            }
        }
        Ok(Self { embedder, chunks })
    }

    pub fn from_documents(embedder: Embedder, docs: &[Document], size: usize, overlap: usize) -> Result<Self> {
        Self::build(embedder, chunk_documents(docs, size, overlap)?)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[KnowledgeChunk] {
        &self.chunks
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    /// Top-`k` chunks by cosine similarity, descending; ties (to 1e-12) by chunk id.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedSnippet>> {
        if self.chunks.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.embedder.embed(query)?;
        let mut scored: Vec<(f64, &KnowledgeChunk)> = self
            .chunks
            .iter()
            .map(|c| (round_score(cosine(&q, &c.embedding)), c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, c)| RetrievedSnippet {
                chunk_id: c.id,
                doc_id: c.doc_id.clone(),
                start: c.start,
                end: c.end,
                score,
                text: c.text.clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        let doc = Document::new("d", "x".repeat(1000));
        let chunks = chunk_documents(&[doc], 800, 120).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!((chunks[0].start, chunks[0].end), (0, 800));
        assert_eq!((chunks[1].start, chunks[1].end), (680, 1000));
    }

    #[test]
    fn short_doc_is_one_chunk() {
        let doc = Document::new("d", "Fetal head in the trans-thalamic plane.");
        let chunks = chunk_documents(std::slice::from_ref(&doc), 800, 120).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, doc.text);
    }

    #[test]
    fn prefers_paragraph_breaks() {
        let text = format!("{}\n\n{}", "a".repeat(500), "b".repeat(600));
        let chunks = chunk_documents(&[Document::new("d", text)], 800, 120).unwrap();
        assert_eq!(chunks[0].end, 502);
        assert_eq!(chunks[1].start, 382);
        assert_eq!(chunks.last().unwrap().end, 1102);
    }

    #[test]
    fn rejects_bad_window() {
        assert!(chunk_documents(&[], 100, 100).is_err());
    }

    #[test]
    fn hash_embedding_is_deterministic_and_unit() {
        let e = Embedder::default();
        let a = e.embed("fetal head").unwrap();
        assert_eq!(a, e.embed("fetal head").unwrap());
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert!(e.embed("  ").is_err());
    }

    #[test]
    fn verbatim_chunk_ranks_first() {
        let docs = vec![
            Document::new("a", "The biparietal diameter is measured on the trans-thalamic plane."),
            Document::new("b", "Stomach bubble visible in the abdominal circumference plane."),
        ];
        let idx = VectorIndex::from_documents(Embedder::default(), &docs, 800, 120).unwrap();
        let hits = idx.retrieve(&docs[1].text, 5).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].doc_id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_index_errors() {
        let idx = VectorIndex::build(Embedder::default(), vec![]).unwrap();
        assert!(matches!(idx.retrieve("x", 5), Err(Error::EmptyIndex)));
    }
}
