//! Per-agent manual store with lexical retrieval.

mod spec;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::spec::{extract_spec, RobotSpecSheet, SpecField, SpecValue};

use crate::ids::AgentId;

pub const CHUNK_CAP: usize = 1200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KnowledgeError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("document looks binary; only text and Markdown manuals are accepted")]
    BinaryDocument,
    #[error("no documents ingested for {0}")]
    EmptyKnowledgeBase(AgentId),
    #[error("k must be at least 1")]
    ZeroK,
}

/// Heuristic used on uploads: valid UTF-8 without NUL or other C0 control
/// bytes besides tab, newline and carriage return.
pub fn is_probably_text(bytes: &[u8]) -> bool {
    std::str::from_utf8(bytes).is_ok() && !bytes.iter().any(|b| *b < 0x20 && !matches!(b, b'\t' | b'\n' | b'\r'))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits on blank lines; paragraphs longer than [`CHUNK_CAP`] characters
/// are cut at the last whitespace before the cap (or hard at the cap).
pub fn chunk_text(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n"));
    }
    let mut out = Vec::new();
    for p in paragraphs {
        let mut rest = p.as_str();
        while rest.chars().count() > CHUNK_CAP {
            let cap_byte = rest.char_indices().nth(CHUNK_CAP).map_or(rest.len(), |(i, _)| i);
            let cut = rest[..cap_byte]
                .rfind(char::is_whitespace)
                .filter(|&i| i > 0)
                .unwrap_or(cap_byte);
            out.push(rest[..cut].trim_end().to_string());
            rest = rest[cut..].trim_start();
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub tokens: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub name: String,
    pub version: u32,
    pub chunks: Vec<DocumentChunk>,
    pub spec: RobotSpecSheet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub doc_id: String,
    pub chunks: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk<'a> {
    pub score: f64,
    pub chunk: &'a DocumentChunk,
}

/// Private document stores, one per agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    stores: BTreeMap<AgentId, BTreeMap<String, Document>>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Chunks and indexes `doc` for `agent`. Re-ingesting a name replaces
    /// the earlier version under the same id.
    pub fn ingest_manual(&mut self, agent: &AgentId, doc: &str, name: &str) -> Result<IngestReceipt, KnowledgeError> {
        if !is_probably_text(doc.as_bytes()) {
            return Err(KnowledgeError::BinaryDocument);
        }
        if doc.trim().is_empty() {
            return Err(KnowledgeError::EmptyDocument);
        }
        let store = self.stores.entry(agent.clone()).or_default();
        let doc_id = format!("{agent}/{name}");
        let version = store.get(name).map_or(1, |d| d.version + 1);
        let chunks: Vec<DocumentChunk> = chunk_text(doc)
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                let mut tokens = BTreeMap::new();
                for t in tokenize(&text) {
                    *tokens.entry(t).or_insert(0) += 1;
                }
                DocumentChunk {
                    doc_id: doc_id.clone(),
                    chunk_index: i,
                    text,
                    tokens,
                }
            })
            .collect();
        let mut spec = extract_spec(doc);
        spec.source = Some(doc_id.clone());
        let receipt = IngestReceipt {
            doc_id: doc_id.clone(),
            chunks: chunks.len(),
            version,
        };
        store.insert(
            name.to_string(),
            Document {
                id: doc_id,
                name: name.to_string(),
                version,
                chunks,
                spec,
            },
        );
        tracing::debug!(%agent, name, version, "manual ingested");
        Ok(receipt)
    }

    pub fn documents(&self, agent: &AgentId) -> impl Iterator<Item = &Document> {
        self.stores.get(agent).into_iter().flat_map(|s| s.values())
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.stores.keys()
    }

    /// Top-`k` chunks of `agent`'s own documents by tf × ln(1 + N/df),
    /// summed over distinct query tokens. Zero scores are dropped; ties go
    /// to (doc id, chunk index) ascending.
    pub fn retrieve(&self, agent: &AgentId, query: &str, k: usize) -> Result<Vec<ScoredChunk<'_>>, KnowledgeError> {
        if k == 0 {
            return Err(KnowledgeError::ZeroK);
        }
        let chunks: Vec<&DocumentChunk> = self.documents(agent).flat_map(|d| d.chunks.iter()).collect();
        if chunks.is_empty() {
            return Err(KnowledgeError::EmptyKnowledgeBase(agent.clone()));
        }
        let n = chunks.len() as f64;
        let query: BTreeSet<String> = tokenize(query).into_iter().collect();
        let idf: BTreeMap<&str, f64> = query
            .iter()
            .map(|t| {
                let df = chunks.iter().filter(|c| c.tokens.contains_key(t)).count() as f64;
                let w = if df == 0.0 { 0.0 } else { (1.0 + n / df).ln() };
                (t.as_str(), w)
            })
            .collect();
        let mut scored: Vec<ScoredChunk<'_>> = chunks
            .into_iter()
            .map(|chunk| {
                let score = idf
                    .iter()
                    .map(|(t, w)| f64::from(chunk.tokens.get(*t).copied().unwrap_or(0)) * w)
                    .sum();
                ScoredChunk { score, chunk }
            })
            .filter(|s| s.score > 0.0)
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk.doc_id.cmp(&b.chunk.doc_id))
                .then_with(|| a.chunk.chunk_index.cmp(&b.chunk.chunk_index))
        });
        scored.truncate(k);
        Ok(scored)
    }
}
