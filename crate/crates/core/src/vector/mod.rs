//! Question embeddings and exact top-k similarity search.

mod embed;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

pub use embed::{embed, Embedder, EmbeddingRecord, FixtureEmbedder, HashingEmbedder, HttpEmbedder, RecordingEmbedder};

pub const DEFAULT_DIMENSION: usize = 768;
pub const DEFAULT_EMBEDDING_MODEL: &str = "all-mpnet-base-v2";
pub const DEFAULT_K: usize = 5;

const INDEX_MAGIC: &str = "nl2api-index";
const INDEX_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate entry id `{0}` in index")]
    DuplicateId(String),
    #[error("no recorded embedding for text {0:?}")]
    FixtureMiss(String),
    #[error("malformed index file: {0}")]
    MalformedIndex(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Fixed-length embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::DimensionMismatch { expected: 1, actual: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = VectorError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// `dot(a, b) / (|a| |b|)`, computed in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    if a.dimension() != b.dimension() {
        return Err(VectorError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub entry_id: String,
    pub similarity: f64,
}

/// Immutable set of `(entry_id, vector)` pairs sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    backend_id: String,
    dimension: usize,
    entries: Vec<(String, EmbeddingVector)>,
}

impl VectorIndex {
    pub fn new(
        backend_id: impl Into<String>,
        dimension: usize,
        entries: Vec<(String, EmbeddingVector)>,
    ) -> Result<Self, VectorError> {
        let backend_id = backend_id.into();
        if backend_id.is_empty() || backend_id.contains(char::is_whitespace) {
            return Err(VectorError::MalformedIndex(format!(
                "backend id `{backend_id}` must be a non-empty token"
            )));
        }
        let mut seen = HashSet::new();
        for (id, vector) in &entries {
            if id.is_empty() || id.contains(['\n', '\r']) {
                return Err(VectorError::MalformedIndex(format!("invalid entry id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(VectorError::DuplicateId(id.clone()));
            }
            if vector.dimension() != dimension {
                return Err(VectorError::DimensionMismatch {
                    expected: dimension,
                    actual: vector.dimension(),
                });
            }
            if vector.norm() == 0.0 {
                return Err(VectorError::ZeroVector);
            }
        }
        Ok(Self {
            backend_id,
            dimension,
            entries,
        })
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    pub fn vector(&self, entry_id: &str) -> Option<&EmbeddingVector> {
        self.entries.iter().find(|(id, _)| id == entry_id).map(|(_, v)| v)
    }

    /// Exact scan: the `min(k, len)` most similar entries, similarity
    /// descending, ties broken by ascending entry id.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Hit>, VectorError> {
        if k == 0 {
            return Err(VectorError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let mut hits = self
            .entries
            .iter()
            .map(|(id, v)| {
                cosine(query, v).map(|similarity| Hit {
                    entry_id: id.clone(),
                    similarity,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(hits)
    }

    /// Header line, one entry id per line, then `count * dimension` little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{INDEX_MAGIC} {INDEX_VERSION} {} {} {}\n",
            self.backend_id,
            self.dimension,
            self.entries.len()
        )
        .into_bytes();
        for (id, _) in &self.entries {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        for (_, vector) in &self.entries {
            for value in vector.values() {
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VectorError> {
        let mut reader = std::io::Cursor::new(bytes);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| VectorError::MalformedIndex(e.to_string()))?;
        let parts: Vec<&str> = header.trim_end().split(' ').collect();
        let [magic, version, backend_id, dimension, count] = parts.as_slice() else {
            return Err(VectorError::MalformedIndex(format!("bad header {header:?}")));
        };
        if *magic != INDEX_MAGIC || *version != INDEX_VERSION {
            return Err(VectorError::MalformedIndex(format!(
                "unsupported header {magic} {version}"
            )));
        }
        let dimension: usize = dimension
            .parse()
            .map_err(|_| VectorError::MalformedIndex(format!("bad dimension `{dimension}`")))?;
        let count: usize = count
            .parse()
            .map_err(|_| VectorError::MalformedIndex(format!("bad count `{count}`")))?;

        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let mut line = String::new();
            let read = reader
                .read_line(&mut line)
                .map_err(|e| VectorError::MalformedIndex(e.to_string()))?;
            if read == 0 || !line.ends_with('\n') {
                return Err(VectorError::MalformedIndex("truncated id table".into()));
            }
            line.pop();
            ids.push(line);
        }

        let mut floats = Vec::new();
        reader
            .read_to_end(&mut floats)
            .map_err(|e| VectorError::MalformedIndex(e.to_string()))?;
        if floats.len() != count * dimension * 4 {
            return Err(VectorError::MalformedIndex(format!(
                "expected {} vector bytes, found {}",
                count * dimension * 4,
                floats.len()
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for (i, id) in ids.into_iter().enumerate() {
            let chunk = &floats[i * dimension * 4..(i + 1) * dimension * 4];
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((id, EmbeddingVector::new(values)?));
        }
        Self::new(*backend_id, dimension, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VectorError> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| io_error(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| io_error(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VectorError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> VectorError {
    VectorError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.entry_id.cmp(&b.entry_id))
}

/// Embed every corpus question, keeping corpus order.
///
/// Questions are sent in batches of `batch_size` with at most `parallelism`
/// batches in flight.
pub async fn build_index(
    corpus: &Corpus,
    backend: &dyn Embedder,
    batch_size: usize,
    parallelism: usize,
) -> Result<VectorIndex, VectorError> {
    if corpus.is_empty() {
        return Err(VectorError::EmptyCorpus);
    }
    let questions: Vec<String> = corpus.iter().map(|e| e.question.clone()).collect();
    let batches: Vec<Vec<String>> = questions.chunks(batch_size.max(1)).map(<[String]>::to_vec).collect();
    let embedded: Vec<Vec<EmbeddingVector>> = stream::iter(batches)
        .map(|batch| async move {
            let vectors = backend.embed_batch(&batch).await?;
            if vectors.len() != batch.len() {
                return Err(VectorError::BackendUnavailable(format!(
                    "backend returned {} vectors for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            Ok(vectors)
        })
        .buffered(parallelism.max(1))
        .try_collect()
        .await?;

    let dimension = backend.dimension();
    let entries = corpus
        .iter()
        .map(|e| e.id.clone())
        .zip(embedded.into_iter().flatten())
        .collect();
    VectorIndex::new(backend.backend_id(), dimension, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_reference_values() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let c = cosine(&v(&[1.0, 0.0]), &v(&[s, s])).unwrap();
        assert!((c - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(VectorError::ZeroVector)
        ));
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(VectorError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![f32::NAN]),
            Err(VectorError::NonFinite)
        ));
    }

    #[test]
    fn top_k_ties_and_overflow() {
        let index = VectorIndex::new(
            "test",
            2,
            vec![
                ("b".into(), v(&[1.0, 0.0])),
                ("a".into(), v(&[2.0, 0.0])),
                ("c".into(), v(&[0.0, 1.0])),
            ],
        )
        .unwrap();
        let hits = index.top_k(&v(&[1.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.entry_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert!(matches!(index.top_k(&v(&[1.0, 0.0]), 0), Err(VectorError::InvalidK)));
        assert!(matches!(
            index.top_k(&v(&[1.0, 0.0, 0.0]), 1),
            Err(VectorError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn index_invariants() {
        assert!(matches!(
            VectorIndex::new("m", 2, vec![("a".into(), v(&[1.0, 0.0])), ("a".into(), v(&[0.0, 1.0]))]),
            Err(VectorError::DuplicateId(_))
        ));
        assert!(matches!(
            VectorIndex::new("m", 2, vec![("a".into(), v(&[1.0]))]),
            Err(VectorError::DimensionMismatch { .. })
        ));
        assert!(VectorIndex::new("has space", 1, vec![]).is_err());
    }

    #[test]
    fn persistence_round_trip_is_bit_exact() {
        let index = VectorIndex::new(
            "all-mpnet-base-v2",
            3,
            vec![
                ("q1".into(), v(&[0.1, -0.2, 0.300_001])),
                ("q2".into(), v(&[1e-30, 5.5, -7.25])),
            ],
        )
        .unwrap();
        let bytes = index.to_bytes();
        assert!(bytes.starts_with(b"nl2api-index v1 all-mpnet-base-v2 3 2\n"));
        let back = VectorIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, index);
        for ((_, a), (_, b)) in back.entries().iter().zip(index.entries()) {
            let bits_a: Vec<u32> = a.values().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u32> = b.values().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(matches!(
            VectorIndex::from_bytes(&truncated),
            Err(VectorError::MalformedIndex(_))
        ));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-100.0f32..100.0, 8),
            b in proptest::collection::vec(-100.0f32..100.0, 8),
        ) {
            let (a, b) = (v(&a), v(&b));
            if a.norm() > 0.0 && b.norm() > 0.0 {
                let ab = cosine(&a, &b).unwrap();
                let ba = cosine(&b, &a).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ab.abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn persistence_preserves_ranking(
            rows in proptest::collection::vec(proptest::collection::vec(0.01f32..1.0, 4), 1..12),
            query in proptest::collection::vec(-1.0f32..1.0, 4),
        ) {
            let entries = rows.iter().enumerate().map(|(i, r)| (format!("e{i:02}"), v(r))).collect();
            let index = VectorIndex::new("m", 4, entries).unwrap();
            let query = v(&query);
            prop_assume!(query.norm() > 0.0);
            let back = VectorIndex::from_bytes(&index.to_bytes()).unwrap();
            prop_assert_eq!(index.top_k(&query, 100).unwrap(), back.top_k(&query, 100).unwrap());
        }
    }
}
