use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;

use super::{EmbeddingVector, VectorError};

/// Source of question embeddings.
#[async_trait]
pub trait Embedder: Send + Sync {
    fn backend_id(&self) -> &str;

    fn dimension(&self) -> usize;

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VectorError>;
}

/// Embed one question, checking the backend's declared dimension.
pub async fn embed(text: &str, backend: &dyn Embedder) -> Result<EmbeddingVector, VectorError> {
    if text.trim().is_empty() {
        return Err(VectorError::EmptyText);
    }
    let mut vectors = backend.embed_batch(&[text.to_string()]).await?;
    let vector = vectors
        .pop()
        .ok_or_else(|| VectorError::BackendUnavailable("backend returned no vector".into()))?;
    if vector.dimension() != backend.dimension() {
        return Err(VectorError::DimensionMismatch {
            expected: backend.dimension(),
            actual: vector.dimension(),
        });
    }
    Ok(vector)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// HTTP embedding endpoint: `{model, input: [..]}` in, `{vectors: [[..]]}` out.
pub struct HttpEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        Self {
            client: reqwest::Client::builder().timeout(timeout).build().unwrap_or_default(),
            endpoint: endpoint.into(),
            model: model.into(),
            dimension,
        }
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn backend_id(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VectorError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest {
                model: &self.model,
                input: texts,
            })
            .send()
            .await
            .map_err(|e| VectorError::BackendUnavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(VectorError::BackendUnavailable(format!("HTTP {status}")));
        }
        let body: EmbedResponse = response
            .json()
            .await
            .map_err(|e| VectorError::BackendUnavailable(format!("bad response body: {e}")))?;
        body.vectors
            .into_iter()
            .map(|values| {
                let vector = EmbeddingVector::new(values)?;
                if vector.dimension() != self.dimension {
                    return Err(VectorError::DimensionMismatch {
                        expected: self.dimension,
                        actual: vector.dimension(),
                    });
                }
                Ok(vector)
            })
            .collect()
    }
}

/// Offline, deterministic embedder: signed feature hashing of word unigrams
/// and character trigrams, L2-normalized.
pub struct HashingEmbedder {
    backend_id: String,
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            backend_id: format!("hashing-{dimension}"),
            dimension,
        }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0f32; self.dimension];
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        for word in &words {
            self.accumulate(&mut values, word.as_bytes(), 1.0);
            let padded: Vec<char> = format!("#{word}#").chars().collect();
            for gram in padded.windows(3) {
                let gram: String = gram.iter().collect();
                self.accumulate(&mut values, gram.as_bytes(), 0.5);
            }
        }
        if words.is_empty() {
            self.accumulate(&mut values, lower.as_bytes(), 1.0);
        }
        let norm = values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v = (f64::from(*v) / norm) as f32;
            }
        } else {
            values[0] = 1.0;
        }
        EmbeddingVector(values)
    }

    fn accumulate(&self, values: &mut [f32], feature: &[u8], weight: f32) {
        let h = fnv1a(feature);
        let slot = (h % self.dimension as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        values[slot] += sign * weight;
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[async_trait]
impl Embedder for HashingEmbedder {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VectorError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// One recorded embedding: a line of the embedding fixture file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub model: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Replays embeddings recorded in a line-delimited fixture file.
pub struct FixtureEmbedder {
    backend_id: String,
    dimension: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FixtureEmbedder {
    pub fn new(
        backend_id: impl Into<String>,
        dimension: usize,
        records: Vec<EmbeddingRecord>,
    ) -> Result<Self, VectorError> {
        let backend_id = backend_id.into();
        let mut vectors = HashMap::new();
        for record in records {
            if record.model != backend_id {
                continue;
            }
            if record.vector.dimension() != dimension {
                return Err(VectorError::DimensionMismatch {
                    expected: dimension,
                    actual: record.vector.dimension(),
                });
            }
            vectors.insert(record.text, record.vector);
        }
        Ok(Self {
            backend_id,
            dimension,
            vectors,
        })
    }

    pub fn load(path: impl AsRef<Path>, backend_id: impl Into<String>, dimension: usize) -> Result<Self, VectorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| VectorError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<EmbeddingRecord>(l)
                    .map_err(|e| VectorError::MalformedIndex(format!("fixture line: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(backend_id, dimension, records)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[async_trait]
impl Embedder for FixtureEmbedder {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VectorError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| VectorError::FixtureMiss(t.clone()))
            })
            .collect()
    }
}

/// Forwards to an inner embedder and appends every result to a fixture file.
pub struct RecordingEmbedder<E> {
    inner: E,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<E: Embedder> RecordingEmbedder<E> {
    pub fn new(inner: E, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

#[async_trait]
impl<E: Embedder> Embedder for RecordingEmbedder<E> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VectorError> {
        let vectors = self.inner.embed_batch(texts).await?;
        let mut lines = String::new();
        for (text, vector) in texts.iter().zip(&vectors) {
            let record = EmbeddingRecord {
                model: self.inner.backend_id().to_string(),
                text: text.clone(),
                vector: vector.clone(),
            };
            lines.push_str(&serde_json::to_string(&record).unwrap_or_default());
            lines.push('\n');
        }
        let io = |e| VectorError::Io {
            path: self.path.display().to_string(),
            source: e,
        };
        let _guard = self.lock.lock().await;
        let mut file = tokio::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .await
            .map_err(io)?;
        file.write_all(lines.as_bytes()).await.map_err(io)?;
        file.flush().await.map_err(io)?;
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::cosine;

    #[tokio::test]
    async fn hashing_is_deterministic_and_normalized() {
        let e = HashingEmbedder::new(768);
        let a = embed("Deals in Madagascar over 5000 ha", &e).await.unwrap();
        let b = embed("Deals in Madagascar over 5000 ha", &e).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 768);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let near = embed("deals in madagascar larger than 5000 hectares", &e)
            .await
            .unwrap();
        let far = embed("investors headquartered in Singapore", &e).await.unwrap();
        assert!(cosine(&a, &near).unwrap() > cosine(&a, &far).unwrap());
        assert_eq!(embed("?!", &e).await.unwrap().dimension(), 768);
    }

    #[tokio::test]
    async fn empty_text_is_rejected() {
        let e = HashingEmbedder::new(8);
        assert!(matches!(embed("  ", &e).await, Err(VectorError::EmptyText)));
    }

    #[tokio::test]
    async fn fixture_replays_bit_exact() {
        let recorded = EmbeddingVector::new((0..768).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let fixture = FixtureEmbedder::new(
            "all-mpnet-base-v2",
            768,
            vec![EmbeddingRecord {
                model: "all-mpnet-base-v2".into(),
                text: "q".into(),
                vector: recorded.clone(),
            }],
        )
        .unwrap();
        let got = embed("q", &fixture).await.unwrap();
        assert_eq!(
            got.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            recorded.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(matches!(
            embed("other", &fixture).await,
            Err(VectorError::FixtureMiss(_))
        ));
    }

    #[tokio::test]
    async fn fixture_dimension_mismatch() {
        let short = EmbeddingVector::new(vec![1.0; 384]).unwrap();
        let err = FixtureEmbedder::new(
            "m",
            768,
            vec![EmbeddingRecord {
                model: "m".into(),
                text: "q".into(),
                vector: short,
            }],
        )
        .err()
        .unwrap();
        assert!(matches!(
            err,
            VectorError::DimensionMismatch {
                expected: 768,
                actual: 384
            }
        ));
    }

    #[tokio::test]
    async fn recording_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let recorder = RecordingEmbedder::new(HashingEmbedder::new(16), &path);
        let live = embed("deals in Ghana", &recorder).await.unwrap();
        let replay = FixtureEmbedder::load(&path, "hashing-16", 16).unwrap();
        assert_eq!(embed("deals in Ghana", &replay).await.unwrap(), live);
    }
}
