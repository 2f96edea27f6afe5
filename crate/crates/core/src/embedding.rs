//! Text-to-vector encoding behind a pluggable provider, plus the similarity
//! math used by clustering and divergence.
//!
//! Two providers: a remote OpenAI-compatible embeddings endpoint (routed
//! through the replay cache so embedding traffic is recordable) and a
//! deterministic local scheme for fully offline runs. The local scheme is a
//! token-hash bag-of-words projected through a seeded random matrix and
//! L2-normalized — only relative geometry matters downstream, and it is a
//! pure function of (text, seed, dim) across platforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ReplayCache, RetryPolicy};
use crate::seeds::derive_seed_parts;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding dimension {0} is below the minimum of 8")]
    DimTooSmall(usize),
    #[error("cannot embed blank text (batch index {0})")]
    BlankText(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("degenerate embedding: zero-norm vector")]
    DegenerateVector,
    #[error("embedding vector contains a non-finite value")]
    NonFinite,
    #[error("remote embedding request failed: {0}")]
    Remote(#[from] crate::gateway::GatewayError),
    #[error("remote endpoint returned {got} vectors for {want} inputs")]
    CountMismatch { got: usize, want: usize },
}

/// A fixed-dimension real vector representing a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::DimTooSmall(0));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which encoder produces vectors, and how requests are batched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub provider: EmbeddingProvider,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingProvider {
    RemoteService { endpoint: String, model: String },
    DeterministicLocal { seed: u64, dim: usize },
}

impl EmbedderSpec {
    pub fn deterministic_local(seed: u64, dim: usize) -> Result<Self, EmbeddingError> {
        if dim < 8 {
            return Err(EmbeddingError::DimTooSmall(dim));
        }
        Ok(EmbedderSpec {
            provider: EmbeddingProvider::DeterministicLocal { seed, dim },
            batch_size: 64,
        })
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        EmbedderSpec {
            provider: EmbeddingProvider::RemoteService {
                endpoint: endpoint.into(),
                model: model.into(),
            },
            batch_size: 64,
        }
    }

    /// Short name for reports, e.g. divergence encoder identity checks.
    pub fn encoder_name(&self) -> String {
        match &self.provider {
            EmbeddingProvider::RemoteService { model, .. } => model.clone(),
            EmbeddingProvider::DeterministicLocal { seed, dim } => {
                format!("deterministic-local(seed={seed},dim={dim})")
            }
        }
    }
}

/// Embed a batch of texts, one vector per text in input order.
pub async fn embed_batch(
    texts: &[String],
    spec: &EmbedderSpec,
    cache: &ReplayCache,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if texts.is_empty() {
        return Err(EmbeddingError::EmptyBatch);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::BlankText(i));
    }
    match &spec.provider {
        EmbeddingProvider::DeterministicLocal { seed, dim } => texts
            .iter()
            .map(|t| Ok(local_embedding(t, *seed, *dim)))
            .collect(),
        EmbeddingProvider::RemoteService { endpoint, model } => {
            remote_embed(texts, endpoint, model, spec.batch_size.max(1), cache).await
        }
    }
}

/// dot(a,b) / (‖a‖·‖b‖), clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch(a.dim(), b.dim()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::DegenerateVector);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Deterministic local scheme
// ---------------------------------------------------------------------------

/// FNV-1a, 64-bit. Stable across platforms, unlike the std hasher.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn lowercase_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// u64 → f64 uniform in [-1, 1). Hand-rolled so the mapping never shifts
/// under dependency upgrades.
fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn local_embedding(text: &str, seed: u64, dim: usize) -> EmbeddingVector {
    let mut tokens = lowercase_tokens(text);
    if tokens.is_empty() {
        // No alphanumeric content: fall back to hashing the raw text so the
        // vector is still nonzero and deterministic.
        tokens.push(text.to_string());
    }
    let mut acc = vec![0.0f64; dim];
    for token in &tokens {
        let token_seed = derive_seed_parts(seed, &[fnv1a64(token.as_bytes())]);
        let mut rng = ChaCha8Rng::seed_from_u64(token_seed);
        for slot in acc.iter_mut() {
            *slot += unit_uniform(&mut rng);
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in acc.iter_mut() {
            *v /= norm;
        }
    }
    EmbeddingVector { values: acc }
}

// ---------------------------------------------------------------------------
// Remote provider (OpenAI-compatible embeddings endpoint)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

async fn remote_embed(
    texts: &[String],
    endpoint: &str,
    model: &str,
    batch_size: usize,
    cache: &ReplayCache,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let client = reqwest::Client::new();
    let retry = RetryPolicy::default();
    let api_key = std::env::var(crate::gateway::API_KEY_ENV).ok();
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch_size) {
        let key_payload = serde_json::json!({
            "kind": "embedding",
            "endpoint": endpoint,
            "model": model,
            "input": chunk,
        });
        let key = crate::gateway::content_key(&key_payload);
        let body = match cache.lookup(&key)? {
            Some(stored) => stored,
            None => {
                let url = format!("{}/embeddings", endpoint.trim_end_matches('/'));
                let req = EmbeddingRequest { model, input: chunk };
                let body = crate::gateway::post_json_with_retry_auth(
                    &client,
                    &url,
                    &serde_json::to_value(&req).expect("serializable"),
                    &retry,
                    api_key.as_deref(),
                )
                .await?;
                cache.store(&key, &key_payload, &body)?;
                body
            }
        };
        let parsed: EmbeddingResponse =
            serde_json::from_value(body).map_err(|e| crate::gateway::GatewayError::Protocol {
                detail: format!("embedding response: {e}"),
            })?;
        if parsed.data.len() != chunk.len() {
            return Err(EmbeddingError::CountMismatch {
                got: parsed.data.len(),
                want: chunk.len(),
            });
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        for datum in data {
            out.push(EmbeddingVector::new(datum.embedding)?);
        }
    }
    Ok(out)
}
