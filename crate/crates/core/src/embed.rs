//! Record serialization and embedding providers.
//!
//! The default provider hashes padded character n-grams into `D` buckets with
//! a seeded XXH3, applies `ln(1 + count)` and L2-normalizes. It is pure and
//! platform independent. The HTTP provider posts `{model, input}` to an
//! embedding service.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::records::{Dataset, Record};

/// Default hash seed for the local provider.
pub const DEFAULT_HASH_SEED: u64 = 0x005e_ed0f_c4a5_e11e;

/// Render a record as `name: value | name: value`, attributes in record order.
pub fn serialize_record(record: &Record) -> String {
    let mut out = String::new();
    for (i, (name, value)) in record.attributes.iter().enumerate() {
        if i > 0 {
            out.push_str(" | ");
        }
        out.push_str(name);
        out.push_str(": ");
        out.push_str(value);
    }
    out
}

/// A unit-norm vector, or the zero vector for records with no text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
    zero: bool,
}

impl Embedding {
    /// Normalize `raw`; an all-zero input yields a flagged zero embedding.
    pub fn from_raw(mut raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            raw.iter_mut().for_each(|x| *x = 0.0);
            return Self {
                vector: raw,
                zero: true,
            };
        }
        raw.iter_mut().for_each(|x| *x /= norm);
        Self {
            vector: raw,
            zero: false,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Local,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub provider: Provider,
    pub dimension: usize,
    pub ngram: usize,
    pub hash_seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Local,
            dimension: 512,
            ngram: 3,
            hash_seed: DEFAULT_HASH_SEED,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 8 {
            return Err(Error::Config(format!(
                "embedding dimension must be >= 8, got {}",
                self.dimension
            )));
        }
        if self.ngram < 2 {
            return Err(Error::Config(format!(
                "ngram length must be >= 2, got {}",
                self.ngram
            )));
        }
        if self.provider == Provider::Http && self.endpoint.is_none() {
            return Err(Error::Config("http embedding provider needs an endpoint".into()));
        }
        Ok(())
    }
}

pub trait Embedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>>;
}

/// Hashed character n-gram embedder.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dimension: usize,
    ngram: usize,
    seed: u64,
}

impl LocalEmbedder {
    pub fn new(cfg: &EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            dimension: cfg.dimension,
            ngram: cfg.ngram,
            seed: cfg.hash_seed,
        })
    }

    /// Embed one text. The lowercased text is padded with a boundary space on
    /// each side so that short strings sharing a prefix share an n-gram.
    pub fn embed_text(&self, text: &str) -> Embedding {
        let mut counts = vec![0u32; self.dimension];
        let lowered = text.to_lowercase();
        if !lowered.is_empty() {
            let chars: Vec<char> = std::iter::once(' ')
                .chain(lowered.chars())
                .chain(std::iter::once(' '))
                .collect();
            let mut buf = String::new();
            let n = self.ngram.min(chars.len());
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = xxh3_64_with_seed(buf.as_bytes(), self.seed);
                counts[(h % self.dimension as u64) as usize] += 1;
            }
        }
        let raw = counts
            .into_iter()
            .map(|c| (c as f64).ln_1p())
            .collect();
        Embedding::from_raw(raw)
    }
}

impl Embedder for LocalEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        Ok(texts.par_iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Client for an external embedding service.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

impl HttpEmbedder {
    pub fn new(cfg: &EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::EmbeddingProvider(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::EmbeddingProvider(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone().unwrap_or_default(),
            api_key,
        })
    }
}

/// Accepts `{"data":[{"embedding":[...]}, ...]}` or `{"embeddings":[[...], ...]}`.
fn parse_embedding_response(body: &serde_json::Value) -> Result<Vec<Vec<f64>>> {
    let bad = |what: &str| Error::EmbeddingProvider(format!("unexpected response shape: {what}"));
    let rows: Vec<&serde_json::Value> = if let Some(data) = body.get("data").and_then(|d| d.as_array()) {
        data.iter()
            .map(|item| item.get("embedding").ok_or_else(|| bad("data[].embedding")))
            .collect::<Result<_>>()?
    } else if let Some(emb) = body.get("embeddings").and_then(|d| d.as_array()) {
        emb.iter().collect()
    } else {
        return Err(bad("missing data/embeddings"));
    };
    rows.into_iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| bad("embedding is not an array"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad("non-numeric component")))
                .collect()
        })
        .collect()
}

impl Embedder for HttpEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest {
            model: &self.model,
            input: texts,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| Error::EmbeddingProvider(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::EmbeddingProvider(format!("http status {status}")));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| Error::EmbeddingProvider(e.to_string()))?;
        let rows = parse_embedding_response(&body)?;
        if rows.len() != texts.len() {
            return Err(Error::EmbeddingProvider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: r.len(),
            });
        }
        Ok(rows.into_iter().map(Embedding::from_raw).collect())
    }
}

/// Build the configured provider.
pub fn embedder(cfg: &EmbedderConfig) -> Result<Box<dyn Embedder>> {
    Ok(match cfg.provider {
        Provider::Local => Box::new(LocalEmbedder::new(cfg)?),
        Provider::Http => Box::new(HttpEmbedder::new(cfg)?),
    })
}

/// Serialize and embed every record in dataset order.
pub fn embed_dataset(dataset: &Dataset, cfg: &EmbedderConfig) -> Result<Vec<Embedding>> {
    let texts: Vec<String> = dataset.records().iter().map(serialize_record).collect();
    embedder(cfg)?.embed_texts(&texts)
}

pub fn embed_record(record: &Record, cfg: &EmbedderConfig) -> Result<Embedding> {
    let mut out = embedder(cfg)?.embed_texts(&[serialize_record(record)])?;
    Ok(out.remove(0))
}
