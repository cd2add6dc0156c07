//! Semantic branch: a 1536-dim embedding of the raw source text.
//!
//! Embeddings come from a provider. The stub provider is a deterministic
//! hash-seeded draw, the remote provider speaks a one-route JSON protocol.
//! Inputs above the token budget are split into overlapping windows whose
//! embeddings are averaged.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::{http, Semaphore};

pub const SEMANTIC_DIM: usize = 1536;
pub const ENDPOINT_ENV: &str = "VLF_EMBED_ENDPOINT";

/// Sink call fragments that earn the stub's marker bonus on dimension 0.
pub const SINK_MARKERS: &[&str] = &[
    "execute(",
    "executeQuery(",
    "system(",
    "popen(",
    "strcpy(",
    "strcat(",
    "sprintf(",
    "gets(",
    "exec(",
    "eval(",
    "pickle.loads(",
    "yaml.load(",
    "readObject(",
];
pub const MARKER_BONUS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provider {
    Stub { seed: u64 },
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub provider: Provider,
    pub max_tokens: usize,
    pub window_overlap_fraction: f64,
    pub dim: usize,
    /// In-flight request bound for the remote provider.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::stub(0)
    }
}

impl EmbedderConfig {
    pub fn stub(seed: u64) -> Self {
        Self {
            provider: Provider::Stub { seed },
            max_tokens: 4096,
            window_overlap_fraction: 0.25,
            dim: SEMANTIC_DIM,
            concurrency: default_concurrency(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            provider: Provider::Remote {
                endpoint: endpoint.into(),
            },
            ..Self::stub(0)
        }
    }

    /// Applies `VLF_EMBED_ENDPOINT` to a remote provider.
    pub fn with_env_overrides(mut self) -> Self {
        if let (Provider::Remote { endpoint }, Ok(env)) =
            (&mut self.provider, std::env::var(ENDPOINT_ENV))
        {
            if !env.is_empty() {
                *endpoint = env;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.window_overlap_fraction) {
            return Err("window_overlap_fraction must be in [0, 1)".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEmbedding {
    pub vector: Array1<f64>,
}

/// Byte-length token estimate: `ceil(len / 4)`.
pub fn approx_token_count(text: &str) -> usize {
    text.len().div_ceil(4)
}

fn floor_char_boundary(text: &str, mut i: usize) -> usize {
    i = i.min(text.len());
    while !text.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Overlapping windows of at most `max_tokens` tokens each. Text within the
/// budget is a single window.
pub fn windows<'a>(text: &'a str, cfg: &EmbedderConfig) -> Vec<&'a str> {
    if approx_token_count(text) <= cfg.max_tokens {
        return vec![text];
    }
    let width = cfg.max_tokens * 4;
    let stride = ((width as f64) * (1.0 - cfg.window_overlap_fraction))
        .floor()
        .max(1.0) as usize;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = floor_char_boundary(text, start + width);
        // a window narrower than one code point still has to advance
        let end = if end <= start {
            text.len().min(start + width.max(4))
        } else {
            end
        };
        let end = floor_char_boundary(text, end)
            .max(start + 1)
            .min(text.len());
        out.push(&text[start..end]);
        if end >= text.len() {
            break;
        }
        let next = floor_char_boundary(text, start + stride);
        start = if next > start { next } else { end };
    }
    out
}

/// The hash-seeded uniform draw, before the marker bonus.
pub fn stub_draw(text: &str, seed: u64, dim: usize) -> Array1<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(Sha256::digest(text.as_bytes()));
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    Array1::from_shape_simple_fn(dim, || rng.random_range(-1.0..=1.0))
}

pub fn has_sink_marker(text: &str) -> bool {
    SINK_MARKERS.iter().any(|m| text.contains(m))
}

/// Deterministic stand-in for a code language model.
pub fn stub_embed(text: &str, seed: u64) -> Array1<f64> {
    stub_embed_dim(text, seed, SEMANTIC_DIM)
}

fn stub_embed_dim(text: &str, seed: u64, dim: usize) -> Array1<f64> {
    let mut v = stub_draw(text, seed, dim);
    if dim > 0 && has_sink_marker(text) {
        v[0] += MARKER_BONUS;
    }
    v
}

fn limiter(endpoint: &str, permits: usize) -> Arc<Semaphore> {
    static LIMITERS: OnceLock<Mutex<HashMap<String, Arc<Semaphore>>>> = OnceLock::new();
    let map = LIMITERS.get_or_init(Default::default);
    let mut map = map.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(endpoint.to_string())
        .or_insert_with(|| Arc::new(Semaphore::new(permits)))
        .clone()
}

fn remote_embed(
    endpoint: &str,
    text: &str,
    cfg: &EmbedderConfig,
) -> Result<Array1<f64>, EmbedError> {
    let sem = limiter(endpoint, cfg.concurrency);
    let _permit = sem.acquire();
    let reply = http::post_json(
        &http::join(endpoint, "embed"),
        &serde_json::json!({ "text": text }),
        Duration::from_millis(cfg.timeout_ms),
    )
    .map_err(EmbedError::ProviderUnavailable)?;
    let values = reply
        .get("embedding")
        .and_then(|e| e.as_array())
        .ok_or_else(|| {
            EmbedError::ProviderUnavailable("reply lacks an `embedding` array".into())
        })?;
    let vector: Vec<f64> = values
        .iter()
        .map(|x| x.as_f64())
        .collect::<Option<_>>()
        .ok_or_else(|| EmbedError::ProviderUnavailable("non-numeric embedding entry".into()))?;
    if vector.len() != cfg.dim {
        return Err(EmbedError::DimensionMismatch {
            expected: cfg.dim,
            got: vector.len(),
        });
    }
    Ok(Array1::from(vector))
}

fn embed_window(text: &str, cfg: &EmbedderConfig) -> Result<Array1<f64>, EmbedError> {
    match &cfg.provider {
        Provider::Stub { seed } => Ok(stub_embed_dim(text, *seed, cfg.dim)),
        Provider::Remote { endpoint } => remote_embed(endpoint, text, cfg),
    }
}

/// Embeds `text`, averaging over windows when it exceeds the token budget.
pub fn embed_source(text: &str, cfg: &EmbedderConfig) -> Result<SemanticEmbedding, EmbedError> {
    let parts = windows(text, cfg);
    let mut sum = Array1::zeros(cfg.dim);
    for part in &parts {
        sum += &embed_window(part, cfg)?;
    }
    Ok(SemanticEmbedding {
        vector: sum / parts.len() as f64,
    })
}
