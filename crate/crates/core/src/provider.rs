//! Embedding providers: a deterministic hash-seeded stub and an HTTP client
//! for an external encoder sidecar.
//!
//! Sidecar wire protocol:
//!
//! ```text
//! POST /embed  {"type":"text","text":"…"} | {"type":"image","data_base64":"…"}
//!           →  {"dim": d, "vec": [f32; d]}
//! GET /health → 200
//! ```

use std::time::Duration;

use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::store::EmbeddingVector;

#[derive(Clone, Copy, Debug)]
pub enum Content<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

/// Turns query content into an embedding in the corpus space.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, content: Content<'_>) -> Result<EmbeddingVector>;
}

/// Deterministic pseudo-random unit vector keyed by SHA-256 of
/// `(seed, content kind, content)`.
///
/// Coordinates are drawn uniformly from `[-1, 1)` using only integer
/// operations on the ChaCha8 stream, so output is identical on every
/// platform.
pub fn stub_embed(content: Content<'_>, dimension: usize, seed: u64) -> EmbeddingVector {
    let mut hasher = Sha256::new();
    hasher.update(b"loupe-stub-v1");
    hasher.update(seed.to_le_bytes());
    match content {
        Content::Text(t) => {
            hasher.update([0u8]);
            hasher.update(t.as_bytes());
        }
        Content::Image(b) => {
            hasher.update([1u8]);
            hasher.update(b);
        }
    }
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let values: Vec<f32> = (0..dimension)
            .map(|_| (rng.next_u32() >> 8) as f32 / (1u32 << 23) as f32 - 1.0)
            .collect();
        if let Ok(v) = EmbeddingVector::new(values).and_then(|v| v.normalize()) {
            return v;
        }
    }
}

#[derive(Clone, Debug)]
pub struct StubProvider {
    pub dimension: usize,
    pub seed: u64,
}

impl EmbeddingProvider for StubProvider {
    fn embed(&self, content: Content<'_>) -> Result<EmbeddingVector> {
        Ok(stub_embed(content, self.dimension, self.seed))
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum EmbedRequest<'a> {
    Text { text: &'a str },
    Image { data_base64: String },
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vec: Vec<f32>,
}

/// Client for an encoder sidecar speaking the `/embed` protocol.
#[derive(Clone, Debug)]
pub struct RemoteProvider {
    base_url: String,
    timeout: Duration,
    dimension: usize,
}

impl RemoteProvider {
    pub fn new(base_url: impl Into<String>, timeout: Duration, dimension: usize) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            timeout,
            dimension,
        }
    }

    // A fresh blocking client per call keeps the provider usable from any
    // thread, including ones owned by an async runtime.
    fn client(&self) -> Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .connect_timeout(self.timeout)
            .build()
            .map_err(|e| Error::Provider(e.to_string()))
    }

    pub fn health(&self) -> Result<()> {
        let resp = self
            .client()?
            .get(format!("{}/health", self.base_url))
            .send()
            .map_err(unavailable)?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(Error::ProviderUnavailable(format!("health check returned {}", resp.status())))
        }
    }
}

fn unavailable(e: reqwest::Error) -> Error {
    Error::ProviderUnavailable(e.to_string())
}

impl EmbeddingProvider for RemoteProvider {
    fn embed(&self, content: Content<'_>) -> Result<EmbeddingVector> {
        let body = match content {
            Content::Text(text) => EmbedRequest::Text { text },
            Content::Image(bytes) => EmbedRequest::Image {
                data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
            },
        };
        let resp = self
            .client()?
            .post(format!("{}/embed", self.base_url))
            .json(&body)
            .send()
            .map_err(unavailable)?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Error::ProviderUnavailable(format!("sidecar returned {status}")));
        }
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            return Err(Error::Provider(format!("sidecar returned {status}: {detail}")));
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| Error::Provider(format!("malformed sidecar response: {e}")))?;
        if parsed.vec.len() != parsed.dim {
            return Err(Error::Provider(format!(
                "sidecar declared dim {} but sent {} values",
                parsed.dim,
                parsed.vec.len()
            )));
        }
        if parsed.dim != self.dimension {
            return Err(Error::Provider(format!(
                "sidecar dimension {} does not match corpus dimension {}",
                parsed.dim, self.dimension
            )));
        }
        EmbeddingVector::new(parsed.vec)?.normalize()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Stub,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    #[serde(default)]
    pub remote_url: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub stub_seed: u64,
}

fn default_timeout_ms() -> u64 {
    5_000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Stub,
            remote_url: None,
            timeout_ms: default_timeout_ms(),
            stub_seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn build(&self, dimension: usize) -> Result<Box<dyn EmbeddingProvider>> {
        match (self.mode, &self.remote_url) {
            (ProviderMode::Stub, None) => Ok(Box::new(StubProvider {
                dimension,
                seed: self.stub_seed,
            })),
            (ProviderMode::Remote, Some(url)) => Ok(Box::new(RemoteProvider::new(
                url.clone(),
                Duration::from_millis(self.timeout_ms),
                dimension,
            ))),
            (ProviderMode::Stub, Some(_)) => {
                Err(Error::Config("remote_url is only valid with the remote provider".into()))
            }
            (ProviderMode::Remote, None) => {
                Err(Error::Config("the remote provider needs remote_url".into()))
            }
        }
    }
}
