//! Embedding providers: an HTTP embeddings-style API client and a
//! deterministic offline stub.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MetricError;

/// Text-to-vector contract. Same input must yield the same output for a
/// given provider and model.
pub trait EmbeddingProvider: Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError>;

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, MetricError> {
        tokens.iter().map(|t| self.embed_text(t)).collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Offline embedder: a unit vector drawn from a ChaCha stream seeded by the
/// SHA-256 of the input text. Identical inputs map to identical vectors, so
/// identity pairs score cosine 1 without any network access.
pub struct StubEmbedder {
    dimension: usize,
}

impl StubEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2);
        StubEmbedder { dimension }
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder::new(64)
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn name(&self) -> &str {
        "stub"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// Configuration of an embeddings-style HTTP endpoint (text in, vector out).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub name: String,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if the service needs one.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    dimension: std::sync::Mutex<Option<usize>>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, MetricError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| MetricError::Provider {
                provider: config.name.clone(),
                message: e.to_string(),
            })?;
        Ok(HttpEmbedder {
            config,
            dimension: std::sync::Mutex::new(None),
            client,
        })
    }

    fn provider_err(&self, message: impl Into<String>) -> MetricError {
        MetricError::Provider {
            provider: self.config.name.clone(),
            message: message.into(),
        }
    }

    fn request(&self, inputs: Vec<&str>) -> Result<Vec<Vec<f64>>, MetricError> {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .json(&EmbeddingRequest {
                model: &self.config.model,
                input: inputs,
            });
        if let Some(var) = &self.config.auth_env {
            let token = std::env::var(var)
                .map_err(|_| self.provider_err(format!("auth variable {var} not set")))?;
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| self.provider_err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(self.provider_err(format!("HTTP {}", resp.status())));
        }
        let body: EmbeddingResponse = resp
            .json()
            .map_err(|e| self.provider_err(format!("malformed response: {e}")))?;
        let vectors: Vec<Vec<f64>> = body.data.into_iter().map(|r| r.embedding).collect();

        let mut dim = self.dimension.lock().unwrap();
        for v in &vectors {
            match *dim {
                None => *dim = Some(v.len()),
                Some(expected) if expected != v.len() => {
                    return Err(MetricError::Dimension {
                        expected,
                        got: v.len(),
                    })
                }
                _ => {}
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(self.provider_err("non-finite embedding component"));
            }
        }
        Ok(vectors)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn dimension(&self) -> usize {
        self.dimension.lock().unwrap().unwrap_or(0)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let mut vectors = self.request(vec![text])?;
        vectors
            .pop()
            .ok_or_else(|| self.provider_err("empty embedding response"))
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, MetricError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = self.request(tokens.iter().map(String::as_str).collect())?;
        if vectors.len() != tokens.len() {
            return Err(self.provider_err(format!(
                "expected {} embeddings, got {}",
                tokens.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }
}
