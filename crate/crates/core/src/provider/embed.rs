use std::time::Duration;

use serde_json::{json, Value};

use super::http::{post_json, Gate};
use super::{Embedder, ProviderConfig, ProviderError};
use crate::index::tokenize;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Offline encoder: hashed bag of words. Each index token lands in bucket
/// `fnv1a64(token) mod d`; bucket counts are L2-normalized. Text with no
/// tokens maps to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder { dimension }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0f64; self.dimension];
        for token in tokenize(text) {
            counts[(fnv1a64(token.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dimension];
        }
        counts.into_iter().map(|c| (c / norm) as f32).collect()
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Remote encoder. Sends `{"model", "texts", "input"}` and accepts either
/// `{"embeddings": [[...]]}` or `{"data": [{"embedding": [...]}]}`.
pub struct HttpEmbedder {
    cfg: ProviderConfig,
    dimension: usize,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig, dimension: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        HttpEmbedder { cfg, dimension, agent, gate }
    }

    fn parse(&self, body: &Value, expected: usize) -> Result<Vec<Vec<f32>>, ProviderError> {
        let rows: Vec<&Value> = if let Some(rows) = body.get("embeddings").and_then(Value::as_array) {
            rows.iter().collect()
        } else if let Some(data) = body.get("data").and_then(Value::as_array) {
            data.iter().map(|d| d.get("embedding").unwrap_or(&Value::Null)).collect()
        } else {
            return Err(ProviderError::Malformed("missing \"embeddings\" array".into()));
        };
        if rows.len() != expected {
            return Err(ProviderError::Malformed(format!("expected {expected} embeddings, got {}", rows.len())));
        }
        rows.iter()
            .map(|row| {
                let v: Vec<f32> = row
                    .as_array()
                    .ok_or_else(|| ProviderError::Malformed("embedding is not an array".into()))?
                    .iter()
                    .map(|x| x.as_f64().map(|f| f as f32).ok_or_else(|| ProviderError::Malformed("non-numeric component".into())))
                    .collect::<Result<_, _>>()?;
                if v.len() != self.dimension {
                    return Err(ProviderError::Malformed(format!("embedding has {} dims, expected {}", v.len(), self.dimension)));
                }
                Ok(v)
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let _permit = self.gate.acquire();
        let payload = json!({ "model": self.cfg.model, "texts": texts, "input": texts });
        let mut last = ProviderError::Transport("no attempt made".into());
        for _ in 0..=self.cfg.max_retries {
            match post_json(&self.agent, &self.cfg, &payload).and_then(|body| self.parse(&body, texts.len())) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}
