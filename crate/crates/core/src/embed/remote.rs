//! Client for the sentence-embedding sidecar.
//!
//! Wire contract: `POST {endpoint}/embed` with `{"texts": [...], "normalize": true}`
//! answered by `{"model_id", "dim", "vectors", "truncated"}`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector};

pub const DEFAULT_BATCH: usize = 64;
pub const ENDPOINT_ENV: &str = "ABX_EMBED_ENDPOINT";

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    normalize: bool,
}

#[derive(Deserialize)]
struct EmbedResponse {
    model_id: String,
    dim: usize,
    vectors: Vec<Vec<f32>>,
    #[serde(default)]
    truncated: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteEmbeddings {
    pub model_id: String,
    pub dim: usize,
    pub vectors: Vec<EmbeddingVector>,
    /// Texts the service had to cut at its context limit.
    pub truncated: usize,
}

#[derive(Clone, Debug)]
pub struct RemoteClient {
    endpoint: String,
    timeout: Duration,
    max_attempts: u32,
    backoff: Duration,
    batch_size: usize,
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteClient {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout,
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            batch_size: DEFAULT_BATCH,
        }
    }

    /// Delay before the second attempt; it doubles for each further attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.clamp(1, DEFAULT_BATCH);
        self
    }

    /// Embeds `texts` in batches, returning vectors in input order.
    pub fn fetch(&self, texts: &[String]) -> Result<RemoteEmbeddings, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| EmbedError::Remote {
                attempts: 0,
                last: e.to_string(),
            })?;
        let url = format!("{}/embed", self.endpoint);

        let mut out = RemoteEmbeddings {
            model_id: String::new(),
            dim: 0,
            vectors: Vec::with_capacity(texts.len()),
            truncated: 0,
        };
        for batch in texts.chunks(self.batch_size) {
            let resp = self.post_with_retry(&http, &url, batch)?;
            if out.dim == 0 {
                out.dim = resp.dim;
                out.model_id = resp.model_id;
            } else if resp.dim != out.dim {
                return Err(EmbedError::RemoteDim {
                    expected: out.dim,
                    found: resp.dim,
                });
            }
            out.truncated += resp.truncated.iter().filter(|t| **t).count();
            out.vectors.extend(resp.vectors);
        }
        Ok(out)
    }

    fn post_with_retry(
        &self,
        http: &reqwest::blocking::Client,
        url: &str,
        batch: &[String],
    ) -> Result<ValidBatch, EmbedError> {
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            match post_once(http, url, batch) {
                Ok(resp) => return Ok(resp),
                Err(e) => {
                    log::warn!("embedding request attempt {attempt} failed: {e}");
                    last = e;
                }
            }
        }
        Err(EmbedError::Remote {
            attempts: self.max_attempts,
            last,
        })
    }
}

struct ValidBatch {
    model_id: String,
    dim: usize,
    vectors: Vec<EmbeddingVector>,
    truncated: Vec<bool>,
}

fn post_once(
    http: &reqwest::blocking::Client,
    url: &str,
    batch: &[String],
) -> Result<ValidBatch, String> {
    let resp = http
        .post(url)
        .json(&EmbedRequest {
            texts: batch,
            normalize: true,
        })
        .send()
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    if status != reqwest::StatusCode::OK {
        return Err(format!("HTTP {status}"));
    }
    let body: EmbedResponse = resp.json().map_err(|e| format!("malformed response: {e}"))?;
    if body.dim == 0 {
        return Err("response advertises dim 0".into());
    }
    if body.vectors.len() != batch.len() {
        return Err(format!(
            "expected {} vectors, got {}",
            batch.len(),
            body.vectors.len()
        ));
    }
    let vectors = body
        .vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != body.dim {
                return Err(format!("vector {i} has length {}, advertised {}", v.len(), body.dim));
            }
            EmbeddingVector::new(v).map_err(|e| format!("vector {i}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ValidBatch {
        model_id: body.model_id,
        dim: body.dim,
        vectors,
        truncated: body.truncated,
    })
}

/// Embeds `texts` against `endpoint` with the default retry policy.
pub fn fetch_remote(
    texts: &[String],
    endpoint: &str,
    timeout: Duration,
) -> Result<RemoteEmbeddings, EmbedError> {
    RemoteClient::new(endpoint, timeout).fetch(texts)
}
