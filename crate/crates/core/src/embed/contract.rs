//! Black-box conformance checks for an embedding service. Only the public
//! HTTP contract is used, so the same checks apply to the stub and to the
//! real sidecar.

use std::time::Duration;

use serde_json::{json, Value};

use super::DEFAULT_BATCH;

/// Unit-norm tolerance for vectors returned with `normalize: true`.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ContractCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

struct Probe {
    http: reqwest::blocking::Client,
    base: String,
}

impl Probe {
    fn info(&self) -> Result<Value, String> {
        let resp = self
            .http
            .get(format!("{}/info", self.base))
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status() != reqwest::StatusCode::OK {
            return Err(format!("/info returned HTTP {}", resp.status()));
        }
        resp.json().map_err(|e| format!("/info body: {e}"))
    }

    /// Status code and parsed body of one `/embed` call.
    fn embed(&self, texts: &[String]) -> Result<(u16, Value), String> {
        let resp = self
            .http
            .post(format!("{}/embed", self.base))
            .json(&json!({"texts": texts, "normalize": true}))
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.json().unwrap_or(Value::Null);
        Ok((status, body))
    }

    fn vectors(&self, texts: &[String]) -> Result<(usize, Vec<Vec<f64>>), String> {
        let (status, body) = self.embed(texts)?;
        if status != 200 {
            return Err(format!("/embed returned HTTP {status}"));
        }
        let dim = body["dim"].as_u64().ok_or("response lacks an integer dim")? as usize;
        let vectors = body["vectors"]
            .as_array()
            .ok_or("response lacks vectors")?
            .iter()
            .map(|v| {
                v.as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| "vector is not an array of numbers".to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vectors.len() != texts.len() {
            return Err(format!("{} texts gave {} vectors", texts.len(), vectors.len()));
        }
        Ok((dim, vectors))
    }
}

fn sample_texts() -> Vec<String> {
    [
        "Patient febrile overnight, blood cultures drawn.",
        "Urine culture pending; started on empiric ceftriaxone.",
        "Chest x-ray shows right lower lobe consolidation.",
        "Afebrile, tolerating diet, plan discharge tomorrow.",
        "Wound erythema improving with current regimen.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn check(name: &'static str, outcome: Result<String, String>) -> ContractCheck {
    match outcome {
        Ok(detail) => ContractCheck { name, passed: true, detail },
        Err(detail) => ContractCheck { name, passed: false, detail },
    }
}

fn order_preserved(p: &Probe) -> Result<String, String> {
    let texts = sample_texts();
    let (_, batch) = p.vectors(&texts)?;
    let mut reversed = texts.clone();
    reversed.reverse();
    let (_, back) = p.vectors(&reversed)?;
    for (i, text) in texts.iter().enumerate() {
        let (_, single) = p.vectors(std::slice::from_ref(text))?;
        if single[0] != batch[i] || back[texts.len() - 1 - i] != batch[i] {
            return Err(format!("text {i} got a different vector depending on its position"));
        }
    }
    Ok(format!("{} texts, forward, reversed and one at a time", texts.len()))
}

fn deterministic(p: &Probe) -> Result<String, String> {
    let text = sample_texts().swap_remove(0);
    let (_, twice) = p.vectors(&[text.clone(), text.clone()])?;
    let (_, again) = p.vectors(&[text])?;
    if twice[0] != twice[1] || twice[0] != again[0] {
        return Err("identical text produced different vectors".into());
    }
    Ok("same text within a batch and across calls".into())
}

fn dim_matches_info(p: &Probe) -> Result<String, String> {
    let info = p.info()?;
    let advertised = info["dim"].as_u64().ok_or("/info lacks an integer dim")? as usize;
    let (dim, vectors) = p.vectors(&sample_texts())?;
    if dim != advertised {
        return Err(format!("/info dim {advertised}, /embed dim {dim}"));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(format!("vector of length {} with dim {dim}", v.len()));
    }
    Ok(format!("dim {dim}"))
}

fn unit_norm(p: &Probe) -> Result<String, String> {
    let (_, vectors) = p.vectors(&sample_texts())?;
    let mut worst = 0.0f64;
    for v in &vectors {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((norm - 1.0).abs());
    }
    if worst > NORM_TOLERANCE {
        return Err(format!("norm off by {worst:e}"));
    }
    Ok(format!("max |norm - 1| = {worst:.1e}"))
}

fn batch_cap(p: &Probe) -> Result<String, String> {
    let texts = vec!["note".to_string(); DEFAULT_BATCH + 1];
    let (status, _) = p.embed(&texts)?;
    if status != 400 {
        return Err(format!("{} texts returned HTTP {status}", texts.len()));
    }
    let (status, _) = p.embed(&[])?;
    if status != 400 {
        return Err(format!("empty batch returned HTTP {status}"));
    }
    Ok(format!("{} texts and 0 texts both rejected with 400", DEFAULT_BATCH + 1))
}

/// Runs every check against the service at `endpoint`, which must be ready.
pub fn check_service(endpoint: &str, timeout: Duration) -> Vec<ContractCheck> {
    let http = match reqwest::blocking::Client::builder().timeout(timeout).build() {
        Ok(http) => http,
        Err(e) => {
            return vec![ContractCheck {
                name: "client",
                passed: false,
                detail: e.to_string(),
            }]
        }
    };
    let probe = Probe {
        http,
        base: endpoint.trim_end_matches('/').to_string(),
    };
    vec![
        check("order preservation", order_preserved(&probe)),
        check("determinism", deterministic(&probe)),
        check("dim matches /info", dim_matches_info(&probe)),
        check("unit norm", unit_norm(&probe)),
        check("batch cap", batch_cap(&probe)),
    ]
}
