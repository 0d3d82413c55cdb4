//! In-process implementation of the embedding service contract, backed by
//! the hash embedder. Used by the test suites and by `abx stub-server` so the
//! remote path works without the real sidecar.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use super::hash::{hash_embed_tokens, tokenize};
use super::DEFAULT_BATCH;

pub const STUB_MODEL_ID: &str = "hash-v1-stub";

#[derive(Clone, Debug)]
pub struct StubConfig {
    pub dim: usize,
    pub seed: u64,
    /// Tokens beyond this count are dropped and the text flagged as truncated.
    pub max_tokens: usize,
    /// Answer this many `/embed` calls with HTTP 500 before serving normally.
    pub fail_first: usize,
    pub ready: bool,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            dim: super::DEFAULT_DIM,
            seed: 0,
            max_tokens: 512,
            fail_first: 0,
            ready: true,
        }
    }
}

struct Shared {
    config: StubConfig,
    ready: AtomicBool,
    embed_calls: AtomicUsize,
}

pub struct StubServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves on a
    /// background thread until dropped.
    pub fn start(addr: &str, config: StubConfig) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            ready: AtomicBool::new(config.ready),
            config,
            embed_calls: AtomicUsize::new(0),
        });
        let worker = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(&shared, request);
                }
            })
        };
        Ok(StubServer {
            server,
            shared,
            addr,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn set_ready(&self, ready: bool) {
        self.shared.ready.store(ready, Ordering::SeqCst);
    }

    /// Number of `/embed` requests received, including failed ones.
    pub fn embed_calls(&self) -> usize {
        self.shared.embed_calls.load(Ordering::SeqCst)
    }

    /// Blocks serving requests until the process exits.
    pub fn join(mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn json_response(status: u16, body: Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    Response::from_data(body.to_string().into_bytes())
        .with_status_code(status)
        .with_header(header)
}

fn handle(shared: &Shared, mut request: Request) {
    let ready = shared.ready.load(Ordering::SeqCst);
    let response = match (request.method(), request.url()) {
        (Method::Get, "/healthz") if ready => json_response(200, json!({"status": "ok"})),
        (Method::Get, "/info") if ready => json_response(
            200,
            json!({
                "model_id": STUB_MODEL_ID,
                "dim": shared.config.dim,
                "max_tokens": shared.config.max_tokens,
            }),
        ),
        (Method::Post, "/embed") => {
            let call = shared.embed_calls.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            if !ready {
                json_response(503, json!({"error": "model not loaded"}))
            } else if call < shared.config.fail_first {
                json_response(500, json!({"error": "injected failure"}))
            } else if request.as_reader().read_to_string(&mut body).is_err() {
                json_response(422, json!({"error": "unreadable body"}))
            } else {
                embed(&shared.config, &body)
            }
        }
        (Method::Get, "/healthz" | "/info") => {
            json_response(503, json!({"error": "model not loaded"}))
        }
        _ => json_response(404, json!({"error": "not found"})),
    };
    let _ = request.respond(response);
}

fn embed(config: &StubConfig, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let Ok(parsed) = serde_json::from_str::<Value>(body) else {
        return json_response(422, json!({"error": "malformed JSON"}));
    };
    let texts: Option<Vec<&str>> = parsed
        .get("texts")
        .and_then(Value::as_array)
        .and_then(|arr| arr.iter().map(Value::as_str).collect());
    let Some(texts) = texts else {
        return json_response(422, json!({"error": "`texts` must be an array of strings"}));
    };
    if texts.is_empty() || texts.len() > DEFAULT_BATCH {
        return json_response(
            400,
            json!({"error": format!("batch size must be in 1..={DEFAULT_BATCH}")}),
        );
    }
    let mut vectors = Vec::with_capacity(texts.len());
    let mut truncated = Vec::with_capacity(texts.len());
    for text in texts {
        let tokens: Vec<String> = tokenize(text).collect();
        truncated.push(tokens.len() > config.max_tokens);
        let kept = &tokens[..tokens.len().min(config.max_tokens)];
        vectors.push(hash_embed_tokens(kept, config.dim, config.seed).into_inner());
    }
    json_response(
        200,
        json!({
            "model_id": STUB_MODEL_ID,
            "dim": config.dim,
            "vectors": vectors,
            "truncated": truncated,
        }),
    )
}
