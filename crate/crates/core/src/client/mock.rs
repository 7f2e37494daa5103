//! In-process protocol v1 server for tests and local experiments.
//!
//! [`MockServer::backend`] serves any [`ScorerBackend`];
//! [`MockServer::scripted`] replays canned responses in order, which makes
//! retry and validation paths reproducible. Every request is recorded.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::{ErrorBody, GenerateRequest, Health, ScoreRequest, WireResult, GENERATE_PATH, HEALTH_PATH, SCORE_PATH};
use crate::encode::{EncodedInput, Variant};
use crate::scorer::{DecodeParams, ScorerBackend, ScorerError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canned {
    pub status: u16,
    pub body: String,
    /// Held back this long before answering.
    pub delay: Option<Duration>,
}

impl Canned {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        Canned { status, body: body.into(), delay: None }
    }

    pub fn json<T: Serialize>(status: u16, body: &T) -> Self {
        Self::new(status, serde_json::to_string(body).expect("serializable body"))
    }

    pub fn error(status: u16, message: &str) -> Self {
        Self::json(status, &ErrorBody { error: message.into() })
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = Some(d);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
}

enum Handler {
    Backend { backend: Arc<dyn ScorerBackend>, model: String },
    Scripted(Mutex<VecDeque<Canned>>),
}

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn backend(backend: Arc<dyn ScorerBackend>, model: impl Into<String>) -> std::io::Result<Self> {
        Self::start(Handler::Backend { backend, model: model.into() })
    }

    /// Answers requests with `responses` in order; once they run out every
    /// request gets a 500.
    pub fn scripted(responses: Vec<Canned>) -> std::io::Result<Self> {
        Self::start(Handler::Scripted(Mutex::new(responses.into())))
    }

    fn start(handler: Handler) -> std::io::Result<Self> {
        let server = Arc::new(Server::http("127.0.0.1:0").map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let log = Arc::new(Mutex::new(Vec::new()));
        let (srv, lg) = (Arc::clone(&server), Arc::clone(&log));
        let thread = std::thread::spawn(move || {
            for req in srv.incoming_requests() {
                serve(&handler, &lg, req);
            }
        });
        Ok(MockServer { server, addr, log, thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn serve(handler: &Handler, log: &Mutex<Vec<RecordedRequest>>, mut req: Request) {
    let mut body = String::new();
    let read_ok = req.as_reader().read_to_string(&mut body).is_ok();
    let rec = RecordedRequest {
        method: req.method().as_str().to_string(),
        path: req.url().to_string(),
        body,
        authorization: req
            .headers()
            .iter()
            .find(|h| h.field.equiv("Authorization"))
            .map(|h| h.value.as_str().to_string()),
    };
    let canned = if !read_ok {
        Canned::error(400, "unreadable body")
    } else {
        match handler {
            Handler::Scripted(q) => q
                .lock()
                .expect("script poisoned")
                .pop_front()
                .unwrap_or_else(|| Canned::error(500, "script exhausted")),
            Handler::Backend { backend, model } => dispatch(backend.as_ref(), model, req.method(), &rec),
        }
    };
    log.lock().expect("request log poisoned").push(rec);
    if let Some(d) = canned.delay {
        std::thread::sleep(d);
    }
    let resp = Response::from_string(canned.body).with_status_code(canned.status).with_header(json_header());
    let _ = req.respond(resp);
}

fn backend_error(e: ScorerError) -> Canned {
    let status = match e {
        ScorerError::EmptyTarget | ScorerError::InvalidParams(_) | ScorerError::MissingInput(_) => 400,
        _ => 500,
    };
    Canned::error(status, &e.to_string())
}

fn dispatch(backend: &dyn ScorerBackend, model: &str, method: &Method, rec: &RecordedRequest) -> Canned {
    let post = *method == Method::Post;
    match rec.path.as_str() {
        HEALTH_PATH if *method == Method::Get => {
            Canned::json(200, &Health { status: "ok".into(), model: model.into() })
        }
        GENERATE_PATH if post => match serde_json::from_str::<GenerateRequest>(&rec.body) {
            Err(e) => Canned::error(400, &format!("bad request: {e}")),
            Ok(r) => {
                let params = DecodeParams { beam_width: r.beam_width, max_len: r.max_len };
                let input = EncodedInput::raw(r.input, Variant::Path, None);
                match params.validate().and_then(|_| backend.generate(&input, &params)) {
                    Ok(g) => Canned::json(200, &WireResult::from(&g)),
                    Err(e) => backend_error(e),
                }
            }
        },
        SCORE_PATH if post => match serde_json::from_str::<ScoreRequest>(&rec.body) {
            Err(e) => Canned::error(400, &format!("bad request: {e}")),
            Ok(r) if r.target.is_empty() => Canned::error(400, "target must not be empty"),
            Ok(r) => match backend.score(&EncodedInput::raw(r.input, Variant::Path, None), &r.target) {
                Ok(g) => Canned::json(200, &WireResult::from(&g)),
                Err(e) => backend_error(e),
            },
        },
        HEALTH_PATH | GENERATE_PATH | SCORE_PATH => Canned::error(405, "method not allowed"),
        _ => Canned::error(404, "not found"),
    }
}
