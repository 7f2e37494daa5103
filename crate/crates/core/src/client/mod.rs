//! HTTP client for remote scorers speaking protocol v1.
//!
//! ```text
//! POST /v1/generate  {"input": str, "beam_width": int, "max_len": int}
//! POST /v1/score     {"input": str, "target": [str]}
//!   -> {"tokens": [str], "text": str, "token_logprobs": [float]}
//! GET  /v1/health    -> {"status": "ok", "model": str}
//! errors             -> {"error": str} with a 4xx or 5xx status
//! ```
//!
//! Responses are checked before anything reaches the caller: a payload that
//! breaks a [`GenerationResult`] invariant is a protocol error naming the
//! field. Transport failures and 5xx responses are retried; 4xx responses
//! are not.

pub mod mock;

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encode::EncodedInput;
use crate::scorer::{DecodeParams, GenerationResult, ScorerBackend, ScorerError};

pub const GENERATE_PATH: &str = "/v1/generate";
pub const SCORE_PATH: &str = "/v1/score";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub input: String,
    pub beam_width: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub input: String,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResult {
    pub tokens: Vec<String>,
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

impl From<&GenerationResult> for WireResult {
    fn from(g: &GenerationResult) -> Self {
        WireResult { tokens: g.tokens.clone(), text: g.text.clone(), token_logprobs: g.token_logprobs.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn protocol(field: impl Into<String>, reason: impl Into<String>) -> ScorerError {
    ScorerError::Protocol { field: field.into(), reason: reason.into() }
}

/// Checks a response body against protocol v1 and builds the result.
/// When `target` is given the echoed tokens must equal it.
pub fn parse_result(body: &str, target: Option<&[String]>) -> Result<GenerationResult, ScorerError> {
    let v: Value = serde_json::from_str(body).map_err(|e| protocol("body", format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| protocol("body", "expected a JSON object"))?;
    let tokens: Vec<String> = match obj.get("tokens") {
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, t)| t.as_str().map(str::to_string).ok_or_else(|| protocol(format!("tokens[{i}]"), "expected a string")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(protocol("tokens", "expected an array")),
        None => return Err(protocol("tokens", "missing")),
    };
    let text = match obj.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(protocol("text", "expected a string")),
        None => return Err(protocol("text", "missing")),
    };
    let logprobs: Vec<f64> = match obj.get("token_logprobs") {
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let field = format!("token_logprobs[{i}]");
                let f = x.as_f64().ok_or_else(|| protocol(field.clone(), "expected a number"))?;
                if !f.is_finite() {
                    return Err(protocol(field, "not finite"));
                }
                if f > 0.0 {
                    return Err(protocol(field, format!("positive log-probability {f}")));
                }
                Ok(f)
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(protocol("token_logprobs", "expected an array")),
        None => return Err(protocol("token_logprobs", "missing")),
    };
    if tokens.is_empty() {
        return Err(protocol("tokens", "empty"));
    }
    if tokens.len() != logprobs.len() {
        return Err(protocol(
            "token_logprobs",
            format!("{} log-probs for {} tokens", logprobs.len(), tokens.len()),
        ));
    }
    if let Some(t) = target {
        if t != tokens.as_slice() {
            return Err(protocol("tokens", "do not match the scored target"));
        }
    }
    GenerationResult::with_text(tokens, text, logprobs).map_err(|e| match e {
        ScorerError::Invariant { field, reason } => protocol(field, reason),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteScorerConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub auth_token: Option<String>,
    /// Pause before retry `n` is `n * retry_backoff`.
    pub retry_backoff: Duration,
}

impl RemoteScorerConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteScorerConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            auth_token: None,
            retry_backoff: Duration::from_millis(100),
        }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.timeout.is_zero() {
            return Err(ScorerError::InvalidConfig("timeout must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ScorerError::InvalidConfig(format!("base_url {:?} is not an http(s) URL", self.base_url)));
        }
        Ok(())
    }
}

/// A result together with the number of retries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Remote<T> {
    pub value: T,
    pub retries: u32,
}

pub struct RemoteScorer {
    cfg: RemoteScorerConfig,
    agent: ureq::Agent,
    last_retries: AtomicU32,
}

enum Attempt {
    Done(u16, String),
    Retry(String),
}

impl RemoteScorer {
    pub fn new(cfg: RemoteScorerConfig) -> Result<Self, ScorerError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteScorer { cfg, agent, last_retries: AtomicU32::new(0) })
    }

    pub fn config(&self) -> &RemoteScorerConfig {
        &self.cfg
    }

    /// Retries used by the most recent call on this client.
    pub fn last_retries(&self) -> u32 {
        self.last_retries.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn once(&self, path: &str, body: Option<&Value>) -> Attempt {
        let url = self.url(path);
        let auth = self.cfg.auth_token.as_ref().map(|t| format!("Bearer {t}"));
        let resp = match body {
            Some(b) => {
                let mut r = self.agent.post(&url);
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.send_json(b)
            }
            None => {
                let mut r = self.agent.get(&url);
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.call()
            }
        };
        match resp {
            Err(e) => Attempt::Retry(e.to_string()),
            Ok(mut r) => {
                let status = r.status().as_u16();
                match r.body_mut().read_to_string() {
                    Ok(text) if status >= 500 => Attempt::Retry(format!("status {status}: {}", error_message(&text))),
                    Ok(text) => Attempt::Done(status, text),
                    Err(e) => Attempt::Retry(e.to_string()),
                }
            }
        }
    }

    /// Sends a request, retrying transport failures and 5xx responses.
    /// Returns the body of the first 2xx response.
    fn request(&self, path: &str, body: Option<&Value>) -> Result<Remote<String>, ScorerError> {
        let mut retries = 0;
        loop {
            match self.once(path, body) {
                Attempt::Done(status, text) => {
                    self.last_retries.store(retries, Ordering::Relaxed);
                    if (200..300).contains(&status) {
                        return Ok(Remote { value: text, retries });
                    }
                    return Err(ScorerError::Server { status, message: error_message(&text) });
                }
                Attempt::Retry(message) => {
                    if retries >= self.cfg.max_retries {
                        self.last_retries.store(retries, Ordering::Relaxed);
                        return Err(ScorerError::Transport { retries, message });
                    }
                    retries += 1;
                    log::warn!("{path}: {message}; retry {retries}/{}", self.cfg.max_retries);
                    std::thread::sleep(self.cfg.retry_backoff * retries);
                }
            }
        }
    }

    pub fn remote_generate(
        &self,
        input: &EncodedInput,
        params: &DecodeParams,
    ) -> Result<Remote<GenerationResult>, ScorerError> {
        params.validate()?;
        let req = GenerateRequest { input: input.text.clone(), beam_width: params.beam_width, max_len: params.max_len };
        let body = serde_json::to_value(req).expect("request serializes");
        let r = self.request(GENERATE_PATH, Some(&body))?;
        Ok(Remote { value: parse_result(&r.value, None)?, retries: r.retries })
    }

    pub fn remote_score(
        &self,
        input: &EncodedInput,
        target: &[String],
    ) -> Result<Remote<GenerationResult>, ScorerError> {
        if target.is_empty() {
            return Err(ScorerError::EmptyTarget);
        }
        let req = ScoreRequest { input: input.text.clone(), target: target.to_vec() };
        let body = serde_json::to_value(req).expect("request serializes");
        let r = self.request(SCORE_PATH, Some(&body))?;
        Ok(Remote { value: parse_result(&r.value, Some(target))?, retries: r.retries })
    }

    pub fn health(&self) -> Result<Health, ScorerError> {
        let r = self.request(HEALTH_PATH, None)?;
        let h: Health = serde_json::from_str(&r.value).map_err(|e| protocol("body", e.to_string()))?;
        if h.status != "ok" {
            return Err(protocol("status", format!("expected \"ok\", got {:?}", h.status)));
        }
        Ok(h)
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<ErrorBody>(body).map(|e| e.error).unwrap_or_else(|_| body.chars().take(200).collect())
}

impl ScorerBackend for RemoteScorer {
    fn generate(&self, input: &EncodedInput, params: &DecodeParams) -> Result<GenerationResult, ScorerError> {
        self.remote_generate(input, params).map(|r| r.value)
    }

    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError> {
        self.remote_score(input, target).map(|r| r.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: ScorerError) -> String {
        match e {
            ScorerError::Protocol { field, .. } => field,
            other => panic!("expected a protocol error, got {other:?}"),
        }
    }

    #[test]
    fn parse_accepts_valid() {
        let r = parse_result(r#"{"tokens":["a","</s>"],"text":"a","token_logprobs":[-0.5,-1.5]}"#, None).unwrap();
        assert_eq!(r.normalized_score, -1.0);
        assert_eq!(r.text, "a");
    }

    #[test]
    fn parse_names_bad_field() {
        let cases = [
            (r#"{"tokens":["a"],"text":"a","token_logprobs":[0.5]}"#, "token_logprobs[0]"),
            (r#"{"tokens":["a","b"],"text":"a","token_logprobs":[-0.5]}"#, "token_logprobs"),
            (r#"{"tokens":[],"text":"","token_logprobs":[]}"#, "tokens"),
            (r#"{"tokens":["a"],"token_logprobs":[-1]}"#, "text"),
            (r#"{"tokens":[1],"text":"a","token_logprobs":[-1]}"#, "tokens[0]"),
            (r#"{"tokens":["a"],"text":"a","token_logprobs":["x"]}"#, "token_logprobs[0]"),
            (r#"[1]"#, "body"),
            ("not json", "body"),
        ];
        for (body, field) in cases {
            assert_eq!(field_of(parse_result(body, None).unwrap_err()), field, "{body}");
        }
        let t = vec!["b".to_string()];
        let e = parse_result(r#"{"tokens":["a"],"text":"a","token_logprobs":[-1]}"#, Some(&t)).unwrap_err();
        assert_eq!(field_of(e), "tokens");
    }

    #[test]
    fn config_checks() {
        assert!(RemoteScorerConfig::new("http://127.0.0.1:1").validate().is_ok());
        assert!(RemoteScorerConfig::new("ftp://x").validate().is_err());
        let mut c = RemoteScorerConfig::new("http://x");
        c.timeout = Duration::ZERO;
        assert!(RemoteScorer::new(c).is_err());
    }
}
