//! Runs protocol v1 conformance fixtures against the scripted mock server.

use std::path::{Path, PathBuf};
use std::time::Duration;

use relmod_core::client::mock::{Canned, MockServer};
use relmod_core::client::{RemoteScorer, RemoteScorerConfig};
use relmod_core::encode::{EncodedInput, Variant};
use relmod_core::scorer::{DecodeParams, GenerationResult, ScorerError};
use serde_json::Value;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/protocol_v1")
}

pub fn fixture_paths() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(fixture_dir())
        .expect("fixture dir")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

fn canned(r: &Value) -> Canned {
    let status = r["status"].as_u64().unwrap() as u16;
    match r.get("body_raw") {
        Some(raw) => Canned::new(status, raw.as_str().unwrap()),
        None => Canned::new(status, r["body"].to_string()),
    }
}

fn check_ok(want: &Value, got: &GenerationResult) -> Result<(), String> {
    let strs = |v: &Value| -> Vec<String> { v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect() };
    let nums = |v: &Value| -> Vec<f64> { v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect() };
    if strs(&want["tokens"]) != got.tokens {
        return Err(format!("tokens {:?}", got.tokens));
    }
    if want["text"].as_str().unwrap() != got.text {
        return Err(format!("text {:?}", got.text));
    }
    if nums(&want["token_logprobs"]) != got.token_logprobs {
        return Err(format!("token_logprobs {:?}", got.token_logprobs));
    }
    for (k, v) in [("total_logprob", got.total_logprob), ("normalized_score", got.normalized_score)] {
        if (want[k].as_f64().unwrap() - v).abs() > 1e-12 {
            return Err(format!("{k} {v}"));
        }
    }
    Ok(())
}

fn check_err(want: &Value, got: &ScorerError) -> Result<(), String> {
    let ok = match (want["kind"].as_str().unwrap(), got) {
        ("protocol", ScorerError::Protocol { field, .. }) => want["field"].as_str() == Some(field.as_str()),
        ("empty_target", ScorerError::EmptyTarget) => true,
        ("transport", ScorerError::Transport { retries, .. }) => want["retries"].as_u64() == Some(*retries as u64),
        ("server", ScorerError::Server { status, message }) => {
            want["status"].as_u64() == Some(*status as u64)
                && want.get("message").is_none_or(|m| m.as_str() == Some(message.as_str()))
        }
        _ => false,
    };
    if ok { Ok(()) } else { Err(format!("unexpected error {got:?}")) }
}

/// Runs one fixture; `Err` describes the first mismatch.
pub fn run_fixture(path: &Path) -> Result<(), String> {
    let f: Value = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let responses: Vec<Canned> = f["responses"].as_array().unwrap().iter().map(canned).collect();
    let server = MockServer::scripted(responses).map_err(|e| e.to_string())?;
    let mut cfg = RemoteScorerConfig::new(server.base_url());
    cfg.max_retries = f["max_retries"].as_u64().unwrap() as u32;
    cfg.retry_backoff = Duration::from_millis(1);
    cfg.timeout = Duration::from_secs(5);
    let client = RemoteScorer::new(cfg).map_err(|e| e.to_string())?;
    let call = &f["call"];
    let input = EncodedInput::raw(call["input"].as_str().unwrap_or(""), Variant::Path, None);
    let expect = &f["expect"];

    let outcome: Result<(Option<GenerationResult>, u32), ScorerError> = match call["op"].as_str().unwrap() {
        "generate" => {
            let p = DecodeParams {
                beam_width: call["beam_width"].as_u64().unwrap() as usize,
                max_len: call["max_len"].as_u64().unwrap() as usize,
            };
            client.remote_generate(&input, &p).map(|r| (Some(r.value), r.retries))
        }
        "score" => {
            let target: Vec<String> =
                call["target"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect();
            client.remote_score(&input, &target).map(|r| (Some(r.value), r.retries))
        }
        "health" => client.health().and_then(|h| {
            let want = &expect["health"];
            if want["status"] == h.status.as_str() && want["model"] == h.model.as_str() {
                Ok((None, client.last_retries()))
            } else {
                Err(ScorerError::Protocol { field: "health".into(), reason: format!("{h:?}") })
            }
        }),
        op => return Err(format!("unknown op {op}")),
    };

    match (expect.get("error"), outcome) {
        (Some(want), Err(e)) => check_err(want, &e)?,
        (Some(_), Ok(_)) => return Err("expected an error, call succeeded".into()),
        (None, Err(e)) => return Err(format!("call failed: {e}")),
        (None, Ok((res, retries))) => {
            if let Some(want) = expect.get("ok") {
                check_ok(want, res.as_ref().ok_or("missing result")?)?;
            }
            if expect["retries"].as_u64() != Some(retries as u64) {
                return Err(format!("retries {retries}"));
            }
        }
    }

    let reqs = server.requests();
    match &f["expected_request"] {
        Value::Null => {
            if !reqs.is_empty() {
                return Err(format!("expected no request, server saw {}", reqs.len()));
            }
        }
        want => {
            let first = reqs.first().ok_or("server saw no request")?;
            if want["method"] != first.method.as_str() || want["path"] != first.path.as_str() {
                return Err(format!("request line {} {}", first.method, first.path));
            }
            let body = if first.body.is_empty() { Value::Null } else {
                serde_json::from_str(&first.body).map_err(|e| format!("request body: {e}"))?
            };
            if body != want["body"] {
                return Err(format!("request body {body}"));
            }
            if reqs.iter().any(|r| r.body != first.body || r.path != first.path) {
                return Err("retried requests differ".into());
            }
        }
    }
    if let Some(n) = expect.get("requests") {
        if n.as_u64() != Some(reqs.len() as u64) {
            return Err(format!("server saw {} requests", reqs.len()));
        }
    }
    Ok(())
}
