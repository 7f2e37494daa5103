mod common;

use std::sync::Arc;
use std::time::Duration;

use common::protocol::{fixture_paths, run_fixture};
use relmod_core::client::mock::{Canned, MockServer};
use relmod_core::client::{RemoteScorer, RemoteScorerConfig, WireResult};
use relmod_core::encode::{EncodedInput, Variant};
use relmod_core::kg::KgBuilder;
use relmod_core::pathfind::{k_shortest_paths, EntityPair, PathConfig};
use relmod_core::scorer::{
    target_tokens, train_baseline, DecodeParams, NgramConfig, NgramCopyModel, ScorerBackend, ScorerError,
};
use relmod_core::select::{select_by_confidence, ConfidenceParams};

fn inp(s: &str) -> EncodedInput {
    EncodedInput::raw(s, Variant::Path, None)
}

fn corpus() -> Vec<(EncodedInput, String)> {
    [
        ("Haste; country: Germany", "Haste is a municipality in Germany."),
        ("Romeries; country: France", "Romeries is a commune in France."),
        ("Nord; country: France", "Nord is a department in France."),
        ("Romeries; located in the administrative territorial entity: Nord", "Romeries is a commune in the Nord department."),
        ("Schaumburg; country: Germany", "Schaumburg is a district in Germany."),
    ]
    .into_iter()
    .map(|(a, b)| (inp(a), b.to_string()))
    .collect()
}

fn model() -> Arc<NgramCopyModel> {
    Arc::new(train_baseline(&corpus(), NgramConfig::default()).unwrap())
}

fn client(url: String) -> RemoteScorer {
    let mut cfg = RemoteScorerConfig::new(url);
    cfg.retry_backoff = Duration::from_millis(1);
    cfg.timeout = Duration::from_secs(5);
    RemoteScorer::new(cfg).unwrap()
}

#[test]
fn conformance_fixtures() {
    let paths = fixture_paths();
    assert!(paths.len() >= 20, "fixture suite is incomplete");
    let failures: Vec<String> = paths
        .iter()
        .filter_map(|p| run_fixture(p).err().map(|e| format!("{}: {e}", p.file_name().unwrap().to_string_lossy())))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn remote_matches_local() {
    let m = model();
    let server = MockServer::backend(m.clone(), "ngram").unwrap();
    let remote = client(server.base_url());
    assert_eq!(remote.health().unwrap().model, "ngram");
    for input in ["Haste; country: Germany", "Solesmes; country: France", "unseen words only"] {
        for beam_width in [1, 4] {
            let p = DecodeParams { beam_width, max_len: 32 };
            assert_eq!(remote.generate(&inp(input), &p).unwrap(), m.generate(&inp(input), &p).unwrap());
        }
        let t = target_tokens("Solesmes is a commune in France.");
        let r = remote.score(&inp(input), &t).unwrap();
        assert_eq!(r, m.score(&inp(input), &t).unwrap());
        let mean = r.token_logprobs.iter().sum::<f64>() / r.token_logprobs.len() as f64;
        assert!((r.normalized_score - mean).abs() < 1e-15);
    }
}

#[test]
fn greedy_self_consistency() {
    let server = MockServer::backend(model(), "ngram").unwrap();
    let remote = client(server.base_url());
    let greedy = DecodeParams { beam_width: 1, max_len: 64 };
    for (input, _) in corpus() {
        let g = remote.generate(&input, &greedy).unwrap();
        let s = remote.score(&input, &g.tokens).unwrap();
        assert!((g.total_logprob - s.total_logprob).abs() <= 1e-6);
    }
}

#[test]
fn selection_is_backend_agnostic() {
    let mut b = KgBuilder::new();
    let romeries = b.add_entity("Q1", "Romeries").unwrap();
    let france = b.add_entity("Q142", "France").unwrap();
    let nord = b.add_entity("Q12661", "Nord").unwrap();
    let country = b.add_relation("P17", "country").unwrap();
    let located = b.add_relation("P131", "located in the administrative territorial entity").unwrap();
    b.add_triple(romeries, country, france).unwrap();
    b.add_triple(romeries, located, nord).unwrap();
    b.add_triple(nord, country, france).unwrap();
    let g = b.build().0;
    let cands = k_shortest_paths(&g, EntityPair::new(romeries, france).unwrap(), &PathConfig::default()).unwrap().paths;
    let m = model();
    let server = MockServer::backend(m.clone(), "ngram").unwrap();
    let remote = client(server.base_url());
    let params = ConfidenceParams::default();
    let local = select_by_confidence(m.as_ref(), &cands, &g, &params).unwrap();
    let via_http = select_by_confidence(&remote, &cands, &g, &params).unwrap();
    assert_eq!(local, via_http);
}

#[test]
fn concurrent_calls() {
    let m = model();
    let server = MockServer::backend(m.clone(), "ngram").unwrap();
    let remote = Arc::new(client(server.base_url()));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let r = Arc::clone(&remote);
            std::thread::spawn(move || {
                let (input, _) = &corpus()[i % 5];
                r.generate(input, &DecodeParams::default()).unwrap()
            })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let (input, _) = &corpus()[i % 5];
        assert_eq!(h.join().unwrap(), m.generate(input, &DecodeParams::default()).unwrap());
    }
}

#[test]
fn auth_token_is_sent() {
    let ok = WireResult { tokens: vec!["a".into()], text: "a".into(), token_logprobs: vec![-1.0] };
    let server = MockServer::scripted(vec![Canned::json(200, &ok)]).unwrap();
    let mut cfg = RemoteScorerConfig::new(server.base_url());
    cfg.auth_token = Some("s3cret".into());
    RemoteScorer::new(cfg).unwrap().generate(&inp("x"), &DecodeParams::default()).unwrap();
    assert_eq!(server.requests()[0].authorization.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn timeouts_are_retried_then_reported() {
    let slow = Canned::error(500, "slow").delayed(Duration::from_millis(600));
    let server = MockServer::scripted(vec![slow.clone(), slow]).unwrap();
    let mut cfg = RemoteScorerConfig::new(server.base_url());
    cfg.timeout = Duration::from_millis(150);
    cfg.max_retries = 1;
    cfg.retry_backoff = Duration::from_millis(1);
    let remote = RemoteScorer::new(cfg).unwrap();
    let e = remote.generate(&inp("x"), &DecodeParams::default()).unwrap_err();
    assert!(matches!(e, ScorerError::Transport { retries: 1, .. }), "{e:?}");
    assert_eq!(remote.last_retries(), 1);
}

#[test]
fn unreachable_server() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let mut cfg = RemoteScorerConfig::new(format!("http://{addr}"));
    cfg.max_retries = 2;
    cfg.retry_backoff = Duration::from_millis(1);
    let e = RemoteScorer::new(cfg).unwrap().health().unwrap_err();
    assert!(matches!(e, ScorerError::Transport { retries: 2, .. }), "{e:?}");
}

#[test]
fn backend_server_shapes_and_errors() {
    let server = MockServer::backend(model(), "ngram").unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let url = |p: &str| format!("{}{p}", server.base_url());

    let mut r = agent
        .post(&url("/v1/generate"))
        .send_json(serde_json::json!({"input": "Haste; country: Germany", "beam_width": 2, "max_len": 16}))
        .unwrap();
    assert_eq!(r.status().as_u16(), 200);
    let v: serde_json::Value = r.body_mut().read_json().unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["text", "token_logprobs", "tokens"]);

    let r = agent.post(&url("/v1/score")).send_json(serde_json::json!({"input": "x", "target": []})).unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = agent.post(&url("/v1/generate")).send_json(serde_json::json!({"input": "x"})).unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = agent.post(&url("/v1/generate")).send_json(serde_json::json!({"input": "x", "beam_width": 0, "max_len": 4})).unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = agent.get(&url("/v2/other")).call().unwrap();
    assert_eq!(r.status().as_u16(), 404);
    let r = agent.get(&url("/v1/generate")).call().unwrap();
    assert_eq!(r.status().as_u16(), 405);

    let remote = client(server.base_url());
    assert_eq!(remote.score(&inp("x"), &[]).unwrap_err(), ScorerError::EmptyTarget);
}
