use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use relmod_core::client::mock::MockServer;
use relmod_core::scorer::NgramCopyModel;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus200").join(name)
}

fn relmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relmod")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = relmod(args);
    assert!(out.status.success(), "relmod {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn read_jsonl(p: &Path) -> Vec<Value> {
    std::fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn kg_args() -> Vec<String> {
    ["triples", "entities", "relations"]
        .iter()
        .flat_map(|k| [format!("--{k}"), fixture(&format!("{k}.tsv")).display().to_string()])
        .collect()
}

fn with_kg<'a>(base: &[&'a str], kg: &'a [String]) -> Vec<&'a str> {
    base.iter().copied().chain(kg.iter().map(String::as_str)).collect()
}

struct Run {
    examples: PathBuf,
    kept: PathBuf,
    dropped: PathBuf,
    split: PathBuf,
}

/// extract -> filter -> split into `dir`.
fn pipeline(dir: &Path, extra: &[&str]) -> Run {
    let kg = kg_args();
    let r = Run {
        examples: dir.join("examples.jsonl"),
        kept: dir.join("kept.jsonl"),
        dropped: dir.join("dropped.jsonl"),
        split: dir.join("split"),
    };
    let defs = fixture("definitions.jsonl");
    let mut a = with_kg(&["extract", "--corpus", s(&defs), "--out", s(&r.examples)], &kg);
    a.extend(extra);
    ok(&a);
    let parses = fixture("parses.conllu");
    let mut a = vec!["filter", "--examples", s(&r.examples), "--parses", s(&parses)];
    a.extend(["--out", s(&r.kept), "--dropped", s(&r.dropped)]);
    a.extend(extra);
    ok(&a);
    let mut a = with_kg(&["split", "--examples", s(&r.kept), "--fractions", "0.8,0.1,0.1", "--out-dir", s(&r.split)], &kg);
    a.extend(extra);
    ok(&a);
    r
}

#[test]
fn extract_filter_split_matches_fixture_counts() {
    let expected = read_json(&fixture("expected.json"));
    let c = &expected["counts"];
    let dir = tempfile::tempdir().unwrap();
    let r = pipeline(dir.path(), &[]);

    let m = read_json(&PathBuf::from(format!("{}.manifest.json", r.examples.display())))["counts"].clone();
    for k in ["records", "links", "examples", "unresolved_head_records", "unresolved_tails_dropped"] {
        assert_eq!(m[k], c[k], "extract count {k}");
    }
    let m = read_json(&PathBuf::from(format!("{}.manifest.json", r.kept.display())))["counts"].clone();
    assert_eq!(m["input"], c["examples"]);
    for k in ["kept", "dropped", "dropped_no_parse", "dropped_low_coverage"] {
        assert_eq!(m[k], c[k], "filter count {k}");
    }
    assert_eq!(m["dropped_other"], 0);

    let per = expected["examples"].as_object().unwrap();
    let kept = read_jsonl(&r.kept);
    let dropped = read_jsonl(&r.dropped);
    assert_eq!(kept.len() + dropped.len(), per.len());
    for (row, is_kept) in kept.iter().map(|x| (x, true)).chain(dropped.iter().map(|x| (x, false))) {
        let e = &per[row["id"].as_str().unwrap()];
        assert_eq!(e["kept"].as_bool(), Some(is_kept), "{}", row["id"]);
        let close = |a: &Value, b: &Value| match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        assert!(close(&row["surface_coverage"], &e["surface"]), "{}", row["id"]);
        assert!(close(&row["dependency_coverage"], &e["dependency"]), "{}", row["id"]);
    }

    let parts: Vec<Vec<Value>> = ["train", "dev", "test"].iter().map(|p| read_jsonl(&r.split.join(format!("{p}.jsonl")))).collect();
    let n: usize = parts.iter().map(Vec::len).sum();
    assert_eq!(n as u64, c["kept"].as_u64().unwrap(), "shortest encoding gives one record per example");
    let heads: Vec<HashSet<&str>> =
        parts.iter().map(|p| p.iter().map(|x| x["head_key"].as_str().unwrap()).collect()).collect();
    assert!(heads[0].is_disjoint(&heads[1]) && heads[0].is_disjoint(&heads[2]) && heads[1].is_disjoint(&heads[2]));
    assert_eq!((heads[0].len() + heads[1].len() + heads[2].len()) as u64, c["kept_heads"].as_u64().unwrap());
    assert!(r.split.join("manifest.json").exists());
}

#[test]
fn stats_reports_exact_counts() {
    let kg = kg_args();
    let out = ok(&with_kg(&["stats"], &kg));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let c = &read_json(&fixture("expected.json"))["counts"];
    let want = serde_json::json!({
        "entities": c["entities"], "relations": c["relations"],
        "triples": c["triples"], "duplicates_dropped": c["duplicates_dropped"],
    });
    assert_eq!(v, want);
}

#[test]
fn build_kg_restricts_to_corpus_entities() {
    let dir = tempfile::tempdir().unwrap();
    let kg = kg_args();
    let defs = fixture("definitions.jsonl");
    let out = dir.path().join("kg");
    ok(&with_kg(&["build-kg", "--corpus", s(&defs), "--out-dir", s(&out)], &kg));
    let stats = read_json(&out.join("stats.json"));
    // rivers, products, categories, countries and regions that are never linked drop out
    let full = read_json(&fixture("expected.json"))["counts"]["entities"].as_u64().unwrap();
    assert!(stats["entities"].as_u64().unwrap() < full);
    assert_eq!(stats["duplicates_dropped"], 1);
    // the rebuilt graph loads and reports the same counts
    let again = ok(&[
        "stats",
        "--triples", s(&out.join("triples.tsv")),
        "--entities", s(&out.join("entities.tsv")),
        "--relations", s(&out.join("relations.tsv")),
    ]);
    let v: Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(v["entities"], stats["entities"]);
    assert_eq!(v["triples"], stats["triples"]);
    assert_eq!(v["duplicates_dropped"], 0);
    assert!(out.join("manifest.json").exists());
}

fn train_model(dir: &Path) -> (Run, PathBuf) {
    let r = pipeline(dir, &[]);
    let model = dir.join("model.json");
    ok(&["train", "--train", s(&r.split.join("train.jsonl")), "--out", s(&model)]);
    (r, model)
}

#[test]
fn select_confidence_writes_chosen_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (r, model) = train_model(dir.path());
    let kg = kg_args();
    let out = dir.path().join("sel.jsonl");
    let test = r.split.join("test.jsonl");
    ok(&with_kg(
        &["select", "--method", "confidence", "--model", s(&model), "--pairs", s(&test), "--out", s(&out), "--inverse"],
        &kg,
    ));
    let rows = read_jsonl(&out);
    let distinct: HashSet<(String, String)> = read_jsonl(&test)
        .iter()
        .map(|x| (x["head_key"].as_str().unwrap().into(), x["tail_key"].as_str().unwrap().into()))
        .collect();
    assert_eq!(rows.len(), distinct.len());
    let mut with_path = 0;
    for row in &rows {
        let keys: HashSet<&str> = row.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["id", "head", "tail", "method", "chosen_path", "chosen_index", "encoding", "confidence", "generation"] {
            assert!(keys.contains(k), "missing {k}");
        }
        assert_eq!(row["id"], format!("{}|{}", row["head"].as_str().unwrap(), row["tail"].as_str().unwrap()));
        assert!(row["confidence"].as_f64().unwrap() <= 0.0);
        assert!(!row["generation"]["text"].as_str().unwrap().is_empty());
        match row["method"].as_str().unwrap() {
            "confidence" => {
                with_path += 1;
                let p = &row["chosen_path"];
                let hops = p["hops"].as_u64().unwrap();
                assert!((1..=3).contains(&hops));
                assert_eq!(p["steps"].as_array().unwrap().len() as u64, hops);
                assert_eq!(p["steps"].as_array().unwrap().last().unwrap()["node"], row["tail"]);
                assert!(row["encoding"]["text"].as_str().unwrap().contains(": "));
            }
            "unknown_fallback" => {
                assert!(row["chosen_path"].is_null());
                assert!(row["encoding"]["text"].as_str().unwrap().contains("; unknown: "));
            }
            m => panic!("unexpected method {m}"),
        }
    }
    assert!(with_path > 0);
}

#[test]
fn paths_lists_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.tsv");
    std::fs::write(&pairs, "QH1\tQC1\nQH1\tQC1\nQH0\tQX404\n").unwrap();
    let out = dir.path().join("paths.jsonl");
    ok(&with_kg(&["paths", "--pairs", s(&pairs), "--out", s(&out), "--k", "2"], &kg_args()));
    let rows = read_jsonl(&out);
    assert_eq!(rows.len(), 1, "duplicate pair collapsed, unresolved pair skipped");
    assert_eq!(rows[0]["head"], "QH1");
    assert!(rows[0]["paths"].as_array().unwrap().len() <= 2);
    let m = read_json(&PathBuf::from(format!("{}.manifest.json", out.display())));
    assert_eq!(m["counts"]["pairs_skipped"], 1);
}

#[test]
fn eval_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let r = pipeline(dir.path(), &[]);
    let test = r.split.join("test.jsonl");
    let out = ok(&["eval", "--predictions", s(&test), "--references", s(&test)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["bleu"].as_f64(), Some(100.0));
    assert_eq!(v["rouge_l"].as_f64(), Some(1.0));
    assert!(v["meteor"].as_f64().unwrap() > 0.9);

    let out = ok(&["eval", "--predictions", s(&test), "--references", s(&test), "--metrics", "bleu"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.get("rouge_l").is_none());
}

#[test]
fn eval_selection_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let sel = dir.path().join("sel.jsonl");
    std::fs::write(
        &sel,
        "{\"id\":\"a|b\",\"chosen_index\":1}\n{\"id\":\"a|c\",\"chosen_index\":0}\n{\"id\":\"d|e\",\"chosen_index\":null}\n",
    )
    .unwrap();
    let labels = dir.path().join("labels.tsv");
    std::fs::write(&labels, "a|b\t1\na|c\t2\nd|e\t-\n").unwrap();
    let out = ok(&["eval", "--selections", s(&sel), "--labels", s(&labels)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["selection"]["agreed"], 1);
    assert_eq!(v["selection"]["counted"], 2);
    assert_eq!(v["selection"]["skipped"], 1);
    assert_eq!(v["selection"]["accuracy"].as_f64(), Some(0.5));
}

#[test]
fn generate_remote_matches_local_model() {
    let dir = tempfile::tempdir().unwrap();
    let (r, model) = train_model(dir.path());
    let input = r.split.join("dev.jsonl");
    let local = dir.path().join("local.jsonl");
    ok(&["generate", "--model", s(&model), "--input", s(&input), "--out", s(&local)]);
    let m = NgramCopyModel::load_file(&model).unwrap();
    let server = MockServer::backend(Arc::new(m), "ngram").unwrap();
    let remote = dir.path().join("remote.jsonl");
    ok(&["generate", "--remote", &server.base_url(), "--input", s(&input), "--out", s(&remote)]);
    assert_eq!(std::fs::read(&local).unwrap(), std::fs::read(&remote).unwrap());
    let rows = read_jsonl(&local);
    assert_eq!(rows.len(), read_jsonl(&input).len());
    assert!(rows[0]["tokens"].as_array().is_some() && rows[0]["target"].is_string());
}

#[test]
fn outputs_are_idempotent_and_mode_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path(), &[]);
    let rb = pipeline(b.path(), &[]);
    let rc = pipeline(c.path(), &["--sequential"]);
    let files = |r: &Run| {
        vec![
            r.examples.clone(),
            r.kept.clone(),
            r.dropped.clone(),
            r.split.join("train.jsonl"),
            r.split.join("dev.jsonl"),
            r.split.join("test.jsonl"),
        ]
    };
    for ((x, y), z) in files(&ra).iter().zip(files(&rb)).zip(files(&rc)) {
        let bytes = std::fs::read(x).unwrap();
        assert_eq!(bytes, std::fs::read(&y).unwrap(), "{} differs between runs", x.display());
        assert_eq!(bytes, std::fs::read(&z).unwrap(), "{} differs in sequential mode", x.display());
    }
    // manifests agree apart from their timestamp and paths
    let strip = |p: &Path| {
        let mut v = read_json(&PathBuf::from(format!("{}.manifest.json", p.display())));
        let o = v.as_object_mut().unwrap();
        o.remove("created_unix");
        o.remove("outputs");
        for i in o["inputs"].as_array_mut().unwrap() {
            i.as_object_mut().unwrap().remove("path");
        }
        v
    };
    assert_eq!(strip(&ra.kept), strip(&rb.kept));

    // a different seed moves heads between splits
    let d = tempfile::tempdir().unwrap();
    let rd = pipeline(d.path(), &["--seed", "99"]);
    assert_ne!(std::fs::read(ra.split.join("train.jsonl")).unwrap(), std::fs::read(rd.split.join("train.jsonl")).unwrap());
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 5\n[kg]\ntriples = {:?}\nentities = {:?}\nrelations = {:?}\n[corpus]\ndefinitions = {:?}\n",
            fixture("triples.tsv"),
            fixture("entities.tsv"),
            fixture("relations.tsv"),
            fixture("definitions.jsonl"),
        ),
    )
    .unwrap();
    let out = dir.path().join("ex.jsonl");
    ok(&["--config", s(&cfg), "extract", "--out", s(&out)]);
    let m = read_json(&PathBuf::from(format!("{}.manifest.json", out.display())));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    // usage: unknown flag, bad value, missing input spec, invalid config
    assert_eq!(relmod(&["stats", "--bogus"]).status.code(), Some(2));
    assert_eq!(relmod(&["select", "--method", "psychic", "--pairs", "p", "--out", "o"]).status.code(), Some(2));
    assert_eq!(relmod(&["extract", "--out", s(&out)]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[paths]\nk = 0\n").unwrap();
    assert_eq!(relmod(&["--config", s(&bad), "stats"]).status.code(), Some(2));
    std::fs::write(&bad, "[paths]\nhops = 2\n").unwrap();
    assert_eq!(relmod(&["--config", s(&bad), "stats"]).status.code(), Some(2));
    assert_eq!(relmod(&["train", "--train", "t", "--out", "o", "--order", "2"]).status.code(), Some(2));
    let split = |f: &str| relmod(&["split", "--examples", "e", "--out-dir", "d", "--fractions", f]).status.code();
    assert_eq!(split("0.8,0.2"), Some(2));
    assert_eq!(split("0.5,0.5,0.5"), Some(2));

    // data: missing file, malformed lines
    let missing = dir.path().join("nope.jsonl");
    assert_eq!(relmod(&["extract", "--corpus", s(&missing), "--out", s(&out)]).status.code(), Some(1));
    let junk = dir.path().join("junk.jsonl");
    std::fs::write(&junk, "{\"id\": \"x\"\n").unwrap();
    let r = relmod(&["extract", "--corpus", s(&junk), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("junk.jsonl:1"));
    let bad_tsv = dir.path().join("t.tsv");
    std::fs::write(&bad_tsv, "QH1\tP17\n").unwrap();
    let r = relmod(&[
        "stats",
        "--triples", s(&bad_tsv),
        "--entities", s(&fixture("entities.tsv")),
        "--relations", s(&fixture("relations.tsv")),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let p = dir.path().join("p.jsonl");
    std::fs::write(&p, "{\"text\": \"a\"}\n").unwrap();
    assert_eq!(relmod(&["eval", "--predictions", s(&p), "--references", s(&p)]).status.code(), Some(0));
    let q = dir.path().join("q.jsonl");
    std::fs::write(&q, "{\"text\": \"a\"}\n{\"text\": \"b\"}\n").unwrap();
    assert_eq!(relmod(&["eval", "--predictions", s(&p), "--references", s(&q)]).status.code(), Some(1));
}
