//! Subcommand implementations. Each reads its inputs, runs one pipeline
//! stage and writes its outputs plus a manifest.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use relmod_core::client::{RemoteScorer, RemoteScorerConfig};
use relmod_core::corpus::{
    extract_pairs, filter_examples, index_parses, load_conllu, split_dataset, subsample as subsample_split,
    DatasetRecord, DatasetSplit, DefinitionRecord, RelationExample,
};
use relmod_core::encode::{EncodedInput, Variant};
use relmod_core::eval::{eval_tokens, evaluate, selection_accuracy};
use relmod_core::kg::{hop_histogram, load_kg, KgBuilder, KnowledgeGraph, LoadReport};
use relmod_core::pathfind::{k_shortest_paths, EntityPair, ReasoningPath, StepDir};
use relmod_core::scorer::{train_baseline, GenerationResult, NgramCopyModel, ScorerBackend};
use relmod_core::select::{dataset_records, select_batch, Method};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::Manifest;
use crate::{io, usage, Ctx, Failure};

type CmdResult = Result<(), Failure>;

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| usage(format!("missing {flag} (flag or config)")))
}

struct LoadedKg {
    graph: KnowledgeGraph,
    report: LoadReport,
    files: [PathBuf; 3],
}

fn load_graph(ctx: &Ctx) -> Result<LoadedKg, Failure> {
    let t = required(&ctx.cfg.kg.triples, "--triples")?;
    let e = required(&ctx.cfg.kg.entities, "--entities")?;
    let r = required(&ctx.cfg.kg.relations, "--relations")?;
    let (graph, report) = load_kg(io::open(t)?, io::open(e)?, io::open(r)?).context("loading knowledge graph")?;
    Ok(LoadedKg { graph, report, files: [t.into(), e.into(), r.into()] })
}

impl LoadedKg {
    fn record_inputs(&self, m: &mut Manifest) -> Result<()> {
        self.files.iter().try_for_each(|f| m.input(f))
    }
}

fn read_definitions(path: &Path) -> Result<Vec<DefinitionRecord>> {
    io::lines(path)?
        .into_iter()
        .map(|(n, l)| DefinitionRecord::from_json(&l).with_context(|| format!("{}:{n}", path.display())))
        .collect()
}

#[derive(Deserialize)]
struct PairRow {
    #[serde(alias = "head")]
    head_key: String,
    #[serde(alias = "tail")]
    tail_key: String,
}

/// Entity key pairs from JSON lines (`head_key`/`tail_key`) or
/// `head<TAB>tail` rows, deduplicated in first-seen order.
fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in io::lines(path)? {
        let (h, t) = if line.trim_start().starts_with('{') {
            let r: PairRow = serde_json::from_str(&line).with_context(|| format!("{}:{n}", path.display()))?;
            (r.head_key, r.tail_key)
        } else {
            let mut f = line.split('\t');
            match (f.next(), f.next()) {
                (Some(h), Some(t)) if !h.is_empty() && !t.is_empty() => (h.to_string(), t.to_string()),
                _ => bail!("{}:{n}: expected head<TAB>tail", path.display()),
            }
        };
        if seen.insert((h.clone(), t.clone())) {
            out.push((h, t));
        }
    }
    Ok(out)
}

/// Resolves key pairs against the graph; returns resolved pairs with their
/// keys and the number skipped.
fn resolve_pairs(g: &KnowledgeGraph, keys: Vec<(String, String)>) -> (Vec<(EntityPair, String, String)>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for (h, t) in keys {
        match (g.entity_by_key(&h), g.entity_by_key(&t)) {
            (Some(a), Some(b)) if a != b => out.push((EntityPair { head: a, tail: b }, h, t)),
            _ => {
                log::warn!("skipping pair {h} -> {t}: unresolved or identical");
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

fn path_json(g: &KnowledgeGraph, p: &ReasoningPath) -> Value {
    let steps: Vec<Value> = p
        .steps()
        .iter()
        .map(|s| {
            json!({
                "relation": g.relation_key(s.relation),
                "dir": match s.dir { StepDir::Forward => "forward", StepDir::Inverse => "inverse" },
                "node": g.entity_key(s.node),
            })
        })
        .collect();
    json!({ "hops": p.hops(), "steps": steps })
}

fn restrict(g: &KnowledgeGraph, keep: &HashSet<String>) -> Result<(KnowledgeGraph, LoadReport)> {
    let mut b = KgBuilder::new();
    let mut emap = HashMap::new();
    for e in g.entity_ids() {
        let key = g.entity_key(e).expect("id from graph");
        if keep.contains(key) {
            emap.insert(e, b.add_entity(key, g.entity_label(e).expect("id from graph"))?);
        }
    }
    let kept: Vec<_> = g.triples().filter(|t| emap.contains_key(&t.head) && emap.contains_key(&t.tail)).collect();
    let used: BTreeSet<_> = kept.iter().map(|t| t.relation).collect();
    let mut rmap = HashMap::new();
    for r in used {
        let id = b.add_relation(g.relation_key(r).expect("id from graph"), g.relation_label(r).expect("id from graph"))?;
        rmap.insert(r, id);
    }
    for t in kept {
        b.add_triple(emap[&t.head], rmap[&t.relation], emap[&t.tail])?;
    }
    Ok(b.build())
}

pub fn build_kg(ctx: &Ctx, out_dir: &Path) -> CmdResult {
    let kg = load_graph(ctx)?;
    let mut m = Manifest::new("build-kg", &ctx.cfg);
    kg.record_inputs(&mut m)?;
    let (graph, mut report) = match &ctx.cfg.corpus.definitions {
        Some(corpus) => {
            let records = read_definitions(corpus)?;
            m.input(corpus)?;
            let keep: HashSet<String> = records
                .iter()
                .flat_map(|r| std::iter::once(r.head_key.clone()).chain(r.links.iter().map(|l| l.key.clone())))
                .collect();
            let (g, _) = restrict(&kg.graph, &keep)?;
            m.count("entities_before_restriction", kg.report.entities);
            m.count("triples_before_restriction", kg.report.triples);
            let r = g.report();
            (g, r)
        }
        None => (kg.graph, kg.report),
    };
    report.duplicates_dropped = kg.report.duplicates_dropped;
    let files = ["triples.tsv", "entities.tsv", "relations.tsv"].map(|f| out_dir.join(f));
    graph
        .write_tsv(io::create(&files[0])?, io::create(&files[1])?, io::create(&files[2])?)
        .context("writing graph")?;
    let stats = out_dir.join("stats.json");
    io::write_json(&stats, &report)?;
    for f in files.iter().chain([&stats]) {
        m.output(f);
    }
    m.count("entities", report.entities);
    m.count("relations", report.relations);
    m.count("triples", report.triples);
    m.count("duplicates_dropped", report.duplicates_dropped);
    m.count("self_loops", report.self_loops);
    m.write(out_dir, true)?;
    Ok(())
}

pub fn stats(ctx: &Ctx, pairs: Option<&Path>, histogram_out: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let kg = load_graph(ctx)?;
    match out {
        Some(out) => {
            io::write_json(out, &kg.report)?;
            let mut m = Manifest::new("stats", &ctx.cfg);
            kg.record_inputs(&mut m)?;
            m.output(out);
            m.count("self_loops", kg.report.self_loops);
            m.write(out, false)?;
        }
        None => println!("{}", serde_json::to_string(&kg.report).map_err(anyhow::Error::from)?),
    }
    if let (Some(pairs), Some(hist_out)) = (pairs, histogram_out) {
        let (resolved, skipped) = resolve_pairs(&kg.graph, read_pairs(pairs)?);
        let ps: Vec<EntityPair> = resolved.iter().map(|r| r.0).collect();
        let pc = ctx.cfg.paths.path_config();
        let h = hop_histogram(&kg.graph, &ps, pc.max_hops, pc.traversal, ctx.exec).context("hop histogram")?;
        io::write_json(hist_out, &h)?;
        let mut m = Manifest::new("stats", &ctx.cfg);
        kg.record_inputs(&mut m)?;
        m.input(pairs)?;
        m.output(hist_out);
        m.count("pairs", ps.len());
        m.count("pairs_skipped", skipped);
        m.write(hist_out, false)?;
    }
    Ok(())
}

pub fn extract(ctx: &Ctx, out: &Path) -> CmdResult {
    let corpus = required(&ctx.cfg.corpus.definitions, "--corpus")?;
    let records = read_definitions(corpus)?;
    let mut m = Manifest::new("extract", &ctx.cfg);
    m.input(corpus)?;
    // without a graph every key is taken as given
    let kg = if ctx.cfg.kg.triples.is_some() { Some(load_graph(ctx)?) } else { None };
    if let Some(kg) = &kg {
        kg.record_inputs(&mut m)?;
    }
    let known = |k: &str| kg.as_ref().is_none_or(|kg| kg.graph.entity_by_key(k).is_some());
    let (mut examples, mut unresolved_heads, mut unresolved_tails, mut links) = (Vec::new(), 0usize, 0usize, 0usize);
    for rec in &records {
        links += rec.links.len();
        if !known(&rec.head_key) {
            log::warn!("record {}: head {} is not in the graph", rec.id, rec.head_key);
            unresolved_heads += 1;
            continue;
        }
        for ex in extract_pairs(rec) {
            if known(&ex.tail_key) {
                examples.push(ex);
            } else {
                unresolved_tails += 1;
            }
        }
    }
    io::write_jsonl(out, &examples)?;
    m.output(out);
    m.count("records", records.len());
    m.count("links", links);
    m.count("examples", examples.len());
    m.count("unresolved_head_records", unresolved_heads);
    m.count("unresolved_tails_dropped", unresolved_tails);
    m.write(out, false)?;
    Ok(())
}

pub fn filter(ctx: &Ctx, examples_path: &Path, out: &Path, dropped_out: Option<&Path>) -> CmdResult {
    let parses_path = required(&ctx.cfg.corpus.parses, "--parses")?;
    let examples: Vec<RelationExample> = io::read_jsonl(examples_path)?;
    let parses = load_conllu(io::open(parses_path)?).context("reading parses")?;
    let outcome = filter_examples(&examples, &index_parses(parses), ctx.cfg.corpus.coverage_threshold, ctx.exec);
    io::write_jsonl(out, &outcome.kept)?;
    let mut m = Manifest::new("filter", &ctx.cfg);
    m.input(examples_path)?;
    m.input(parses_path)?;
    m.output(out);
    if let Some(d) = dropped_out {
        io::write_jsonl(d, &outcome.dropped)?;
        m.output(d);
    }
    let no_parse = outcome.dropped.iter().filter(|d| d.reason == "no parse").count();
    let low = outcome.dropped.iter().filter(|d| d.reason.starts_with("mean coverage")).count();
    m.count("input", examples.len());
    m.count("kept", outcome.kept.len());
    m.count("dropped", outcome.dropped.len());
    m.count("dropped_no_parse", no_parse);
    m.count("dropped_low_coverage", low);
    m.count("dropped_other", outcome.dropped.len() - no_parse - low);
    m.count("threshold", ctx.cfg.corpus.coverage_threshold);
    m.write(out, false)?;
    Ok(())
}

/// Reads relation examples, accepting the scored form written by `filter`.
fn read_examples(path: &Path) -> Result<Vec<RelationExample>> {
    io::read_jsonl(path)
}

pub fn split(ctx: &Ctx, examples_path: &Path, out_dir: &Path) -> CmdResult {
    let kg = load_graph(ctx)?;
    let examples = read_examples(examples_path)?;
    let (usable, unknown): (Vec<_>, Vec<_>) = examples.into_iter().partition(|ex| {
        let h = kg.graph.entity_by_key(&ex.head_key);
        let t = kg.graph.entity_by_key(&ex.tail_key);
        h.is_some() && t.is_some() && h != t
    });
    if !unknown.is_empty() {
        log::warn!("{} examples reference entities outside the graph and are skipped", unknown.len());
    }
    let s = split_dataset(&usable, ctx.cfg.split.fractions, ctx.cfg.seed).context("splitting")?;
    let pc = ctx.cfg.paths.path_config();
    let mut m = Manifest::new("split", &ctx.cfg);
    m.input(examples_path)?;
    kg.record_inputs(&mut m)?;
    for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        let recs = dataset_records(&kg.graph, part, ctx.cfg.split.encoding, &pc, ctx.cfg.seed, ctx.exec)
            .with_context(|| format!("encoding {name}"))?;
        let f = out_dir.join(format!("{name}.jsonl"));
        io::write_jsonl(&f, &recs)?;
        m.output(&f);
        let heads: HashSet<&str> = part.iter().map(|e| e.head_key.as_str()).collect();
        m.count(&format!("{name}_examples"), part.len());
        m.count(&format!("{name}_records"), recs.len());
        m.count(&format!("{name}_heads"), heads.len());
    }
    m.count("skipped_unknown_entities", unknown.len());
    m.write(out_dir, true)?;
    Ok(())
}

pub fn subsample(ctx: &Ctx, train: &Path, out: &Path) -> CmdResult {
    let recs: Vec<DatasetRecord> = io::read_jsonl(train)?;
    let n = recs.len();
    let split = DatasetSplit { train: recs, dev: Vec::new(), test: Vec::new(), seed: ctx.cfg.seed };
    let kept = subsample_split(&split, ctx.cfg.split.subsample, ctx.cfg.seed).context("subsampling")?.train;
    io::write_jsonl(out, &kept)?;
    let mut m = Manifest::new("subsample", &ctx.cfg);
    m.input(train)?;
    m.output(out);
    m.count("input", n);
    m.count("kept", kept.len());
    m.count("fraction", ctx.cfg.split.subsample);
    m.write(out, false)?;
    Ok(())
}

pub fn paths(ctx: &Ctx, pairs: &Path, out: &Path) -> CmdResult {
    let kg = load_graph(ctx)?;
    let (resolved, skipped) = resolve_pairs(&kg.graph, read_pairs(pairs)?);
    let pc = ctx.cfg.paths.path_config();
    let g = &kg.graph;
    let rows = ctx
        .exec
        .try_map(&resolved, |(pair, h, t)| {
            let set = k_shortest_paths(g, *pair, &pc)?;
            Ok::<_, relmod_core::pathfind::PathError>(json!({
                "head": h,
                "tail": t,
                "paths": set.paths.iter().map(|p| path_json(g, p)).collect::<Vec<_>>(),
                "truncated": set.truncated,
            }))
        })
        .context("enumerating paths")?;
    io::write_jsonl(out, &rows)?;
    let mut m = Manifest::new("paths", &ctx.cfg);
    kg.record_inputs(&mut m)?;
    m.input(pairs)?;
    m.output(out);
    m.count("pairs", rows.len());
    m.count("pairs_skipped", skipped);
    m.count("pairs_without_path", rows.iter().filter(|r| r["paths"].as_array().is_some_and(Vec::is_empty)).count());
    m.count("truncated", rows.iter().filter(|r| r["truncated"] == true).count());
    m.write(out, false)?;
    Ok(())
}

pub fn train(ctx: &Ctx, train: &Path, out: &Path) -> CmdResult {
    let recs: Vec<DatasetRecord> = io::read_jsonl(train)?;
    let data: Vec<(EncodedInput, String)> = recs
        .iter()
        .map(|r| (EncodedInput::raw(r.input.clone(), r.encoding_variant, None), r.target.clone()))
        .collect();
    let model = train_baseline(&data, ctx.cfg.scorer.ngram()).context("training")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(anyhow::Error::from)?;
    }
    model.save_file(out).context("saving model")?;
    let mut m = Manifest::new("train", &ctx.cfg);
    m.input(train)?;
    m.output(out);
    m.count("examples", recs.len());
    m.count("vocab_size", model.vocab_size());
    m.write(out, false)?;
    Ok(())
}

/// The configured scorer: a remote endpoint or a local model file.
fn backend(ctx: &Ctx, m: &mut Manifest) -> Result<Option<Box<dyn ScorerBackend>>, Failure> {
    if let Some(r) = &ctx.cfg.remote {
        let mut cfg = RemoteScorerConfig::new(r.base_url.clone());
        cfg.timeout = Duration::from_secs_f64(r.timeout_secs);
        cfg.max_retries = r.max_retries;
        cfg.auth_token.clone_from(&r.auth_token);
        let client = RemoteScorer::new(cfg).map_err(|e| Failure::Usage(e.into()))?;
        m.count("backend", r.base_url.as_str());
        return Ok(Some(Box::new(client)));
    }
    match &ctx.cfg.scorer.model {
        Some(p) => {
            let model = NgramCopyModel::load_file(p).with_context(|| format!("loading model {}", p.display()))?;
            m.input(p)?;
            m.count("backend", "ngram");
            Ok(Some(Box::new(model)))
        }
        None => Ok(None),
    }
}

#[derive(Deserialize)]
struct GenerateRow {
    input: String,
    #[serde(default)]
    encoding_variant: Option<Variant>,
    #[serde(default)]
    head_key: Option<String>,
    #[serde(default)]
    tail_key: Option<String>,
    #[serde(default)]
    target: Option<String>,
}

#[derive(Serialize)]
struct GenerateOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    head_key: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_key: Option<&'a str>,
    input: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<&'a str>,
    #[serde(flatten)]
    generation: GenerationResult,
}

pub fn generate(ctx: &Ctx, input: &Path, out: &Path) -> CmdResult {
    let mut m = Manifest::new("generate", &ctx.cfg);
    let b = backend(ctx, &mut m)?.ok_or_else(|| usage("generate needs --model or --remote"))?;
    let rows: Vec<GenerateRow> = io::read_jsonl(input)?;
    let params = ctx.cfg.scorer.decode();
    let gens = ctx
        .exec
        .try_map(&rows, |r| {
            b.generate(&EncodedInput::raw(r.input.clone(), r.encoding_variant.unwrap_or(Variant::Path), None), &params)
        })
        .context("generating")?;
    let outs: Vec<GenerateOut> = rows
        .iter()
        .zip(gens)
        .map(|(r, generation)| GenerateOut {
            head_key: r.head_key.as_deref(),
            tail_key: r.tail_key.as_deref(),
            input: &r.input,
            target: r.target.as_deref(),
            generation,
        })
        .collect();
    io::write_jsonl(out, &outs)?;
    m.input(input)?;
    m.output(out);
    m.count("examples", outs.len());
    m.write(out, false)?;
    Ok(())
}

pub fn pair_id(head: &str, tail: &str) -> String {
    format!("{head}|{tail}")
}

pub fn select(ctx: &Ctx, pairs: &Path, out: &Path) -> CmdResult {
    let kg = load_graph(ctx)?;
    let mut m = Manifest::new("select", &ctx.cfg);
    let b = backend(ctx, &mut m)?;
    let method = ctx.cfg.select.method;
    if method == relmod_core::select::SelectMethod::Confidence && b.is_none() {
        return Err(usage("confidence selection needs --model or --remote"));
    }
    let (resolved, skipped) = resolve_pairs(&kg.graph, read_pairs(pairs)?);
    let ps: Vec<EntityPair> = resolved.iter().map(|r| r.0).collect();
    let pc = ctx.cfg.paths.path_config();
    let params = ctx.cfg.confidence_params();
    let outcomes = select_batch(&kg.graph, &ps, method, &pc, b.as_deref(), &params, ctx.cfg.seed, ctx.exec);
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut fallbacks = 0;
    for ((_, h, t), o) in resolved.iter().zip(outcomes) {
        let o = o.map_err(|e| anyhow!("selecting {h} -> {t}: {e}"))?;
        if o.method == Method::UnknownFallback {
            fallbacks += 1;
        }
        rows.push(json!({
            "id": pair_id(h, t),
            "head": h,
            "tail": t,
            "method": o.method,
            "chosen_path": o.chosen.as_ref().map(|p| path_json(&kg.graph, p)),
            "chosen_index": o.chosen_index,
            "encoding": o.encoding,
            "confidence": o.confidence,
            "generation": o.generation,
            "candidates_considered": o.candidates_considered,
        }));
    }
    io::write_jsonl(out, &rows)?;
    kg.record_inputs(&mut m)?;
    m.input(pairs)?;
    m.output(out);
    m.count("pairs", rows.len());
    m.count("pairs_skipped", skipped);
    m.count("unknown_fallbacks", fallbacks);
    m.count("method", serde_json::to_value(method).map_err(anyhow::Error::from)?);
    m.write(out, false)?;
    Ok(())
}

/// One text per line: a JSON object's first present field among `fields`,
/// or the raw line when it is not a JSON object.
fn read_texts(path: &Path, fields: &[&str]) -> Result<Vec<String>> {
    io::lines(path)?
        .into_iter()
        .map(|(n, line)| {
            if !line.trim_start().starts_with('{') {
                return Ok(line);
            }
            let v: Value = serde_json::from_str(&line).with_context(|| format!("{}:{n}", path.display()))?;
            fields
                .iter()
                .find_map(|f| v.get(*f).and_then(Value::as_str))
                .map(str::to_string)
                .ok_or_else(|| anyhow!("{}:{n}: no {} field", path.display(), fields.join(" or ")))
        })
        .collect()
}

fn read_labels(path: &Path) -> Result<Vec<(String, Option<usize>)>> {
    io::lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let (id, label) =
                line.split_once('\t').ok_or_else(|| anyhow!("{}:{n}: expected pair_id<TAB>index", path.display()))?;
            let label = match label.trim() {
                "-" => None,
                s => Some(s.parse().with_context(|| format!("{}:{n}: bad index {s:?}", path.display()))?),
            };
            Ok((id.to_string(), label))
        })
        .collect()
}

pub fn eval(
    ctx: &Ctx,
    texts: Option<(&Path, &Path)>,
    selection: Option<(&Path, &Path)>,
    out: Option<&Path>,
) -> CmdResult {
    if texts.is_none() && selection.is_none() {
        return Err(usage("eval needs --predictions/--references or --selections/--labels"));
    }
    let mut m = Manifest::new("eval", &ctx.cfg);
    let mut report = Default::default();
    if let Some((pred, refs)) = texts {
        let c = read_texts(pred, &["text", "prediction", "target"])?;
        let r = read_texts(refs, &["target", "reference", "text"])?;
        let c: Vec<_> = c.iter().map(|s| eval_tokens(s)).collect();
        let r: Vec<_> = r.iter().map(|s| eval_tokens(s)).collect();
        report = evaluate(&c, &r, &ctx.cfg.eval.metrics, ctx.exec).context("evaluating")?;
        m.input(pred)?;
        m.input(refs)?;
    }
    if let Some((sel, labels)) = selection {
        let rows: Vec<Value> = io::read_jsonl(sel)?;
        let chosen: HashMap<&str, Option<usize>> = rows
            .iter()
            .filter_map(|r| Some((r["id"].as_str()?, r["chosen_index"].as_u64().map(|i| i as usize))))
            .collect();
        let labels = read_labels(labels)?;
        let mut predicted = Vec::with_capacity(labels.len());
        for (id, _) in &labels {
            predicted.push(*chosen.get(id.as_str()).ok_or_else(|| anyhow!("label for unknown pair {id}"))?);
        }
        let gold: Vec<_> = labels.iter().map(|l| l.1).collect();
        report.selection = Some(selection_accuracy(&predicted, &gold).context("selection accuracy")?);
        m.input(sel)?;
    }
    let text = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    match out {
        Some(out) => {
            io::write_json(out, &report)?;
            m.output(out);
            m.count("n_examples", report.n_examples);
            m.write(out, false)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
