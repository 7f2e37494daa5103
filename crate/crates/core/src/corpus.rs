//! Entities-definition dataset construction.
//!
//! Definition records (one sentence per head entity, with entity links) are
//! parsed into word tokens, expanded into one example per linked tail,
//! scored by surface and dependency coverage, filtered, and split so that no
//! head entity appears in more than one split.
//!
//! Word tokens: split on whitespace, strip leading and trailing punctuation,
//! drop tokens that are punctuation only. Spans are half-open token ranges.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::kg::KnowledgeGraph;

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("record {id}: malformed JSON: {msg}")]
    Json { id: String, msg: String },
    #[error("record {id}: empty text")]
    EmptyText { id: String },
    #[error("record {id}: {what} span [{start}, {end}) out of range")]
    SpanOutOfRange { id: String, what: String, start: usize, end: usize },
    #[error("record {id}: misaligned span for {what}")]
    MisalignedSpan { id: String, what: String },
    #[error("record {id}: unresolvable head key {key}")]
    UnresolvedHead { id: String, key: String },
    #[error("overlapping head and tail spans")]
    OverlappingSpans,
    #[error("parse has {parse} word tokens but the example has {example}")]
    MisalignedParse { parse: usize, example: usize },
    #[error("no dependency path between head and tail")]
    DisconnectedParse,
    #[error("sentence {sentence}: {reason}")]
    Conllu { sentence: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("need at least {needed} distinct head entities, found {found}")]
    TooFewHeads { needed: usize, found: usize },
    #[error("subsample fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

/// Half-open token range `[start, end)`, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl From<[usize; 2]> for TokenSpan {
    fn from(v: [usize; 2]) -> Self {
        TokenSpan { start: v[0], end: v[1] }
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(s: TokenSpan) -> Self {
        [s.start, s.end]
    }
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1 | 0x00AB | 0x00BB | 0x00BF
            | 0x2010..=0x2027 | 0x2030..=0x205E
            | 0x3001..=0x3003 | 0x3008..=0x3011)
}

/// A word token with its character (not byte) offsets in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordToken {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

pub fn word_tokens(text: &str) -> Vec<WordToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && is_punct(chars[s]) {
            s += 1;
        }
        while e > s && is_punct(chars[e - 1]) {
            e -= 1;
        }
        if s < e {
            out.push(WordToken { text: chars[s..e].iter().collect(), char_start: s, char_end: e });
        }
        i = j;
    }
    out
}

/// True when `form` survives word tokenization (is not punctuation only).
pub fn is_word(form: &str) -> bool {
    form.chars().any(|c| !c.is_whitespace() && !is_punct(c))
}

#[derive(Debug, Clone, Deserialize)]
struct RawHead {
    key: String,
    #[serde(default)]
    surface: String,
    char_span: [usize; 2],
}

#[derive(Debug, Clone, Deserialize)]
struct RawLink {
    key: String,
    #[serde(default)]
    surface: String,
    char_start: usize,
    char_end: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct RawRecord {
    id: String,
    head: RawHead,
    text: String,
    #[serde(default)]
    links: Vec<RawLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub key: String,
    pub surface: String,
    pub span: TokenSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionRecord {
    pub id: String,
    pub head_key: String,
    pub head_surface: String,
    pub head_span: TokenSpan,
    pub text: String,
    pub tokens: Vec<String>,
    pub links: Vec<Link>,
}

fn char_span_to_tokens(
    id: &str,
    what: &str,
    tokens: &[WordToken],
    n_chars: usize,
    start: usize,
    end: usize,
) -> Result<TokenSpan, CorpusError> {
    if start >= end || end > n_chars {
        return Err(CorpusError::SpanOutOfRange { id: id.into(), what: what.into(), start, end });
    }
    let misaligned = || CorpusError::MisalignedSpan { id: id.into(), what: what.into() };
    let mut first = None;
    let mut last = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.char_start < end && t.char_end > start {
            if t.char_start < start || t.char_end > end {
                return Err(misaligned());
            }
            first.get_or_insert(i);
            last = i;
        }
    }
    let first = first.ok_or_else(misaligned)?;
    Ok(TokenSpan::new(first, last + 1))
}

impl DefinitionRecord {
    /// Parses one JSON-lines record without checking the head against a
    /// graph.
    pub fn from_json(line: &str) -> Result<Self, CorpusError> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| {
            // recover the id for the message if the line is at least an object
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|x| x.as_str()).map(str::to_string))
                .unwrap_or_else(|| "?".to_string());
            CorpusError::Json { id, msg: e.to_string() }
        })?;
        if raw.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { id: raw.id });
        }
        let toks = word_tokens(&raw.text);
        let n_chars = raw.text.chars().count();
        let head_span = char_span_to_tokens(
            &raw.id,
            "head",
            &toks,
            n_chars,
            raw.head.char_span[0],
            raw.head.char_span[1],
        )?;
        let links = raw
            .links
            .iter()
            .map(|l| {
                let span = char_span_to_tokens(
                    &raw.id,
                    &format!("link {}", l.key),
                    &toks,
                    n_chars,
                    l.char_start,
                    l.char_end,
                )?;
                Ok(Link { key: l.key.clone(), surface: l.surface.clone(), span })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        Ok(DefinitionRecord {
            id: raw.id,
            head_key: raw.head.key,
            head_surface: raw.head.surface,
            head_span,
            text: raw.text,
            tokens: toks.into_iter().map(|t| t.text).collect(),
            links,
        })
    }
}

/// Parses a record and checks that its head entity exists in `g`.
pub fn parse_definition_record(line: &str, g: &KnowledgeGraph) -> Result<DefinitionRecord, CorpusError> {
    let rec = DefinitionRecord::from_json(line)?;
    if g.entity_by_key(&rec.head_key).is_none() {
        return Err(CorpusError::UnresolvedHead { id: rec.id, key: rec.head_key });
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationExample {
    /// `<record id>#<link index>`
    pub id: String,
    pub record_id: String,
    pub head_key: String,
    pub tail_key: String,
    pub target: String,
    pub tokens: Vec<String>,
    pub head_span: TokenSpan,
    pub tail_span: TokenSpan,
}

/// One example per linked tail entity. Self-links, links overlapping the
/// head mention and repeated tails are skipped.
pub fn extract_pairs(record: &DefinitionRecord) -> Vec<RelationExample> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, link) in record.links.iter().enumerate() {
        if link.key == record.head_key || link.span.overlaps(&record.head_span) {
            continue;
        }
        if !seen.insert(link.key.as_str()) {
            continue;
        }
        out.push(RelationExample {
            id: format!("{}#{}", record.id, i),
            record_id: record.id.clone(),
            head_key: record.head_key.clone(),
            tail_key: link.key.clone(),
            target: record.text.clone(),
            tokens: record.tokens.clone(),
            head_span: record.head_span,
            tail_span: link.span,
        });
    }
    out
}

fn check_spans(ex: &RelationExample) -> Result<(), CorpusError> {
    let n = ex.tokens.len();
    for (what, s) in [("head", ex.head_span), ("tail", ex.tail_span)] {
        if s.is_empty() || s.end > n {
            return Err(CorpusError::SpanOutOfRange {
                id: ex.id.clone(),
                what: what.into(),
                start: s.start,
                end: s.end,
            });
        }
    }
    if ex.head_span.overlaps(&ex.tail_span) {
        return Err(CorpusError::OverlappingSpans);
    }
    Ok(())
}

/// Share of word tokens from the start of the earlier span to the end of
/// the later one, both inclusive.
pub fn surface_coverage(ex: &RelationExample) -> Result<f64, CorpusError> {
    check_spans(ex)?;
    let start = ex.head_span.start.min(ex.tail_span.start);
    let end = ex.head_span.end.max(ex.tail_span.end);
    Ok((end - start) as f64 / ex.tokens.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepToken {
    pub form: String,
    /// 1-based head index; 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub sent_id: Option<String>,
    pub tokens: Vec<DepToken>,
    /// 1-based index of the root token.
    pub root: usize,
}

impl DependencyGraph {
    /// Validates the head links and builds a graph.
    pub fn new(sent_id: Option<String>, tokens: Vec<DepToken>) -> Result<Self, String> {
        let n = tokens.len();
        if n == 0 {
            return Err("empty sentence".into());
        }
        let roots: Vec<usize> =
            tokens.iter().enumerate().filter(|(_, t)| t.head == 0).map(|(i, _)| i + 1).collect();
        match roots.len() {
            0 => return Err("no root".into()),
            1 => {}
            _ => return Err("multiple roots".into()),
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.head > n {
                return Err(format!("token {} has head {} out of range", i + 1, t.head));
            }
            if t.head == i + 1 {
                return Err("cycle".into());
            }
        }
        // every token must reach the root within n steps
        for start in 1..=n {
            let mut cur = start;
            let mut steps = 0;
            while cur != 0 {
                cur = tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err("cycle".into());
                }
            }
        }
        Ok(DependencyGraph { sent_id, root: roots[0], tokens })
    }

    /// Parent links restricted to word tokens (punctuation-only forms
    /// removed, their dependents re-attached to the nearest kept ancestor).
    /// Indices are 0-based word positions.
    pub fn word_tree(&self) -> Vec<Option<usize>> {
        let keep: Vec<bool> = self.tokens.iter().map(|t| is_word(&t.form)).collect();
        let mut word_index = vec![usize::MAX; self.tokens.len()];
        let mut n = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                word_index[i] = n;
                n += 1;
            }
        }
        let mut parents = Vec::with_capacity(n);
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            let mut h = self.tokens[i].head;
            while h != 0 && !keep[h - 1] {
                h = self.tokens[h - 1].head;
            }
            parents.push(if h == 0 { None } else { Some(word_index[h - 1]) });
        }
        parents
    }

    pub fn n_words(&self) -> usize {
        self.tokens.iter().filter(|t| is_word(&t.form)).count()
    }
}

/// Reads 10-column CoNLL-U blocks. Multiword (`1-2`) and empty (`1.1`)
/// rows are skipped; a `# sent_id = ...` comment names the sentence.
pub fn load_conllu<R: BufRead>(source: R) -> Result<Vec<DependencyGraph>, CorpusError> {
    let mut out = Vec::new();
    let mut tokens: Vec<DepToken> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut in_block = false;

    let finish = |tokens: &mut Vec<DepToken>, sent_id: &mut Option<String>, out: &mut Vec<DependencyGraph>| {
        let idx = out.len();
        let g = DependencyGraph::new(sent_id.take(), std::mem::take(tokens))
            .map_err(|reason| CorpusError::Conllu { sentence: idx, reason })?;
        out.push(g);
        Ok::<(), CorpusError>(())
    };

    for line in source.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if in_block {
                finish(&mut tokens, &mut sent_id, &mut out)?;
                in_block = false;
            }
            continue;
        }
        in_block = true;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("sent_id") {
                let v = v.trim_start().trim_start_matches('=').trim();
                sent_id = Some(v.to_string());
            }
            continue;
        }
        let sentence = out.len();
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Conllu {
                sentence,
                reason: format!("expected 10 columns, got {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| CorpusError::Conllu {
            sentence,
            reason: format!("bad token id {:?}", cols[0]),
        })?;
        if id != tokens.len() + 1 {
            return Err(CorpusError::Conllu {
                sentence,
                reason: format!("token id {id} out of sequence"),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| CorpusError::Conllu {
            sentence,
            reason: format!("bad head {:?} for token {id}", cols[6]),
        })?;
        tokens.push(DepToken { form: cols[1].to_string(), head, deprel: cols[7].to_string() });
    }
    if in_block {
        finish(&mut tokens, &mut sent_id, &mut out)?;
    }
    Ok(out)
}

/// Keys parses by `sent_id`, falling back to the block's position.
pub fn index_parses(parses: Vec<DependencyGraph>) -> HashMap<String, DependencyGraph> {
    parses
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p.sent_id.clone().unwrap_or_else(|| i.to_string()), p))
        .collect()
}

fn bfs_tree(adj: &[Vec<usize>], src: usize) -> (Vec<usize>, Vec<usize>) {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut prev = vec![usize::MAX; adj.len()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                prev[v] = u;
                q.push_back(v);
            }
        }
    }
    (dist, prev)
}

/// Share of word tokens covered by the shortest undirected tree path
/// between the head and tail mentions, plus all mention tokens.
///
/// The path endpoints are the head/tail tokens at minimal tree distance;
/// if several endpoint pairs tie, the smallest covered set is used, which
/// keeps the score symmetric in head and tail.
pub fn dependency_coverage(ex: &RelationExample, parse: &DependencyGraph) -> Result<f64, CorpusError> {
    check_spans(ex)?;
    let parents = parse.word_tree();
    let n = ex.tokens.len();
    if parents.len() != n {
        return Err(CorpusError::MisalignedParse { parse: parents.len(), example: n });
    }
    let mut adj = vec![Vec::new(); n];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = *p {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    let mut best: Option<(usize, usize)> = None; // (length, covered)
    for h in ex.head_span.indices() {
        let (dist, prev) = bfs_tree(&adj, h);
        for t in ex.tail_span.indices() {
            if dist[t] == usize::MAX {
                continue;
            }
            let mut covered: HashSet<usize> = ex.head_span.indices().chain(ex.tail_span.indices()).collect();
            let mut cur = t;
            while cur != h {
                covered.insert(cur);
                cur = prev[cur];
            }
            let cand = (dist[t], covered.len());
            if best.is_none_or(|b| cand < b) {
                best = Some(cand);
            }
        }
    }
    let (_, covered) = best.ok_or(CorpusError::DisconnectedParse)?;
    Ok(covered as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    #[serde(flatten)]
    pub example: RelationExample,
    pub surface_coverage: f64,
    pub dependency_coverage: f64,
}

impl ScoredExample {
    pub fn mean_coverage(&self) -> f64 {
        (self.surface_coverage + self.dependency_coverage) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedExample {
    #[serde(flatten)]
    pub example: RelationExample,
    pub surface_coverage: Option<f64>,
    pub dependency_coverage: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<ScoredExample>,
    pub dropped: Vec<DroppedExample>,
}

/// Keeps examples whose mean of surface and dependency coverage is strictly
/// above `threshold`. Examples without a parse (looked up by record id) or
/// whose coverage cannot be computed are dropped with a reason.
pub fn filter_examples(
    examples: &[RelationExample],
    parses: &HashMap<String, DependencyGraph>,
    threshold: f64,
    exec: Execution,
) -> FilterOutcome {
    let scored = exec.map(examples, |ex| -> Result<ScoredExample, DroppedExample> {
        let drop = |surface, dependency, reason: String| DroppedExample {
            example: ex.clone(),
            surface_coverage: surface,
            dependency_coverage: dependency,
            reason,
        };
        let surface = surface_coverage(ex).map_err(|e| drop(None, None, e.to_string()))?;
        let parse = parses
            .get(&ex.record_id)
            .ok_or_else(|| drop(Some(surface), None, "no parse".to_string()))?;
        let dependency =
            dependency_coverage(ex, parse).map_err(|e| drop(Some(surface), None, e.to_string()))?;
        Ok(ScoredExample { example: ex.clone(), surface_coverage: surface, dependency_coverage: dependency })
    });
    let mut out = FilterOutcome::default();
    for s in scored {
        match s {
            Ok(s) if s.mean_coverage() > threshold => out.kept.push(s),
            Ok(s) => out.dropped.push(DroppedExample {
                reason: format!("mean coverage {:.4} <= {threshold}", s.mean_coverage()),
                surface_coverage: Some(s.surface_coverage),
                dependency_coverage: Some(s.dependency_coverage),
                example: s.example,
            }),
            Err(d) => out.dropped.push(d),
        }
    }
    out
}

/// Anything that belongs to a head entity and can be split by it.
pub trait HeadKeyed {
    fn head_key(&self) -> &str;
}

impl HeadKeyed for RelationExample {
    fn head_key(&self) -> &str {
        &self.head_key
    }
}

impl HeadKeyed for ScoredExample {
    fn head_key(&self) -> &str {
        &self.example.head_key
    }
}

/// Serialized training/evaluation record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub head_key: String,
    pub tail_key: String,
    pub encoding_variant: crate::encode::Variant,
    pub input: String,
    pub target: String,
}

impl HeadKeyed for DatasetRecord {
    fn head_key(&self) -> &str {
        &self.head_key
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Groups items by head entity, shuffles the groups under `seed` and cuts
/// the shuffled sequence so that each split's item count lands within one
/// group of its target. Items keep their input order within a split.
pub fn split_dataset<T: HeadKeyed + Clone>(
    items: &[T],
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<T>, CorpusError> {
    if fractions.iter().any(|f| f.is_nan() || *f <= 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidFractions(fractions));
    }
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    let mut sizes: Vec<usize> = Vec::new();
    let item_group: Vec<usize> = items
        .iter()
        .map(|it| {
            *group_of.entry(it.head_key()).or_insert_with(|| {
                sizes.push(0);
                sizes.len() - 1
            })
        })
        .collect();
    for &g in &item_group {
        sizes[g] += 1;
    }
    let n_groups = sizes.len();
    if n_groups < 3 {
        return Err(CorpusError::TooFewHeads { needed: 3, found: n_groups });
    }

    let mut order: Vec<usize> = (0..n_groups).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // a group goes to the split whose cumulative target its midpoint falls in
    let total = items.len() as f64;
    let b1 = fractions[0] * total;
    let b2 = (fractions[0] + fractions[1]) * total;
    let (mut c1, mut c2) = (0usize, 0usize);
    let mut cum = 0.0;
    for (pos, &g) in order.iter().enumerate() {
        let mid = cum + sizes[g] as f64 / 2.0;
        if mid < b1 {
            c1 = pos + 1;
        }
        if mid < b2 {
            c2 = pos + 1;
        }
        cum += sizes[g] as f64;
    }
    // every split gets at least one group
    let c1 = c1.clamp(1, n_groups - 2);
    let c2 = c2.clamp(c1 + 1, n_groups - 1);

    let mut split_of_group = vec![0u8; n_groups];
    for (pos, &g) in order.iter().enumerate() {
        split_of_group[g] = if pos < c1 {
            0
        } else if pos < c2 {
            1
        } else {
            2
        };
    }
    let mut out = DatasetSplit { train: Vec::new(), dev: Vec::new(), test: Vec::new(), seed };
    for (it, &g) in items.iter().zip(&item_group) {
        match split_of_group[g] {
            0 => out.train.push(it.clone()),
            1 => out.dev.push(it.clone()),
            _ => out.test.push(it.clone()),
        }
    }
    Ok(out)
}

/// Uniformly samples `round(fraction * |train|)` training items (at least
/// one when train is non-empty), keeping their order. Dev and test are
/// untouched.
pub fn subsample<T: Clone>(
    split: &DatasetSplit<T>,
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<T>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let n = split.train.len();
    let keep = if n == 0 { 0 } else { ((fraction * n as f64).round() as usize).clamp(1, n) };
    let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, keep).into_vec();
    idx.sort_unstable();
    Ok(DatasetSplit {
        train: idx.into_iter().map(|i| split.train[i].clone()).collect(),
        dev: split.dev.clone(),
        test: split.test.clone(),
        seed: split.seed,
    })
}
