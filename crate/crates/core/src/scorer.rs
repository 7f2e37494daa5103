//! Generation and scoring backends.
//!
//! A backend realizes a left-to-right conditional distribution over output
//! tokens given an encoded input. `generate` searches it, `score` evaluates a
//! given target, and the confidence of an input is the length-normalized
//! log-probability (natural log) of the backend's own best generation.
//!
//! [`NgramCopyModel`] is the built-in statistical backend: an interpolated,
//! additively smoothed n-gram language model over target sentences mixed with
//! a copy distribution over the input's word tokens:
//!
//! ```text
//! P(w | history, input) = (1 - γ) · Σ_k λ_k P_k(w | last k-1 tokens) + γ · Copy(w | input)
//! P_k(w | h) = (c(h, w) + δ) / (c(h) + δ |V|)
//! ```
//!
//! Input tokens missing from the training vocabulary are reachable only
//! through the copy term; any other unseen token is scored as `<unk>`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_punct, is_word};
use crate::encode::EncodedInput;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const UNK_ID: u32 = 0;
const EOS_ID: u32 = 1;
const BOS_ID: u32 = 2;

pub const MODEL_FORMAT: &str = "relmod-ngram-copy";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("target must contain at least one token")]
    EmptyTarget,
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("generation result violates {field}: {reason}")]
    Invariant { field: &'static str, reason: String },
    #[error("no result stored for input {0:?}")]
    MissingInput(String),
    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("protocol error in field {field}: {reason}")]
    Protocol { field: String, reason: String },
    #[error("server returned {status}: {message}")]
    Server { status: u16, message: String },
    #[error("model file error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam_width: usize,
    pub max_len: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { beam_width: 4, max_len: 64 }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.beam_width == 0 {
            return Err(ScorerError::InvalidParams("beam_width must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(ScorerError::InvalidParams("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Word tokens with leading and trailing punctuation split off as separate
/// tokens: `"France."` becomes `["France", "."]`.
pub fn model_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let (mut s, mut e) = (0, chars.len());
        while s < e && is_punct(chars[s]) {
            s += 1;
        }
        while e > s && is_punct(chars[e - 1]) {
            e -= 1;
        }
        out.extend(chars[..s].iter().map(|c| c.to_string()));
        if s < e {
            out.push(chars[s..e].iter().collect());
        }
        out.extend(chars[e.max(s)..].iter().map(|c| c.to_string()));
    }
    out
}

/// Tokens of a reference sentence followed by the end marker.
pub fn target_tokens(text: &str) -> Vec<String> {
    let mut t = model_tokens(text);
    t.push(EOS.to_string());
    t
}

/// Joins tokens with spaces, attaching closing punctuation to the previous
/// token and opening brackets to the next one. Markers are dropped.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    for tok in tokens.iter().map(|t| t.as_ref()) {
        if tok == EOS || tok == BOS {
            continue;
        }
        let closing = tok.chars().count() == 1 && matches!(tok, "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "%");
        if !out.is_empty() && !closing && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = matches!(tok, "(" | "[");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub tokens: Vec<String>,
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub normalized_score: f64,
}

impl GenerationResult {
    /// Builds a result, deriving `text` from the tokens.
    pub fn new(tokens: Vec<String>, token_logprobs: Vec<f64>) -> Result<Self, ScorerError> {
        let text = detokenize(&tokens);
        Self::with_text(tokens, text, token_logprobs)
    }

    /// Builds a result with backend-supplied `text`, checking every
    /// invariant and recomputing the aggregates.
    pub fn with_text(
        tokens: Vec<String>,
        text: String,
        token_logprobs: Vec<f64>,
    ) -> Result<Self, ScorerError> {
        if tokens.is_empty() {
            return Err(ScorerError::Invariant { field: "tokens", reason: "empty".into() });
        }
        if tokens.len() != token_logprobs.len() {
            return Err(ScorerError::Invariant {
                field: "token_logprobs",
                reason: format!("{} log-probs for {} tokens", token_logprobs.len(), tokens.len()),
            });
        }
        if let Some((i, lp)) =
            token_logprobs.iter().enumerate().find(|(_, lp)| !lp.is_finite() || **lp > 0.0)
        {
            return Err(ScorerError::Invariant {
                field: "token_logprobs",
                reason: format!("entry {i} is {lp}, expected a finite value <= 0"),
            });
        }
        let total_logprob: f64 = token_logprobs.iter().sum();
        let normalized_score = total_logprob / tokens.len() as f64;
        Ok(GenerationResult { tokens, text, token_logprobs, total_logprob, normalized_score })
    }
}

/// Anything that can generate from and score against an encoded input.
/// Implementations must be deterministic for fixed state and parameters.
pub trait ScorerBackend: Send + Sync {
    fn generate(&self, input: &EncodedInput, params: &DecodeParams) -> Result<GenerationResult, ScorerError>;

    /// Per-token log-probabilities of `target`, scored verbatim.
    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError>;

    /// Best generation and its length-normalized log-probability.
    fn confidence(
        &self,
        input: &EncodedInput,
        params: &DecodeParams,
    ) -> Result<(GenerationResult, f64), ScorerError> {
        let g = self.generate(input, params)?;
        let c = g.normalized_score;
        Ok((g, c))
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for &T {
    fn generate(&self, input: &EncodedInput, params: &DecodeParams) -> Result<GenerationResult, ScorerError> {
        (**self).generate(input, params)
    }
    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError> {
        (**self).score(input, target)
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for Box<T> {
    fn generate(&self, input: &EncodedInput, params: &DecodeParams) -> Result<GenerationResult, ScorerError> {
        (**self).generate(input, params)
    }
    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError> {
        (**self).score(input, target)
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for std::sync::Arc<T> {
    fn generate(&self, input: &EncodedInput, params: &DecodeParams) -> Result<GenerationResult, ScorerError> {
        (**self).generate(input, params)
    }
    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError> {
        (**self).score(input, target)
    }
}

pub fn generate(
    backend: &dyn ScorerBackend,
    input: &EncodedInput,
    params: &DecodeParams,
) -> Result<GenerationResult, ScorerError> {
    params.validate()?;
    backend.generate(input, params)
}

pub fn score(
    backend: &dyn ScorerBackend,
    input: &EncodedInput,
    target: &[String],
) -> Result<GenerationResult, ScorerError> {
    if target.is_empty() {
        return Err(ScorerError::EmptyTarget);
    }
    backend.score(input, target)
}

pub fn confidence(
    backend: &dyn ScorerBackend,
    input: &EncodedInput,
    params: &DecodeParams,
) -> Result<(GenerationResult, f64), ScorerError> {
    params.validate()?;
    backend.confidence(input, params)
}

/// Replays precomputed results keyed by input text. Useful for re-running
/// selection from scores produced elsewhere.
#[derive(Debug, Clone, Default)]
pub struct LookupBackend {
    results: HashMap<String, GenerationResult>,
}

impl LookupBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, input: impl Into<String>, result: GenerationResult) {
        self.results.insert(input.into(), result);
    }

    /// One single-token result per input whose log-probability, and hence
    /// confidence, is the given score.
    pub fn from_scores<S: Into<String>>(
        scores: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<Self, ScorerError> {
        let mut b = Self::new();
        for (input, s) in scores {
            b.insert(input, GenerationResult::new(vec![EOS.to_string()], vec![s])?);
        }
        Ok(b)
    }
}

impl ScorerBackend for LookupBackend {
    fn generate(&self, input: &EncodedInput, _params: &DecodeParams) -> Result<GenerationResult, ScorerError> {
        self.results.get(&input.text).cloned().ok_or_else(|| ScorerError::MissingInput(input.text.clone()))
    }

    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError> {
        match self.results.get(&input.text) {
            Some(r) if r.tokens == target => Ok(r.clone()),
            _ => Err(ScorerError::MissingInput(input.text.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub order: usize,
    /// Interpolation weights for orders 1..=order; must sum to 1.
    pub lm_weights: Vec<f64>,
    pub copy_weight: f64,
    pub smoothing: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { order: 3, lm_weights: vec![0.1, 0.3, 0.6], copy_weight: 0.3, smoothing: 0.1 }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: String| Err(ScorerError::InvalidConfig(m));
        if self.order == 0 {
            return bad("order must be at least 1".into());
        }
        if self.lm_weights.len() != self.order {
            return bad(format!("{} weights for order {}", self.lm_weights.len(), self.order));
        }
        if self.lm_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative".into());
        }
        if (self.lm_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must sum to 1".into());
        }
        if !(0.0..1.0).contains(&self.copy_weight) {
            return bad(format!("copy weight {} outside [0, 1)", self.copy_weight));
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return bad("smoothing must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Copy distribution for one input: probabilities over extended ids, where
/// ids at or above the vocabulary size index `oov`.
struct CopyTable {
    oov: Vec<String>,
    probs: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramCopyModel {
    config: NgramConfig,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `tables[k]` maps contexts of length `k` to successor counts.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

pub fn train_baseline(
    dataset: &[(EncodedInput, String)],
    config: NgramConfig,
) -> Result<NgramCopyModel, ScorerError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ScorerError::EmptyDataset);
    }
    let mut vocab: Vec<String> = vec![UNK.into(), EOS.into(), BOS.into()];
    let mut index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    let mut tables: Vec<HashMap<Vec<u32>, ContextCounts>> = vec![HashMap::new(); config.order];
    for (_, target) in dataset {
        let mut seq: Vec<u32> = vec![BOS_ID; config.order - 1];
        for tok in model_tokens(target) {
            let id = *index.entry(tok.clone()).or_insert_with(|| {
                vocab.push(tok);
                (vocab.len() - 1) as u32
            });
            seq.push(id);
        }
        seq.push(EOS_ID);
        for pos in config.order - 1..seq.len() {
            let w = seq[pos];
            for (k, table) in tables.iter_mut().enumerate() {
                let ctx = seq[pos - k..pos].to_vec();
                let c = table.entry(ctx).or_default();
                c.total += 1;
                *c.next.entry(w).or_default() += 1;
            }
        }
    }
    Ok(NgramCopyModel { config, vocab, index, tables })
}

#[derive(Clone)]
struct Hyp {
    ids: Vec<u32>,
    logprobs: Vec<f64>,
    sum: f64,
}

impl NgramCopyModel {
    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Number of outcomes the language model distributes mass over (every
    /// vocabulary entry except the start marker).
    fn n_outcomes(&self) -> f64 {
        (self.vocab.len() - 1) as f64
    }

    fn copy_table(&self, input: &EncodedInput) -> CopyTable {
        let words: Vec<String> = model_tokens(&input.text).into_iter().filter(|t| is_word(t)).collect();
        let mut oov: Vec<String> = Vec::new();
        let mut probs: Vec<(u32, f64)> = Vec::new();
        if words.is_empty() {
            return CopyTable { oov, probs };
        }
        let share = 1.0 / words.len() as f64;
        for w in &words {
            let id = match self.index.get(w) {
                Some(&id) if id != BOS_ID => id,
                _ => match oov.iter().position(|o| o == w) {
                    Some(p) => self.vocab.len() as u32 + p as u32,
                    None => {
                        oov.push(w.clone());
                        self.vocab.len() as u32 + oov.len() as u32 - 1
                    }
                },
            };
            match probs.iter_mut().find(|(i, _)| *i == id) {
                Some(e) => e.1 += share,
                None => probs.push((id, share)),
            }
        }
        CopyTable { oov, probs }
    }

    /// Inputs without word tokens have nothing to copy; the LM takes all mass.
    fn copy_weight(&self, copy: &CopyTable) -> f64 {
        if copy.probs.is_empty() {
            0.0
        } else {
            self.config.copy_weight
        }
    }

    fn lm_id(&self, ext: u32) -> u32 {
        if (ext as usize) < self.vocab.len() {
            ext
        } else {
            UNK_ID
        }
    }

    /// Contexts for each order from a history of extended ids.
    fn contexts(&self, history: &[u32]) -> Vec<Vec<u32>> {
        let n = self.config.order;
        let mut padded: Vec<u32> = vec![BOS_ID; n - 1];
        padded.extend(history.iter().map(|&x| self.lm_id(x)));
        let end = padded.len();
        (0..n).map(|k| padded[end - k..end].to_vec()).collect()
    }

    /// Per-order (weight / denominator) factors and the smoothing floor
    /// shared by every outcome.
    fn order_terms<'a>(&'a self, ctxs: &[Vec<u32>]) -> (f64, Vec<(f64, Option<&'a ContextCounts>)>) {
        let delta = self.config.smoothing;
        let v = self.n_outcomes();
        let mut floor = 0.0;
        let mut terms = Vec::with_capacity(ctxs.len());
        for (k, ctx) in ctxs.iter().enumerate() {
            let counts = self.tables[k].get(ctx);
            let den = counts.map_or(0, |c| c.total) as f64 + delta * v;
            let f = self.config.lm_weights[k] / den;
            floor += f * delta;
            terms.push((f, counts));
        }
        (floor, terms)
    }

    /// Interpolated LM probability of vocabulary id `w` (not the start marker).
    fn lm_prob(&self, ctxs: &[Vec<u32>], w: u32) -> f64 {
        let (mut p, terms) = self.order_terms(ctxs);
        for (f, counts) in terms {
            if let Some(c) = counts.and_then(|c| c.next.get(&w)) {
                p += f * *c as f64;
            }
        }
        p
    }

    /// Full next-token distribution over extended ids.
    fn distribution(&self, history: &[u32], copy: &CopyTable) -> Vec<f64> {
        let ctxs = self.contexts(history);
        let (floor, terms) = self.order_terms(&ctxs);
        let mut lm = vec![floor; self.vocab.len()];
        lm[BOS_ID as usize] = 0.0;
        for (f, counts) in terms {
            if let Some(c) = counts {
                for (&w, &n) in &c.next {
                    lm[w as usize] += f * n as f64;
                }
            }
        }
        let gamma = self.copy_weight(copy);
        let mut p: Vec<f64> = lm.iter().map(|x| (1.0 - gamma) * x).collect();
        p.resize(self.vocab.len() + copy.oov.len(), 0.0);
        for &(id, c) in &copy.probs {
            p[id as usize] += gamma * c;
        }
        p
    }

    fn prob(&self, history: &[u32], w: u32, copy: &CopyTable) -> f64 {
        let gamma = self.copy_weight(copy);
        let lm = if (w as usize) < self.vocab.len() && w != BOS_ID {
            self.lm_prob(&self.contexts(history), w)
        } else {
            0.0
        };
        let mut p = (1.0 - gamma) * lm;
        if let Some(&(_, c)) = copy.probs.iter().find(|(i, _)| *i == w) {
            p += gamma * c;
        }
        p
    }

    fn token_str<'a>(&'a self, id: u32, copy: &'a CopyTable) -> &'a str {
        let v = self.vocab.len();
        if (id as usize) < v {
            &self.vocab[id as usize]
        } else {
            &copy.oov[id as usize - v]
        }
    }

    fn ext_id(&self, tok: &str, copy: &CopyTable) -> u32 {
        match self.index.get(tok) {
            Some(&id) if id != BOS_ID => id,
            _ => match copy.oov.iter().position(|o| o == tok) {
                Some(p) => (self.vocab.len() + p) as u32,
                None => UNK_ID,
            },
        }
    }

    fn finish(&self, h: &Hyp, copy: &CopyTable) -> Result<GenerationResult, ScorerError> {
        let tokens = h.ids.iter().map(|&i| self.token_str(i, copy).to_string()).collect();
        GenerationResult::new(tokens, h.logprobs.clone())
    }

    fn beam(&self, copy: &CopyTable, params: &DecodeParams) -> Vec<Hyp> {
        let width = params.beam_width;
        let mut live = vec![Hyp { ids: Vec::new(), logprobs: Vec::new(), sum: 0.0 }];
        let mut finished: Vec<Hyp> = Vec::new();
        for _ in 0..params.max_len {
            let mut cands: Vec<(f64, usize, u32, f64)> = Vec::new();
            for (hi, h) in live.iter().enumerate() {
                let dist = self.distribution(&h.ids, copy);
                let mut top: Vec<(u32, f64)> = dist
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(i, p)| (i as u32, *p))
                    .collect();
                let by_prob = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
                if top.len() > width {
                    top.select_nth_unstable_by(width - 1, by_prob);
                    top.truncate(width);
                }
                for (w, p) in top {
                    let lp = p.ln();
                    cands.push((h.sum + lp, hi, w, lp));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(width);
            for (sum, hi, w, lp) in cands {
                if next.len() >= width || finished.len() >= width {
                    break;
                }
                let mut h = live[hi].clone();
                h.ids.push(w);
                h.logprobs.push(lp);
                h.sum = sum;
                if w == EOS_ID {
                    finished.push(h);
                } else {
                    next.push(h);
                }
            }
            live = next;
            if live.is_empty() || finished.len() >= width {
                break;
            }
        }
        // out of length: unfinished hypotheses are returned truncated
        finished.extend(live);
        finished
    }

    fn best(hyps: Vec<Hyp>) -> Hyp {
        hyps.into_iter()
            .max_by(|a, b| {
                let na = a.sum / a.ids.len() as f64;
                let nb = b.sum / b.ids.len() as f64;
                na.total_cmp(&nb).then(a.sum.total_cmp(&b.sum)).then(b.ids.cmp(&a.ids))
            })
            .expect("beam produces at least one hypothesis")
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), ScorerError> {
        let tables: Vec<Vec<StoredContext>> = self
            .tables
            .iter()
            .map(|t| {
                let mut rows: Vec<StoredContext> = t
                    .iter()
                    .map(|(ctx, c)| {
                        let mut next: Vec<(u32, u64)> = c.next.iter().map(|(&a, &b)| (a, b)).collect();
                        next.sort_unstable();
                        StoredContext { context: ctx.clone(), total: c.total, next }
                    })
                    .collect();
                rows.sort_by(|a, b| a.context.cmp(&b.context));
                rows
            })
            .collect();
        let stored = StoredModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tables,
        };
        serde_json::to_writer(w, &stored).map_err(|e| ScorerError::Format(e.to_string()))
    }

    pub fn load<R: Read>(r: R) -> Result<Self, ScorerError> {
        let stored: StoredModel =
            serde_json::from_reader(r).map_err(|e| ScorerError::Format(e.to_string()))?;
        if stored.format != MODEL_FORMAT {
            return Err(ScorerError::Format(format!("unexpected format {:?}", stored.format)));
        }
        if stored.version != MODEL_VERSION {
            return Err(ScorerError::Format(format!("unsupported version {}", stored.version)));
        }
        stored.config.validate()?;
        if stored.tables.len() != stored.config.order {
            return Err(ScorerError::Format("table count does not match order".into()));
        }
        let specials = [UNK, EOS, BOS];
        if stored.vocab.len() < 3 || stored.vocab[..3].iter().zip(specials).any(|(a, b)| a != b) {
            return Err(ScorerError::Format("vocabulary must start with <unk>, </s>, <s>".into()));
        }
        let n = stored.vocab.len() as u32;
        let index = stored.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut tables = Vec::with_capacity(stored.tables.len());
        for (k, rows) in stored.tables.into_iter().enumerate() {
            let mut t = HashMap::with_capacity(rows.len());
            for row in rows {
                if row.context.len() != k || row.context.iter().chain(row.next.iter().map(|x| &x.0)).any(|&i| i >= n) {
                    return Err(ScorerError::Format(format!("bad context row in table {k}")));
                }
                t.insert(row.context, ContextCounts { total: row.total, next: row.next.into_iter().collect() });
            }
            tables.push(t);
        }
        Ok(NgramCopyModel { config: stored.config, vocab: stored.vocab, index, tables })
    }

    pub fn save_file(&self, path: &Path) -> Result<(), ScorerError> {
        let f = std::fs::File::create(path).map_err(|e| ScorerError::Format(e.to_string()))?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush().map_err(|e| ScorerError::Format(e.to_string()))
    }

    pub fn load_file(path: &Path) -> Result<Self, ScorerError> {
        let f = std::fs::File::open(path).map_err(|e| ScorerError::Format(format!("{}: {e}", path.display())))?;
        Self::load(std::io::BufReader::new(f))
    }
}

#[derive(Serialize, Deserialize)]
struct StoredContext {
    context: Vec<u32>,
    total: u64,
    next: Vec<(u32, u64)>,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    format: String,
    version: u32,
    config: NgramConfig,
    vocab: Vec<String>,
    tables: Vec<Vec<StoredContext>>,
}

impl ScorerBackend for NgramCopyModel {
    fn generate(&self, input: &EncodedInput, params: &DecodeParams) -> Result<GenerationResult, ScorerError> {
        params.validate()?;
        let copy = self.copy_table(input);
        let mut pool = self.beam(&copy, params);
        if params.beam_width > 1 {
            // the greedy hypothesis competes too, so a wider beam never
            // returns a worse normalized score than greedy decoding
            pool.extend(self.beam(&copy, &DecodeParams { beam_width: 1, ..*params }));
        }
        self.finish(&Self::best(pool), &copy)
    }

    fn score(&self, input: &EncodedInput, target: &[String]) -> Result<GenerationResult, ScorerError> {
        if target.is_empty() {
            return Err(ScorerError::EmptyTarget);
        }
        let copy = self.copy_table(input);
        let mut history = Vec::with_capacity(target.len());
        let mut lps = Vec::with_capacity(target.len());
        for tok in target {
            let id = self.ext_id(tok, &copy);
            lps.push(self.prob(&history, id, &copy).ln());
            history.push(id);
        }
        GenerationResult::new(target.to_vec(), lps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::Variant;
    use proptest::prelude::*;

    fn inp(s: &str) -> EncodedInput {
        EncodedInput::raw(s, Variant::Path, Some(1))
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenization() {
        assert_eq!(model_tokens("Romeries is in France."), toks("Romeries is in France ."));
        assert_eq!(model_tokens("(ACL) x-y, z"), toks("( ACL ) x-y , z"));
        assert_eq!(detokenize(&toks("( ACL ) x-y , z . </s>")), "(ACL) x-y, z.");
        assert_eq!(target_tokens("a b").last().map(String::as_str), Some(EOS));
    }

    #[test]
    fn result_invariants() {
        let r = GenerationResult::new(toks("a </s>"), vec![-0.5, -1.5]).unwrap();
        assert_eq!(r.text, "a");
        assert_eq!(r.total_logprob, -2.0);
        assert_eq!(r.normalized_score, -1.0);
        assert!(GenerationResult::new(toks("a"), vec![0.1]).is_err());
        assert!(GenerationResult::new(toks("a b"), vec![-0.1]).is_err());
        assert!(GenerationResult::new(vec![], vec![]).is_err());
        assert!(GenerationResult::new(toks("a"), vec![f64::NAN]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NgramConfig::default().validate().is_ok());
        let bad = [
            NgramConfig { lm_weights: vec![0.5, 0.5], ..Default::default() },
            NgramConfig { lm_weights: vec![0.5, 0.5, 0.5], ..Default::default() },
            NgramConfig { copy_weight: 1.0, ..Default::default() },
            NgramConfig { smoothing: 0.0, ..Default::default() },
            NgramConfig { order: 0, lm_weights: vec![], ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(ScorerError::InvalidConfig(_))), "{c:?}");
        }
        assert_eq!(train_baseline(&[], NgramConfig::default()).unwrap_err(), ScorerError::EmptyDataset);
    }

    /// Greedy argmax computed only through `score`, one candidate token at a
    /// time over the whole vocabulary plus the input words.
    fn brute_force_greedy(m: &NgramCopyModel, input: &EncodedInput, max_len: usize) -> Vec<String> {
        let mut cands: Vec<String> = m.vocab.iter().filter(|t| *t != BOS).cloned().collect();
        for w in model_tokens(&input.text) {
            if is_word(&w) && !cands.contains(&w) {
                cands.push(w);
            }
        }
        let mut out: Vec<String> = Vec::new();
        while out.len() < max_len {
            let mut best: Option<(f64, String)> = None;
            for c in &cands {
                let mut t = out.clone();
                t.push(c.clone());
                let lp = *m.score(input, &t).unwrap().token_logprobs.last().unwrap();
                if best.as_ref().is_none_or(|b| lp > b.0) {
                    best = Some((lp, c.clone()));
                }
            }
            let tok = best.unwrap().1;
            out.push(tok.clone());
            if tok == EOS {
                break;
            }
        }
        out
    }

    #[test]
    fn single_pair_reproduces_target() {
        let target = "Haste is a municipality in the district of Schaumburg, Germany.";
        let input = inp("Haste; located in the administrative territorial entity: Schaumburg; country: Germany");
        let m = train_baseline(&[(input.clone(), target.to_string())], NgramConfig::default()).unwrap();
        let expected = target_tokens(target);
        assert_eq!(brute_force_greedy(&m, &input, 64), expected);
        let g = m.generate(&input, &DecodeParams { beam_width: 1, max_len: 64 }).unwrap();
        assert_eq!(g.tokens, expected);
        assert_eq!(g.text, target);
        let g4 = m.generate(&input, &DecodeParams::default()).unwrap();
        assert_eq!(g4.text, target);
    }

    #[test]
    fn hand_counted_trigram() {
        let cfg = NgramConfig { lm_weights: vec![0.0, 0.0, 1.0], copy_weight: 0.0, ..Default::default() };
        let m = train_baseline(&[(inp("x"), "a b c".into())], cfg).unwrap();
        // outcomes: <unk>, </s>, a, b, c -> |V| = 5; context (<s>, a) seen once, followed by b
        let r = m.score(&inp("x"), &toks("a b")).unwrap();
        let expected = (1.0 + 0.1) / (1.0 + 0.1 * 5.0);
        assert!((r.token_logprobs[1].exp() - expected).abs() < 1e-12);
        // unseen context falls back to uniform
        let r = m.score(&inp("x"), &toks("c a")).unwrap();
        assert!((r.token_logprobs[1].exp() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn no_copy_ignores_input() {
        let cfg = NgramConfig { copy_weight: 0.0, ..Default::default() };
        let m = train_baseline(&[(inp("x"), "a b c".into()), (inp("y"), "b c a".into())], cfg).unwrap();
        let t = toks("a c b </s>");
        let r1 = m.score(&inp("a a a"), &t).unwrap();
        let r2 = m.score(&inp("zzz qqq"), &t).unwrap();
        assert_eq!(r1.token_logprobs, r2.token_logprobs);
    }

    #[test]
    fn oov_scores_are_finite() {
        let m = train_baseline(&[(inp("x"), "a b c".into())], NgramConfig::default()).unwrap();
        let r = m.score(&inp("x"), &toks("never seen </s>")).unwrap();
        assert!(r.total_logprob.is_finite());
        let r = m.score(&inp("x"), &toks(BOS)).unwrap();
        assert!(r.total_logprob.is_finite());
        assert_eq!(m.score(&inp("x"), &[]).unwrap_err(), ScorerError::EmptyTarget);
    }

    #[test]
    fn length_one() {
        let m = train_baseline(&[(inp("x"), "a b c".into())], NgramConfig::default()).unwrap();
        let g = m.generate(&inp("x"), &DecodeParams { beam_width: 3, max_len: 1 }).unwrap();
        assert_eq!(g.tokens.len(), 1);
        assert_eq!(g.token_logprobs.len(), 1);
        assert!(m.generate(&inp("x"), &DecodeParams { beam_width: 0, max_len: 1 }).is_err());
    }

    fn small_corpus() -> Vec<(EncodedInput, String)> {
        vec![
            (inp("Alpha; country: Ruritania"), "Alpha is a town in Ruritania.".into()),
            (inp("Beta; country: Freedonia"), "Beta is a town in Freedonia.".into()),
            (inp("Gamma; capital of: Freedonia"), "Gamma is the capital of Freedonia.".into()),
            (inp("Delta; member of: League"), "Delta is a member of the League.".into()),
        ]
    }

    #[test]
    fn distributions_sum_to_one() {
        let m = train_baseline(&small_corpus(), NgramConfig::default()).unwrap();
        for input in ["Epsilon; country: Ruritania", "", "a a b"] {
            let copy = m.copy_table(&inp(input));
            for hist in [vec![], vec![3], vec![3, 4, 5], vec![m.vocab.len() as u32]] {
                let hist: Vec<u32> = hist.into_iter().filter(|&i| (i as usize) < m.vocab.len() + copy.oov.len()).collect();
                let d = m.distribution(&hist, &copy);
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9, "sum {}", d.iter().sum::<f64>());
                assert!(d.iter().enumerate().all(|(i, p)| i == BOS_ID as usize || *p > 0.0 || i >= m.vocab.len()));
                for (i, p) in d.iter().enumerate() {
                    assert!((m.prob(&hist, i as u32, &copy) - p).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn generate_score_agree() {
        let m = train_baseline(&small_corpus(), NgramConfig::default()).unwrap();
        for (input, _) in small_corpus() {
            for b in [1, 2, 4] {
                let g = m.generate(&input, &DecodeParams { beam_width: b, max_len: 20 }).unwrap();
                let s = m.score(&input, &g.tokens).unwrap();
                assert!((s.total_logprob - g.total_logprob).abs() < 1e-9);
            }
        }
        let (g, c) = confidence(&m, &small_corpus()[0].0, &DecodeParams::default()).unwrap();
        assert_eq!(c, g.normalized_score);
        let (_, c2) = confidence(&m, &small_corpus()[0].0, &DecodeParams::default()).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn persistence_round_trip() {
        let m = train_baseline(&small_corpus(), NgramConfig::default()).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let m2 = NgramCopyModel::load(&buf[..]).unwrap();
        assert_eq!(m, m2);
        let mut buf2 = Vec::new();
        m2.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2, "serialization is byte-stable");
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["version"] = 99.into();
        assert!(NgramCopyModel::load(v.to_string().as_bytes()).is_err());
    }

    #[test]
    fn lookup_backend() {
        let b = LookupBackend::from_scores([("a", -0.29), ("b", -0.13)]).unwrap();
        let (_, c) = b.confidence(&inp("b"), &DecodeParams::default()).unwrap();
        assert_eq!(c, -0.13);
        assert!(b.generate(&inp("zz"), &DecodeParams::default()).is_err());
        assert!(LookupBackend::from_scores([("a", 0.5)]).is_err());
    }

    proptest! {
        #[test]
        fn copy_weight_is_monotone(g1 in 0.0f64..0.99, g2 in 0.0f64..0.99, pick in 0usize..3) {
            let (lo, hi) = (g1.min(g2), g1.max(g2));
            let input = inp("Alpha; country: Ruritania");
            let word = ["Alpha", "country", "Ruritania"][pick].to_string();
            let mk = |g| train_baseline(&small_corpus(), NgramConfig { copy_weight: g, ..Default::default() }).unwrap();
            let t = vec!["Beta".to_string(), word];
            let a = mk(lo).score(&input, &t).unwrap().token_logprobs[1];
            let b = mk(hi).score(&input, &t).unwrap().token_logprobs[1];
            prop_assert!(b >= a - 1e-12);
        }
    }
}
