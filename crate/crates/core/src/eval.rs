//! Automatic generation metrics and selection accuracy.
//!
//! Every metric works on case-folded tokens (see [`eval_tokens`]). BLEU is
//! corpus-level with up to 4-grams, uniform weights and no smoothing, scaled
//! to [0, 100]. ROUGE-L is the mean per-sentence LCS F1. METEOR-lite aligns
//! unigrams by exact form and then by stem, without synonym stages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

pub const BLEU_MAX_N: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("every item is marked skip")]
    AllSkipped,
}

/// Lower-cased tokens with punctuation split off, as used by every metric.
pub fn eval_tokens(text: &str) -> Vec<String> {
    crate::scorer::model_tokens(&text.to_lowercase())
}

fn check(c: usize, r: usize) -> Result<(), EvalError> {
    if c != r {
        return Err(EvalError::LengthMismatch { candidates: c, references: r });
    }
    if c == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches and candidate n-gram totals per order.
fn bleu_stats(c: &[String], r: &[String], max_n: usize) -> Vec<(usize, usize)> {
    (1..=max_n)
        .map(|n| {
            let rc = ngram_counts(r, n);
            let matched = ngram_counts(c, n)
                .into_iter()
                .map(|(g, k)| k.min(rc.get(g).copied().unwrap_or(0)))
                .sum();
            (matched, c.len().saturating_sub(n - 1))
        })
        .collect()
}

pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, EvalError> {
    bleu_n(candidates, references, BLEU_MAX_N, Execution::Sequential)
}

pub fn bleu_n(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    max_n: usize,
    exec: Execution,
) -> Result<f64, EvalError> {
    check(candidates.len(), references.len())?;
    let per = exec.map_range(candidates.len(), |i| bleu_stats(&candidates[i], &references[i], max_n));
    let mut totals = vec![(0usize, 0usize); max_n];
    for s in per {
        for (t, (m, n)) in totals.iter_mut().zip(s) {
            t.0 += m;
            t.1 += n;
        }
    }
    if totals.iter().any(|&(m, n)| m == 0 || n == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = totals.iter().map(|&(m, n)| (m as f64 / n as f64).ln()).sum::<f64>() / max_n as f64;
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * log_p.exp())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

fn rouge_l_one(c: &[String], r: &[String]) -> f64 {
    let l = lcs_len(c, r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rec = l as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, EvalError> {
    rouge_l_with(candidates, references, Execution::Sequential)
}

pub fn rouge_l_with(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    exec: Execution,
) -> Result<f64, EvalError> {
    check(candidates.len(), references.len())?;
    let s = exec.map_range(candidates.len(), |i| rouge_l_one(&candidates[i], &references[i]));
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Affix-stripping stemmer used by METEOR-lite. Rules, first match wins,
/// each only when at least three characters remain:
///
/// * `-ing`, `-ed`: strip, then undouble a final doubled consonant other
///   than l, s or z (`running` → `run`, `stopped` → `stop`)
/// * `-ly`: strip
/// * `-es` after s, x, z, ch or sh: strip (`boxes` → `box`)
/// * `-s` not preceded by s: strip (`runs` → `run`)
///
/// Non-ASCII words are returned unchanged.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    if !w.is_ascii() {
        return w;
    }
    let b = w.as_bytes();
    let n = b.len();
    let undouble = |s: &str| -> String {
        let sb = s.as_bytes();
        let m = sb.len();
        if m >= 4 && sb[m - 1] == sb[m - 2] && !is_vowel(sb[m - 1]) && !matches!(sb[m - 1], b'l' | b's' | b'z') {
            s[..m - 1].to_string()
        } else {
            s.to_string()
        }
    };
    if w.ends_with("ing") && n >= 6 {
        return undouble(&w[..n - 3]);
    }
    if w.ends_with("ed") && n >= 5 {
        return undouble(&w[..n - 2]);
    }
    if w.ends_with("ly") && n >= 5 {
        return w[..n - 2].to_string();
    }
    if w.ends_with("es") && n >= 5 {
        let s = &w[..n - 2];
        if s.ends_with(['s', 'x', 'z']) || s.ends_with("ch") || s.ends_with("sh") {
            return s.to_string();
        }
    }
    if w.ends_with('s') && !w.ends_with("ss") && n >= 4 {
        return w[..n - 1].to_string();
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Greedy two-stage alignment: exact forms first, then stems. Candidate
/// tokens are scanned left to right and take the first free reference
/// token that matches.
pub fn meteor_align(c: &[String], r: &[String], use_stems: bool) -> Alignment {
    let mut ref_used = vec![false; r.len()];
    let mut link: Vec<Option<usize>> = vec![None; c.len()];
    let stages: &[bool] = if use_stems { &[false, true] } else { &[false] };
    let c_stems: Vec<String> = c.iter().map(|t| stem(t)).collect();
    let r_stems: Vec<String> = r.iter().map(|t| stem(t)).collect();
    for &stemmed in stages {
        for (i, l) in link.iter_mut().enumerate() {
            if l.is_some() {
                continue;
            }
            let hit = (0..r.len()).find(|&j| {
                !ref_used[j] && if stemmed { c_stems[i] == r_stems[j] } else { c[i] == r[j] }
            });
            if let Some(j) = hit {
                ref_used[j] = true;
                *l = Some(j);
            }
        }
    }
    let pairs: Vec<(usize, usize)> = link.iter().enumerate().filter_map(|(i, l)| l.map(|j| (i, j))).collect();
    let mut chunks = 0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if k == 0 || !(pairs[k - 1].0 + 1 == i && pairs[k - 1].1 + 1 == j) {
            chunks += 1;
        }
    }
    Alignment { matches: pairs.len(), chunks }
}

/// Score from alignment statistics and sentence lengths.
pub fn meteor_formula(a: Alignment, c_len: usize, r_len: usize) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / c_len as f64;
    let r = m / r_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor_sentence(c: &[String], r: &[String], use_stems: bool) -> f64 {
    meteor_formula(meteor_align(c, r, use_stems), c.len(), r.len())
}

pub fn meteor_lite(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, EvalError> {
    meteor_lite_with(candidates, references, Execution::Sequential)
}

pub fn meteor_lite_with(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    exec: Execution,
) -> Result<f64, EvalError> {
    check(candidates.len(), references.len())?;
    let s = exec.map_range(candidates.len(), |i| meteor_sentence(&candidates[i], &references[i], true));
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu,
    RougeL,
    Meteor,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(Metric::Bleu),
            "rouge_l" | "rouge-l" | "rougel" => Ok(Metric::RougeL),
            "meteor" => Ok(Metric::Meteor),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionAccuracy {
    pub accuracy: f64,
    pub agreed: usize,
    pub counted: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meteor: Option<f64>,
    pub n_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionAccuracy>,
}

pub fn evaluate(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    metrics: &[Metric],
    exec: Execution,
) -> Result<MetricReport, EvalError> {
    check(candidates.len(), references.len())?;
    let mut report = MetricReport { n_examples: candidates.len(), ..Default::default() };
    for m in metrics {
        match m {
            Metric::Bleu => report.bleu = Some(bleu_n(candidates, references, BLEU_MAX_N, exec)?),
            Metric::RougeL => report.rouge_l = Some(rouge_l_with(candidates, references, exec)?),
            Metric::Meteor => report.meteor = Some(meteor_lite_with(candidates, references, exec)?),
        }
    }
    Ok(report)
}

/// Share of labelled items where the predicted path index equals the
/// label. `None` labels are skipped; a `None` prediction never agrees.
pub fn selection_accuracy(
    predicted: &[Option<usize>],
    labels: &[Option<usize>],
) -> Result<SelectionAccuracy, EvalError> {
    if predicted.len() != labels.len() {
        return Err(EvalError::LengthMismatch { candidates: predicted.len(), references: labels.len() });
    }
    let mut agreed = 0;
    let mut counted = 0;
    for (p, l) in predicted.iter().zip(labels) {
        if let Some(l) = l {
            counted += 1;
            if *p == Some(*l) {
                agreed += 1;
            }
        }
    }
    if counted == 0 {
        return Err(EvalError::AllSkipped);
    }
    Ok(SelectionAccuracy {
        accuracy: agreed as f64 / counted as f64,
        agreed,
        counted,
        skipped: labels.len() - counted,
    })
}
