//! Choosing one reasoning path per entity pair.
//!
//! Three strategies are available: the shortest path (random tie-break),
//! the candidate whose encoding the backend is most confident about, and the
//! candidate most likely under a uniform random walk from the head. When no
//! path exists the pair falls back to the unknown-relation encoding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetRecord, RelationExample};
use crate::encode::{encode_path, encode_unknown, encode_vanilla, EncodeError, EncodedInput};
use crate::exec::Execution;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::pathfind::{k_shortest_paths, shortest_path, EntityPair, PathConfig, PathError, ReasoningPath, StepDir};
use crate::scorer::{DecodeParams, GenerationResult, ScorerBackend, ScorerError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("no candidate paths")]
    EmptyCandidates,
    #[error("candidate {index} does not connect the same pair as the first candidate")]
    MixedPairs { index: usize },
    #[error("step {step} leaves {node}, which has no edges in that direction")]
    ZeroDegree { step: usize, node: EntityId },
    #[error("unknown entity key {0}")]
    UnknownKey(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Shortest,
    Confidence,
    RandomWalk,
    UnknownFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub pair: EntityPair,
    pub chosen: Option<ReasoningPath>,
    /// Position of `chosen` in the candidate list, when there was one.
    pub chosen_index: Option<usize>,
    pub encoding: EncodedInput,
    pub generation: Option<GenerationResult>,
    /// Raw backend confidence of the chosen encoding.
    pub confidence: Option<f64>,
    pub method: Method,
    pub candidates_considered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub decode: DecodeParams,
    /// Subtracted from the confidence once per hop.
    pub hop_penalty: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams { decode: DecodeParams::default(), hop_penalty: 0.0 }
    }
}

fn fallback(g: &KnowledgeGraph, pair: EntityPair, considered: usize) -> Result<SelectionOutcome, SelectError> {
    Ok(SelectionOutcome {
        pair,
        chosen: None,
        chosen_index: None,
        encoding: encode_unknown(pair, g)?,
        generation: None,
        confidence: None,
        method: Method::UnknownFallback,
        candidates_considered: considered,
    })
}

/// Per-pair seed derived from a run seed, so results do not depend on the
/// order in which pairs are processed.
pub fn pair_seed(seed: u64, pair: EntityPair) -> u64 {
    let mut z = seed ^ ((pair.head.0 as u64) << 32 | pair.tail.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn select_shortest(
    g: &KnowledgeGraph,
    pair: EntityPair,
    cfg: &PathConfig,
    seed: u64,
) -> Result<SelectionOutcome, SelectError> {
    match shortest_path(g, pair, cfg.max_hops, cfg.traversal, seed)? {
        None => fallback(g, pair, 0),
        Some(p) => Ok(SelectionOutcome {
            pair,
            encoding: encode_path(&p, g)?,
            chosen: Some(p),
            chosen_index: None,
            generation: None,
            confidence: None,
            method: Method::Shortest,
            candidates_considered: 1,
        }),
    }
}

fn check_candidates(candidates: &[ReasoningPath]) -> Result<EntityPair, SelectError> {
    let first = candidates.first().ok_or(SelectError::EmptyCandidates)?;
    let pair = EntityPair { head: first.head(), tail: first.tail() };
    if let Some(index) = candidates.iter().position(|c| c.head() != pair.head || c.tail() != pair.tail) {
        return Err(SelectError::MixedPairs { index });
    }
    Ok(pair)
}

/// Index of the best `(score, encoding)` entry: highest score, then the
/// lexicographically smallest encoding.
fn argmax_by_score(scored: &[(f64, &str)]) -> usize {
    let mut best = 0;
    for (i, (s, text)) in scored.iter().enumerate().skip(1) {
        let (bs, btext) = scored[best];
        if *s > bs || (*s == bs && *text < btext) {
            best = i;
        }
    }
    best
}

pub fn select_by_confidence(
    backend: &dyn ScorerBackend,
    candidates: &[ReasoningPath],
    g: &KnowledgeGraph,
    params: &ConfidenceParams,
) -> Result<SelectionOutcome, SelectError> {
    let pair = check_candidates(candidates)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let enc = encode_path(c, g)?;
        let (generation, conf) = crate::scorer::confidence(backend, &enc, &params.decode)?;
        scored.push((enc, generation, conf));
    }
    let keys: Vec<(f64, &str)> = scored
        .iter()
        .zip(candidates)
        .map(|((enc, _, conf), c)| (conf - params.hop_penalty * c.hops() as f64, enc.text.as_str()))
        .collect();
    let best = argmax_by_score(&keys);
    let (encoding, generation, conf) = scored.swap_remove(best);
    Ok(SelectionOutcome {
        pair,
        chosen: Some(candidates[best].clone()),
        chosen_index: Some(best),
        encoding,
        generation: Some(generation),
        confidence: Some(conf),
        method: Method::Confidence,
        candidates_considered: candidates.len(),
    })
}

/// Probability that a walk from the head, picking uniformly among the edges
/// available at each node, follows `path`. Inverse steps count incoming edges.
pub fn random_walk_prob(g: &KnowledgeGraph, path: &ReasoningPath) -> Result<f64, SelectError> {
    path.validate(g)?;
    let mut p = 1.0;
    let mut cur = path.head();
    for (step, s) in path.steps().iter().enumerate() {
        let deg = match s.dir {
            StepDir::Forward => g.out_edges(cur).len(),
            StepDir::Inverse => g.in_edges(cur).len(),
        };
        if deg == 0 {
            return Err(SelectError::ZeroDegree { step, node: cur });
        }
        p /= deg as f64;
        cur = s.node;
    }
    Ok(p)
}

pub fn select_random_walk(
    g: &KnowledgeGraph,
    candidates: &[ReasoningPath],
) -> Result<SelectionOutcome, SelectError> {
    let pair = check_candidates(candidates)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        scored.push((random_walk_prob(g, c)?, encode_path(c, g)?));
    }
    let mut best = 0;
    for i in 1..scored.len() {
        let (p, ref enc) = scored[i];
        let (bp, ref benc) = scored[best];
        let (h, bh) = (candidates[i].hops(), candidates[best].hops());
        if p > bp || (p == bp && (h < bh || (h == bh && enc.text < benc.text))) {
            best = i;
        }
    }
    let (_, encoding) = scored.swap_remove(best);
    Ok(SelectionOutcome {
        pair,
        chosen: Some(candidates[best].clone()),
        chosen_index: Some(best),
        encoding,
        generation: None,
        confidence: None,
        method: Method::RandomWalk,
        candidates_considered: candidates.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMethod {
    Shortest,
    Confidence,
    RandomWalk,
}

/// Selects a path for one pair, drawing candidates from
/// [`k_shortest_paths`] and falling back to the unknown encoding when none
/// exist. The fallback is still scored when a backend is given.
pub fn select_pair(
    g: &KnowledgeGraph,
    pair: EntityPair,
    strategy: SelectMethod,
    cfg: &PathConfig,
    backend: Option<&dyn ScorerBackend>,
    params: &ConfidenceParams,
    seed: u64,
) -> Result<SelectionOutcome, SelectError> {
    let mut out = if strategy == SelectMethod::Shortest {
        select_shortest(g, pair, cfg, pair_seed(seed, pair))?
    } else {
        let set = k_shortest_paths(g, pair, cfg)?;
        if set.truncated {
            log::warn!("path enumeration for {}->{} hit the expansion budget", pair.head, pair.tail);
        }
        if set.paths.is_empty() {
            fallback(g, pair, 0)?
        } else if strategy == SelectMethod::RandomWalk {
            select_random_walk(g, &set.paths)?
        } else {
            let b = backend.ok_or_else(|| ScorerError::InvalidParams("confidence selection needs a backend".into()))?;
            select_by_confidence(b, &set.paths, g, params)?
        }
    };
    if out.generation.is_none() {
        if let Some(b) = backend {
            let (gen, conf) = crate::scorer::confidence(b, &out.encoding, &params.decode)?;
            out.generation = Some(gen);
            out.confidence = Some(conf);
        }
    }
    Ok(out)
}

/// [`select_pair`] over many pairs. Output order follows input order.
#[allow(clippy::too_many_arguments)]
pub fn select_batch(
    g: &KnowledgeGraph,
    pairs: &[EntityPair],
    strategy: SelectMethod,
    cfg: &PathConfig,
    backend: Option<&dyn ScorerBackend>,
    params: &ConfidenceParams,
    seed: u64,
    exec: Execution,
) -> Vec<Result<SelectionOutcome, SelectError>> {
    exec.map(pairs, |&p| select_pair(g, p, strategy, cfg, backend, params, seed))
}

/// How model inputs are built from an example's entity pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingScheme {
    /// Head and tail labels only.
    Vanilla,
    /// The shortest path, or the unknown encoding when none exists.
    Shortest,
    /// One record per candidate path (up to k), or one unknown record.
    Multi,
}

/// Dataset records for relation examples. Examples whose head or tail key
/// is missing from the graph are an error.
pub fn dataset_records(
    g: &KnowledgeGraph,
    examples: &[RelationExample],
    scheme: EncodingScheme,
    cfg: &PathConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<DatasetRecord>, SelectError> {
    let per_example = exec.try_map(examples, |ex| {
        let head = g.entity_by_key(&ex.head_key).ok_or_else(|| SelectError::UnknownKey(ex.head_key.clone()))?;
        let tail = g.entity_by_key(&ex.tail_key).ok_or_else(|| SelectError::UnknownKey(ex.tail_key.clone()))?;
        let pair = EntityPair::new(head, tail)?;
        let inputs = match scheme {
            EncodingScheme::Vanilla => vec![encode_vanilla(pair, g)?],
            EncodingScheme::Shortest => vec![select_shortest(g, pair, cfg, pair_seed(seed, pair))?.encoding],
            EncodingScheme::Multi => {
                let set = k_shortest_paths(g, pair, cfg)?;
                if set.paths.is_empty() {
                    vec![encode_unknown(pair, g)?]
                } else {
                    set.paths.iter().map(|p| encode_path(p, g)).collect::<Result<_, _>>()?
                }
            }
        };
        Ok::<_, SelectError>(
            inputs
                .into_iter()
                .map(|enc| DatasetRecord {
                    head_key: ex.head_key.clone(),
                    tail_key: ex.tail_key.clone(),
                    encoding_variant: enc.variant,
                    input: enc.text,
                    target: ex.target.clone(),
                })
                .collect::<Vec<_>>(),
        )
    })?;
    Ok(per_example.into_iter().flatten().collect())
}
