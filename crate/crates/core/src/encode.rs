//! Model-input serialization for entity pairs and reasoning paths.
//!
//! Three surface forms, with labels concatenated verbatim (no escaping):
//!
//! * vanilla: `head; tail`
//! * path: `head; r1: e1; r2: e2; ...; rk: tail`
//! * unknown: `head; unknown: tail`
//!
//! Inverse steps prefix the relation label with `inverse of `.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph};
use crate::pathfind::{EntityPair, PathError, ReasoningPath, StepDir};

pub const SEGMENT_SEP: &str = "; ";
pub const RELATION_SEP: &str = ": ";
pub const UNKNOWN_RELATION: &str = "unknown";
pub const INVERSE_PREFIX: &str = "inverse of ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("head and tail are the same entity ({0})")]
    SameEntity(EntityId),
    #[error(transparent)]
    InvalidPath(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Path,
    Unknown,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vanilla => "vanilla",
            Variant::Path => "path",
            Variant::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedInput {
    pub text: String,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<usize>,
}

impl EncodedInput {
    /// Wraps raw text, e.g. an input read back from a dataset file.
    pub fn raw(text: impl Into<String>, variant: Variant, hops: Option<usize>) -> Self {
        EncodedInput { text: text.into(), variant, hops }
    }
}

fn entity_label(g: &KnowledgeGraph, e: EntityId) -> Result<&str, EncodeError> {
    g.entity_label(e).ok_or(EncodeError::UnknownEntity(e))
}

fn labels(g: &KnowledgeGraph, pair: EntityPair) -> Result<(&str, &str), EncodeError> {
    if pair.head == pair.tail {
        return Err(EncodeError::SameEntity(pair.head));
    }
    Ok((entity_label(g, pair.head)?, entity_label(g, pair.tail)?))
}

pub fn encode_vanilla(pair: EntityPair, g: &KnowledgeGraph) -> Result<EncodedInput, EncodeError> {
    let (h, t) = labels(g, pair)?;
    Ok(EncodedInput { text: format!("{h}{SEGMENT_SEP}{t}"), variant: Variant::Vanilla, hops: None })
}

pub fn encode_unknown(pair: EntityPair, g: &KnowledgeGraph) -> Result<EncodedInput, EncodeError> {
    let (h, t) = labels(g, pair)?;
    Ok(EncodedInput {
        text: format!("{h}{SEGMENT_SEP}{UNKNOWN_RELATION}{RELATION_SEP}{t}"),
        variant: Variant::Unknown,
        hops: None,
    })
}

pub fn encode_path(path: &ReasoningPath, g: &KnowledgeGraph) -> Result<EncodedInput, EncodeError> {
    path.validate(g)?;
    let mut text = entity_label(g, path.head())?.to_string();
    for step in path.steps() {
        let rel = g
            .relation_label(step.relation)
            .ok_or(EncodeError::UnknownRelation(step.relation.0))?;
        text.push_str(SEGMENT_SEP);
        if step.dir == StepDir::Inverse {
            text.push_str(INVERSE_PREFIX);
        }
        text.push_str(rel);
        text.push_str(RELATION_SEP);
        text.push_str(entity_label(g, step.node)?);
    }
    Ok(EncodedInput { text, variant: Variant::Path, hops: Some(path.hops()) })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedStep {
    pub relation: String,
    pub inverse: bool,
    pub node: String,
}

/// Best-effort structure recovered from an encoded input. `tail` is the
/// last step's node for path inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub variant: Variant,
    pub head: String,
    pub steps: Vec<DecodedStep>,
    pub tail: String,
    /// Set when a label appears to contain a delimiter, so the split may not
    /// match the original labels.
    pub ambiguous: bool,
}

fn split_step(segment: &str) -> (DecodedStep, bool) {
    match segment.split_once(RELATION_SEP) {
        Some((rel, node)) => {
            let ambiguous = node.contains(RELATION_SEP);
            let (relation, inverse) = match rel.strip_prefix(INVERSE_PREFIX) {
                Some(r) => (r.to_string(), true),
                None => (rel.to_string(), false),
            };
            (DecodedStep { relation, inverse, node: node.to_string() }, ambiguous)
        }
        None => (
            DecodedStep { relation: String::new(), inverse: false, node: segment.to_string() },
            true,
        ),
    }
}

pub fn decode(input: &EncodedInput) -> Decoded {
    let segments: Vec<&str> = input.text.split(SEGMENT_SEP).collect();
    let head = segments[0].to_string();
    let mut ambiguous = head.contains(RELATION_SEP);
    match input.variant {
        Variant::Vanilla => {
            ambiguous |= segments.len() != 2;
            let tail = segments[1..].join(SEGMENT_SEP);
            Decoded { variant: Variant::Vanilla, head, steps: Vec::new(), tail, ambiguous }
        }
        Variant::Unknown => {
            let rest = segments[1..].join(SEGMENT_SEP);
            ambiguous |= segments.len() != 2;
            let tail = match rest.strip_prefix(UNKNOWN_RELATION).and_then(|r| r.strip_prefix(RELATION_SEP)) {
                Some(t) => t.to_string(),
                None => {
                    ambiguous = true;
                    rest
                }
            };
            Decoded { variant: Variant::Unknown, head, steps: Vec::new(), tail, ambiguous }
        }
        Variant::Path => {
            if let Some(h) = input.hops {
                ambiguous |= segments.len() != h + 1;
            }
            let mut steps = Vec::with_capacity(segments.len().saturating_sub(1));
            for seg in &segments[1..] {
                let (s, amb) = split_step(seg);
                ambiguous |= amb;
                steps.push(s);
            }
            if steps.is_empty() {
                ambiguous = true;
            }
            let tail = steps.last().map(|s| s.node.clone()).unwrap_or_default();
            Decoded { variant: Variant::Path, head, steps, tail, ambiguous }
        }
    }
}
