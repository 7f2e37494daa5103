//! Shortest and bounded k-shortest simple reasoning paths.
//!
//! A path alternates entities and relations from a head to a tail entity.
//! Traversal follows stored triples forward; with [`Traversal::WithInverse`]
//! a step may also walk a triple backwards, in which case it is tagged
//! [`StepDir::Inverse`].
//!
//! Paths of equal length are ordered lexicographically by their step
//! sequence, each step compared as `(relation id, node id, direction)`.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MAX_HOPS: usize = 3;
pub const DEFAULT_EXPANSION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("head and tail are the same entity ({0})")]
    SameEntity(EntityId),
    #[error("invalid entity id {0}")]
    InvalidEntity(EntityId),
    #[error("max_hops must be at least 1")]
    InvalidMaxHops,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid path at step {step}: {reason}")]
    InvalidPath { step: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepDir {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    #[default]
    Forward,
    WithInverse,
}

/// One hop: follow `relation` in direction `dir` and arrive at `node`.
/// Field order gives the canonical step ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathStep {
    pub relation: RelationId,
    pub node: EntityId,
    pub dir: StepDir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityPair {
    pub head: EntityId,
    pub tail: EntityId,
}

impl EntityPair {
    pub fn new(head: EntityId, tail: EntityId) -> Result<Self, PathError> {
        if head == tail {
            return Err(PathError::SameEntity(head));
        }
        Ok(EntityPair { head, tail })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReasoningPath {
    head: EntityId,
    steps: Vec<PathStep>,
}

impl ReasoningPath {
    /// Builds a path without checking it against a graph; see
    /// [`ReasoningPath::validate`].
    pub fn new(head: EntityId, steps: Vec<PathStep>) -> Self {
        ReasoningPath { head, steps }
    }

    pub fn head(&self) -> EntityId {
        self.head
    }

    pub fn tail(&self) -> EntityId {
        self.steps.last().map_or(self.head, |s| s.node)
    }

    pub fn hops(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[PathStep] {
        &self.steps
    }

    pub fn nodes(&self) -> Vec<EntityId> {
        std::iter::once(self.head).chain(self.steps.iter().map(|s| s.node)).collect()
    }

    /// Checks that the path is simple, non-empty and that every step is a
    /// stored triple in the stated direction.
    pub fn validate(&self, g: &KnowledgeGraph) -> Result<(), PathError> {
        if self.steps.is_empty() {
            return Err(PathError::InvalidPath { step: 0, reason: "path has no steps".into() });
        }
        if !g.contains(self.head) {
            return Err(PathError::InvalidEntity(self.head));
        }
        let mut seen = HashSet::from([self.head]);
        let mut cur = self.head;
        for (i, s) in self.steps.iter().enumerate() {
            if !g.contains(s.node) {
                return Err(PathError::InvalidEntity(s.node));
            }
            if !seen.insert(s.node) {
                return Err(PathError::InvalidPath {
                    step: i,
                    reason: format!("entity {} repeated", s.node),
                });
            }
            let stored = match s.dir {
                StepDir::Forward => g.has_triple(cur, s.relation, s.node),
                StepDir::Inverse => g.has_triple(s.node, s.relation, cur),
            };
            if !stored {
                return Err(PathError::InvalidPath {
                    step: i,
                    reason: format!("no triple for {cur} -{}-> {} ({:?})", s.relation, s.node, s.dir),
                });
            }
            cur = s.node;
        }
        Ok(())
    }
}

impl PartialOrd for ReasoningPath {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReasoningPath {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.hops()
            .cmp(&other.hops())
            .then_with(|| self.head.cmp(&other.head))
            .then_with(|| self.steps.cmp(&other.steps))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathConfig {
    pub k: usize,
    pub max_hops: usize,
    pub traversal: Traversal,
    /// Upper bound on DFS node expansions per pair.
    pub expansion_budget: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            k: DEFAULT_K,
            max_hops: DEFAULT_MAX_HOPS,
            traversal: Traversal::Forward,
            expansion_budget: DEFAULT_EXPANSION_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub paths: Vec<ReasoningPath>,
    /// Set when the expansion budget ran out before enumeration finished.
    pub truncated: bool,
}

/// Steps leaving `u`, in canonical order.
fn steps_from(g: &KnowledgeGraph, u: EntityId, traversal: Traversal) -> Vec<PathStep> {
    let fwd = g
        .out_edges(u)
        .iter()
        .map(|&(relation, node)| PathStep { relation, node, dir: StepDir::Forward });
    match traversal {
        Traversal::Forward => fwd.collect(),
        Traversal::WithInverse => {
            let mut all: Vec<PathStep> = fwd
                .chain(
                    g.in_edges(u)
                        .iter()
                        .map(|&(relation, node)| PathStep { relation, node, dir: StepDir::Inverse }),
                )
                .collect();
            all.sort_unstable();
            all
        }
    }
}

/// Steps arriving at `v`, paired with their source entity.
fn steps_into(
    g: &KnowledgeGraph,
    v: EntityId,
    traversal: Traversal,
) -> impl Iterator<Item = (EntityId, PathStep)> + '_ {
    let fwd = g
        .in_edges(v)
        .iter()
        .map(move |&(relation, src)| (src, PathStep { relation, node: v, dir: StepDir::Forward }));
    let inv = g.out_edges(v).iter().filter(move |_| traversal == Traversal::WithInverse).map(
        move |&(relation, src)| (src, PathStep { relation, node: v, dir: StepDir::Inverse }),
    );
    fwd.chain(inv)
}

fn neighbor_ids(
    g: &KnowledgeGraph,
    u: EntityId,
    traversal: Traversal,
) -> impl Iterator<Item = EntityId> + '_ {
    let fwd = g.out_edges(u).iter().map(|e| e.1);
    let inv = g.in_edges(u).iter().filter(move |_| traversal == Traversal::WithInverse).map(|e| e.1);
    fwd.chain(inv)
}

fn check_pair(g: &KnowledgeGraph, pair: EntityPair, max_hops: usize) -> Result<(), PathError> {
    if pair.head == pair.tail {
        return Err(PathError::SameEntity(pair.head));
    }
    for e in [pair.head, pair.tail] {
        if !g.contains(e) {
            return Err(PathError::InvalidEntity(e));
        }
    }
    if max_hops == 0 {
        return Err(PathError::InvalidMaxHops);
    }
    Ok(())
}

/// Minimum number of hops from head to tail, if at most `max_hops`.
pub fn hop_distance(
    g: &KnowledgeGraph,
    pair: EntityPair,
    max_hops: usize,
    traversal: Traversal,
) -> Result<Option<usize>, PathError> {
    check_pair(g, pair, max_hops)?;
    let mut seen = HashSet::from([pair.head]);
    let mut frontier = vec![pair.head];
    for depth in 1..=max_hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for v in neighbor_ids(g, u, traversal) {
                if v == pair.tail {
                    return Ok(Some(depth));
                }
                if seen.insert(v) {
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(None)
}

/// A minimum-hop path within `max_hops`, drawn uniformly (under `seed`)
/// among all minimum-hop paths. Parallel edges count as distinct paths.
pub fn shortest_path(
    g: &KnowledgeGraph,
    pair: EntityPair,
    max_hops: usize,
    traversal: Traversal,
    seed: u64,
) -> Result<Option<ReasoningPath>, PathError> {
    check_pair(g, pair, max_hops)?;
    // BFS layer by layer, counting shortest paths per edge.
    let mut dist: HashMap<EntityId, usize> = HashMap::from([(pair.head, 0)]);
    let mut count: HashMap<EntityId, u128> = HashMap::from([(pair.head, 1)]);
    let mut frontier = vec![pair.head];
    let mut found = None;
    for depth in 1..=max_hops {
        let mut next = Vec::new();
        for &u in &frontier {
            let cu = count[&u];
            for v in neighbor_ids(g, u, traversal) {
                match dist.get(&v) {
                    None => {
                        dist.insert(v, depth);
                        count.insert(v, cu);
                        next.push(v);
                    }
                    Some(&d) if d == depth => {
                        let c = count.get_mut(&v).expect("counted");
                        *c = c.saturating_add(cu);
                    }
                    Some(_) => {}
                }
            }
        }
        if dist.contains_key(&pair.tail) {
            found = Some(depth);
            break;
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let Some(depth) = found else {
        return Ok(None);
    };

    // Walk back from the tail, picking each predecessor edge with
    // probability proportional to its source's path count.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(depth);
    let mut v = pair.tail;
    for level in (0..depth).rev() {
        let preds: Vec<(EntityId, PathStep, u128)> = steps_into(g, v, traversal)
            .filter(|(u, _)| dist.get(u) == Some(&level))
            .map(|(u, s)| (u, s, count[&u]))
            .collect();
        let total: u128 = preds.iter().map(|p| p.2).fold(0u128, |a, b| a.saturating_add(b));
        let mut pick = rng.gen_range(0..total);
        let mut chosen = preds[preds.len() - 1];
        for p in &preds {
            if pick < p.2 {
                chosen = *p;
                break;
            }
            pick -= p.2;
        }
        steps.push(chosen.1);
        v = chosen.0;
    }
    debug_assert_eq!(v, pair.head);
    steps.reverse();
    Ok(Some(ReasoningPath::new(pair.head, steps)))
}

/// Hops from every node within `max_hops` of the tail, walking edges
/// backwards. A lower bound on the remaining length of any simple path.
fn distances_to(
    g: &KnowledgeGraph,
    tail: EntityId,
    max_hops: usize,
    traversal: Traversal,
) -> HashMap<EntityId, usize> {
    let mut dist = HashMap::from([(tail, 0)]);
    let mut frontier = vec![tail];
    for depth in 1..=max_hops {
        let mut next = Vec::new();
        for &v in &frontier {
            for (u, _) in steps_into(g, v, traversal) {
                dist.entry(u).or_insert_with(|| {
                    next.push(u);
                    depth
                });
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    dist
}

struct Enumerator<'a> {
    g: &'a KnowledgeGraph,
    tail: EntityId,
    traversal: Traversal,
    to_tail: HashMap<EntityId, usize>,
    k: usize,
    budget: u64,
    expansions: u64,
    truncated: bool,
    visited: HashSet<EntityId>,
    stack: Vec<PathStep>,
    out: Vec<ReasoningPath>,
}

impl Enumerator<'_> {
    /// Depth-first search for paths of exactly `hops` steps, children in
    /// canonical order so results come out sorted.
    fn dfs(&mut self, head: EntityId, u: EntityId, hops: usize) {
        if self.out.len() >= self.k || self.truncated {
            return;
        }
        if self.expansions >= self.budget {
            self.truncated = true;
            return;
        }
        self.expansions += 1;
        let remaining = hops - self.stack.len() - 1;
        for step in steps_from(self.g, u, self.traversal) {
            let v = step.node;
            if v == self.tail {
                if remaining == 0 {
                    self.stack.push(step);
                    self.out.push(ReasoningPath::new(head, self.stack.clone()));
                    self.stack.pop();
                    if self.out.len() >= self.k {
                        return;
                    }
                }
                continue;
            }
            if remaining == 0 || self.visited.contains(&v) {
                continue;
            }
            match self.to_tail.get(&v) {
                Some(&d) if d <= remaining => {}
                _ => continue,
            }
            self.visited.insert(v);
            self.stack.push(step);
            self.dfs(head, v, hops);
            self.stack.pop();
            self.visited.remove(&v);
            if self.out.len() >= self.k || self.truncated {
                return;
            }
        }
    }
}

/// Up to `cfg.k` simple paths of at most `cfg.max_hops` hops, ordered by
/// hop count and then canonical step order.
pub fn k_shortest_paths(
    g: &KnowledgeGraph,
    pair: EntityPair,
    cfg: &PathConfig,
) -> Result<PathSet, PathError> {
    check_pair(g, pair, cfg.max_hops)?;
    if cfg.k == 0 {
        return Err(PathError::InvalidK);
    }
    let mut en = Enumerator {
        g,
        tail: pair.tail,
        traversal: cfg.traversal,
        to_tail: distances_to(g, pair.tail, cfg.max_hops, cfg.traversal),
        k: cfg.k,
        budget: cfg.expansion_budget,
        expansions: 0,
        truncated: false,
        visited: HashSet::from([pair.head]),
        stack: Vec::new(),
        out: Vec::new(),
    };
    if !en.to_tail.contains_key(&pair.head) {
        return Ok(PathSet { paths: Vec::new(), truncated: false });
    }
    let min_hops = en.to_tail[&pair.head];
    for hops in min_hops.max(1)..=cfg.max_hops {
        en.dfs(pair.head, pair.head, hops);
        if en.out.len() >= cfg.k || en.truncated {
            break;
        }
    }
    if en.truncated {
        log::warn!(
            "path enumeration for ({}, {}) hit the expansion budget of {}",
            pair.head,
            pair.tail,
            cfg.expansion_budget
        );
    }
    Ok(PathSet { paths: en.out, truncated: en.truncated })
}
