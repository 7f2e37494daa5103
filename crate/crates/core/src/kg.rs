//! Interned, immutable knowledge graph with forward and reverse adjacency.
//!
//! Graphs are loaded from three tab-separated streams:
//!
//! * triples: `head_key<TAB>relation_key<TAB>tail_key`
//! * entity labels: `key<TAB>label`
//! * relation labels: `key<TAB>label`
//!
//! Ids are assigned densely in first-seen order of the label files, so two
//! loads of the same inputs produce identical ids and adjacency order.
//! Adjacency is stored in CSR form, each row sorted by `(relation, neighbor)`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::pathfind::{self, EntityPair, PathError, Traversal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {file} line {line}: {reason}")]
    Malformed {
        file: &'static str,
        line: usize,
        reason: String,
    },
    #[error("undefined entity key {key} at line {line}")]
    UndefinedEntity { key: String, line: usize },
    #[error("undefined relation key {key} at line {line}")]
    UndefinedRelation { key: String, line: usize },
    #[error("duplicate {kind} key {key}")]
    DuplicateKey { kind: &'static str, key: String },
    #[error("empty label for {kind} key {key}")]
    EmptyLabel { kind: &'static str, key: String },
    #[error("invalid entity id {0}")]
    InvalidEntity(EntityId),
    #[error("invalid relation id {0}")]
    InvalidRelation(RelationId),
    #[error("hop histogram needs at least one pair")]
    EmptyPairs,
    #[error("max_hops must be at least 1")]
    InvalidMaxHops,
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Counts reported after a build. Serializes to the `stats` JSON object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub duplicates_dropped: usize,
    #[serde(skip)]
    pub self_loops: usize,
}

#[derive(Debug, Clone)]
struct Interned {
    key: String,
    label: String,
}

/// Incremental construction of a [`KnowledgeGraph`]. Single writer; call
/// [`KgBuilder::build`] to freeze.
#[derive(Debug, Default)]
pub struct KgBuilder {
    entities: Vec<Interned>,
    relations: Vec<Interned>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, key: &str, label: &str) -> Result<EntityId, KgError> {
        if label.is_empty() {
            return Err(KgError::EmptyLabel { kind: "entity", key: key.to_string() });
        }
        if self.entity_index.contains_key(key) {
            return Err(KgError::DuplicateKey { kind: "entity", key: key.to_string() });
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Interned { key: key.to_string(), label: label.to_string() });
        self.entity_index.insert(key.to_string(), id);
        Ok(id)
    }

    pub fn add_relation(&mut self, key: &str, label: &str) -> Result<RelationId, KgError> {
        if label.is_empty() {
            return Err(KgError::EmptyLabel { kind: "relation", key: key.to_string() });
        }
        if self.relation_index.contains_key(key) {
            return Err(KgError::DuplicateKey { kind: "relation", key: key.to_string() });
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(Interned { key: key.to_string(), label: label.to_string() });
        self.relation_index.insert(key.to_string(), id);
        Ok(id)
    }

    pub fn entity(&self, key: &str) -> Option<EntityId> {
        self.entity_index.get(key).copied()
    }

    pub fn relation(&self, key: &str) -> Option<RelationId> {
        self.relation_index.get(key).copied()
    }

    pub fn add_triple(
        &mut self,
        head: EntityId,
        relation: RelationId,
        tail: EntityId,
    ) -> Result<(), KgError> {
        for e in [head, tail] {
            if e.index() >= self.entities.len() {
                return Err(KgError::InvalidEntity(e));
            }
        }
        if relation.index() >= self.relations.len() {
            return Err(KgError::InvalidRelation(relation));
        }
        self.triples.push(Triple { head, relation, tail });
        Ok(())
    }

    /// Adds a triple by external keys. `line` is only used in error messages.
    pub fn add_triple_by_key(
        &mut self,
        head: &str,
        relation: &str,
        tail: &str,
        line: usize,
    ) -> Result<(), KgError> {
        let undefined = |key: &str| KgError::UndefinedEntity { key: key.to_string(), line };
        let h = self.entity(head).ok_or_else(|| undefined(head))?;
        let r = self
            .relation(relation)
            .ok_or_else(|| KgError::UndefinedRelation { key: relation.to_string(), line })?;
        let t = self.entity(tail).ok_or_else(|| undefined(tail))?;
        self.triples.push(Triple { head: h, relation: r, tail: t });
        Ok(())
    }

    pub fn build(mut self) -> (KnowledgeGraph, LoadReport) {
        let n = self.entities.len();
        let submitted = self.triples.len();
        self.triples.sort_unstable();
        self.triples.dedup();
        let duplicates_dropped = submitted - self.triples.len();
        let self_loops = self.triples.iter().filter(|t| t.head == t.tail).count();

        // triples are sorted by (head, relation, tail): rows come out sorted
        let forward = Csr::build(n, self.triples.iter().map(|t| (t.head, t.relation, t.tail)));
        let mut by_tail: Vec<(EntityId, RelationId, EntityId)> =
            self.triples.iter().map(|t| (t.tail, t.relation, t.head)).collect();
        by_tail.sort_unstable();
        let reverse = Csr::build(n, by_tail.into_iter());

        let report = LoadReport {
            entities: n,
            relations: self.relations.len(),
            triples: self.triples.len(),
            duplicates_dropped,
            self_loops,
        };
        let graph = KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            entity_index: self.entity_index,
            relation_index: self.relation_index,
            forward,
            reverse,
            n_triples: report.triples,
        };
        (graph, report)
    }
}

#[derive(Debug, Clone)]
struct Csr {
    offsets: Vec<usize>,
    edges: Vec<(RelationId, EntityId)>,
}

impl Csr {
    /// `rows` must be sorted by (source, relation, target).
    fn build(n: usize, rows: impl Iterator<Item = (EntityId, RelationId, EntityId)>) -> Self {
        let mut offsets = vec![0usize; n + 1];
        let mut edges = Vec::new();
        for (src, rel, dst) in rows {
            offsets[src.index() + 1] += 1;
            edges.push((rel, dst));
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Csr { offsets, edges }
    }

    fn row(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.edges[self.offsets[e.index()]..self.offsets[e.index() + 1]]
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Interned>,
    relations: Vec<Interned>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    forward: Csr,
    reverse: Csr,
    n_triples: usize,
}

impl KnowledgeGraph {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn n_triples(&self) -> usize {
        self.n_triples
    }

    pub fn contains(&self, e: EntityId) -> bool {
        e.index() < self.entities.len()
    }

    pub fn entity_by_key(&self, key: &str) -> Option<EntityId> {
        self.entity_index.get(key).copied()
    }

    pub fn relation_by_key(&self, key: &str) -> Option<RelationId> {
        self.relation_index.get(key).copied()
    }

    pub fn entity_label(&self, e: EntityId) -> Option<&str> {
        self.entities.get(e.index()).map(|x| x.label.as_str())
    }

    pub fn entity_key(&self, e: EntityId) -> Option<&str> {
        self.entities.get(e.index()).map(|x| x.key.as_str())
    }

    pub fn relation_label(&self, r: RelationId) -> Option<&str> {
        self.relations.get(r.index()).map(|x| x.label.as_str())
    }

    pub fn relation_key(&self, r: RelationId) -> Option<&str> {
        self.relations.get(r.index()).map(|x| x.key.as_str())
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    /// Sorted adjacency of `e`; empty for isolated entities.
    pub fn neighbors(
        &self,
        e: EntityId,
        direction: Direction,
    ) -> Result<&[(RelationId, EntityId)], KgError> {
        if !self.contains(e) {
            return Err(KgError::InvalidEntity(e));
        }
        Ok(match direction {
            Direction::Forward => self.forward.row(e),
            Direction::Reverse => self.reverse.row(e),
        })
    }

    /// Outgoing `(relation, tail)` edges. Panics on an invalid id.
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        self.forward.row(e)
    }

    /// Incoming `(relation, head)` edges. Panics on an invalid id.
    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        self.reverse.row(e)
    }

    pub fn has_triple(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.contains(head)
            && self.forward.row(head).binary_search(&(relation, tail)).is_ok()
    }

    /// All stored triples in `(head, relation, tail)` order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.entity_ids().flat_map(move |h| {
            self.forward
                .row(h)
                .iter()
                .map(move |&(relation, tail)| Triple { head: h, relation, tail })
        })
    }

    pub fn report(&self) -> LoadReport {
        let self_loops = self.triples().filter(|t| t.head == t.tail).count();
        LoadReport {
            entities: self.n_entities(),
            relations: self.n_relations(),
            triples: self.n_triples,
            duplicates_dropped: 0,
            self_loops,
        }
    }

    /// Writes the graph back out in the three-file TSV layout accepted by
    /// [`load_kg`].
    pub fn write_tsv<W1: Write, W2: Write, W3: Write>(
        &self,
        mut triples: W1,
        mut entity_labels: W2,
        mut relation_labels: W3,
    ) -> std::io::Result<()> {
        for e in &self.entities {
            writeln!(entity_labels, "{}\t{}", e.key, e.label)?;
        }
        for r in &self.relations {
            writeln!(relation_labels, "{}\t{}", r.key, r.label)?;
        }
        for t in self.triples() {
            writeln!(
                triples,
                "{}\t{}\t{}",
                self.entities[t.head.index()].key,
                self.relations[t.relation.index()].key,
                self.entities[t.tail.index()].key
            )?;
        }
        Ok(())
    }
}

fn read_labels<R: BufRead>(
    source: R,
    file: &'static str,
    mut add: impl FnMut(&str, &str) -> Result<(), KgError>,
) -> Result<(), KgError> {
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (key, label) = line.split_once('\t').ok_or_else(|| KgError::Malformed {
            file,
            line: i + 1,
            reason: "expected key<TAB>label".into(),
        })?;
        if key.is_empty() {
            return Err(KgError::Malformed { file, line: i + 1, reason: "empty key".into() });
        }
        add(key, label)?;
    }
    Ok(())
}

/// Loads a graph from TSV streams. Duplicate triples are dropped and
/// counted; blank lines are ignored.
pub fn load_kg<T: BufRead, E: BufRead, R: BufRead>(
    triples: T,
    entity_labels: E,
    relation_labels: R,
) -> Result<(KnowledgeGraph, LoadReport), KgError> {
    let mut b = KgBuilder::new();
    read_labels(entity_labels, "entity label", |k, l| b.add_entity(k, l).map(drop))?;
    read_labels(relation_labels, "relation label", |k, l| b.add_relation(k, l).map(drop))?;
    for (i, line) in triples.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(KgError::Malformed {
                file: "triple",
                line: i + 1,
                reason: format!("expected 3 non-empty tab-separated fields, got {}", fields.len()),
            });
        }
        b.add_triple_by_key(fields[0], fields[1], fields[2], i + 1)?;
    }
    Ok(b.build())
}

/// Share of pairs per hop bucket: index `k - 1` holds `k`-hop pairs for
/// `k <= max_hops`, the last index holds pairs beyond `max_hops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopHistogram {
    pub max_hops: usize,
    pub counts: Vec<usize>,
    pub ratios: Vec<f64>,
}

pub fn hop_histogram(
    g: &KnowledgeGraph,
    pairs: &[EntityPair],
    max_hops: usize,
    traversal: Traversal,
    exec: Execution,
) -> Result<HopHistogram, KgError> {
    if max_hops == 0 {
        return Err(KgError::InvalidMaxHops);
    }
    if pairs.is_empty() {
        return Err(KgError::EmptyPairs);
    }
    let distances =
        exec.try_map(pairs, |p| pathfind::hop_distance(g, *p, max_hops, traversal))?;
    let mut counts = vec![0usize; max_hops + 1];
    for d in distances {
        match d {
            Some(k) => counts[k - 1] += 1,
            None => counts[max_hops] += 1,
        }
    }
    let total = pairs.len() as f64;
    let ratios = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(HopHistogram { max_hops, counts, ratios })
}
