//! Building blocks for open relation modeling over a knowledge graph.
//!
//! The pipeline loads a triple store ([`kg`]), extracts reasoning paths
//! between entity pairs ([`pathfind`]), turns definition sentences into
//! filtered and split training examples ([`corpus`]), serializes pairs and
//! paths as model inputs ([`encode`]), generates and scores relation
//! descriptions through pluggable backends ([`scorer`], [`client`]), picks a
//! path per pair ([`select`]) and scores outputs ([`eval`]).

pub mod exec;
pub mod kg;
pub mod client;
pub mod corpus;
pub mod encode;
pub mod eval;
pub mod pathfind;
pub mod scorer;
pub mod select;

pub use exec::Execution;
