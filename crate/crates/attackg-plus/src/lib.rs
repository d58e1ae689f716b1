//! Convert unstructured cyber threat intelligence (CTI) reports into
//! three-layer attack knowledge graphs.
//!
//! The pipeline runs four chat-model stages over a report:
//!
//! 1. [`rewriter`] restructures the raw text into tactic-labeled,
//!    serial-numbered paragraphs,
//! 2. [`extractor`] pulls atomic (subject, action, object) events,
//!    entity-entity relations, and coreference-resolved entities,
//! 3. [`identifier`] assigns MITRE ATT&CK technique labels per tactic
//!    section and aligns them to events by paragraph serial,
//! 4. [`summarizer`] records the attacker's per-stage state (permissions,
//!    files, information, tools).
//!
//! [`graph`] assembles the stage outputs into a validated [`graph::AttackGraph`]
//! with a canonical on-disk form plus DOT and self-contained HTML renderers.
//! [`eval`] scores predictions against gold annotations and computes corpus
//! statistics. [`gateway`] provides chat-model access with deterministic
//! record/replay, and [`catalog`] loads the ATT&CK enterprise matrix from a
//! STIX 2.1 bundle.
//!
//! See the crate examples for runnable entry points covering each capability;
//! the `attackg-plus` binary exposes the same operations as subcommands.

pub mod catalog;
pub mod cli;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod render;
pub mod stages;




