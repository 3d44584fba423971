//! Deterministic simulator and analytical models for switch-based
//! in-network aggregation.
//!
//! Key/value pairs produced by mappers flow through an aggregation tree of
//! switches toward a reducer. Each switch folds pairs that share a key in
//! a two-tier engine hierarchy, so the traffic that reaches the reducer
//! shrinks en route. The crate provides:
//!
//! - [`wire`]: the canonical packet encoding shared by every component.
//! - [`dataplane`]: per-switch classification, key-length grouping,
//!   crossbar dispatch, routing, and memory sizing.
//! - [`engines`]: the per-switch aggregation pipeline (front-end engines,
//!   eviction queues, scheduler, back-end engine) with a cycle-level
//!   timing model.
//! - [`topology`]: network description files and derived routes.
//! - [`controller`]: aggregation-tree construction and the task launch
//!   handshake.
//! - [`analytics`]: closed-form overhead and reduction models plus the
//!   idealized single-node reference.
//! - [`workload`]: seeded workload generators (even and skewed).
//! - [`harness`]: the event-driven whole-network simulator and experiment
//!   reports.
//!
//! Everything is deterministic: identical configuration and seed produce
//! byte-identical reports on every run.

pub mod analytics;
pub mod controller;
pub mod dataplane;
pub mod engines;
pub mod harness;
pub mod topology;
pub mod wire;
pub mod workload;
