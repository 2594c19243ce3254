//! Conditional programming-by-demonstration engine.
//!
//! Tasks are graphs of demonstrated skill parts joined at decision states.
//! During replay a vision-embedding switcher picks the successor part at
//! each decision state and flags contexts it has not seen before, which the
//! user answers by teaching a new branch or refining the current part.

pub mod embeddings;
pub mod evalkit;
pub mod executor;
pub mod geometry;
pub mod graph;
pub mod library;
pub mod switcher;
pub mod task;
