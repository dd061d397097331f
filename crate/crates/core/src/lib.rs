//! Batch engine for test-driven software experiments.
//!
//! A study script declares interface signatures and sequence-sheet tests
//! ([`lql`], [`ssn`]), wires actions into a dependency graph ([`pipeline`]),
//! samples candidate implementations ([`generate`]), executes them
//! ([`arena`]) into stimulus-response matrices ([`srm`]) and judges the
//! results ([`analysis`]). [`engine`] runs the whole thing.

pub mod analysis;
pub mod arena;
pub mod engine;
pub mod generate;
pub mod lql;
pub mod par;
pub mod pipeline;
pub mod srm;
pub mod ssn;
pub mod syntax;
pub mod value;

pub use value::Value;
