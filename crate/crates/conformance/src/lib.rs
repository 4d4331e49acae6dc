//! Streaming conformance checking: optimal prefix-alignments of ongoing
//! process instances against a workflow-net reference model, computed
//! incrementally per event over a simulated partitioned event log.
//!
//! Modules:
//! - [`petri`]: workflow nets, markings, firing semantics, model files
//! - [`alignment`]: alignment moves, costs, the synchronous product net
//! - [`search`]: incremental shortest-path search with reusable state
//! - [`fastpath`]: direct synchronizing and the prefix cache
//! - [`streamsim`]: event logs, time-compressed replay, synthetic data
//! - [`engine`]: partitioned topic, consumer workers, variants, metrics

pub mod alignment;
pub mod engine;
pub mod fastpath;
pub mod petri;
pub mod search;
pub mod streamsim;
pub mod testnets;
