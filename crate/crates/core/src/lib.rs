//! Heterogeneous system-on-chip task mapping simulator.
//!
//! Pipeline: parse an instruction trace into a task graph ([`ingest`]),
//! group tasks into clusters by security-augmented community detection
//! ([`partition`]), then map clusters onto an architecture graph ([`arch`])
//! with concurrent Q-learning agents ([`rl`]) inside a discrete-event
//! simulator ([`sim`]). [`scenario`] ties the steps together.

pub mod arch;
pub mod ingest;
pub mod par;
pub mod partition;
pub mod rl;
pub mod scenario;
pub mod sim;
pub mod synth;
