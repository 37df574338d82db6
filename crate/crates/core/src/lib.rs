//! Parallel adaptive-sampling approximation of betweenness centrality.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: CSR graphs, edge-list I/O, R-MAT generation, BFS and diameter bounds.
//! * [`sampler`]: uniform vertex pairs and uniform shortest paths via bidirectional BFS.
//! * [`stopping`]: sample budget, failure-probability calibration and the adaptive stopping rule.
//! * [`epoch`]: wait-free double-buffered aggregation of per-thread state frames.
//! * [`comm`]: rank-level collectives and the simulated cluster backend.
//! * [`engine`]: the full pipeline and both parallel drivers.
//! * [`oracle`]: exact betweenness (Brandes) and brute-force references.

pub mod comm;
pub mod engine;
pub mod epoch;
pub mod graph;
pub mod oracle;
pub mod sampler;
pub mod stopping;

pub use epoch::StateFrame;
pub use graph::{Graph, Vertex};
