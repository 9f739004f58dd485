//! Discrete-event simulation of spectrum fragmentation at capacity.
//!
//! Requests with sizes uniform on `(0, alpha]` wait in a queue that never
//! empties. Each admitted request becomes a channel made of one or more
//! fragments placed in the free gaps of `[0, 1]`; channels leave after
//! exponential residence times. The crate tracks the exact fragment/gap
//! structure, checks the integer identities linking gap counts to fragment
//! types at every departure, and computes the analytic maximum throughput
//! used to validate the simulator.

pub mod alloc;
pub mod engine;
pub mod oracle;
pub mod spectrum;
pub mod stats;

pub use alloc::{Algorithm, Allocator, GapPlan, PlanEntry, ScanCursor};
pub use engine::{run, run_with_trace, DepartureRecord, Engine, EngineError, RunConfig};
pub use oracle::{expected_r, OracleResult, Policy};
pub use spectrum::{ChannelId, Spectrum, TypeCensus};
pub use stats::{StatsAccumulator, SummaryStats};
