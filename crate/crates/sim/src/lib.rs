//! Deterministic discrete-event simulation of a huddle session, plus the
//! invariant checker and a seed-driven fuzzer built on it.

pub mod fuzz;
pub mod invariants;
pub mod run;
pub mod scenario;

pub use invariants::{check_invariants, Violation};
pub use run::{run_scenario, Trace, TraceEntry};
pub use scenario::{Scenario, ScenarioError, Step, Trigger};
