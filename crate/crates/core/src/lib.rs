//! Grammar-based configuration fuzzing for 5G gNB software.
//!
//! Configurations are generated and mutated as derivation trees of a JSON
//! grammar, rendered to libconfig text, and executed against a target. Crash
//! inputs are deduplicated, minimized and summarized as parameter tables.

pub mod campaign;
pub mod configfmt;
pub mod explain;
pub mod gnb_validator;
pub mod grammar;
pub mod mutate;
pub mod target;
pub mod triage;
