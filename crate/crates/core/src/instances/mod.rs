//! Entailment instances built from tagged sentences.

mod build;
mod candidates;
mod io;

pub use build::{EntailmentInstance, InstanceBuilder, Provenance, SamplingConfig};
pub use candidates::{generate_candidates, span_candidate_count, Candidate, DEFAULT_MAX_SPAN};
pub use io::{deserialize_instances, serialize_instances};
