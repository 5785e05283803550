//! Named entity recognition as prompt-based textual entailment.
//!
//! A sentence is the premise; for each candidate word (or span) and each
//! entity type a hypothesis such as "Seoul is the part of a location
//! entity." is wrapped into a cloze pattern and scored by a masked language
//! model through a verbalizer (`yes`/`no`). Word-level scores become an
//! emission matrix decoded with Viterbi over label transitions counted on
//! the training set.

pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod instances;
pub mod prompting;
pub mod registry;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
