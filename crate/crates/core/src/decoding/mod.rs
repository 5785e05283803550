//! From per-word entailment scores to tag sequences and mentions.

mod decoder;
mod emissions;
mod transitions;
mod viterbi;

pub use decoder::{
    decoder_registry, span_greedy, DecodeContext, Decoder, SpanGreedy, ViterbiDecoder,
    SPAN_THRESHOLD,
};
pub use emissions::{
    build_emissions, build_emissions_many, null_strategy_registry, write_emissions, Complement,
    EmissionMatrix, NullStrategy, NullTemplate, EMISSION_FLOOR,
};
pub use transitions::{estimate_transitions, TransitionModel};
pub use viterbi::{
    labels_to_mentions, path_score, select_tau, tau_grid, viterbi, DecodeConfig, TauSweep,
};
