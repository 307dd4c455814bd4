//! Streaming transformer speech recognition.
//!
//! A convolutional front-end and a time-restricted self-attention encoder
//! produce encoder states with bounded look-ahead. A CTC head and a
//! triggered-attention decoder score label prefixes, and a frame-synchronous
//! joint CTC/attention beam search with optional LM shallow fusion turns the
//! scores into a transcript, either offline or in a [`streaming::Session`].

pub mod attention;
pub mod blocks;
pub mod ctc;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod io;
pub mod lm;
pub mod model;
pub mod numcore;
pub mod registry;
pub mod search;
pub mod streaming;

pub use ctc::{ctc_forward_logprob, ctc_prefix_step, ctc_viterbi_align, Posteriorgram, PrefixScores, TriggerAlignment};
pub use decoder::{ta_prefix_score, DecoderParams, DecoderState, EncoderMemory};
pub use encoder::{EncoderStates, FeatureMatrix, LookAhead};
pub use error::{Error, Result};
pub use lm::{language_models, LanguageModel, LmOptions, NgramLm, NullLm, UniformLm};
pub use model::{ModelConfig, ModelParams};
pub use registry::Registry;
pub use search::{
    conditions, ctc_prefix_search, decode, joint_loss, run_search, strategies, DecodeParams, DecodeResult,
    LossParams, SearchContext, SearchStrategy, TaCondition, TraceEntry,
};
pub use streaming::{recognize, theoretical_latency_ms, Session, StreamConfig};
