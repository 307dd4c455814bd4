//! File formats: model archive, vocabulary, features and posteriorgrams.

pub mod archive;
pub mod binary;
pub mod vocab;

pub use archive::{decode_model, encode_model, load_model, save_model};
pub use binary::{
    decode_features, decode_posteriorgram, encode_features, encode_posteriorgram, load_features, load_posteriorgram,
    save_features, save_posteriorgram,
};
pub use vocab::Vocab;
