//! Language models for shallow fusion.
//!
//! A model scores one label at a time from an opaque [`LmState`]; the search
//! keeps the cumulative sum per prefix. Implementations are registered by
//! name in [`language_models`].

mod ngram;
mod uniform;

use std::path::PathBuf;

pub use ngram::{NgramLm, BOS};
pub use uniform::{NullLm, UniformLm};

use crate::error::Error;
use crate::io::vocab::Vocab;
use crate::numcore::LogProb;
use crate::registry::Registry;

/// Label history a model conditions on. Models keep only what they need, so
/// equal states always score identically.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LmState(pub Vec<u32>);

pub trait LanguageModel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;

    fn start(&self) -> LmState;

    /// Next state and `log p(label | state)`.
    fn score_extend(&self, state: &LmState, label: u32) -> (LmState, LogProb);

    /// Whether increments form a distribution over the label set. The no-op
    /// model returns `false`.
    fn is_normalized(&self) -> bool {
        true
    }
}

/// Sum of increments along `labels` from the start state.
pub fn score_sequence(lm: &dyn LanguageModel, labels: &[u32]) -> LogProb {
    let mut state = lm.start();
    let mut total = 0.0;
    for &y in labels {
        let (next, lp) = lm.score_extend(&state, y);
        total += lp;
        state = next;
    }
    total
}

/// Construction arguments shared by every registered model.
#[derive(Clone, Debug, Default)]
pub struct LmOptions {
    /// Number of emittable labels.
    pub labels: usize,
    /// Model file for file-backed models.
    pub path: Option<PathBuf>,
    /// Resolves symbolic tokens in model files.
    pub vocab: Option<Vocab>,
}

/// Registry holding `none`, `uniform` and `ngram`.
pub fn language_models() -> Registry<dyn LanguageModel, LmOptions> {
    let mut r: Registry<dyn LanguageModel, LmOptions> = Registry::new("language model");
    r.register("none", |_: &LmOptions| Ok(Box::new(NullLm) as Box<dyn LanguageModel>))
        .expect("fresh registry");
    r.register("uniform", |o: &LmOptions| {
        Ok(Box::new(UniformLm::new(o.labels)?) as Box<dyn LanguageModel>)
    })
    .expect("fresh registry");
    r.register("ngram", |o: &LmOptions| {
        let path = o
            .path
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("the ngram model needs an ARPA file".into()))?;
        Ok(Box::new(NgramLm::load(path, o.vocab.as_ref())?) as Box<dyn LanguageModel>)
    })
    .expect("fresh registry");
    r
}
