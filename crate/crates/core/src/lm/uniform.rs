use crate::error::{Error, Result};
use crate::numcore::LogProb;

use super::{LanguageModel, LmState};

/// Every label equally likely.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformLm {
    labels: usize,
    log_p: LogProb,
}

impl UniformLm {
    pub fn new(labels: usize) -> Result<Self> {
        if labels == 0 {
            return Err(Error::InvalidParameter("uniform LM over zero labels".into()));
        }
        Ok(Self {
            labels,
            log_p: (1.0 / labels as f64).ln(),
        })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }
}

impl LanguageModel for UniformLm {
    fn name(&self) -> &str {
        "uniform"
    }

    fn start(&self) -> LmState {
        LmState::default()
    }

    fn score_extend(&self, state: &LmState, _label: u32) -> (LmState, LogProb) {
        (state.clone(), self.log_p)
    }
}

/// No fusion: every increment is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NullLm;

impl LanguageModel for NullLm {
    fn name(&self) -> &str {
        "none"
    }

    fn start(&self) -> LmState {
        LmState::default()
    }

    fn score_extend(&self, state: &LmState, _label: u32) -> (LmState, LogProb) {
        (state.clone(), 0.0)
    }

    fn is_normalized(&self) -> bool {
        false
    }
}
