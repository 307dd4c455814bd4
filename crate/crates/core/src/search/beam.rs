//! CTC side of a search frame shared by every strategy: prefix extension, LM
//! lookup, prefix scoring and the first pruning stage.

use std::collections::{BTreeMap, BTreeSet};

use crate::ctc::{ctc_prefix_step, PrefixMap, PrefixScores};
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LmState};
use crate::numcore::LogProb;

use super::{prefix_score, prune, DecodeParams};

/// A prefix that survived the first pruning stage.
#[derive(Clone, Debug, PartialEq)]
pub(super) struct Candidate {
    pub prefix: Vec<u32>,
    /// `log(p_b + p_nb)`.
    pub log_p_prfx: LogProb,
    pub lm_logp: LogProb,
    pub prefix_score: f64,
}

#[derive(Debug)]
pub(super) struct CtcStage {
    beam: PrefixMap,
    lm: BTreeMap<Vec<u32>, (LmState, LogProb)>,
    pending: PrefixMap,
}

impl CtcStage {
    pub fn new(lm: &dyn LanguageModel) -> Self {
        let mut beam = PrefixMap::new();
        beam.insert(Vec::new(), PrefixScores::ROOT);
        let mut cache = BTreeMap::new();
        cache.insert(Vec::new(), (lm.start(), 0.0));
        Self {
            beam,
            lm: cache,
            pending: PrefixMap::new(),
        }
    }

    fn lm_entry(&mut self, lm: &dyn LanguageModel, prefix: &[u32]) -> (LmState, LogProb) {
        if let Some(e) = self.lm.get(prefix) {
            return e.clone();
        }
        let (parent_state, parent_lp) = self.lm_entry(lm, &prefix[..prefix.len() - 1]);
        let (state, inc) = lm.score_extend(&parent_state, prefix[prefix.len() - 1]);
        let entry = (state, parent_lp + inc);
        self.lm.insert(prefix.to_vec(), entry.clone());
        entry
    }

    /// Extend the beam by one frame and return the `K`/`theta1`-pruned
    /// candidates, best first.
    pub fn expand(&mut self, row: &[LogProb], lm: &dyn LanguageModel, params: &DecodeParams) -> Result<Vec<Candidate>> {
        let omega_ctc = ctc_prefix_step(row, &self.beam, params.local_threshold);
        let mut scored = Vec::with_capacity(omega_ctc.len());
        let mut details = BTreeMap::new();
        for (prefix, scores) in &omega_ctc {
            let (_, lm_logp) = self.lm_entry(lm, prefix);
            let total = scores.total();
            let s = prefix_score(total, lm_logp, prefix.len(), params.alpha0, params.beta);
            scored.push((prefix.clone(), s));
            details.insert(prefix.clone(), (total, lm_logp));
        }
        let kept = prune(scored, params.k_size, params.theta1);
        if kept.is_empty() {
            return Err(Error::SearchCollapsed);
        }
        self.pending = omega_ctc;
        Ok(kept
            .into_iter()
            .map(|(prefix, s)| {
                let (log_p_prfx, lm_logp) = details[&prefix];
                Candidate {
                    prefix,
                    log_p_prfx,
                    lm_logp,
                    prefix_score: s,
                }
            })
            .collect())
    }

    /// Make `keep` the beam for the next frame.
    pub fn commit(&mut self, keep: &BTreeSet<Vec<u32>>) {
        let pending = std::mem::take(&mut self.pending);
        self.beam = pending.into_iter().filter(|(p, _)| keep.contains(p)).collect();
        let ancestors = ancestors_or_equal(keep);
        self.lm.retain(|p, _| ancestors.contains(p));
    }
}

/// Every prefix of every member of `set`, the members included.
pub(super) fn ancestors_or_equal(set: &BTreeSet<Vec<u32>>) -> BTreeSet<Vec<u32>> {
    let mut out = BTreeSet::new();
    for p in set {
        for l in 0..=p.len() {
            out.insert(p[..l].to_vec());
        }
    }
    out
}
