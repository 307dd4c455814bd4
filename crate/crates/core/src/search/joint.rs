use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::decoder::{DecoderParams, DecoderState, DecoderStep, EncoderMemory};
use crate::error::{Error, Result};
use crate::numcore::LogProb;

use super::beam::{ancestors_or_equal, CtcStage};
use super::{
    joint_score, prune, select_best, DecodeResult, SearchContext, SearchRun, SearchStrategy, TraceEntry,
};

/// Frame-synchronous joint CTC / triggered-attention beam search.
#[derive(Clone, Copy, Debug, Default)]
pub struct JointCtcTaSearch;

impl JointCtcTaSearch {
    pub const NAME: &'static str = "joint-ctc-ta";
}

impl SearchStrategy for JointCtcTaSearch {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn needs_decoder(&self) -> bool {
        true
    }

    fn start<'a>(&self, ctx: SearchContext<'a>) -> Result<Box<dyn SearchRun + 'a>> {
        ctx.params.validate()?;
        let decoder = ctx
            .decoder
            .ok_or_else(|| Error::InvalidParameter("joint search needs decoder parameters".into()))?;
        let root = decoder.initial_state();
        let mut ta = BTreeMap::new();
        ta.insert(Vec::new(), root.clone());
        Ok(Box::new(JointRun {
            stage: CtcStage::new(ctx.lm),
            ctx,
            decoder,
            root,
            ta,
            last: Vec::new(),
            frames: 0,
            partial: Vec::new(),
            trace: Vec::new(),
        }))
    }
}

/// Member of the second-stage beam with both scores.
#[derive(Clone, Debug)]
struct Finalist {
    prefix: Vec<u32>,
    log_p_prfx: LogProb,
    lm_logp: LogProb,
    joint: f64,
}

struct JointRun<'a> {
    ctx: SearchContext<'a>,
    decoder: &'a DecoderParams,
    stage: CtcStage,
    root: DecoderState,
    /// Prefixes holding a decoder score, with their cached decoder state.
    ta: BTreeMap<Vec<u32>, DecoderState>,
    last: Vec<Finalist>,
    frames: usize,
    partial: Vec<u32>,
    trace: Vec<TraceEntry>,
}

impl JointRun<'_> {
    /// Decoder state of `prefix`, scoring positions missing from the cache
    /// with trigger `nu`.
    fn state_for(
        &self,
        prefix: &[u32],
        nu: usize,
        memory: &EncoderMemory,
        steps: &mut HashMap<Vec<u32>, DecoderStep>,
    ) -> Result<DecoderState> {
        if prefix.is_empty() {
            return Ok(self.root.clone());
        }
        if let Some(s) = self.ta.get(prefix) {
            return Ok(s.clone());
        }
        let parent = &prefix[..prefix.len() - 1];
        let parent_state = self.state_for(parent, nu, memory, steps)?;
        if !steps.contains_key(parent) {
            let step = self.decoder.step(&parent_state, memory, nu)?;
            steps.insert(parent.to_vec(), step);
        }
        Ok(parent_state.extend(&steps[parent], prefix[prefix.len() - 1]))
    }
}

impl SearchRun for JointRun<'_> {
    fn advance(&mut self, post_row: &[LogProb], memory: &EncoderMemory) -> Result<()> {
        let p = self.ctx.params;
        let n = self.frames;
        if memory.len() <= n {
            return Err(Error::Invariant(format!(
                "frame {} decoded with only {} encoder rows",
                n + 1,
                memory.len()
            )));
        }
        let nu = (n + 1 + p.eps_dec).min(memory.len());
        let cands = self.stage.expand(post_row, self.ctx.lm, &p)?;
        let beam: Vec<Vec<u32>> = cands.iter().map(|c| c.prefix.clone()).collect();

        for prefix in &beam {
            if self.ta.contains_key(prefix) && self.ctx.dcond.check(prefix, &beam, post_row) {
                self.ta.remove(prefix);
            }
        }
        // Siblings share their parent's decoder step within a frame.
        let mut steps: HashMap<Vec<u32>, DecoderStep> = HashMap::new();
        for prefix in &beam {
            if !self.ta.contains_key(prefix) && self.ctx.acond.check(prefix, &beam, post_row) {
                let state = self.state_for(prefix, nu, memory, &mut steps)?;
                self.ta.insert(prefix.clone(), state);
            }
        }

        let mut finalists = Vec::with_capacity(cands.len());
        for c in &cands {
            let ta_logp = if let Some(s) = self.ta.get(&c.prefix) {
                s.log_prob()
            } else if c.prefix.is_empty() {
                0.0
            } else {
                let parent = &c.prefix[..c.prefix.len() - 1];
                match self.ta.get(parent) {
                    Some(s) => s.log_prob(),
                    None if parent.is_empty() => 0.0,
                    None => {
                        return Err(Error::Invariant(format!(
                            "no decoder score for {:?} or its parent",
                            c.prefix
                        )))
                    }
                }
            };
            finalists.push(Finalist {
                prefix: c.prefix.clone(),
                log_p_prfx: c.log_p_prfx,
                lm_logp: c.lm_logp,
                joint: joint_score(c.log_p_prfx, ta_logp, c.lm_logp, c.prefix.len(), &p),
            });
        }

        let by_joint: Vec<(Vec<u32>, f64)> = finalists.iter().map(|f| (f.prefix.clone(), f.joint)).collect();
        let by_prefix: Vec<(Vec<u32>, f64)> = cands.iter().map(|c| (c.prefix.clone(), c.prefix_score)).collect();
        let best_joint = select_best(by_joint.clone(), p.p_size);
        let second = prune(by_prefix, p.p_size, p.theta2);
        let keep: BTreeSet<Vec<u32>> = best_joint.iter().chain(&second).map(|(q, _)| q.clone()).collect();

        let second_set: BTreeSet<&Vec<u32>> = second.iter().map(|(q, _)| q).collect();
        self.last = finalists
            .iter()
            .filter(|f| second_set.contains(&f.prefix))
            .cloned()
            .collect();

        self.stage.commit(&keep);
        let ancestors = ancestors_or_equal(&keep);
        self.ta.retain(|q, _| ancestors.contains(q));

        self.frames += 1;
        self.partial = cands[0].prefix.clone();
        let (top, top_joint) = select_best(by_joint, 1).pop().expect("beam is non-empty");
        let top_prefix_score = cands
            .iter()
            .find(|c| c.prefix == top)
            .map(|c| c.prefix_score)
            .expect("top prefix is a candidate");
        self.trace.push(TraceEntry {
            frame: self.frames,
            beam: cands.len(),
            best: top,
            prefix_score: top_prefix_score,
            joint_score: top_joint,
        });
        Ok(())
    }

    fn frames_done(&self) -> usize {
        self.frames
    }

    fn partial(&self) -> &[u32] {
        &self.partial
    }

    fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    fn finish(&mut self, memory: &EncoderMemory) -> Result<DecodeResult> {
        if self.frames == 0 {
            return Ok(DecodeResult::empty());
        }
        let p = self.ctx.params;
        let eos = if p.eos_at_finish { self.decoder.eos } else { None };
        let mut ranked = Vec::with_capacity(self.last.len());
        for f in &self.last {
            let mut joint = f.joint;
            if let (Some(eos), Some(state)) = (eos, self.ta.get(&f.prefix)) {
                let step = self.decoder.step(state, memory, memory.len())?;
                let ta = state.log_prob() + step.log_probs[eos as usize];
                joint = joint_score(f.log_p_prfx, ta, f.lm_logp, f.prefix.len(), &p);
            }
            ranked.push((f.prefix.clone(), joint));
        }
        let (labels, score) = select_best(ranked, 1).pop().ok_or(Error::SearchCollapsed)?;
        Ok(DecodeResult {
            labels,
            score,
            trace: self.trace.clone(),
        })
    }
}
