use std::collections::BTreeSet;

use crate::decoder::EncoderMemory;
use crate::error::Result;
use crate::numcore::LogProb;

use super::beam::CtcStage;
use super::{prune, select_best, DecodeResult, SearchContext, SearchRun, SearchStrategy, TraceEntry};

/// CTC prefix beam search with LM fusion and no attention decoder.
///
/// It runs the same per-frame schedule as the joint search with the joint
/// score replaced by the prefix score, so the joint search at `lambda = 1`,
/// `alpha = alpha0` reproduces it exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct CtcPrefixSearch;

impl CtcPrefixSearch {
    pub const NAME: &'static str = "ctc-prefix";
}

impl SearchStrategy for CtcPrefixSearch {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn needs_decoder(&self) -> bool {
        false
    }

    fn start<'a>(&self, ctx: SearchContext<'a>) -> Result<Box<dyn SearchRun + 'a>> {
        ctx.params.validate()?;
        Ok(Box::new(CtcPrefixRun {
            stage: CtcStage::new(ctx.lm),
            ctx,
            last: Vec::new(),
            frames: 0,
            partial: Vec::new(),
            trace: Vec::new(),
        }))
    }
}

struct CtcPrefixRun<'a> {
    ctx: SearchContext<'a>,
    stage: CtcStage,
    last: Vec<(Vec<u32>, f64)>,
    frames: usize,
    partial: Vec<u32>,
    trace: Vec<TraceEntry>,
}

impl SearchRun for CtcPrefixRun<'_> {
    fn advance(&mut self, post_row: &[LogProb], _memory: &EncoderMemory) -> Result<()> {
        let p = self.ctx.params;
        let cands = self.stage.expand(post_row, self.ctx.lm, &p)?;
        let scored: Vec<(Vec<u32>, f64)> = cands.iter().map(|c| (c.prefix.clone(), c.prefix_score)).collect();
        let best = select_best(scored.clone(), p.p_size);
        let second = prune(scored, p.p_size, p.theta2);
        let keep: BTreeSet<Vec<u32>> = best.iter().chain(&second).map(|(q, _)| q.clone()).collect();
        self.stage.commit(&keep);
        self.frames += 1;
        let top = &cands[0];
        self.partial = top.prefix.clone();
        self.trace.push(TraceEntry {
            frame: self.frames,
            beam: cands.len(),
            best: top.prefix.clone(),
            prefix_score: top.prefix_score,
            joint_score: top.prefix_score,
        });
        self.last = second;
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

    fn finish(&mut self, _memory: &EncoderMemory) -> Result<DecodeResult> {
        let Some((labels, score)) = select_best(self.last.clone(), 1).pop() else {
            return Ok(DecodeResult::empty());
        };
        Ok(DecodeResult {
            labels,
            score,
            trace: self.trace.clone(),
        })
    }
}
