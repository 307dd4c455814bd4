//! Frame-synchronous prefix search over CTC posteriors, optionally joined
//! with triggered-attention decoder scores and an external LM.
//!
//! Search variants implement [`SearchStrategy`] and are selected by name from
//! [`strategies`]; the delete/add conditions gating decoder rescoring are
//! [`TaCondition`]s from [`conditions`]. [`decode`] runs the joint strategy
//! with the default conditions over a whole utterance.

mod beam;
mod conditions;
mod ctc_only;
mod joint;
mod loss;

use std::cmp::Ordering;
use std::fmt;

pub use conditions::{conditions, Always, Never, TaCondition};
pub use ctc_only::CtcPrefixSearch;
pub use joint::JointCtcTaSearch;
pub use loss::{joint_loss, LossParams};

use crate::ctc::Posteriorgram;
use crate::decoder::{DecoderParams, EncoderMemory};
use crate::encoder::EncoderStates;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::numcore::LogProb;
use crate::registry::Registry;

/// Knobs of the joint search. Defaults: `lambda = 0.5`, `alpha0 = 0.7`,
/// `alpha = 0.5`, `beta = 2`, `K = 300`, `P = 30`, `theta1 = 16`, `theta2 = 6`
/// and a decoder look-ahead of 18 frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeParams {
    /// CTC weight in the joint score.
    pub lambda: f64,
    /// LM weight in the CTC prefix score.
    pub alpha0: f64,
    /// LM weight in the joint score.
    pub alpha: f64,
    /// Per-label insertion bonus.
    pub beta: f64,
    /// Prefixes kept after CTC prefix scoring.
    pub k_size: usize,
    /// Prefixes kept after joint scoring.
    pub p_size: usize,
    pub theta1: f64,
    pub theta2: f64,
    /// Decoder look-ahead in encoder frames.
    pub eps_dec: usize,
    /// Minimum per-frame label probability for extending a prefix.
    pub local_threshold: f64,
    /// Add `log p(<eos>)` to the decoder score before the final ranking when
    /// the vocabulary has `<eos>`.
    pub eos_at_finish: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha0: 0.7,
            alpha: 0.5,
            beta: 2.0,
            k_size: 300,
            p_size: 30,
            theta1: 16.0,
            theta2: 6.0,
            eps_dec: 18,
            local_threshold: 1e-4,
            eos_at_finish: true,
        }
    }
}

impl DecodeParams {
    /// Settings under which nothing is pruned.
    pub fn exhaustive() -> Self {
        Self {
            k_size: 1_000_000,
            p_size: 1_000_000,
            theta1: 1e6,
            theta2: 1e6,
            local_threshold: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        for (name, v) in [("alpha0", self.alpha0), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.p_size == 0 || self.k_size < self.p_size {
            return bad(format!("need K >= P >= 1, got K={} P={}", self.k_size, self.p_size));
        }
        if self.theta1.is_nan() || self.theta2.is_nan() || self.theta1 <= 0.0 || self.theta2 <= 0.0 {
            return bad("beam widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.local_threshold) {
            return bad(format!("local threshold {} outside [0, 1)", self.local_threshold));
        }
        Ok(())
    }
}

/// `w * x`, but exactly zero when `w` is zero so that `-inf` terms with zero
/// weight vanish instead of turning into NaN.
pub fn weighted(w: f64, x: LogProb) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * x
    }
}

/// `log p_prfx + alpha0 * log p_LM + beta * |l|`.
pub fn prefix_score(log_p_prfx: LogProb, lm_logp: LogProb, len: usize, alpha0: f64, beta: f64) -> f64 {
    log_p_prfx + weighted(alpha0, lm_logp) + beta * len as f64
}

/// `lambda * log p_prfx + (1 - lambda) * log p_ta + alpha * log p_LM + beta * |l|`.
pub fn joint_score(log_p_prfx: LogProb, ta_logp: LogProb, lm_logp: LogProb, len: usize, params: &DecodeParams) -> f64 {
    weighted(params.lambda, log_p_prfx)
        + weighted(1.0 - params.lambda, ta_logp)
        + weighted(params.alpha, lm_logp)
        + params.beta * len as f64
}

/// Search order: higher score, then shorter prefix, then lexicographic.
pub fn rank(a: (&[u32], f64), b: (&[u32], f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.len().cmp(&b.0.len()))
        .then_with(|| a.0.cmp(b.0))
}

fn sorted(mut scored: Vec<(Vec<u32>, f64)>) -> Vec<(Vec<u32>, f64)> {
    scored.sort_by(|a, b| rank((&a.0, a.1), (&b.0, b.1)));
    scored
}

/// The `size` best entries, best first.
pub fn select_best(scored: Vec<(Vec<u32>, f64)>, size: usize) -> Vec<(Vec<u32>, f64)> {
    let mut s = sorted(scored);
    s.truncate(size);
    s
}

/// The `size` best entries, then only those within `width` of the best.
pub fn prune(scored: Vec<(Vec<u32>, f64)>, size: usize, width: f64) -> Vec<(Vec<u32>, f64)> {
    let mut s = select_best(scored, size);
    if let Some(max) = s.first().map(|e| e.1) {
        let floor = max - width;
        s.retain(|e| e.1 >= floor);
    }
    s
}

/// One line of the per-frame search trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    /// 1-based frame index.
    pub frame: usize,
    /// Prefixes surviving the first pruning stage.
    pub beam: usize,
    /// Best prefix by joint score.
    pub best: Vec<u32>,
    pub prefix_score: f64,
    pub joint_score: f64,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let best: Vec<String> = self.best.iter().map(u32::to_string).collect();
        write!(
            f,
            "frame={} beam={} best=[{}] prfx={:.6} joint={:.6}",
            self.frame,
            self.beam,
            best.join(" "),
            self.prefix_score,
            self.joint_score
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub labels: Vec<u32>,
    /// Final ranking score of `labels`.
    pub score: f64,
    pub trace: Vec<TraceEntry>,
}

impl DecodeResult {
    pub fn empty() -> Self {
        Self {
            labels: Vec::new(),
            score: 0.0,
            trace: Vec::new(),
        }
    }
}

/// Everything a search run borrows.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub params: DecodeParams,
    pub lm: &'a dyn LanguageModel,
    pub decoder: Option<&'a DecoderParams>,
    pub dcond: &'a dyn TaCondition,
    pub acond: &'a dyn TaCondition,
}

impl fmt::Debug for SearchContext<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SearchContext")
            .field("params", &self.params)
            .field("lm", &self.lm.name())
            .field("dcond", &self.dcond.name())
            .field("acond", &self.acond.name())
            .finish()
    }
}

/// A search algorithm selectable by name.
pub trait SearchStrategy: Send + Sync {
    fn name(&self) -> &str;

    /// Whether runs consult the attention decoder.
    fn needs_decoder(&self) -> bool;

    fn start<'a>(&self, ctx: SearchContext<'a>) -> Result<Box<dyn SearchRun + 'a>>;
}

/// One utterance being searched, advanced a frame at a time.
pub trait SearchRun {
    /// Process the next frame. `memory` must hold every encoder row the
    /// decoder may see at this frame: at least `n + 1 + eps_dec` rows, or all
    /// rows of the utterance.
    fn advance(&mut self, post_row: &[LogProb], memory: &EncoderMemory) -> Result<()>;

    fn frames_done(&self) -> usize;

    /// Current best prefix by CTC prefix score.
    fn partial(&self) -> &[u32];

    fn trace(&self) -> &[TraceEntry];

    /// Final hypothesis. `memory` holds the complete encoder output.
    fn finish(&mut self, memory: &EncoderMemory) -> Result<DecodeResult>;
}

/// Registry holding `joint-ctc-ta` and `ctc-prefix`.
pub fn strategies() -> Registry<dyn SearchStrategy> {
    let mut r: Registry<dyn SearchStrategy> = Registry::new("search strategy");
    r.register(JointCtcTaSearch::NAME, |_: &()| Ok(Box::new(JointCtcTaSearch) as Box<dyn SearchStrategy>))
        .expect("fresh registry");
    r.register(CtcPrefixSearch::NAME, |_: &()| Ok(Box::new(CtcPrefixSearch) as Box<dyn SearchStrategy>))
        .expect("fresh registry");
    r
}

/// Row-wise access to CTC posteriors, read in frame order.
pub trait PosteriorSource {
    fn frames(&self) -> usize;
    fn row(&mut self, n: usize) -> Result<Vec<LogProb>>;
}

impl PosteriorSource for Posteriorgram {
    fn frames(&self) -> usize {
        Posteriorgram::frames(self)
    }

    fn row(&mut self, n: usize) -> Result<Vec<LogProb>> {
        Ok(Posteriorgram::row(self, n).to_vec())
    }
}

/// Run `strategy` over a whole utterance.
pub fn run_search(
    strategy: &dyn SearchStrategy,
    ctx: SearchContext<'_>,
    enc: Option<&EncoderStates>,
    post: &mut dyn PosteriorSource,
) -> Result<DecodeResult> {
    let memory = match (ctx.decoder, enc) {
        (Some(dec), Some(enc)) => {
            if enc.len() != post.frames() {
                return Err(Error::dims(format!(
                    "{} encoder rows but {} posterior frames",
                    enc.len(),
                    post.frames()
                )));
            }
            EncoderMemory::from_states(dec, &enc.states)
        }
        (None, _) if strategy.needs_decoder() => {
            return Err(Error::InvalidParameter(format!(
                "strategy '{}' needs decoder parameters",
                strategy.name()
            )))
        }
        (Some(_), None) if strategy.needs_decoder() => {
            return Err(Error::InvalidParameter(format!(
                "strategy '{}' needs encoder states",
                strategy.name()
            )))
        }
        _ => EncoderMemory::default(),
    };
    let mut run = strategy.start(ctx)?;
    for n in 0..post.frames() {
        let row = post.row(n)?;
        run.advance(&row, &memory)?;
    }
    run.finish(&memory)
}

/// Joint CTC/attention decoding of one utterance with the default hooks.
pub fn decode(
    enc: &EncoderStates,
    post: &mut dyn PosteriorSource,
    lm: &dyn LanguageModel,
    dec: &DecoderParams,
    params: &DecodeParams,
) -> Result<DecodeResult> {
    let ctx = SearchContext {
        params: *params,
        lm,
        decoder: Some(dec),
        dcond: &Never,
        acond: &Always,
    };
    run_search(&JointCtcTaSearch, ctx, Some(enc), post)
}

/// Standalone CTC prefix beam search.
pub fn ctc_prefix_search(
    post: &mut dyn PosteriorSource,
    lm: &dyn LanguageModel,
    params: &DecodeParams,
) -> Result<DecodeResult> {
    let ctx = SearchContext {
        params: *params,
        lm,
        decoder: None,
        dcond: &Never,
        acond: &Always,
    };
    run_search(&CtcPrefixSearch, ctx, None, post)
}
