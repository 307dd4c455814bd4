//! Incremental decoding session and offline recognition driver.
//!
//! A [`Session`] consumes feature frames in arbitrary chunks. The CNN
//! front-end and the encoder stack run row-incrementally, and search frame
//! `n` (0-based) runs as soon as encoder rows `0..=n + eps_dec` exist. Every
//! route shares the offline kernels, so the result of a session is
//! bit-identical to [`recognize`] on the whole utterance.

use std::collections::VecDeque;

use crate::decoder::EncoderMemory;
use crate::encoder::{FeatureMatrix, IncrementalEncoder, IncrementalFrontEnd, LookAhead};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::{LogProb, Matrix};
use crate::search::{run_search, DecodeResult, SearchContext, SearchRun, SearchStrategy};

/// Feature frames consumed by the CNN before its first output row beyond
/// the row's own block.
const CNN_LOOK_AHEAD_FRAMES: f64 = 3.0;
/// Input frames per encoder frame.
const SUBSAMPLING: f64 = 4.0;

/// Look-ahead settings of a streaming session.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamConfig {
    /// Per-layer encoder look-ahead in encoder frames.
    pub eps_enc: LookAhead,
    /// Decoder look-ahead in encoder frames.
    pub eps_dec: usize,
    pub frame_shift_ms: f32,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            eps_enc: LookAhead::Frames(3),
            eps_dec: 18,
            frame_shift_ms: 10.0,
        }
    }
}

/// Look-ahead delay of the encoder stack alone: `E * eps_enc` encoder frames.
pub fn encoder_latency_ms(cfg: &StreamConfig, e_layers: usize) -> f64 {
    match cfg.eps_enc {
        LookAhead::Frames(eps) => (e_layers * eps) as f64 * SUBSAMPLING * f64::from(cfg.frame_shift_ms),
        LookAhead::Unbounded => f64::INFINITY,
    }
}

/// Theoretical algorithmic latency: CNN look-ahead plus accumulated encoder
/// look-ahead plus decoder look-ahead. Infinite for an unbounded encoder.
pub fn theoretical_latency_ms(cfg: &StreamConfig, e_layers: usize) -> f64 {
    let shift = f64::from(cfg.frame_shift_ms);
    CNN_LOOK_AHEAD_FRAMES * shift + encoder_latency_ms(cfg, e_layers) + cfg.eps_dec as f64 * SUBSAMPLING * shift
}

/// Offline recognition: encode the whole utterance, compute CTC posteriors
/// and run `strategy` over them.
pub fn recognize(
    model: &ModelParams,
    x: &FeatureMatrix,
    eps_enc: LookAhead,
    strategy: &dyn SearchStrategy,
    ctx: SearchContext<'_>,
) -> Result<DecodeResult> {
    let enc = model.encode(x, eps_enc)?;
    let mut post = model.ctc_posteriorgram(&enc)?;
    let ctx = SearchContext {
        decoder: ctx.decoder.or(Some(&model.decoder)).filter(|_| strategy.needs_decoder()),
        ..ctx
    };
    run_search(strategy, ctx, Some(&enc), &mut post)
}

/// Streaming recognition of one utterance.
pub struct Session<'a> {
    model: &'a ModelParams,
    cfg: StreamConfig,
    front: IncrementalFrontEnd<'a>,
    encoder: IncrementalEncoder<'a>,
    uses_decoder: bool,
    memory: EncoderMemory,
    /// CTC rows of emitted encoder frames not yet searched.
    pending: VecDeque<Vec<LogProb>>,
    emitted: usize,
    run: Box<dyn SearchRun + 'a>,
    partial: Vec<u32>,
    closed: bool,
}

impl<'a> Session<'a> {
    /// Open a session. The decoder look-ahead of `ctx.params` is replaced by
    /// `cfg.eps_dec`.
    pub fn new(
        model: &'a ModelParams,
        strategy: &dyn SearchStrategy,
        ctx: SearchContext<'a>,
        cfg: StreamConfig,
    ) -> Result<Self> {
        if cfg.frame_shift_ms.is_nan() || cfg.frame_shift_ms <= 0.0 {
            return Err(Error::InvalidParameter("frame shift must be positive".into()));
        }
        let uses_decoder = strategy.needs_decoder();
        let mut params = ctx.params;
        params.eps_dec = cfg.eps_dec;
        let ctx = SearchContext {
            params,
            decoder: if uses_decoder { Some(&model.decoder) } else { None },
            ..ctx
        };
        let run = strategy.start(ctx)?;
        Ok(Self {
            model,
            cfg,
            front: IncrementalFrontEnd::new(&model.encoder),
            encoder: IncrementalEncoder::new(&model.encoder, cfg.eps_enc),
            uses_decoder,
            memory: EncoderMemory::new(&model.decoder),
            pending: VecDeque::new(),
            emitted: 0,
            run,
            partial: Vec::new(),
            closed: false,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    /// Feature frames received so far.
    pub fn frames_received(&self) -> usize {
        self.front.frames_seen()
    }

    /// Encoder rows computed so far.
    pub fn encoder_frames(&self) -> usize {
        self.emitted
    }

    /// Search frames processed so far.
    pub fn frames_decoded(&self) -> usize {
        self.run.frames_done()
    }

    /// Current best prefix by CTC prefix score.
    pub fn partial(&self) -> &[u32] {
        &self.partial
    }

    /// Append a chunk of feature frames. Returns the new partial hypothesis
    /// when it changed.
    pub fn push(&mut self, chunk: &FeatureMatrix) -> Result<Option<Vec<u32>>> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        if chunk.frame_shift_ms != self.cfg.frame_shift_ms {
            return Err(Error::InvalidParameter(format!(
                "chunk frame shift {} ms differs from session {} ms",
                chunk.frame_shift_ms, self.cfg.frame_shift_ms
            )));
        }
        let before = self.partial.clone();
        for frame in chunk.frames.iter_rows() {
            let x0 = self.front.push(frame)?;
            for row in x0 {
                let out = self.encoder.push(&row)?;
                self.accept(out);
            }
            self.search(false)?;
        }
        Ok((self.partial != before).then(|| self.partial.clone()))
    }

    /// Flush the CNN and encoder, search the remaining frames and return the
    /// final hypothesis. The session is closed afterwards.
    pub fn finalize(&mut self) -> Result<DecodeResult> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        self.closed = true;
        if self.front.frames_seen() == 0 {
            return Ok(DecodeResult::empty());
        }
        for row in self.front.finish()? {
            let out = self.encoder.push(&row)?;
            self.accept(out);
        }
        let out = self.encoder.finish()?;
        self.accept(out);
        self.search(true)?;
        self.run.finish(&self.memory)
    }

    fn accept(&mut self, rows: Vec<Vec<f32>>) {
        if rows.is_empty() {
            return;
        }
        for r in &rows {
            self.pending.push_back(self.model.ctc_row(r));
        }
        self.emitted += rows.len();
        if self.uses_decoder {
            let m = Matrix::from_rows(&rows, self.model.config.d_model).expect("encoder rows have d_model columns");
            self.memory.extend(&self.model.decoder, &m);
        }
    }

    /// Search every frame whose decoder look-ahead is available. At the end
    /// of the utterance all emitted frames are available.
    fn search(&mut self, at_end: bool) -> Result<()> {
        let look_ahead = if self.uses_decoder { self.cfg.eps_dec } else { 0 };
        while !self.pending.is_empty() {
            let n = self.run.frames_done();
            if !at_end && self.emitted < n + 1 + look_ahead {
                break;
            }
            let row = self.pending.pop_front().expect("checked non-empty");
            self.run.advance(&row, &self.memory)?;
            self.partial = self.run.partial().to_vec();
        }
        Ok(())
    }
}
