//! Triggered-attention transformer decoder.
//!
//! Position `l` of the decoder reads the label history through causal
//! self-attention and the encoder only through rows `1..=nu_l` (its trigger).
//! [`decoder_forward`] evaluates whole label sequences with explicit masks;
//! [`DecoderState`] + [`DecoderParams::step`] extend one prefix position at a
//! time from cached per-layer keys and values, which is what the beam search
//! uses. The two agree bit-for-bit.

use crate::attention::{multi_head_attention, AttentionMask, MhaParams};
use crate::blocks::{residual, FeedForward, LayerNorm};
use crate::encoder::{add_positional_encoding, EncoderStates};
use crate::error::{Error, Result};
use crate::numcore::{
    layer_norm, linear, linear_row, log_softmax_f64, relu, LogProb, Matrix, LAYER_NORM_EPS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MhaParams,
    pub norm_src: LayerNorm,
    pub src_attn: MhaParams,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub sos: u32,
    pub eos: Option<u32>,
    /// `vocab_size x d_model` label embeddings.
    pub embed: Matrix,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: LayerNorm,
    /// `d_model x vocab_size`.
    pub out_proj: Matrix,
    pub out_bias: Vec<f32>,
}

impl DecoderParams {
    pub fn d_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("decoder needs at least one layer".into()));
        }
        if self.sos as usize >= self.vocab_size || self.eos.is_some_and(|e| e as usize >= self.vocab_size) {
            return Err(Error::InvalidParameter("special token id outside the vocabulary".into()));
        }
        if self.embed.rows() != self.vocab_size
            || self.embed.cols() != self.d_model
            || self.out_proj.rows() != self.d_model
            || self.out_proj.cols() != self.vocab_size
            || self.out_bias.len() != self.vocab_size
            || self.final_norm.dim() != self.d_model
        {
            return Err(Error::dims("decoder embedding/output shapes are inconsistent"));
        }
        for layer in &self.layers {
            layer.self_attn.validate()?;
            layer.src_attn.validate()?;
            layer.ff.validate(self.d_model, self.d_ff)?;
            if layer.self_attn.d_model() != self.d_model || layer.src_attn.d_model() != self.d_model {
                return Err(Error::dims("decoder attention width differs from d_model"));
            }
        }
        Ok(())
    }

    fn embed_row(&self, token: u32, pos: usize) -> Result<Vec<f32>> {
        if token as usize >= self.vocab_size {
            return Err(Error::InvalidParameter(format!(
                "label {token} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let mut z = self.embed.row(token as usize).to_vec();
        add_positional_encoding(&mut z, pos);
        Ok(z)
    }

    fn output(&self, z: &[f32]) -> Vec<LogProb> {
        let h = self.final_norm.apply_row(z);
        log_softmax_f64(&linear_row(&h, &self.out_proj, &self.out_bias))
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            keys: vec![Vec::new(); self.layers.len()],
            values: vec![Vec::new(); self.layers.len()],
            next_input: self.sos,
            log_prob: 0.0,
            triggers: Vec::new(),
        }
    }

    /// Run one decoder position: the input is `state`'s last label (or
    /// `<sos>`), encoder rows `0..nu` are visible. Returns the log posterior
    /// over the next label together with this position's cached keys/values.
    pub fn step(&self, state: &DecoderState, memory: &EncoderMemory, nu: usize) -> Result<DecoderStep> {
        if nu == 0 || nu > memory.len() {
            return Err(Error::TriggerOutOfRange {
                nu,
                frames: memory.len(),
            });
        }
        let pos = state.len();
        let mut z = self.embed_row(state.next_input, pos)?;
        let mut keys = Vec::with_capacity(self.layers.len());
        let mut values = Vec::with_capacity(self.layers.len());
        for (d, layer) in self.layers.iter().enumerate() {
            let h = layer.norm_self.apply_row(&z);
            let q = layer.self_attn.project_query(&h);
            let mut ks = state.keys[d].clone();
            let mut vs = state.values[d].clone();
            ks.push(layer.self_attn.project_key(&h));
            vs.push(layer.self_attn.project_value(&h));
            let a = layer.self_attn.attend(&q, &ks, &vs, 0..=pos)?;
            let z_self = residual(&z, &a);

            let h2 = layer.norm_src.apply_row(&z_self);
            let q2 = layer.src_attn.project_query(&h2);
            let c = layer
                .src_attn
                .attend(&q2, &memory.keys[d], &memory.values[d], 0..nu)?;
            let z_src = residual(&z_self, &c);

            let f = layer.ff.apply_row(&layer.norm_ff.apply_row(&z_src));
            z = residual(&z_src, &f);
            keys.push(ks.pop().unwrap_or_default());
            values.push(vs.pop().unwrap_or_default());
        }
        Ok(DecoderStep {
            keys,
            values,
            log_probs: self.output(&z),
            nu,
        })
    }
}

/// Encoder rows projected into every decoder layer's key/value space.
#[derive(Clone, Debug, Default)]
pub struct EncoderMemory {
    keys: Vec<Vec<Vec<f32>>>,
    values: Vec<Vec<Vec<f32>>>,
    rows: usize,
}

impl EncoderMemory {
    pub fn new(params: &DecoderParams) -> Self {
        Self {
            keys: vec![Vec::new(); params.layers.len()],
            values: vec![Vec::new(); params.layers.len()],
            rows: 0,
        }
    }

    pub fn from_states(params: &DecoderParams, enc: &Matrix) -> Self {
        let mut m = Self::new(params);
        m.extend(params, enc);
        m
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Append the rows of `enc` after those already held.
    pub fn extend(&mut self, params: &DecoderParams, enc: &Matrix) {
        for x in enc.iter_rows() {
            for (d, layer) in params.layers.iter().enumerate() {
                self.keys[d].push(layer.src_attn.project_key(x));
                self.values[d].push(layer.src_attn.project_value(x));
            }
        }
        self.rows += enc.rows();
    }
}

/// Cached decoder positions for one label prefix.
#[derive(Clone, Debug)]
pub struct DecoderState {
    keys: Vec<Vec<Vec<f32>>>,
    values: Vec<Vec<Vec<f32>>>,
    next_input: u32,
    log_prob: LogProb,
    triggers: Vec<usize>,
}

impl DecoderState {
    /// Decoder positions processed (= labels scored).
    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    /// Accumulated `log p_ta` of the labels scored so far.
    pub fn log_prob(&self) -> LogProb {
        self.log_prob
    }

    /// Trigger frame used for each scored label.
    pub fn triggers(&self) -> &[usize] {
        &self.triggers
    }

    /// State of the prefix extended by `label`, scored with `step`.
    pub fn extend(&self, step: &DecoderStep, label: u32) -> DecoderState {
        let mut next = self.clone();
        for (d, (k, v)) in step.keys.iter().zip(&step.values).enumerate() {
            next.keys[d].push(k.clone());
            next.values[d].push(v.clone());
        }
        next.next_input = label;
        next.log_prob = self.log_prob + step.log_probs[label as usize];
        next.triggers.push(step.nu);
        next
    }
}

/// Output of one decoder position.
#[derive(Clone, Debug)]
pub struct DecoderStep {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    pub log_probs: Vec<LogProb>,
    pub nu: usize,
}

/// Decoder over a whole input sequence `inputs` (starting with `<sos>`),
/// position `l` seeing encoder rows `0..nus[l]`. Returns one log posterior
/// per position.
pub fn decoder_forward(
    enc: &EncoderStates,
    inputs: &[u32],
    nus: &[usize],
    params: &DecoderParams,
) -> Result<Vec<Vec<LogProb>>> {
    if inputs.len() != nus.len() {
        return Err(Error::dims("one trigger per decoder position required"));
    }
    let n = enc.len();
    for &nu in nus {
        if nu == 0 || nu > n {
            return Err(Error::TriggerOutOfRange { nu, frames: n });
        }
    }
    let mut z = Matrix::zeros(0, params.d_model);
    for (pos, &tok) in inputs.iter().enumerate() {
        z.push_row(&params.embed_row(tok, pos)?)?;
    }
    let l = inputs.len();
    let causal = AttentionMask::causal(l);
    let cross = AttentionMask::from_fn(l, n, |i, j| j < nus[i]);
    for layer in &params.layers {
        let h = layer_norm(&z, &layer.norm_self.gain, &layer.norm_self.bias, LAYER_NORM_EPS)?;
        let a = multi_head_attention(&h, &h, &h, &layer.self_attn, &causal)?;
        let z_self = Matrix::from_vec(l, params.d_model, residual(z.data(), a.data()))?;
        let h2 = layer_norm(&z_self, &layer.norm_src.gain, &layer.norm_src.bias, LAYER_NORM_EPS)?;
        let c = multi_head_attention(&h2, &enc.states, &enc.states, &layer.src_attn, &cross)?;
        let z_src = Matrix::from_vec(l, params.d_model, residual(z_self.data(), c.data()))?;
        let h3 = layer_norm(&z_src, &layer.norm_ff.gain, &layer.norm_ff.bias, LAYER_NORM_EPS)?;
        let f = linear(&relu(&linear(&h3, &layer.ff.w1, &layer.ff.b1)?), &layer.ff.w2, &layer.ff.b2)?;
        z = Matrix::from_vec(l, params.d_model, residual(z_src.data(), f.data()))?;
    }
    Ok(z.iter_rows().map(|r| params.output(r)).collect())
}

/// Log posterior of the label following `prefix` (labels after `<sos>`),
/// with encoder rows `1..=nu` visible to every position.
pub fn decoder_posterior(
    enc: &EncoderStates,
    nu: usize,
    prefix: &[u32],
    params: &DecoderParams,
) -> Result<Vec<LogProb>> {
    if nu == 0 || nu > enc.len() {
        return Err(Error::TriggerOutOfRange {
            nu,
            frames: enc.len(),
        });
    }
    let mut inputs = Vec::with_capacity(prefix.len() + 1);
    inputs.push(params.sos);
    inputs.extend_from_slice(prefix);
    let nus = vec![nu; inputs.len()];
    let mut out = decoder_forward(enc, &inputs, &nus, params)?;
    Ok(out.pop().unwrap_or_default())
}

/// `sum_l log p(y_l | y_{1:l-1}, x^E_{1:nu_l})`. Triggers beyond the encoder
/// length are clamped to it.
pub fn ta_prefix_score(
    enc: &EncoderStates,
    labels: &[u32],
    nu_per_label: &[usize],
    params: &DecoderParams,
) -> Result<LogProb> {
    if labels.len() != nu_per_label.len() {
        return Err(Error::dims(format!(
            "{} labels but {} trigger frames",
            labels.len(),
            nu_per_label.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let nus: Vec<usize> = nu_per_label.iter().map(|&nu| nu.min(enc.len())).collect();
    let mut inputs = Vec::with_capacity(labels.len());
    inputs.push(params.sos);
    inputs.extend_from_slice(&labels[..labels.len() - 1]);
    let posts = decoder_forward(enc, &inputs, &nus, params)?;
    let mut total = 0.0;
    for (post, &y) in posts.iter().zip(labels) {
        total += post[y as usize];
    }
    Ok(total)
}
