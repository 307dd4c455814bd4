//! Architecture configuration and the full parameter set: encoder, CTC output
//! layer and triggered-attention decoder.
//!
//! Parameters are addressed by stable tensor names (`enc.layers.3.attn.w_q`,
//! `dec.out.bias`, ...) so the archive format and the random generators share
//! one canonical layout.

use std::collections::HashMap;

use rand::Rng;

use crate::attention::MhaParams;
use crate::blocks::{FeedForward, LayerNorm};
use crate::ctc::Posteriorgram;
use crate::decoder::{DecoderLayer, DecoderParams};
use crate::encoder::{
    encoder_forward, encoder_input, CnnParams, EncoderLayer, EncoderParams, EncoderStates, FeatureMatrix, LookAhead,
    CNN_KERNEL,
};
use crate::error::{Error, Result};
use crate::numcore::{linear_row, log_softmax_f64, Kernel4, LogProb, Matrix, LOG_ZERO};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub e_layers: usize,
    pub d_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    /// Decoder vocabulary including `<sos>` (and `<eos>` if present).
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub cnn_channels: (usize, usize),
    pub sos: u32,
    pub eos: Option<u32>,
}

/// Supplies the data of a named tensor with the given dims.
type TensorSource<'a> = dyn FnMut(&str, &[usize]) -> Result<Vec<f32>> + 'a;

impl ModelConfig {
    /// Small configuration: 12 encoder and 6 decoder layers, `d_model = 256`, 4 heads.
    pub fn small(vocab_size: usize, feat_dim: usize) -> Self {
        Self::with_dims(12, 6, 256, 2048, 4, vocab_size, feat_dim)
    }

    /// Large configuration: `d_model = 512` with 8 heads.
    pub fn large(vocab_size: usize, feat_dim: usize) -> Self {
        Self::with_dims(12, 6, 512, 2048, 8, vocab_size, feat_dim)
    }

    /// Desk-scale model over three labels plus `<sos>`, two heads,
    /// `d_ff = 2 * d_model`.
    pub fn tiny(e_layers: usize, d_layers: usize, d_model: usize, feat_dim: usize) -> Self {
        Self::with_dims(e_layers, d_layers, d_model, 2 * d_model, 2, 4, feat_dim)
    }

    /// `<sos>` is the last vocabulary entry, no `<eos>`.
    pub fn with_dims(
        e_layers: usize,
        d_layers: usize,
        d_model: usize,
        d_ff: usize,
        heads: usize,
        vocab_size: usize,
        feat_dim: usize,
    ) -> Self {
        Self {
            e_layers,
            d_layers,
            d_model,
            d_ff,
            heads,
            vocab_size,
            feat_dim,
            cnn_channels: ((d_model / 4).max(1), (d_model / 2).max(1)),
            sos: vocab_size.saturating_sub(1) as u32,
            eos: None,
        }
    }

    /// CTC output width: blank plus one column per vocabulary entry.
    pub fn ctc_width(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.e_layers == 0 || self.d_layers == 0 {
            return bad("E and D must be at least 1");
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad("d_model must be a positive even number");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by the head count");
        }
        if self.d_ff == 0 || self.feat_dim == 0 || self.cnn_channels.0 == 0 || self.cnn_channels.1 == 0 {
            return bad("d_ff, feat_dim and CNN channel counts must be positive");
        }
        if self.sos as usize >= self.vocab_size {
            return bad("<sos> id outside the vocabulary");
        }
        if let Some(e) = self.eos {
            if e as usize >= self.vocab_size || e == self.sos {
                return bad("<eos> id outside the vocabulary or equal to <sos>");
            }
        }
        Ok(())
    }
}

/// A named, shaped tensor in canonical row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    /// `d_model x (vocab_size + 1)`, column 0 is blank.
    pub ctc_weight: Matrix,
    pub ctc_bias: Vec<f32>,
    pub decoder: DecoderParams,
}

impl ModelParams {
    /// Parameters drawn uniformly from `±1/sqrt(fan_in)`, norms near identity.
    pub fn random<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        Self::build(config, &mut |name, dims| {
            let n: usize = dims.iter().product();
            let v = if name.ends_with(".gain") {
                (0..n).map(|_| rng.gen_range(0.8..1.2)).collect()
            } else if name.ends_with("bias") {
                (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
            } else {
                let fan_in = if dims.len() == 4 { dims[1] * dims[2] * dims[3] } else { dims[0] };
                let b = 1.0 / (fan_in.max(1) as f32).sqrt();
                (0..n).map(|_| rng.gen_range(-b..b)).collect()
            };
            Ok(v)
        })
        .expect("random parameters match their own layout")
    }

    /// Every entry uniform in `[-bound, bound]`, gains included.
    pub fn random_bounded<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R, bound: f32) -> Self {
        Self::build(config, &mut |_, dims| {
            let n: usize = dims.iter().product();
            Ok((0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
        })
        .expect("random parameters match their own layout")
    }

    /// Reassemble parameters from named tensors. Every tensor of the layout
    /// must be present with its exact shape; leftovers are rejected.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut pool: HashMap<String, NamedTensor> = HashMap::with_capacity(tensors.len());
        for t in tensors {
            if pool.contains_key(&t.name) {
                return Err(Error::Format(format!("duplicate tensor {}", t.name)));
            }
            pool.insert(t.name.clone(), t);
        }
        let params = Self::build(config, &mut |name, dims| {
            let t = pool.remove(name).ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            if t.dims != dims {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: dims.to_vec(),
                    actual: t.dims,
                });
            }
            Ok(t.data)
        })?;
        if let Some(name) = pool.keys().min() {
            return Err(Error::UnexpectedTensor(name.clone()));
        }
        Ok(params)
    }

    /// Names and shapes of every tensor, in archive order.
    pub fn layout(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        Self::build(config, &mut |name, dims| {
            out.push((name.to_string(), dims.to_vec()));
            Ok(vec![0.0; dims.iter().product()])
        })?;
        Ok(out)
    }

    fn build(config: &ModelConfig, next: &mut TensorSource<'_>) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let dff = config.d_ff;
        let (c1, c2) = config.cnn_channels;
        let f2 = CnnParams::feat_dim_after(config.feat_dim);
        let k = CNN_KERNEL;

        let cnn = {
            let w1 = next("enc.conv1.weight", &[c1, 1, k, k])?;
            let b1 = next("enc.conv1.bias", &[c1])?;
            let w2 = next("enc.conv2.weight", &[c2, c1, k, k])?;
            let b2 = next("enc.conv2.bias", &[c2])?;
            let proj = Matrix::from_vec(c2 * f2, d, next("enc.proj.weight", &[c2 * f2, d])?)?;
            let proj_bias = next("enc.proj.bias", &[d])?;
            CnnParams {
                conv1: Kernel4::new(c1, 1, k, k, w1)?,
                conv1_bias: b1,
                conv2: Kernel4::new(c2, c1, k, k, w2)?,
                conv2_bias: b2,
                proj,
                proj_bias,
            }
        };
        let mut enc_layers = Vec::with_capacity(config.e_layers);
        for e in 0..config.e_layers {
            let p = format!("enc.layers.{e}");
            enc_layers.push(EncoderLayer {
                norm_attn: norm(next, &format!("{p}.norm_attn"), d)?,
                attn: mha(next, &format!("{p}.attn"), d, config.heads)?,
                norm_ff: norm(next, &format!("{p}.norm_ff"), d)?,
                ff: ffn(next, &format!("{p}.ff"), d, dff)?,
            });
        }
        let encoder = EncoderParams {
            feat_dim: config.feat_dim,
            d_model: d,
            d_ff: dff,
            cnn,
            layers: enc_layers,
            final_norm: norm(next, "enc.final_norm", d)?,
        };

        let w = config.ctc_width();
        let ctc_weight = Matrix::from_vec(d, w, next("ctc.weight", &[d, w])?)?;
        let ctc_bias = next("ctc.bias", &[w])?;

        let v = config.vocab_size;
        let embed = Matrix::from_vec(v, d, next("dec.embed", &[v, d])?)?;
        let mut dec_layers = Vec::with_capacity(config.d_layers);
        for l in 0..config.d_layers {
            let p = format!("dec.layers.{l}");
            dec_layers.push(DecoderLayer {
                norm_self: norm(next, &format!("{p}.norm_self"), d)?,
                self_attn: mha(next, &format!("{p}.self_attn"), d, config.heads)?,
                norm_src: norm(next, &format!("{p}.norm_src"), d)?,
                src_attn: mha(next, &format!("{p}.src_attn"), d, config.heads)?,
                norm_ff: norm(next, &format!("{p}.norm_ff"), d)?,
                ff: ffn(next, &format!("{p}.ff"), d, dff)?,
            });
        }
        let final_norm = norm(next, "dec.final_norm", d)?;
        let out_proj = Matrix::from_vec(d, v, next("dec.out.weight", &[d, v])?)?;
        let out_bias = next("dec.out.bias", &[v])?;
        let decoder = DecoderParams {
            vocab_size: v,
            d_model: d,
            d_ff: dff,
            sos: config.sos,
            eos: config.eos,
            embed,
            layers: dec_layers,
            final_norm,
            out_proj,
            out_bias,
        };
        let params = Self {
            config: config.clone(),
            encoder,
            ctc_weight,
            ctc_bias,
            decoder,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.ctc_weight.rows() != self.config.d_model
            || self.ctc_weight.cols() != self.config.ctc_width()
            || self.ctc_bias.len() != self.config.ctc_width()
        {
            return Err(Error::dims("CTC output layer shape does not match the vocabulary"));
        }
        Ok(())
    }

    /// All tensors in archive order.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let mut push = |name: String, dims: Vec<usize>, data: &[f32]| {
            out.push(NamedTensor {
                name,
                dims,
                data: data.to_vec(),
            })
        };
        let enc = &self.encoder;
        let c = &enc.cnn;
        let k1 = &c.conv1;
        let k2 = &c.conv2;
        push("enc.conv1.weight".into(), vec![k1.out_channels, k1.in_channels, k1.kt, k1.kf], &k1.data);
        push("enc.conv1.bias".into(), vec![c.conv1_bias.len()], &c.conv1_bias);
        push("enc.conv2.weight".into(), vec![k2.out_channels, k2.in_channels, k2.kt, k2.kf], &k2.data);
        push("enc.conv2.bias".into(), vec![c.conv2_bias.len()], &c.conv2_bias);
        push_mat(&mut push, "enc.proj.weight", &c.proj);
        push("enc.proj.bias".into(), vec![c.proj_bias.len()], &c.proj_bias);
        for (e, layer) in enc.layers.iter().enumerate() {
            let p = format!("enc.layers.{e}");
            push_norm(&mut push, &format!("{p}.norm_attn"), &layer.norm_attn);
            push_mha(&mut push, &format!("{p}.attn"), &layer.attn);
            push_norm(&mut push, &format!("{p}.norm_ff"), &layer.norm_ff);
            push_ffn(&mut push, &format!("{p}.ff"), &layer.ff);
        }
        push_norm(&mut push, "enc.final_norm", &enc.final_norm);
        push_mat(&mut push, "ctc.weight", &self.ctc_weight);
        push("ctc.bias".into(), vec![self.ctc_bias.len()], &self.ctc_bias);
        let dec = &self.decoder;
        push_mat(&mut push, "dec.embed", &dec.embed);
        for (l, layer) in dec.layers.iter().enumerate() {
            let p = format!("dec.layers.{l}");
            push_norm(&mut push, &format!("{p}.norm_self"), &layer.norm_self);
            push_mha(&mut push, &format!("{p}.self_attn"), &layer.self_attn);
            push_norm(&mut push, &format!("{p}.norm_src"), &layer.norm_src);
            push_mha(&mut push, &format!("{p}.src_attn"), &layer.src_attn);
            push_norm(&mut push, &format!("{p}.norm_ff"), &layer.norm_ff);
            push_ffn(&mut push, &format!("{p}.ff"), &layer.ff);
        }
        push_norm(&mut push, "dec.final_norm", &dec.final_norm);
        push_mat(&mut push, "dec.out.weight", &dec.out_proj);
        push("dec.out.bias".into(), vec![dec.out_bias.len()], &dec.out_bias);
        out
    }

    /// Offline encoder: CNN front-end, positional encoding, restricted
    /// self-attention stack.
    pub fn encode(&self, x: &FeatureMatrix, look_ahead: LookAhead) -> Result<EncoderStates> {
        let x0 = encoder_input(x, &self.encoder)?;
        let mut enc = encoder_forward(&x0, &self.encoder, look_ahead)?;
        enc.frame_duration_ms = 4.0 * x.frame_shift_ms;
        Ok(enc)
    }

    /// CTC log posteriors for one encoder row. `<sos>`/`<eos>` columns are
    /// never emitted and carry `-inf`.
    pub fn ctc_row(&self, enc_row: &[f32]) -> Vec<LogProb> {
        let mut logits = linear_row(enc_row, &self.ctc_weight, &self.ctc_bias);
        let mut masked = vec![self.config.sos];
        masked.extend(self.config.eos);
        for id in &masked {
            logits[*id as usize + 1] = f32::NEG_INFINITY;
        }
        let mut row = log_softmax_f64(&logits);
        for id in masked {
            row[id as usize + 1] = LOG_ZERO;
        }
        row
    }

    pub fn ctc_posteriorgram(&self, enc: &EncoderStates) -> Result<Posteriorgram> {
        let rows: Vec<Vec<LogProb>> = enc.states.iter_rows().map(|r| self.ctc_row(r)).collect();
        Posteriorgram::from_rows(rows)
    }
}

fn norm(next: &mut TensorSource<'_>, prefix: &str, d: usize) -> Result<LayerNorm> {
    Ok(LayerNorm {
        gain: next(&format!("{prefix}.gain"), &[d])?,
        bias: next(&format!("{prefix}.bias"), &[d])?,
    })
}

fn mha(
    next: &mut TensorSource<'_>,
    prefix: &str,
    d: usize,
    heads: usize,
) -> Result<MhaParams> {
    let mut m = |n: &str| -> Result<Matrix> { Matrix::from_vec(d, d, next(&format!("{prefix}.{n}"), &[d, d])?) };
    let (w_q, w_k, w_v, w_h) = (m("w_q")?, m("w_k")?, m("w_v")?, m("w_h")?);
    MhaParams::new(w_q, w_k, w_v, w_h, heads)
}

fn ffn(
    next: &mut TensorSource<'_>,
    prefix: &str,
    d: usize,
    dff: usize,
) -> Result<FeedForward> {
    let w1 = Matrix::from_vec(d, dff, next(&format!("{prefix}.w1"), &[d, dff])?)?;
    let b1 = next(&format!("{prefix}.b1"), &[dff])?;
    let w2 = Matrix::from_vec(dff, d, next(&format!("{prefix}.w2"), &[dff, d])?)?;
    let b2 = next(&format!("{prefix}.b2"), &[d])?;
    Ok(FeedForward { w1, b1, w2, b2 })
}

fn push_mat(push: &mut impl FnMut(String, Vec<usize>, &[f32]), name: &str, m: &Matrix) {
    push(name.to_string(), vec![m.rows(), m.cols()], m.data());
}

fn push_norm(push: &mut impl FnMut(String, Vec<usize>, &[f32]), prefix: &str, n: &LayerNorm) {
    push(format!("{prefix}.gain"), vec![n.gain.len()], &n.gain);
    push(format!("{prefix}.bias"), vec![n.bias.len()], &n.bias);
}

fn push_mha(push: &mut impl FnMut(String, Vec<usize>, &[f32]), prefix: &str, m: &MhaParams) {
    push_mat(push, &format!("{prefix}.w_q"), &m.w_q);
    push_mat(push, &format!("{prefix}.w_k"), &m.w_k);
    push_mat(push, &format!("{prefix}.w_v"), &m.w_v);
    push_mat(push, &format!("{prefix}.w_h"), &m.w_h);
}

fn push_ffn(push: &mut impl FnMut(String, Vec<usize>, &[f32]), prefix: &str, f: &FeedForward) {
    push_mat(push, &format!("{prefix}.w1"), &f.w1);
    push(format!("{prefix}.b1"), vec![f.b1.len()], &f.b1);
    push_mat(push, &format!("{prefix}.w2"), &f.w2);
    push(format!("{prefix}.b2"), vec![f.b2.len()], &f.b2);
}
