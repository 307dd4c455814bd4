//! Convolutional front-end and time-restricted self-attention encoder.
//!
//! Two routes compute the same encoder output:
//!
//! * [`encoder_forward`] runs whole matrices layer by layer with an explicit
//!   [`AttentionMask`] allowing `eps_enc` future frames per layer.
//! * [`IncrementalEncoder`] consumes `X_0` one row at a time and emits a
//!   layer row as soon as its look-ahead window is filled. This is what the
//!   streaming session uses.
//!
//! Both share the same row kernels and reduction order, so their outputs are
//! bit-identical.

use std::fmt;
use std::str::FromStr;

use crate::attention::{multi_head_attention, AttentionMask, MhaParams};
use crate::blocks::{residual, FeedForward, LayerNorm};
use crate::error::{Error, Result};
use crate::numcore::{
    conv2d_time_step, conv_out_len, layer_norm, linear, linear_row, relu, relu_in_place, Kernel4,
    Matrix, Tensor3, LAYER_NORM_EPS,
};

pub const CNN_STRIDE: usize = 2;
pub const CNN_PAD: usize = 1;
pub const CNN_KERNEL: usize = 3;

/// Number of look-ahead frames: finite, or unbounded (full-sequence).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LookAhead {
    Frames(usize),
    Unbounded,
}

impl LookAhead {
    pub fn frames(self) -> Option<usize> {
        match self {
            LookAhead::Frames(n) => Some(n),
            LookAhead::Unbounded => None,
        }
    }
}

impl fmt::Display for LookAhead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LookAhead::Frames(n) => write!(f, "{n}"),
            LookAhead::Unbounded => write!(f, "inf"),
        }
    }
}

impl FromStr for LookAhead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(LookAhead::Unbounded),
            other => other
                .parse::<usize>()
                .map(LookAhead::Frames)
                .map_err(|_| Error::InvalidParameter(format!("look-ahead '{s}' is not a count or 'inf'"))),
        }
    }
}

/// Acoustic features, one row per input frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Matrix,
    pub frame_shift_ms: f32,
}

impl FeatureMatrix {
    pub fn new(frames: Matrix, frame_shift_ms: f32) -> Self {
        Self {
            frames,
            frame_shift_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Encoder output `X_E` at the 4x reduced frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStates {
    pub states: Matrix,
    pub frame_duration_ms: f32,
}

impl EncoderStates {
    pub fn new(states: Matrix, frame_duration_ms: f32) -> Self {
        Self {
            states,
            frame_duration_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Two stride-2 3x3 convolutions with ReLU, then a linear projection of the
/// flattened `[channel][freq]` map to `d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub conv1: Kernel4,
    pub conv1_bias: Vec<f32>,
    pub conv2: Kernel4,
    pub conv2_bias: Vec<f32>,
    pub proj: Matrix,
    pub proj_bias: Vec<f32>,
}

impl CnnParams {
    pub fn feat_dim_after(feat_dim: usize) -> usize {
        let f1 = conv_out_len(feat_dim, CNN_KERNEL, CNN_STRIDE, CNN_PAD).unwrap_or(0);
        conv_out_len(f1, CNN_KERNEL, CNN_STRIDE, CNN_PAD).unwrap_or(0)
    }

    pub(crate) fn layer1_step(&self, input: &Tensor3, t: usize) -> Vec<f32> {
        let mut row = conv2d_time_step(input, &self.conv1, Some(&self.conv1_bias), CNN_STRIDE, CNN_PAD, t);
        relu_in_place(&mut row);
        row
    }

    pub(crate) fn layer2_step(&self, hidden: &Tensor3, t: usize) -> Vec<f32> {
        let mut row = conv2d_time_step(hidden, &self.conv2, Some(&self.conv2_bias), CNN_STRIDE, CNN_PAD, t);
        relu_in_place(&mut row);
        row
    }

    pub(crate) fn project(&self, flat: &[f32]) -> Vec<f32> {
        linear_row(flat, &self.proj, &self.proj_bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MhaParams,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub feat_dim: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub cnn: CnnParams,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
}

impl EncoderParams {
    pub fn e_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("encoder needs at least one layer".into()));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::InvalidParameter("d_model must be even".into()));
        }
        let c = &self.cnn;
        let f2 = CnnParams::feat_dim_after(self.feat_dim);
        if c.conv1.in_channels != 1
            || c.conv2.in_channels != c.conv1.out_channels
            || c.conv1_bias.len() != c.conv1.out_channels
            || c.conv2_bias.len() != c.conv2.out_channels
            || c.proj.rows() != c.conv2.out_channels * f2
            || c.proj.cols() != self.d_model
            || c.proj_bias.len() != self.d_model
        {
            return Err(Error::dims("convolutional front-end shapes are inconsistent"));
        }
        for layer in &self.layers {
            layer.attn.validate()?;
            layer.ff.validate(self.d_model, self.d_ff)?;
            if layer.attn.d_model() != self.d_model
                || layer.norm_attn.dim() != self.d_model
                || layer.norm_ff.dim() != self.d_model
            {
                return Err(Error::dims("encoder layer width differs from d_model"));
            }
        }
        if self.final_norm.dim() != self.d_model {
            return Err(Error::dims("final encoder norm width differs from d_model"));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of absolute position `pos`.
pub fn positional_encoding(pos: usize, d_model: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; d_model];
    for i in 0..d_model.div_ceil(2) {
        let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
        out[2 * i] = angle.sin() as f32;
        if 2 * i + 1 < d_model {
            out[2 * i + 1] = angle.cos() as f32;
        }
    }
    out
}

pub(crate) fn add_positional_encoding(row: &mut [f32], pos: usize) {
    let pe = positional_encoding(pos, row.len());
    for (v, p) in row.iter_mut().zip(pe) {
        *v += p;
    }
}

/// Encoder rows `N` produced from `T` feature frames.
pub fn encoder_frames(t: usize) -> usize {
    t.div_ceil(2).div_ceil(2)
}

/// The two-layer CNN front-end, without positional encoding.
pub fn enc_cnn(x: &FeatureMatrix, params: &EncoderParams) -> Result<Matrix> {
    if x.dim() != params.feat_dim {
        return Err(Error::dims(format!(
            "features have {} dims, model expects {}",
            x.dim(),
            params.feat_dim
        )));
    }
    let cnn = &params.cnn;
    let input = Tensor3::from_matrix(&x.frames);
    let t1 = conv_out_len(input.time(), CNN_KERNEL, CNN_STRIDE, CNN_PAD).ok_or(Error::InputTooShort)?;
    let f1 = conv_out_len(input.freq(), CNN_KERNEL, CNN_STRIDE, CNN_PAD).ok_or(Error::InputTooShort)?;
    let mut hidden = Tensor3::zeros(cnn.conv1.out_channels, 0, f1);
    for t in 0..t1 {
        hidden.push_time_row(&cnn.layer1_step(&input, t))?;
    }
    let t2 = conv_out_len(t1, CNN_KERNEL, CNN_STRIDE, CNN_PAD).ok_or(Error::InputTooShort)?;
    let mut out = Matrix::zeros(0, params.d_model);
    for t in 0..t2 {
        out.push_row(&cnn.project(&cnn.layer2_step(&hidden, t)))?;
    }
    Ok(out)
}

/// `X_0`: CNN output plus positional encoding.
pub fn encoder_input(x: &FeatureMatrix, params: &EncoderParams) -> Result<Matrix> {
    let mut x0 = enc_cnn(x, params)?;
    for r in 0..x0.rows() {
        add_positional_encoding(x0.row_mut(r), r);
    }
    Ok(x0)
}

fn add_matrices(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let data = residual(a.data(), b.data());
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// Self-attention encoder stack with every layer restricted to `look_ahead`
/// future frames.
pub fn encoder_forward(x0: &Matrix, params: &EncoderParams, look_ahead: LookAhead) -> Result<EncoderStates> {
    let mask = AttentionMask::look_ahead(x0.rows(), look_ahead.frames());
    encoder_forward_masked(x0, params, &mask)
}

/// Encoder stack with one explicit mask applied in every layer.
pub fn encoder_forward_masked(x0: &Matrix, params: &EncoderParams, mask: &AttentionMask) -> Result<EncoderStates> {
    if x0.cols() != params.d_model {
        return Err(Error::dims(format!(
            "encoder input has {} columns, d_model is {}",
            x0.cols(),
            params.d_model
        )));
    }
    let mut x = x0.clone();
    for layer in &params.layers {
        let h = layer_norm(&x, &layer.norm_attn.gain, &layer.norm_attn.bias, LAYER_NORM_EPS)?;
        let a = multi_head_attention(&h, &h, &h, &layer.attn, mask)?;
        let x_mid = add_matrices(&x, &a)?;
        let h2 = layer_norm(&x_mid, &layer.norm_ff.gain, &layer.norm_ff.bias, LAYER_NORM_EPS)?;
        let inner = relu(&linear(&h2, &layer.ff.w1, &layer.ff.b1)?);
        let f = linear(&inner, &layer.ff.w2, &layer.ff.b2)?;
        x = add_matrices(&x_mid, &f)?;
    }
    let out = layer_norm(&x, &params.final_norm.gain, &params.final_norm.bias, LAYER_NORM_EPS)?;
    Ok(EncoderStates::new(out, 40.0))
}

/// Per-layer cache of inputs and their projected keys/values.
#[derive(Clone, Debug, Default)]
struct LayerCache {
    inputs: Vec<Vec<f32>>,
    queries: Vec<Vec<f32>>,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    /// Rows of this layer's output computed so far.
    done: usize,
}

/// Row-incremental encoder stack.
///
/// Layer `e` row `i` is computed once layer `e-1` holds rows `0..=i+eps_enc`
/// (or once the input is finished). Past keys and values are cached per layer
/// so each new row costs one attention query.
#[derive(Clone, Debug)]
pub struct IncrementalEncoder<'a> {
    params: &'a EncoderParams,
    look_ahead: LookAhead,
    layers: Vec<LayerCache>,
    emitted: usize,
    finished: bool,
}

impl<'a> IncrementalEncoder<'a> {
    pub fn new(params: &'a EncoderParams, look_ahead: LookAhead) -> Self {
        Self {
            params,
            look_ahead,
            layers: vec![LayerCache::default(); params.e_layers()],
            emitted: 0,
            finished: false,
        }
    }

    /// Number of `X_0` rows consumed.
    pub fn consumed(&self) -> usize {
        self.layers[0].inputs.len()
    }

    /// Number of encoder output rows emitted.
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Feed one row of `X_0` and return any newly computable output rows.
    pub fn push(&mut self, x0_row: &[f32]) -> Result<Vec<Vec<f32>>> {
        if self.finished {
            return Err(Error::SessionClosed);
        }
        if x0_row.len() != self.params.d_model {
            return Err(Error::dims("encoder input row width differs from d_model"));
        }
        self.admit(0, x0_row.to_vec());
        self.drain()
    }

    /// Mark the input complete and flush every remaining row.
    pub fn finish(&mut self) -> Result<Vec<Vec<f32>>> {
        self.finished = true;
        self.drain()
    }

    fn admit(&mut self, e: usize, row: Vec<f32>) {
        let layer = &self.params.layers[e];
        let h = layer.norm_attn.apply_row(&row);
        let cache = &mut self.layers[e];
        cache.queries.push(layer.attn.project_query(&h));
        cache.keys.push(layer.attn.project_key(&h));
        cache.values.push(layer.attn.project_value(&h));
        cache.inputs.push(row);
    }

    fn ready(&self, e: usize) -> bool {
        let cache = &self.layers[e];
        let avail = cache.inputs.len();
        if cache.done >= avail {
            return false;
        }
        if self.finished {
            return true;
        }
        match self.look_ahead {
            LookAhead::Frames(eps) => cache.done + eps < avail,
            LookAhead::Unbounded => false,
        }
    }

    fn drain(&mut self) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::new();
        for e in 0..self.layers.len() {
            while self.ready(e) {
                let row = self.compute_row(e)?;
                if e + 1 < self.layers.len() {
                    self.admit(e + 1, row);
                } else {
                    out.push(self.params.final_norm.apply_row(&row));
                    self.emitted += 1;
                }
            }
        }
        Ok(out)
    }

    fn compute_row(&mut self, e: usize) -> Result<Vec<f32>> {
        let layer = &self.params.layers[e];
        let cache = &self.layers[e];
        let i = cache.done;
        let last = match self.look_ahead {
            LookAhead::Frames(eps) => (i + eps).min(cache.inputs.len() - 1),
            LookAhead::Unbounded => cache.inputs.len() - 1,
        };
        let a = layer
            .attn
            .attend(&cache.queries[i], &cache.keys, &cache.values, 0..=last)?;
        let x_mid = residual(&cache.inputs[i], &a);
        let f = layer.ff.apply_row(&layer.norm_ff.apply_row(&x_mid));
        let row = residual(&x_mid, &f);
        self.layers[e].done += 1;
        Ok(row)
    }
}

/// Incremental convolutional front-end producing `X_0` rows as features arrive.
///
/// An `X_0` row needs the next three input frames beyond its own four-frame
/// block (30 ms at a 10 ms shift); the tail is zero padded at [`finish`].
///
/// [`finish`]: IncrementalFrontEnd::finish
#[derive(Clone, Debug)]
pub struct IncrementalFrontEnd<'a> {
    params: &'a EncoderParams,
    input: Tensor3,
    hidden: Tensor3,
    emitted: usize,
}

impl<'a> IncrementalFrontEnd<'a> {
    pub fn new(params: &'a EncoderParams) -> Self {
        let f1 = conv_out_len(params.feat_dim, CNN_KERNEL, CNN_STRIDE, CNN_PAD).unwrap_or(0);
        Self {
            params,
            input: Tensor3::zeros(1, 0, params.feat_dim),
            hidden: Tensor3::zeros(params.cnn.conv1.out_channels, 0, f1),
            emitted: 0,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.input.time()
    }

    pub fn push(&mut self, frame: &[f32]) -> Result<Vec<Vec<f32>>> {
        if frame.len() != self.params.feat_dim {
            return Err(Error::dims(format!(
                "feature frame has {} dims, model expects {}",
                frame.len(),
                self.params.feat_dim
            )));
        }
        self.input.push_time_row(frame)?;
        self.advance(false)
    }

    pub fn finish(&mut self) -> Result<Vec<Vec<f32>>> {
        self.advance(true)
    }

    fn advance(&mut self, finished: bool) -> Result<Vec<Vec<f32>>> {
        let cnn = &self.params.cnn;
        // row t of a stride-2 pad-1 layer reads input rows 2t-1..=2t+1
        let t_in = self.input.time();
        let t1_total = if finished { t_in.div_ceil(2) } else { t_in / 2 };
        while self.hidden.time() < t1_total {
            let row = cnn.layer1_step(&self.input, self.hidden.time());
            self.hidden.push_time_row(&row)?;
        }
        let t1 = self.hidden.time();
        let t2_total = if finished { t1.div_ceil(2) } else { t1 / 2 };
        let mut out = Vec::new();
        while self.emitted < t2_total {
            let mut row = cnn.project(&cnn.layer2_step(&self.hidden, self.emitted));
            add_positional_encoding(&mut row, self.emitted);
            out.push(row);
            self.emitted += 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // oracles index like the formulas they restate
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(e: usize, seed: u64) -> ModelParams {
        let cfg = ModelConfig::tiny(e, 1, 8, 5);
        ModelParams::random(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn bits(m: &Matrix) -> Vec<u32> {
        m.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(0, 8);
        for i in 0..4 {
            assert_eq!(pe[2 * i], 0.0);
            assert_eq!(pe[2 * i + 1], 1.0);
        }
        assert!((positional_encoding(1, 8)[0] - 0.841471).abs() < 1e-6);
        for pos in [0, 3, 17, 250] {
            let pe = positional_encoding(pos, 16);
            for i in 0..8 {
                let s = pe[2 * i] * pe[2 * i] + pe[2 * i + 1] * pe[2 * i + 1];
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cnn_output_length() {
        let m = tiny(1, 1);
        for (t, n) in [(16, 4), (1, 1), (4, 1), (5, 2), (12, 3), (13, 4)] {
            let x = FeatureMatrix::new(Matrix::zeros(t, 5), 10.0);
            assert_eq!(enc_cnn(&x, &m.encoder).unwrap().rows(), n);
            assert_eq!(encoder_frames(t), n);
        }
        let x = FeatureMatrix::new(Matrix::zeros(0, 5), 10.0);
        assert!(matches!(enc_cnn(&x, &m.encoder), Err(Error::InputTooShort)));
    }

    #[test]
    fn cnn_zero_input_zero_bias_gives_zero() {
        let mut m = tiny(1, 2);
        let cnn = &mut m.encoder.cnn;
        cnn.conv1_bias.iter_mut().for_each(|b| *b = 0.0);
        cnn.conv2_bias.iter_mut().for_each(|b| *b = 0.0);
        cnn.proj_bias.iter_mut().for_each(|b| *b = 0.0);
        let x = FeatureMatrix::new(Matrix::zeros(10, 5), 10.0);
        let out = enc_cnn(&x, &m.encoder).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    /// Composition of a scalar conv oracle, ReLU, flatten and projection.
    #[test]
    fn cnn_matches_composed_oracle() {
        let m = tiny(1, 3);
        let cnn = &m.encoder.cnn;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = rand_rows(&mut rng, 12, 5);
        let conv = |inp: &Vec<Vec<Vec<f64>>>, k: &Kernel4, b: &[f32]| -> Vec<Vec<Vec<f64>>> {
            let (ti, fi) = (inp[0].len(), inp[0][0].len());
            let (to, fo) = ((ti + 2 - 3) / 2 + 1, (fi + 2 - 3) / 2 + 1);
            let mut out = vec![vec![vec![0.0; fo]; to]; k.out_channels];
            for o in 0..k.out_channels {
                for t in 0..to {
                    for f in 0..fo {
                        let mut s = b[o] as f64;
                        for (i, plane) in inp.iter().enumerate() {
                            for a in 0..3 {
                                for c in 0..3 {
                                    let (tt, ff) = ((2 * t + a) as isize - 1, (2 * f + c) as isize - 1);
                                    if tt >= 0 && ff >= 0 && (tt as usize) < ti && (ff as usize) < fi {
                                        s += plane[tt as usize][ff as usize] * k.get(o, i, a, c) as f64;
                                    }
                                }
                            }
                        }
                        out[o][t][f] = s.max(0.0);
                    }
                }
            }
            out
        };
        let plane: Vec<Vec<f64>> = feats.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let h1 = conv(&vec![plane], &cnn.conv1, &cnn.conv1_bias);
        let h2 = conv(&h1, &cnn.conv2, &cnn.conv2_bias);
        let got = enc_cnn(&FeatureMatrix::new(feats, 10.0), &m.encoder).unwrap();
        assert_eq!(got.rows(), 3);
        for t in 0..3 {
            let flat: Vec<f64> = h2.iter().flat_map(|ch| ch[t].clone()).collect();
            for c in 0..8 {
                let want: f64 = cnn.proj_bias[c] as f64
                    + flat.iter().enumerate().map(|(k, v)| v * cnn.proj.get(k, c) as f64).sum::<f64>();
                assert!((got.get(t, c) as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn saturated_look_ahead_equals_unbounded() {
        let m = tiny(2, 4);
        let x0 = rand_rows(&mut ChaCha8Rng::seed_from_u64(1), 7, 8);
        let inf = encoder_forward(&x0, &m.encoder, LookAhead::Unbounded).unwrap();
        let sat = encoder_forward(&x0, &m.encoder, LookAhead::Frames(7)).unwrap();
        let sat2 = encoder_forward(&x0, &m.encoder, LookAhead::Frames(6)).unwrap();
        let full = encoder_forward_masked(&x0, &m.encoder, &AttentionMask::full(7, 7)).unwrap();
        assert_eq!(bits(&inf.states), bits(&sat.states));
        assert_eq!(bits(&inf.states), bits(&sat2.states));
        assert_eq!(bits(&inf.states), bits(&full.states));
    }

    #[test]
    fn zero_look_ahead_is_causal() {
        let m = tiny(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = rand_rows(&mut rng, 6, 8);
        let base = encoder_forward(&x0, &m.encoder, LookAhead::Frames(0)).unwrap();
        for n in 0..5 {
            let mut p = x0.clone();
            for c in 0..8 {
                p.set(n + 1, c, rng.gen_range(-5.0..5.0));
            }
            let out = encoder_forward(&p, &m.encoder, LookAhead::Frames(0)).unwrap();
            for r in 0..=n {
                assert_eq!(base.states.row(r), out.states.row(r));
            }
        }
    }

    #[test]
    fn look_ahead_accumulates_across_layers() {
        let m = tiny(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_rows(&mut rng, 9, 8);
        let base = encoder_forward(&x0, &m.encoder, LookAhead::Frames(1)).unwrap();
        for n in 0..9 {
            // beyond n+2 nothing matters
            if n + 3 < 9 {
                let mut p = x0.clone();
                for r in n + 3..9 {
                    for c in 0..8 {
                        p.set(r, c, rng.gen_range(-5.0..5.0));
                    }
                }
                let out = encoder_forward(&p, &m.encoder, LookAhead::Frames(1)).unwrap();
                assert_eq!(base.states.row(n), out.states.row(n));
            }
            // row n+2 does matter
            if n + 2 < 9 {
                let mut p = x0.clone();
                p.set(n + 2, 0, x0.get(n + 2, 0) + 1.0);
                let out = encoder_forward(&p, &m.encoder, LookAhead::Frames(1)).unwrap();
                assert_ne!(base.states.row(n), out.states.row(n));
            }
        }
    }

    #[test]
    fn incremental_encoder_matches_batch() {
        for (e, la) in [(1, LookAhead::Frames(0)), (2, LookAhead::Frames(1)), (3, LookAhead::Frames(2)), (2, LookAhead::Unbounded)] {
            let m = tiny(e, 7 + e as u64);
            let x0 = rand_rows(&mut ChaCha8Rng::seed_from_u64(11), 10, 8);
            let batch = encoder_forward(&x0, &m.encoder, la).unwrap();
            let mut inc = IncrementalEncoder::new(&m.encoder, la);
            let mut rows = Vec::new();
            for r in x0.iter_rows() {
                rows.extend(inc.push(r).unwrap());
            }
            rows.extend(inc.finish().unwrap());
            assert_eq!(Matrix::from_rows(&rows, 8).unwrap(), batch.states);
        }
    }

    #[test]
    fn incremental_emission_schedule() {
        let (e, eps) = (3, 2);
        let m = tiny(e, 20);
        let x0 = rand_rows(&mut ChaCha8Rng::seed_from_u64(12), 15, 8);
        let mut inc = IncrementalEncoder::new(&m.encoder, LookAhead::Frames(eps));
        for (k, r) in x0.iter_rows().enumerate() {
            inc.push(r).unwrap();
            assert_eq!(inc.emitted(), (k + 1).saturating_sub(e * eps));
        }
    }

    #[test]
    fn incremental_front_end_matches_batch() {
        let m = tiny(1, 30);
        for t in [1, 2, 3, 4, 5, 7, 8, 11, 16, 17] {
            let feats = rand_rows(&mut ChaCha8Rng::seed_from_u64(t as u64), t, 5);
            let x = FeatureMatrix::new(feats.clone(), 10.0);
            let batch = encoder_input(&x, &m.encoder).unwrap();
            let mut fe = IncrementalFrontEnd::new(&m.encoder);
            let mut rows = Vec::new();
            for (k, r) in feats.iter_rows().enumerate() {
                rows.extend(fe.push(r).unwrap());
                // X_0 row n (0-based) is available after 4n+4 frames
                assert_eq!(rows.len(), (k + 1) / 4);
            }
            rows.extend(fe.finish().unwrap());
            assert_eq!(Matrix::from_rows(&rows, 8).unwrap(), batch);
        }
    }

    #[test]
    fn random_unit_bounded_params_stay_finite() {
        let cfg = ModelConfig::tiny(4, 1, 8, 5);
        let m = ModelParams::random_bounded(&cfg, &mut ChaCha8Rng::seed_from_u64(40), 1.0);
        let feats = rand_rows(&mut ChaCha8Rng::seed_from_u64(41), 40, 5);
        let x0 = encoder_input(&FeatureMatrix::new(feats, 10.0), &m.encoder).unwrap();
        let out = encoder_forward(&x0, &m.encoder, LookAhead::Frames(1)).unwrap();
        assert!(out.states.is_finite());
    }

    #[test]
    fn look_ahead_parsing() {
        assert_eq!("inf".parse::<LookAhead>().unwrap(), LookAhead::Unbounded);
        assert_eq!("3".parse::<LookAhead>().unwrap(), LookAhead::Frames(3));
        assert!("x".parse::<LookAhead>().is_err());
    }
}
