//! Dense numeric kernels shared by the encoder, decoder and CTC head.
//!
//! Model math runs in `f32`; every reduction walks its operands in a fixed
//! left-to-right order so that the same row computed through different call
//! paths (batch vs. incremental) comes out bit-identical. Search-time scores
//! are natural-log `f64` values, see [`LogProb`].

use crate::error::{Error, Result};

/// Natural-log probability used by all search-time accumulators.
pub type LogProb = f64;

pub const LOG_ZERO: LogProb = f64::NEG_INFINITY;

/// Default epsilon added to the variance by [`layer_norm`].
pub const LAYER_NORM_EPS: f32 = 1e-12;

/// Row-major dense matrix of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>], cols: usize) -> Result<Self> {
        let mut m = Self::zeros(0, cols);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::dims(format!(
                "row of length {} pushed into matrix with {} columns",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Copy of rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Anything that hands out rows by index.
pub trait Rows {
    fn row_count(&self) -> usize;
    fn row_at(&self, i: usize) -> &[f32];
}

impl Rows for Matrix {
    fn row_count(&self) -> usize {
        self.rows
    }
    fn row_at(&self, i: usize) -> &[f32] {
        self.row(i)
    }
}

impl Rows for [Vec<f32>] {
    fn row_count(&self) -> usize {
        self.len()
    }
    fn row_at(&self, i: usize) -> &[f32] {
        &self[i]
    }
}

impl Rows for Vec<Vec<f32>> {
    fn row_count(&self) -> usize {
        self.len()
    }
    fn row_at(&self, i: usize) -> &[f32] {
        &self[i]
    }
}

/// `x · w`, one output element per column of `w`, summed over `k` ascending.
pub fn vec_mat(x: &[f32], w: &Matrix) -> Vec<f32> {
    debug_assert_eq!(x.len(), w.rows());
    let mut out = vec![0.0f32; w.cols()];
    for (k, &xk) in x.iter().enumerate() {
        let wrow = w.row(k);
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += xk * wv;
        }
    }
    out
}

/// `x · w + b` for a single row.
pub fn linear_row(x: &[f32], w: &Matrix, b: &[f32]) -> Vec<f32> {
    let mut out = vec_mat(x, w);
    for (o, &bv) in out.iter_mut().zip(b) {
        *o += bv;
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::dims(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(0, b.cols());
    for r in a.iter_rows() {
        out.push_row(&vec_mat(r, b))?;
    }
    Ok(out)
}

pub fn linear(a: &Matrix, w: &Matrix, b: &[f32]) -> Result<Matrix> {
    if a.cols() != w.rows() || b.len() != w.cols() {
        return Err(Error::dims(format!(
            "linear {}x{} by {}x{} + bias {}",
            a.rows(),
            a.cols(),
            w.rows(),
            w.cols(),
            b.len()
        )));
    }
    let mut out = Matrix::zeros(0, w.cols());
    for r in a.iter_rows() {
        out.push_row(&linear_row(r, w, b))?;
    }
    Ok(out)
}

pub fn relu_in_place(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    relu_in_place(&mut out.data);
    out
}

pub fn add_in_place(acc: &mut [f32], x: &[f32]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

/// In-place softmax over one row. `-inf` entries come out as exactly zero.
pub fn softmax_in_place(row: &mut [f32]) -> Result<()> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return Err(Error::EmptyAttentionRow);
    }
    // Exponentials and their sum are carried in f64; only the normalized
    // weights are rounded back to f32.
    let max = max as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let mut sum = 0.0f64;
    for &e in &exps {
        sum += e;
    }
    for (v, e) in row.iter_mut().zip(exps) {
        *v = (e / sum) as f32;
    }
    Ok(())
}

pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r))?;
    }
    Ok(out)
}

/// Layer normalization of one row with population variance.
pub fn layer_norm_row(x: &[f32], gain: &[f32], bias: &[f32], eps: f32) -> Vec<f32> {
    let n = x.len() as f32;
    let mut mean = 0.0f32;
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0f32;
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    let denom = (var + eps).sqrt();
    x.iter()
        .zip(gain)
        .zip(bias)
        .map(|((&v, &g), &b)| (v - mean) / denom * g + b)
        .collect()
}

pub fn layer_norm(m: &Matrix, gain: &[f32], bias: &[f32], eps: f32) -> Result<Matrix> {
    if gain.len() != m.cols() || bias.len() != m.cols() {
        return Err(Error::dims(format!(
            "layer norm over {} columns with gain {} / bias {}",
            m.cols(),
            gain.len(),
            bias.len()
        )));
    }
    let mut out = Matrix::zeros(0, m.cols());
    for r in m.iter_rows() {
        out.push_row(&layer_norm_row(r, gain, bias, eps))?;
    }
    Ok(out)
}

/// Channels x time x frequency array. Stored time-major so that time rows can
/// be appended while streaming.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    time: usize,
    freq: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, time: usize, freq: usize) -> Self {
        Self {
            channels,
            time,
            freq,
            data: vec![0.0; channels * time * freq],
        }
    }

    /// Single-channel tensor whose time rows are the rows of `m`.
    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            channels: 1,
            time: m.rows(),
            freq: m.cols(),
            data: m.data().to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn time(&self) -> usize {
        self.time
    }
    pub fn freq(&self) -> usize {
        self.freq
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, f: usize) -> f32 {
        self.data[(t * self.channels + c) * self.freq + f]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, f: usize, v: f32) {
        self.data[(t * self.channels + c) * self.freq + f] = v;
    }

    /// All channels of one time step, channel-major (`[c][f]`).
    pub fn time_row(&self, t: usize) -> &[f32] {
        let w = self.channels * self.freq;
        &self.data[t * w..(t + 1) * w]
    }

    /// Append one time step given as `[c][f]`.
    pub fn push_time_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.channels * self.freq {
            return Err(Error::dims(format!(
                "time row of length {} for {}x{} channels/freq",
                row.len(),
                self.channels,
                self.freq
            )));
        }
        self.data.extend_from_slice(row);
        self.time += 1;
        Ok(())
    }
}

/// Convolution kernels `[out_channels][in_channels][kt][kf]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel4 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kt: usize,
    pub kf: usize,
    pub data: Vec<f32>,
}

impl Kernel4 {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kt: usize,
        kf: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != out_channels * in_channels * kt * kf {
            return Err(Error::dims(format!(
                "kernel {out_channels}x{in_channels}x{kt}x{kf} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kt,
            kf,
            data,
        })
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, t: usize, f: usize) -> f32 {
        self.data[((o * self.in_channels + i) * self.kt + t) * self.kf + f]
    }
}

/// Output length of a padded, strided convolution axis, `None` if the padded
/// input does not cover one kernel.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if len == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// One output time step of a cross-correlation, `[out_c][out_f]`.
///
/// Positions falling in the zero padding are skipped. Input time indices at or
/// beyond `input.time()` are treated as padding too, so callers must only ask
/// for steps whose receptive field is complete (or whose overhang is the real
/// end of the signal).
pub fn conv2d_time_step(
    input: &Tensor3,
    kernels: &Kernel4,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<f32> {
    let out_f = conv_out_len(input.freq(), kernels.kf, stride, pad).unwrap_or(0);
    let mut out = vec![0.0f32; kernels.out_channels * out_f];
    for o in 0..kernels.out_channels {
        for fo in 0..out_f {
            let mut acc = 0.0f32;
            for i in 0..kernels.in_channels {
                for kt in 0..kernels.kt {
                    let t = (t_out * stride + kt) as isize - pad as isize;
                    if t < 0 || t as usize >= input.time() {
                        continue;
                    }
                    for kf in 0..kernels.kf {
                        let f = (fo * stride + kf) as isize - pad as isize;
                        if f < 0 || f as usize >= input.freq() {
                            continue;
                        }
                        acc += input.get(i, t as usize, f as usize) * kernels.get(o, i, kt, kf);
                    }
                }
            }
            if let Some(b) = bias {
                acc += b[o];
            }
            out[o * out_f + fo] = acc;
        }
    }
    out
}

/// 2-D cross-correlation (no kernel flip, no activation).
pub fn conv2d(input: &Tensor3, kernels: &Kernel4, stride: usize, pad: usize) -> Result<Tensor3> {
    if input.channels() != kernels.in_channels {
        return Err(Error::dims(format!(
            "conv input has {} channels, kernels expect {}",
            input.channels(),
            kernels.in_channels
        )));
    }
    let out_t = conv_out_len(input.time(), kernels.kt, stride, pad).ok_or(Error::InputTooShort)?;
    let out_f = conv_out_len(input.freq(), kernels.kf, stride, pad).ok_or(Error::InputTooShort)?;
    let mut out = Tensor3::zeros(kernels.out_channels, 0, out_f);
    for t in 0..out_t {
        out.push_time_row(&conv2d_time_step(input, kernels, None, stride, pad, t))?;
    }
    Ok(out)
}

/// `log(e^a + e^b)`, exact `max(a, b)` when one side is `-inf`.
#[inline]
pub fn log_add(a: LogProb, b: LogProb) -> LogProb {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[LogProb]) -> LogProb {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax of `f32` logits evaluated in `f64`.
pub fn log_softmax_f64(logits: &[f32]) -> Vec<LogProb> {
    let xs: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    let lse = log_sum_exp(&xs);
    xs.iter().map(|&x| x - lse).collect()
}
