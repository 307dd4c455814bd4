//! Scaled dot-product and multi-head attention with boolean masks.
//!
//! Disallowed keys are never visited: the per-row kernel only iterates the
//! allowed key indices in ascending order. This is the same as adding `-inf`
//! to their logits, and it makes outputs bit-invariant to anything stored in
//! masked key/value rows.

use crate::error::{Error, Result};
use crate::numcore::{softmax_in_place, vec_mat, Matrix, Rows};

/// Boolean `n_q x n_k` attention mask, `true` where the query may attend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n_q: usize,
    n_k: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(n_q: usize, n_k: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(n_q * n_k);
        for i in 0..n_q {
            for j in 0..n_k {
                allowed.push(f(i, j));
            }
        }
        Self { n_q, n_k, allowed }
    }

    pub fn full(n_q: usize, n_k: usize) -> Self {
        Self::from_fn(n_q, n_k, |_, _| true)
    }

    /// Query `i` sees keys `j <= i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    /// Query `i` sees every past key and at most `look_ahead` future keys.
    /// `None` means unbounded.
    pub fn look_ahead(n: usize, look_ahead: Option<usize>) -> Self {
        Self::from_fn(n, n, |i, j| match look_ahead {
            Some(eps) => j <= i + eps,
            None => true,
        })
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_k(&self) -> usize {
        self.n_k
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n_k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, allow: bool) {
        self.allowed[i * self.n_k + j] = allow;
    }

    pub fn allowed_keys(&self, i: usize) -> Vec<usize> {
        (0..self.n_k).filter(|&j| self.is_allowed(i, j)).collect()
    }
}

/// Multi-head projections. The per-head matrices `W_i^Q`, `W_i^K`, `W_i^V`
/// are stored side by side: head `i` owns columns `[i*d_k, (i+1)*d_k)` of
/// `w_q`/`w_k`/`w_v`. `w_h` maps the concatenated heads back to `d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_h: Matrix,
    pub heads: usize,
}

impl MhaParams {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, w_h: Matrix, heads: usize) -> Result<Self> {
        let p = Self {
            w_q,
            w_k,
            w_v,
            w_h,
            heads,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.cols() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::dims(format!(
                "d_model {d} is not divisible by {} heads",
                self.heads
            )));
        }
        for (name, m) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v), ("w_h", &self.w_h)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::dims(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn project_query(&self, x: &[f32]) -> Vec<f32> {
        vec_mat(x, &self.w_q)
    }

    pub fn project_key(&self, x: &[f32]) -> Vec<f32> {
        vec_mat(x, &self.w_k)
    }

    pub fn project_value(&self, x: &[f32]) -> Vec<f32> {
        vec_mat(x, &self.w_v)
    }

    /// Attention output for one already-projected query against projected
    /// keys/values restricted to `allowed` (ascending indices).
    pub fn attend<K, V>(
        &self,
        q: &[f32],
        keys: &K,
        values: &V,
        allowed: impl Iterator<Item = usize> + Clone,
    ) -> Result<Vec<f32>>
    where
        K: Rows + ?Sized,
        V: Rows + ?Sized,
    {
        let dk = self.d_k();
        let mut concat = vec![0.0f32; dk * self.heads];
        for h in 0..self.heads {
            let span = h * dk..(h + 1) * dk;
            let out = attend_one(
                &q[span.clone()],
                keys,
                values,
                allowed.clone(),
                span.clone(),
                span.clone(),
            )?;
            concat[span].copy_from_slice(&out);
        }
        Ok(vec_mat(&concat, &self.w_h))
    }
}

/// Single-head attention for one query. `k_span`/`v_span` select the head's
/// columns inside each key/value row.
fn attend_one<K, V>(
    q: &[f32],
    keys: &K,
    values: &V,
    allowed: impl Iterator<Item = usize> + Clone,
    k_span: std::ops::Range<usize>,
    v_span: std::ops::Range<usize>,
) -> Result<Vec<f32>>
where
    K: Rows + ?Sized,
    V: Rows + ?Sized,
{
    let scale = (q.len() as f32).sqrt();
    let mut scores: Vec<f32> = allowed
        .clone()
        .map(|j| {
            let k = &keys.row_at(j)[k_span.clone()];
            let mut s = 0.0f32;
            for (a, b) in q.iter().zip(k) {
                s += a * b;
            }
            s / scale
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::EmptyAttentionRow);
    }
    softmax_in_place(&mut scores)?;
    let mut out = vec![0.0f32; v_span.len()];
    for (w, j) in scores.iter().zip(allowed) {
        let v = &values.row_at(j)[v_span.clone()];
        for (o, &vv) in out.iter_mut().zip(v) {
            *o += w * vv;
        }
    }
    Ok(out)
}

/// `Softmax(Q K^T / sqrt(d_k)) V` with disallowed positions excluded.
pub fn scaled_dot_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
) -> Result<Matrix> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::dims(format!(
            "attention q {}x{}, k {}x{}, v {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if mask.n_q() != q.rows() || mask.n_k() != k.rows() {
        return Err(Error::dims(format!(
            "mask {}x{} for {} queries and {} keys",
            mask.n_q(),
            mask.n_k(),
            q.rows(),
            k.rows()
        )));
    }
    let mut out = Matrix::zeros(0, v.cols());
    for i in 0..q.rows() {
        let allowed = mask.allowed_keys(i);
        let row = attend_one(
            q.row(i),
            k,
            v,
            allowed.iter().copied(),
            0..k.cols(),
            0..v.cols(),
        )?;
        out.push_row(&row)?;
    }
    Ok(out)
}

/// `Concat(Head_1..Head_h) W^H` with `Head_i = Attention(Q W_i^Q, K W_i^K, V W_i^V)`.
pub fn multi_head_attention(
    q_in: &Matrix,
    k_in: &Matrix,
    v_in: &Matrix,
    params: &MhaParams,
    mask: &AttentionMask,
) -> Result<Matrix> {
    params.validate()?;
    let d = params.d_model();
    if q_in.cols() != d || k_in.cols() != d || v_in.cols() != d || k_in.rows() != v_in.rows() {
        return Err(Error::dims(format!(
            "multi-head attention inputs must have {d} columns and matching key/value rows"
        )));
    }
    if mask.n_q() != q_in.rows() || mask.n_k() != k_in.rows() {
        return Err(Error::dims(format!(
            "mask {}x{} for {} queries and {} keys",
            mask.n_q(),
            mask.n_k(),
            q_in.rows(),
            k_in.rows()
        )));
    }
    let keys: Vec<Vec<f32>> = k_in.iter_rows().map(|r| params.project_key(r)).collect();
    let values: Vec<Vec<f32>> = v_in.iter_rows().map(|r| params.project_value(r)).collect();
    let mut out = Matrix::zeros(0, d);
    for i in 0..q_in.rows() {
        let q = params.project_query(q_in.row(i));
        let allowed = mask.allowed_keys(i);
        out.push_row(&params.attend(&q, &keys, &values, allowed.iter().copied())?)?;
    }
    Ok(out)
}
