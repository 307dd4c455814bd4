//! Independent oracles and random fixtures shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use streamta_core::numcore::Matrix;
use streamta_core::{FeatureMatrix, ModelConfig, ModelParams, Posteriorgram};

/// Random normalized posteriorgram with `labels` labels plus blank.
pub fn random_post<R: Rng>(rng: &mut R, frames: usize, labels: usize) -> Posteriorgram {
    let rows = (0..frames)
        .map(|_| {
            let w: Vec<f64> = (0..=labels).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|v| (v / z).ln()).collect()
        })
        .collect();
    Posteriorgram::from_rows(rows).unwrap()
}

/// Remove repeats, then blanks (`None`).
pub fn collapse(path: &[Option<u32>]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if s != prev {
            if let Some(y) = s {
                out.push(y);
            }
        }
        prev = s;
    }
    out
}

/// Every CTC path over `post`, as symbols (`None` = blank) with its
/// probability in the linear domain.
pub fn all_paths(post: &Posteriorgram) -> Vec<(Vec<Option<u32>>, f64)> {
    let w = post.width();
    let n = post.frames();
    let mut out = Vec::with_capacity(w.pow(n as u32));
    let mut idx = vec![0usize; n];
    loop {
        let path: Vec<Option<u32>> = idx.iter().map(|&c| if c == 0 { None } else { Some(c as u32 - 1) }).collect();
        let p: f64 = idx.iter().enumerate().map(|(t, &c)| post.row(t)[c].exp()).product();
        out.push((path, p));
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < w {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            return out;
        }
    }
}

/// Log marginal of every label sequence with a non-zero path.
pub fn brute_marginals(post: &Posteriorgram) -> BTreeMap<Vec<u32>, f64> {
    let mut sums: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (path, p) in all_paths(post) {
        *sums.entry(collapse(&path)).or_default() += p;
    }
    sums.into_iter().map(|(k, v)| (k, v.ln())).collect()
}

/// Best path collapsing to `y` and its log probability.
pub fn brute_viterbi(post: &Posteriorgram, y: &[u32]) -> Option<(Vec<Option<u32>>, f64)> {
    all_paths(post)
        .into_iter()
        .filter(|(path, _)| collapse(path) == y)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(path, p)| (path, p.ln()))
}

/// Frames needed to emit `y`: one per label plus a blank between repeats.
pub fn min_frames(y: &[u32]) -> usize {
    y.len() + y.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Tiny model: `e` encoder layers, one decoder layer, `d_model = 8`, three
/// labels plus `<sos>`, five-dimensional features.
pub fn tiny_model<R: Rng>(rng: &mut R, e: usize) -> ModelParams {
    ModelParams::random(&ModelConfig::tiny(e, 1, 8, 5), rng)
}

pub fn random_features<R: Rng>(rng: &mut R, frames: usize, dim: usize) -> FeatureMatrix {
    let data = (0..frames * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    FeatureMatrix::new(Matrix::from_vec(frames, dim, data).unwrap(), 10.0)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn bits(m: &Matrix) -> Vec<u32> {
    m.data().iter().map(|v| v.to_bits()).collect()
}
