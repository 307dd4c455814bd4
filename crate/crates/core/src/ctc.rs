//! CTC probability machinery: forward likelihood, Viterbi forced alignment
//! (which yields the decoder trigger frames) and the one-frame prefix
//! beam-search update.
//!
//! Labels are decoder vocabulary ids; in a posteriorgram label `y` lives in
//! column `y + 1` and column 0 is blank.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::{log_add, log_sum_exp, LogProb, LOG_ZERO};

/// Column of the blank symbol.
pub const BLANK: usize = 0;

/// `N x (V+1)` per-frame CTC log posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    frames: usize,
    width: usize,
    data: Vec<LogProb>,
}

impl Posteriorgram {
    /// Rows must be rectangular, at least two columns wide, and normalized to
    /// within `1e-5` in log space.
    pub fn from_rows(rows: Vec<Vec<LogProb>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let frames = rows.len();
        let data: Vec<LogProb> = rows.into_iter().flatten().collect();
        Self::from_flat(frames, width, data)
    }

    pub fn from_flat(frames: usize, width: usize, data: Vec<LogProb>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyUtterance);
        }
        if width < 2 {
            return Err(Error::dims("posteriorgram needs blank plus at least one label"));
        }
        if data.len() != frames * width {
            return Err(Error::dims(format!(
                "{} values for a {frames}x{width} posteriorgram",
                data.len()
            )));
        }
        let p = Self { frames, width, data };
        for n in 0..frames {
            let row = p.row(n);
            if row.iter().any(|v| v.is_nan() || *v > 0.0) {
                return Err(Error::InvalidParameter(format!("row {n} holds an invalid log-probability")));
            }
            let total = log_sum_exp(row);
            if (total).abs() > 1e-5 {
                return Err(Error::InvalidParameter(format!(
                    "row {n} is not normalized (log-sum-exp {total})"
                )));
            }
        }
        Ok(p)
    }

    /// Rows of `logits` passed through a log-softmax.
    pub fn from_logits(rows: &[Vec<f64>]) -> Result<Self> {
        let normalized = rows
            .iter()
            .map(|r| {
                let lse = log_sum_exp(r);
                r.iter().map(|v| v - lse).collect()
            })
            .collect();
        Self::from_rows(normalized)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `V + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of non-blank labels `V`.
    pub fn labels(&self) -> usize {
        self.width - 1
    }

    pub fn row(&self, n: usize) -> &[LogProb] {
        &self.data[n * self.width..(n + 1) * self.width]
    }

    pub fn data(&self) -> &[LogProb] {
        &self.data
    }

    fn label_column(&self, y: u32) -> Result<usize> {
        let c = y as usize + 1;
        if c >= self.width {
            return Err(Error::InvalidParameter(format!(
                "label {y} outside a posteriorgram of {} labels",
                self.labels()
            )));
        }
        Ok(c)
    }
}

/// Extended CTC state sequence `(blank, y1, blank, y2, ..., yL, blank)` as
/// posteriorgram columns.
fn extended_states(post: &Posteriorgram, y: &[u32]) -> Result<Vec<usize>> {
    let mut states = Vec::with_capacity(2 * y.len() + 1);
    states.push(BLANK);
    for &label in y {
        states.push(post.label_column(label)?);
        states.push(BLANK);
    }
    Ok(states)
}

/// Whether state `s` may be entered from `s - 2` (skipping a blank).
fn can_skip(states: &[usize], s: usize) -> bool {
    s >= 2 && states[s] != BLANK && states[s] != states[s - 2]
}

/// `log p_ctc(Y | X)`, summed over every path collapsing to `y`. Returns
/// `-inf` when `y` cannot be emitted in the available frames.
pub fn ctc_forward_logprob(post: &Posteriorgram, y: &[u32]) -> Result<LogProb> {
    let states = extended_states(post, y)?;
    let s_len = states.len();
    let mut alpha = vec![LOG_ZERO; s_len];
    let row = post.row(0);
    alpha[0] = row[states[0]];
    if s_len > 1 {
        alpha[1] = row[states[1]];
    }
    let mut next = vec![LOG_ZERO; s_len];
    for n in 1..post.frames() {
        let row = post.row(n);
        for s in 0..s_len {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add(acc, alpha[s - 1]);
            }
            if can_skip(&states, s) {
                acc = log_add(acc, alpha[s - 2]);
            }
            next[s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + row[states[s]] };
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    Ok(if s_len > 1 {
        log_add(alpha[s_len - 1], alpha[s_len - 2])
    } else {
        alpha[0]
    })
}

/// Forced alignment of a label sequence and the trigger frames derived from
/// it. Frame indices are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerAlignment {
    /// Per frame: `None` for blank, otherwise the emitted label.
    pub path: Vec<Option<u32>>,
    /// `n'_l`: first frame of each label in `path`.
    pub first_occurrence: Vec<usize>,
    /// `nu_l = n'_l + eps_dec`.
    pub nu: Vec<usize>,
    pub log_prob: LogProb,
}

impl TriggerAlignment {
    /// Remove repeats, then blanks.
    pub fn collapsed(&self) -> Vec<u32> {
        collapse(&self.path)
    }
}

/// Collapse a CTC path to its label sequence.
pub fn collapse(path: &[Option<u32>]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &sym in path {
        if let Some(label) = sym {
            if prev != Some(label) {
                out.push(label);
            }
        }
        prev = sym;
    }
    out
}

/// Highest-probability path collapsing to `y`.
///
/// Among equally probable paths the backtrace prefers staying in a state over
/// entering it from `s-1` over skipping from `s-2`, and ending in the final
/// blank over ending in the last label. Each state is thus reached as early as
/// possible, so labels are emitted at the earliest frame the score allows.
pub fn ctc_viterbi_align(post: &Posteriorgram, y: &[u32], eps_dec: usize) -> Result<TriggerAlignment> {
    let states = extended_states(post, y)?;
    let s_len = states.len();
    let n_frames = post.frames();
    let mut delta = vec![LOG_ZERO; s_len];
    // back[n][s]: predecessor state at frame n-1
    let mut back = vec![vec![0usize; s_len]; n_frames];
    let row = post.row(0);
    delta[0] = row[states[0]];
    if s_len > 1 {
        delta[1] = row[states[1]];
    }
    let mut next = vec![LOG_ZERO; s_len];
    for (n, back_n) in back.iter_mut().enumerate().skip(1) {
        let row = post.row(n);
        for s in 0..s_len {
            let mut best = delta[s];
            let mut arg = s;
            if s >= 1 && delta[s - 1] > best {
                best = delta[s - 1];
                arg = s - 1;
            }
            if can_skip(&states, s) && delta[s - 2] > best {
                best = delta[s - 2];
                arg = s - 2;
            }
            next[s] = if best == LOG_ZERO { LOG_ZERO } else { best + row[states[s]] };
            back_n[s] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut end = s_len - 1;
    if s_len > 1 && delta[s_len - 2] > delta[s_len - 1] {
        end = s_len - 2;
    }
    let log_prob = delta[end];
    if log_prob == LOG_ZERO {
        return Err(Error::NoValidAlignment);
    }
    let mut state_path = vec![0usize; n_frames];
    let mut s = end;
    for n in (0..n_frames).rev() {
        state_path[n] = s;
        if n > 0 {
            s = back[n][s];
        }
    }
    let path: Vec<Option<u32>> = state_path
        .iter()
        .map(|&s| if states[s] == BLANK { None } else { Some(y[(s - 1) / 2]) })
        .collect();
    let mut first_occurrence = Vec::with_capacity(y.len());
    let mut prev_state = usize::MAX;
    for (n, &s) in state_path.iter().enumerate() {
        if s % 2 == 1 && s != prev_state {
            first_occurrence.push(n + 1);
        }
        prev_state = s;
    }
    let nu = first_occurrence.iter().map(|&n| n + eps_dec).collect();
    Ok(TriggerAlignment {
        path,
        first_occurrence,
        nu,
        log_prob,
    })
}

/// Prefix probabilities split by whether the last frame was blank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrefixScores {
    pub p_b: LogProb,
    pub p_nb: LogProb,
}

impl PrefixScores {
    /// Scores of the empty prefix before the first frame.
    pub const ROOT: PrefixScores = PrefixScores {
        p_b: 0.0,
        p_nb: LOG_ZERO,
    };

    pub const ZERO: PrefixScores = PrefixScores {
        p_b: LOG_ZERO,
        p_nb: LOG_ZERO,
    };

    /// `log(p_b + p_nb)`.
    pub fn total(&self) -> LogProb {
        log_add(self.p_b, self.p_nb)
    }
}

/// Prefix set keyed by label sequence, iterated in lexicographic order.
pub type PrefixMap = BTreeMap<Vec<u32>, PrefixScores>;

/// Advance every prefix in `hyps` by one frame.
///
/// Blank and a repeated last label keep a prefix; any other label with
/// probability at least `local_threshold` extends it. Labels with zero
/// probability never extend.
pub fn ctc_prefix_step(row: &[LogProb], hyps: &PrefixMap, local_threshold: f64) -> PrefixMap {
    let log_threshold = if local_threshold > 0.0 {
        local_threshold.ln()
    } else {
        LOG_ZERO
    };
    let mut out = PrefixMap::new();
    let blank = row[BLANK];
    for (prefix, scores) in hyps {
        let total = scores.total();
        if total == LOG_ZERO {
            continue;
        }
        let last = prefix.last().map(|&y| y as usize + 1);
        let stay_b = total + blank;
        let stay_nb = match last {
            Some(c) => scores.p_nb + row[c],
            None => LOG_ZERO,
        };
        if stay_b != LOG_ZERO || stay_nb != LOG_ZERO {
            let e = out.entry(prefix.clone()).or_insert(PrefixScores::ZERO);
            e.p_b = log_add(e.p_b, stay_b);
            e.p_nb = log_add(e.p_nb, stay_nb);
        }
        for (c, &lp) in row.iter().enumerate().skip(1) {
            if lp == LOG_ZERO || lp < log_threshold {
                continue;
            }
            let from = if Some(c) == last { scores.p_b } else { total };
            if from == LOG_ZERO {
                continue;
            }
            let mut ext = prefix.clone();
            ext.push((c - 1) as u32);
            let e = out.entry(ext).or_insert(PrefixScores::ZERO);
            e.p_nb = log_add(e.p_nb, from + lp);
        }
    }
    out
}
