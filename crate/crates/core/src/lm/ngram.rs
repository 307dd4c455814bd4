//! Back-off n-gram model read from ARPA text.
//!
//! Probabilities and back-off weights are stored in natural log. Tokens in
//! the file are resolved through the vocabulary by name first, then as
//! integer label ids. `<s>` maps to [`BOS`], `<unk>` supplies the score of
//! unknown labels.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::vocab::Vocab;
use crate::numcore::{LogProb, LOG_ZERO};

use super::{LanguageModel, LmState};

/// History sentinel for sentence start.
pub const BOS: u32 = u32::MAX;
const UNK: u32 = u32::MAX - 1;
const EOS: u32 = u32::MAX - 2;

/// Score of an unknown label when the model has no `<unk>` entry
/// (`-99` in log10, the customary ARPA floor).
const FLOOR_LOG10: f64 = -99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    log_p: LogProb,
    backoff: LogProb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgramLm {
    order: usize,
    entries: HashMap<Vec<u32>, Entry>,
    unk: LogProb,
}

fn ln_from_log10(v: f64) -> f64 {
    v * std::f64::consts::LN_10
}

impl NgramLm {
    pub fn load(path: &Path, vocab: Option<&Vocab>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, vocab)
    }

    pub fn parse(text: &str, vocab: Option<&Vocab>) -> Result<Self> {
        let resolve = |tok: &str, line: usize| -> Result<u32> {
            match tok {
                "<s>" => return Ok(BOS),
                "<unk>" => return Ok(UNK),
                _ => {}
            }
            if let Some(id) = vocab.and_then(|v| v.id(tok)) {
                return Ok(id);
            }
            if tok == "</s>" {
                return Ok(vocab.and_then(Vocab::eos).unwrap_or(EOS));
            }
            tok.parse::<u32>().map_err(|_| Error::Parse {
                line,
                message: format!("unknown token '{tok}'"),
            })
        };

        let mut declared: Vec<(usize, usize)> = Vec::new();
        let mut entries: HashMap<Vec<u32>, Entry> = HashMap::new();
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        let mut ended = false;
        let mut counts: HashMap<usize, usize> = HashMap::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || ended {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            if line == "\\data\\" {
                seen_data = true;
                section = Some(0);
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\') {
                let n = rest
                    .strip_suffix("-grams:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| err(format!("unrecognized section header '{line}'")))?;
                if !declared.iter().any(|&(o, _)| o == n) {
                    return Err(err(format!("section for undeclared order {n}")));
                }
                section = Some(n);
                continue;
            }
            match section {
                None => {
                    if !seen_data {
                        continue;
                    }
                }
                Some(0) => {
                    let spec = line
                        .strip_prefix("ngram ")
                        .ok_or_else(|| err(format!("expected 'ngram N=count', found '{line}'")))?;
                    let (n, c) = spec
                        .split_once('=')
                        .ok_or_else(|| err("expected 'ngram N=count'".into()))?;
                    let n: usize = n.trim().parse().map_err(|_| err(format!("bad order '{n}'")))?;
                    let c: usize = c.trim().parse().map_err(|_| err(format!("bad count '{c}'")))?;
                    if n == 0 {
                        return Err(err("n-gram order must be at least 1".into()));
                    }
                    declared.push((n, c));
                }
                Some(n) => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() != n + 1 && fields.len() != n + 2 {
                        return Err(err(format!(
                            "a {n}-gram line needs {} or {} fields, found {}",
                            n + 1,
                            n + 2,
                            fields.len()
                        )));
                    }
                    let p: f64 = fields[0]
                        .parse()
                        .map_err(|_| err(format!("bad probability '{}'", fields[0])))?;
                    let bow: f64 = match fields.get(n + 1) {
                        Some(b) => b.parse().map_err(|_| err(format!("bad back-off weight '{b}'")))?,
                        None => 0.0,
                    };
                    let key = fields[1..=n]
                        .iter()
                        .map(|t| resolve(t, line_no))
                        .collect::<Result<Vec<u32>>>()?;
                    let entry = Entry {
                        log_p: ln_from_log10(p),
                        backoff: ln_from_log10(bow),
                    };
                    if entries.insert(key, entry).is_some() {
                        return Err(err("duplicate n-gram".into()));
                    }
                    *counts.entry(n).or_default() += 1;
                }
            }
        }
        if !seen_data {
            return Err(Error::Parse {
                line: 1,
                message: "missing \\data\\ header".into(),
            });
        }
        if !ended {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: "missing \\end\\ marker".into(),
            });
        }
        for &(n, c) in &declared {
            let found = counts.get(&n).copied().unwrap_or(0);
            if found != c {
                return Err(Error::Parse {
                    line: text.lines().count(),
                    message: format!("header declares {c} {n}-grams, found {found}"),
                });
            }
        }
        let order = declared.iter().map(|&(n, _)| n).max().unwrap_or(0);
        if order == 0 || !declared.iter().any(|&(n, _)| n == 1) {
            return Err(Error::Parse {
                line: 1,
                message: "no unigram section declared".into(),
            });
        }
        let unk = entries
            .get(&vec![UNK])
            .map_or(ln_from_log10(FLOOR_LOG10), |e| e.log_p);
        Ok(Self { order, entries, unk })
    }

    /// Maximum-likelihood bigram model from pair counts, without smoothing.
    ///
    /// A history seen in the counts predicts only its observed successors;
    /// other histories fall back to the unigram distribution of successors.
    pub fn from_bigram_counts(counts: &[((u32, u32), u64)]) -> Result<Self> {
        let mut history_totals: HashMap<u32, u64> = HashMap::new();
        let mut unigram: HashMap<u32, u64> = HashMap::new();
        let mut total = 0u64;
        for &((a, b), c) in counts {
            *history_totals.entry(a).or_default() += c;
            *unigram.entry(b).or_default() += c;
            total += c;
        }
        if total == 0 {
            return Err(Error::InvalidParameter("bigram counts are empty".into()));
        }
        let mut entries = HashMap::new();
        for (&w, &c) in &unigram {
            entries.insert(
                vec![w],
                Entry {
                    log_p: (c as f64 / total as f64).ln(),
                    backoff: 0.0,
                },
            );
        }
        for &((a, b), c) in counts {
            if c == 0 {
                continue;
            }
            let p = (c as f64 / history_totals[&a] as f64).ln();
            let e = entries.entry(vec![a, b]).or_insert(Entry {
                log_p: LOG_ZERO,
                backoff: 0.0,
            });
            e.log_p = crate::numcore::log_add(e.log_p, p);
        }
        for &a in history_totals.keys() {
            let e = entries.entry(vec![a]).or_insert(Entry {
                log_p: LOG_ZERO,
                backoff: 0.0,
            });
            e.backoff = LOG_ZERO;
        }
        Ok(Self {
            order: 2,
            entries,
            unk: ln_from_log10(FLOOR_LOG10),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Label ids with a unigram entry, ascending.
    pub fn words(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .entries
            .keys()
            .filter(|k| k.len() == 1 && k[0] < EOS)
            .map(|k| k[0])
            .collect();
        set.into_iter().collect()
    }

    /// `log p(word | history)` with standard back-off.
    pub fn log_prob(&self, history: &[u32], word: u32) -> LogProb {
        let keep = history.len().min(self.order - 1);
        let mut context = &history[history.len() - keep..];
        let mut backoff = 0.0;
        let mut key = Vec::with_capacity(self.order);
        loop {
            key.clear();
            key.extend_from_slice(context);
            key.push(word);
            if let Some(e) = self.entries.get(&key) {
                return backoff + e.log_p;
            }
            if context.is_empty() {
                return backoff + self.unk;
            }
            if let Some(e) = self.entries.get(context) {
                backoff += e.backoff;
            }
            context = &context[1..];
        }
    }
}

impl LanguageModel for NgramLm {
    fn name(&self) -> &str {
        "ngram"
    }

    fn start(&self) -> LmState {
        if self.order > 1 {
            LmState(vec![BOS])
        } else {
            LmState::default()
        }
    }

    fn score_extend(&self, state: &LmState, label: u32) -> (LmState, LogProb) {
        let lp = self.log_prob(&state.0, label);
        let mut next = state.0.clone();
        next.push(label);
        let keep = self.order - 1;
        if next.len() > keep {
            next.drain(..next.len() - keep);
        }
        (LmState(next), lp)
    }
}
