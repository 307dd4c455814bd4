//! Label inventory: one token per line, line index = label id.
//!
//! An optional first line `#! word_boundary=<marker>` declares the subword
//! word-start marker (default `▁`). `<sos>` is required, `<eos>` optional.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const DEFAULT_WORD_BOUNDARY: &str = "\u{2581}";

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    sos: u32,
    eos: Option<u32>,
    word_boundary: String,
    explicit_boundary: bool,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        Self::build(tokens, None)
    }

    fn build(tokens: Vec<String>, boundary: Option<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Format(format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate token '{t}'")));
            }
        }
        let sos = *index
            .get(SOS_TOKEN)
            .ok_or_else(|| Error::Format(format!("vocabulary lacks {SOS_TOKEN}")))?;
        let eos = index.get(EOS_TOKEN).copied();
        Ok(Self {
            tokens,
            index,
            sos,
            eos,
            explicit_boundary: boundary.is_some(),
            word_boundary: boundary.unwrap_or_else(|| DEFAULT_WORD_BOUNDARY.to_string()),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut boundary = None;
        let mut tokens = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if i == 0 {
                if let Some(header) = line.strip_prefix("#!") {
                    let value = header
                        .trim()
                        .strip_prefix("word_boundary=")
                        .ok_or_else(|| Error::Parse {
                            line: 1,
                            message: format!("unknown header '{line}'"),
                        })?;
                    boundary = Some(value.to_string());
                    continue;
                }
            }
            if line.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty token".into(),
                });
            }
            tokens.push(line.to_string());
        }
        Self::build(tokens, boundary).map_err(|e| match e {
            Error::Format(m) => Error::Parse { line: 0, message: m },
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// File form accepted by [`Vocab::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.explicit_boundary {
            out.push_str("#! word_boundary=");
            out.push_str(&self.word_boundary);
            out.push('\n');
        }
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Vocabulary size including specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sos(&self) -> u32 {
        self.sos
    }

    pub fn eos(&self) -> Option<u32> {
        self.eos
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.sos || Some(id) == self.eos
    }

    /// Labels the recognizer can emit (specials excluded).
    pub fn label_count(&self) -> usize {
        self.len() - 1 - usize::from(self.eos.is_some())
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn word_boundary(&self) -> &str {
        &self.word_boundary
    }

    /// Space-separated token names, specials skipped.
    pub fn join_tokens(&self, labels: &[u32]) -> String {
        labels
            .iter()
            .filter(|&&y| !self.is_special(y))
            .map(|&y| self.token(y).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Concatenate pieces, turn word-boundary markers into spaces and trim.
    pub fn detokenize(&self, labels: &[u32]) -> String {
        let mut s = String::new();
        for &y in labels {
            if self.is_special(y) {
                continue;
            }
            s.push_str(self.token(y).unwrap_or("<?>"));
        }
        if !self.word_boundary.is_empty() {
            s = s.replace(&self.word_boundary, " ");
        }
        s.trim().to_string()
    }
}
