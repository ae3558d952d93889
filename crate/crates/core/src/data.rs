//! Vocabulary, tokenization, batching and synthetic tasks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const BLANK: usize = 0;
pub const PAD: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Ids below this are reserved.
pub const FIRST_TOKEN: usize = 4;

const RESERVED: [&str; FIRST_TOKEN] = ["<blank>", "<pad>", "</s>", "<unk>"];

/// Stand-in for a space in character mode.
pub const SPACE_MARK: char = '\u{2581}';

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenMode {
    Char,
    Word,
}

impl FromStr for TokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenMode::Char),
            "word" => Ok(TokenMode::Word),
            _ => Err(Error::Config(format!("unknown vocab mode {s:?}"))),
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        })
    }
}

fn split_tokens(line: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Word => line.split_whitespace().map(ToString::to_string).collect(),
        TokenMode::Char => {
            let words: Vec<&str> = line.split_whitespace().collect();
            let joined = words.join(" ");
            joined
                .chars()
                .map(|c| if c == ' ' { SPACE_MARK } else { c })
                .map(String::from)
                .collect()
        }
    }
}

/// Token ↔ id map. Ids `0..4` are the blank, padding, end-of-sequence and
/// unknown symbols; text tokens start at [`FIRST_TOKEN`].
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    mode: TokenMode,
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Tokens with at least `min_freq` occurrences, ordered by descending
    /// frequency, then by token.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, mode: TokenMode, min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::Input("min_freq must be at least 1".into()));
        }
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut any_line = false;
        for line in lines {
            any_line = true;
            for tok in split_tokens(line, mode) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        if !any_line || freq.is_empty() {
            return Err(Error::Input("empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> = freq.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t), mode)
    }

    /// Vocabulary over the given non-reserved tokens, in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, mode: TokenMode) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index = BTreeMap::new();
        for tok in tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid token {tok:?}")));
            }
            if index.insert(tok.clone(), all.len()).is_some() {
                return Err(Error::Input(format!("duplicate token {tok:?}")));
            }
            all.push(tok);
        }
        Ok(Self {
            mode,
            tokens: all,
            index,
        })
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Non-reserved tokens in id order.
    pub fn text_tokens(&self) -> &[String] {
        &self.tokens[FIRST_TOKEN..]
    }

    /// Unknown tokens become [`UNK`]; reserved ids are never produced otherwise.
    pub fn tokenize(&self, line: &str) -> Vec<usize> {
        split_tokens(line, self.mode)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens with spaces (word mode) or restores the characters.
    /// Blank, padding and end-of-sequence ids are skipped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let toks = ids
            .iter()
            .filter(|&&id| !matches!(id, BLANK | PAD | EOS))
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]));
        match self.mode {
            TokenMode::Word => toks.collect::<Vec<_>>().join(" "),
            TokenMode::Char => toks
                .map(|t| if t.chars().eq(core::iter::once(SPACE_MARK)) { " " } else { t })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub source_text: String,
    pub target_text: String,
}

impl SentencePair {
    pub fn from_text(vocab: &Vocabulary, source: &str, target: &str) -> Self {
        Self {
            source_ids: vocab.tokenize(source),
            target_ids: vocab.tokenize(target),
            source_text: source.to_string(),
            target_text: target.to_string(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty() || self.target_ids.is_empty()
    }
}

/// Padded source/target matrices with the true lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub source_width: usize,
    pub target_width: usize,
    pub source_lens: Vec<usize>,
    pub target_lens: Vec<usize>,
}

fn padded(ids: &[usize], width: usize) -> impl Iterator<Item = usize> + '_ {
    ids.iter().copied().chain(core::iter::repeat(PAD)).take(width)
}

impl Batch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a SentencePair>) -> Self {
        let pairs: Vec<&SentencePair> = pairs.into_iter().collect();
        let source_width = pairs.iter().map(|p| p.source_ids.len()).max().unwrap_or(0);
        let target_width = pairs.iter().map(|p| p.target_ids.len()).max().unwrap_or(0);
        Self {
            source: pairs.iter().flat_map(|p| padded(&p.source_ids, source_width)).collect(),
            target: pairs.iter().flat_map(|p| padded(&p.target_ids, target_width)).collect(),
            source_width,
            target_width,
            source_lens: pairs.iter().map(|p| p.source_ids.len()).collect(),
            target_lens: pairs.iter().map(|p| p.target_ids.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.source_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_lens.is_empty()
    }

    /// Source and target of row `i`, padding stripped.
    pub fn row(&self, i: usize) -> (&[usize], &[usize]) {
        let s = &self.source[i * self.source_width..][..self.source_lens[i]];
        let t = &self.target[i * self.target_width..][..self.target_lens[i]];
        (s, t)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[usize], &[usize])> {
        (0..self.len()).map(move |i| self.row(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticTask {
    Copy,
    Reverse,
    /// Every source token appears twice in a row in the target.
    DuplicateEachToken,
}

impl FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "reverse" => Ok(Self::Reverse),
            "duplicate" | "duplicate-each-token" => Ok(Self::DuplicateEachToken),
            _ => Err(Error::Config(format!("unknown synthetic task {s:?}"))),
        }
    }
}

impl SyntheticTask {
    pub fn apply(self, source: &[usize]) -> Vec<usize> {
        match self {
            Self::Copy => source.to_vec(),
            Self::Reverse => source.iter().rev().copied().collect(),
            Self::DuplicateEachToken => source.iter().flat_map(|&t| [t, t]).collect(),
        }
    }
}

/// `t0 … t{n-1}` as a word-mode vocabulary.
pub fn synthetic_vocabulary(vocab_size: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..vocab_size).map(|i| format!("t{i}")), TokenMode::Word)
        .expect("synthetic tokens are distinct")
}

/// `n` seeded pairs with uniformly drawn tokens of [`synthetic_vocabulary`] and
/// source lengths in `min_len..=max_len`.
pub fn gen_synthetic(
    task: SyntheticTask,
    vocab_size: usize,
    n: usize,
    (min_len, max_len): (usize, usize),
    seed: u64,
) -> Result<Vec<SentencePair>> {
    if vocab_size < 2 {
        return Err(Error::Input("synthetic vocabulary needs at least 2 tokens".into()));
    }
    if min_len == 0 || min_len > max_len {
        return Err(Error::Input(format!("bad length range {min_len}..={max_len}")));
    }
    let vocab = synthetic_vocabulary(vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let source_ids: Vec<usize> = (0..len)
                .map(|_| FIRST_TOKEN + rng.gen_range(0..vocab_size))
                .collect();
            let target_ids = task.apply(&source_ids);
            SentencePair {
                source_text: vocab.detokenize(&source_ids),
                target_text: vocab.detokenize(&target_ids),
                source_ids,
                target_ids,
            }
        })
        .collect())
}
