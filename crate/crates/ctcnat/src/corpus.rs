//! Parallel text corpora and vocabulary files.

use std::fs;
use std::path::Path;

use ctcnat_core::data::{SentencePair, TokenMode, Vocabulary};

use crate::{Error, Result};

/// Lines of a UTF-8 text file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loaded pairs plus how many lines were dropped and why.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub dropped_empty: usize,
    pub dropped_long: usize,
}

/// Pairs line `i` of `source` with line `i` of `target`. Pairs that are empty
/// after tokenization, or longer than `max_len` on either side, are dropped.
pub fn pair_lines(source: &[String], target: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Corpus> {
    if source.len() != target.len() {
        return Err(Error::Corpus(format!(
            "line counts differ: {} source lines, {} target lines",
            source.len(),
            target.len()
        )));
    }
    let mut corpus = Corpus { pairs: Vec::new(), dropped_empty: 0, dropped_long: 0 };
    for (s, t) in source.iter().zip(target) {
        let pair = SentencePair::from_text(vocab, s, t);
        if pair.is_empty() {
            corpus.dropped_empty += 1;
        } else if pair.source_ids.len() > max_len || pair.target_ids.len() > max_len {
            corpus.dropped_long += 1;
        } else {
            corpus.pairs.push(pair);
        }
    }
    if corpus.dropped_empty > 0 {
        log::info!("dropped {} empty sentence pairs", corpus.dropped_empty);
    }
    if corpus.dropped_long > 0 {
        log::info!("dropped {} sentence pairs longer than {max_len} tokens", corpus.dropped_long);
    }
    Ok(corpus)
}

pub fn load_parallel(source: &Path, target: &Path, vocab: &Vocabulary, max_len: usize) -> Result<Corpus> {
    pair_lines(&read_lines(source)?, &read_lines(target)?, vocab, max_len)
}

/// One token per line; line `n` holds id `n + 4`.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_lines(path, vocab.text_tokens())
}

pub fn read_vocab(path: &Path, mode: TokenMode) -> Result<Vocabulary> {
    Ok(Vocabulary::from_tokens(read_lines(path)?, mode)?)
}
