//! Corpus-level reports: BLEU per sentence and its correlations.

use std::io::Write;

use ctcnat_core::data::{SentencePair, Vocabulary};
use ctcnat_core::metrics::{corpus_bleu, pearson, sentence_bleu};
use ctcnat_core::transformer::{ModelConfig, ModelParams};

use crate::decode::{translate, LengthLimit, Search};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["sentence_id", "src_len", "out_len", "null_count", "sent_bleu"];

/// BLEU is computed on whitespace tokens of detokenized text.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Corpus BLEU of detokenized hypothesis lines against reference lines.
pub fn corpus_bleu_text<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| words(s.as_ref())).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|s| words(s.as_ref())).collect();
    Ok(corpus_bleu(&h, &r)?)
}

/// Detokenized translations of every source sentence.
pub fn translate_corpus(
    config: &ModelConfig,
    params: &ModelParams,
    vocab: &Vocabulary,
    pairs: &[SentencePair],
    search: &Search,
) -> Result<Vec<String>> {
    pairs
        .iter()
        .map(|p| {
            let out = translate(config, params, &p.source_ids, search, LengthLimit::default())?;
            Ok(vocab.detokenize(&out.ids))
        })
        .collect()
}

/// Greedy-decode corpus BLEU, the validation score.
pub fn validation_bleu(config: &ModelConfig, params: &ModelParams, vocab: &Vocabulary, pairs: &[SentencePair]) -> Result<f64> {
    let hyps = translate_corpus(config, params, vocab, pairs, &Search::Greedy)?;
    let refs: Vec<&str> = pairs.iter().map(|p| p.target_text.as_str()).collect();
    corpus_bleu_text(&hyps, &refs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub sentence_id: usize,
    pub src_len: usize,
    pub out_len: usize,
    /// Blank frames before collapse; `None` for autoregressive models.
    pub null_count: Option<usize>,
    pub sent_bleu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub corpus_bleu: f64,
    pub records: Vec<EvalRecord>,
    /// Sentence BLEU vs source length; `None` when undefined.
    pub r_length: Option<f64>,
    /// Sentence BLEU vs null count; `None` for autoregressive models or when undefined.
    pub r_null: Option<f64>,
}

pub fn analyze(
    config: &ModelConfig,
    params: &ModelParams,
    vocab: &Vocabulary,
    pairs: &[SentencePair],
    search: &Search,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Corpus("nothing to evaluate".into()));
    }
    let mut hyps = Vec::with_capacity(pairs.len());
    let mut records = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let out = translate(config, params, &p.source_ids, search, LengthLimit::default())?;
        let hyp = vocab.detokenize(&out.ids);
        records.push(EvalRecord {
            sentence_id: i,
            src_len: p.source_ids.len(),
            out_len: out.ids.len(),
            null_count: out.null_count(),
            sent_bleu: sentence_bleu(&words(&hyp), &words(&p.target_text)),
        });
        hyps.push(hyp);
    }
    let refs: Vec<&str> = pairs.iter().map(|p| p.target_text.as_str()).collect();
    let bleus: Vec<f64> = records.iter().map(|r| r.sent_bleu).collect();
    let lens: Vec<f64> = records.iter().map(|r| r.src_len as f64).collect();
    let r_null = if config.variant.is_autoregressive() {
        None
    } else {
        let nulls: Vec<f64> = records.iter().map(|r| r.null_count.unwrap_or(0) as f64).collect();
        pearson(&bleus, &nulls).ok()
    };
    Ok(EvalReport {
        corpus_bleu: corpus_bleu_text(&hyps, &refs)?,
        r_length: pearson(&bleus, &lens).ok(),
        r_null,
        records,
    })
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Corpus(format!("writing report: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.sentence_id.to_string(),
                r.src_len.to_string(),
                r.out_len.to_string(),
                r.null_count.unwrap_or(0).to_string(),
                format!("{:.4}", r.sent_bleu),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Corpus(format!("writing report: {e}")))
    }

    pub fn summary(&self) -> String {
        format!(
            "corpus_bleu={:.2}\nsentences={}\nr_bleu_vs_src_len={}\nr_bleu_vs_null_count={}\n",
            self.corpus_bleu,
            self.records.len(),
            fmt_r(self.r_length),
            fmt_r(self.r_null)
        )
    }
}
