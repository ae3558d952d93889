//! `ctcnat` command-line interface.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage or
//! configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctcnat::bench::{self, BenchConfig, BenchModel, Mode};
use ctcnat::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use ctcnat::config::RunConfig;
use ctcnat::corpus::{pair_lines, read_lines, write_lines, write_vocab};
use ctcnat::decode::{translate, LengthLimit, Search};
use ctcnat::evaluation::{analyze, corpus_bleu_text};
use ctcnat::train::{average_checkpoints, train};
use ctcnat::Error;
use ctcnat_core::data::{gen_synthetic, SyntheticTask, Vocabulary};
use ctcnat_core::decoding::DecodeOptions;
use ctcnat_core::transformer::ModelParams;

#[derive(Parser)]
#[command(name = "ctcnat", version, about = "Non-autoregressive translation with CTC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Translate one sentence per line.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Corpus BLEU of a hypothesis file, or a full report for a model.
    Evaluate {
        /// Reference translations, one per line.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis file to score against the references.
        #[arg(long, conflicts_with_all = ["model", "src"], required_unless_present = "model")]
        hyp: Option<PathBuf>,
        /// Model checkpoint to decode `--src` with.
        #[arg(long, requires = "src")]
        model: Option<PathBuf>,
        /// Source sentences for `--model`.
        #[arg(long)]
        src: Option<PathBuf>,
        /// Per-sentence CSV report (model evaluation only).
        #[arg(long, requires = "model")]
        report: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Per-sentence decoding latency.
    Bench {
        /// Autoregressive model checkpoint.
        #[arg(long)]
        ar_model: Option<PathBuf>,
        /// Non-autoregressive model checkpoint.
        #[arg(long)]
        nar_model: Option<PathBuf>,
        /// Source sentences, one per line.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated modes: ar-greedy, ar-beam, nar-greedy, nar-beam.
        #[arg(long, value_delimiter = ',', default_value = "ar-greedy,nar-greedy")]
        modes: Vec<String>,
        /// Timed repetitions per sentence and mode (at least 3).
        #[arg(long, default_value_t = bench::MIN_REPS)]
        reps: usize,
        /// Beam width of the beam modes.
        #[arg(long, default_value_t = DecodeOptions::default().beam_width)]
        beam: usize,
        /// CSV output; printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Average the parameters of checkpoints.
    Average {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic parallel corpus.
    Synth {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value_t = 20)]
        vocab_size: usize,
        /// Number of sentence pairs.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Source output file.
        #[arg(long)]
        src: PathBuf,
        /// Target output file.
        #[arg(long)]
        tgt: PathBuf,
    },
}

#[derive(Args)]
struct SearchArgs {
    /// Decoding strategy; beam when --beam is given.
    #[arg(long, value_enum)]
    mode: Option<SearchMode>,
    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchMode {
    Greedy,
    Beam,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Copy,
    Reverse,
    Duplicate,
}

impl SearchArgs {
    fn search(&self) -> Search {
        let mode = self.mode.unwrap_or(if self.beam.is_some() { SearchMode::Beam } else { SearchMode::Greedy });
        match mode {
            SearchMode::Greedy => Search::Greedy,
            SearchMode::Beam => {
                Search::Beam(self.beam.map_or_else(DecodeOptions::default, DecodeOptions::with_beam))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train { config } => cmd_train(&config),
        Command::Translate { model, input, output, search } => cmd_translate(&model, &input, &output, &search.search()),
        Command::Evaluate { reference, hyp, model, src, report, search } => match (hyp, model, src) {
            (Some(hyp), _, _) => {
                let bleu = corpus_bleu_text(&read_lines(&hyp)?, &read_lines(&reference)?)?;
                println!("corpus_bleu={bleu:.2}");
                Ok(())
            }
            (None, Some(model), Some(src)) => cmd_analyze(&model, &src, &reference, report.as_deref(), &search.search()),
            _ => bail!(Error::Config("evaluate needs --hyp, or --model with --src".into())),
        },
        Command::Bench { ar_model, nar_model, input, modes, reps, beam, output } => {
            let modes = modes.iter().map(|m| m.parse()).collect::<Result<Vec<Mode>, _>>()?;
            let cfg = BenchConfig { modes, reps, beam: DecodeOptions::with_beam(beam), limit: LengthLimit::default() };
            cmd_bench(ar_model.as_deref(), nar_model.as_deref(), &input, &cfg, output.as_deref())
        }
        Command::Average { checkpoints, output } => {
            let loaded = checkpoints
                .iter()
                .map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let avg = average_checkpoints(&loaded.iter().collect::<Vec<_>>())?;
            save_checkpoint(&avg, &output)?;
            println!("averaged {} checkpoints into {}", loaded.len(), output.display());
            Ok(())
        }
        Command::Synth { task, vocab_size, n, min_len, max_len, seed, src, tgt } => {
            let task = match task {
                TaskArg::Copy => SyntheticTask::Copy,
                TaskArg::Reverse => SyntheticTask::Reverse,
                TaskArg::Duplicate => SyntheticTask::DuplicateEachToken,
            };
            let pairs = gen_synthetic(task, vocab_size, n, (min_len, max_len), seed).map_err(|e| match e {
                ctcnat_core::Error::Input(m) => Error::Config(m),
                other => Error::Core(other),
            })?;
            write_lines(&src, &pairs.iter().map(|p| p.source_text.as_str()).collect::<Vec<_>>())?;
            write_lines(&tgt, &pairs.iter().map(|p| p.target_text.as_str()).collect::<Vec<_>>())?;
            Ok(())
        }
    }
}

fn cmd_train(path: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text)?;
    let [train_src, train_tgt, valid_src, valid_tgt] = cfg.corpus_paths()?;
    let (src_lines, tgt_lines) = (read_lines(train_src)?, read_lines(train_tgt)?);
    let vocab = Vocabulary::build(
        src_lines.iter().chain(&tgt_lines).map(String::as_str),
        cfg.vocab_mode,
        cfg.min_freq,
    )
    .map_err(|e| Error::Corpus(format!("{}: {e}", train_src.display())))?;
    let model = cfg.model_config(vocab.len())?;
    let train_corpus = pair_lines(&src_lines, &tgt_lines, &vocab, model.max_len)?;
    let valid_corpus = pair_lines(&read_lines(valid_src)?, &read_lines(valid_tgt)?, &vocab, model.max_len)?;
    let dir = &cfg.train.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_vocab(&dir.join("vocab.txt"), &vocab)?;
    fs::write(dir.join("run.cfg"), cfg.to_text()).map_err(|e| Error::io(dir, e))?;
    let params = ModelParams::init(&model, cfg.train.seed)?;
    log::info!(
        "training {} model: {} parameters, vocabulary {}, {} training pairs",
        model.variant,
        params.num_values(),
        vocab.len(),
        train_corpus.pairs.len()
    );
    let out = train(&model, params, &vocab, &train_corpus.pairs, &valid_corpus.pairs, &cfg.train)?;
    println!("final step {} valid_bleu={:.2}", out.last.step, out.last.valid_score);
    for r in &out.retained {
        println!("kept {} (step {}, valid_bleu={:.2})", r.path.display(), r.step, r.score);
    }
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_translate(model: &Path, input: &Path, output: &Path, search: &Search) -> anyhow::Result<()> {
    let ckpt = load_model(model)?;
    let mut lines = Vec::new();
    for (n, line) in read_lines(input)?.iter().enumerate() {
        let ids = ckpt.vocab.tokenize(line);
        if ids.is_empty() {
            lines.push(String::new());
            continue;
        }
        let out = translate(&ckpt.config, &ckpt.params, &ids, search, LengthLimit::default())
            .with_context(|| format!("{} line {}", input.display(), n + 1))?;
        lines.push(ckpt.vocab.detokenize(&out.ids));
    }
    write_lines(output, &lines)?;
    Ok(())
}

fn cmd_analyze(model: &Path, src: &Path, reference: &Path, report: Option<&Path>, search: &Search) -> anyhow::Result<()> {
    let ckpt = load_model(model)?;
    let corpus = pair_lines(&read_lines(src)?, &read_lines(reference)?, &ckpt.vocab, ckpt.config.max_len)?;
    let rep = analyze(&ckpt.config, &ckpt.params, &ckpt.vocab, &corpus.pairs, search)?;
    if let Some(path) = report {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        rep.write_csv(file)?;
    }
    print!("{}", rep.summary());
    Ok(())
}

fn cmd_bench(
    ar: Option<&Path>,
    nar: Option<&Path>,
    input: &Path,
    cfg: &BenchConfig,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    let ar = ar.map(load_model).transpose()?;
    let nar = nar.map(load_model).transpose()?;
    let vocab = match (&ar, &nar) {
        (Some(a), Some(n)) if a.vocab != n.vocab => {
            bail!(Error::Config("the two models use different vocabularies".into()))
        }
        (Some(c), _) | (None, Some(c)) => &c.vocab,
        (None, None) => bail!(Error::Config("bench needs --ar-model and/or --nar-model".into())),
    };
    let max_len = [&ar, &nar].iter().filter_map(|c| c.as_ref()).map(|c| c.config.max_len).min().unwrap_or(0);
    let sources: Vec<Vec<usize>> = read_lines(input)?
        .iter()
        .map(|l| vocab.tokenize(l))
        .filter(|ids| !ids.is_empty() && ids.len() <= max_len)
        .collect();
    fn as_model(c: &Option<Checkpoint>) -> Option<BenchModel<'_>> {
        c.as_ref().map(|c| BenchModel { config: &c.config, params: &c.params })
    }
    let records = bench::bench_decode(as_model(&ar), as_model(&nar), &sources, cfg)?;
    // the summary goes to stdout unless the CSV already does
    match output {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            bench::write_csv(&records, file)?;
            print!("{}", bench::summary(&records));
        }
        None => {
            bench::write_csv(&records, std::io::stdout().lock())?;
            write!(std::io::stderr().lock(), "{}", bench::summary(&records))?;
        }
    }
    Ok(())
}
