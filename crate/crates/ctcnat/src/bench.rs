//! Per-sentence decoding latency.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ctcnat_core::decoding::DecodeOptions;
use ctcnat_core::transformer::{ModelConfig, ModelParams};

use crate::decode::{translate, LengthLimit, Search};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["sentence_id", "src_len", "out_len", "mode", "ms"];
pub const MIN_REPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    ArGreedy,
    ArBeam,
    NarGreedy,
    NarBeam,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::ArGreedy, Mode::ArBeam, Mode::NarGreedy, Mode::NarBeam];

    pub fn is_autoregressive(self) -> bool {
        matches!(self, Mode::ArGreedy | Mode::ArBeam)
    }

    fn search(self, beam: &DecodeOptions) -> Search {
        match self {
            Mode::ArGreedy | Mode::NarGreedy => Search::Greedy,
            Mode::ArBeam | Mode::NarBeam => Search::Beam(beam.clone()),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ArGreedy => "AR-greedy",
            Mode::ArBeam => "AR-beam",
            Mode::NarGreedy => "NAR-greedy",
            Mode::NarBeam => "NAR-beam",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown bench mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRecord {
    pub sentence_id: usize,
    pub src_len: usize,
    pub out_len: usize,
    pub mode: Mode,
    /// Median wall time over `reps` runs, in milliseconds.
    pub ms: f64,
    pub reps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BenchModel<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a ModelParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub modes: Vec<Mode>,
    pub reps: usize,
    pub beam: DecodeOptions,
    pub limit: LengthLimit,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            modes: vec![Mode::ArGreedy, Mode::NarGreedy],
            reps: MIN_REPS,
            beam: DecodeOptions::default(),
            limit: LengthLimit::default(),
        }
    }
}

fn model_for<'a>(mode: Mode, ar: Option<BenchModel<'a>>, nar: Option<BenchModel<'a>>) -> Result<BenchModel<'a>> {
    let (model, want_ar) = if mode.is_autoregressive() { (ar, true) } else { (nar, false) };
    let model = model.ok_or_else(|| Error::Config(format!("mode {mode} needs a model")))?;
    if model.config.variant.is_autoregressive() != want_ar {
        return Err(Error::Config(format!("mode {mode} cannot run a {} model", model.config.variant)));
    }
    Ok(model)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times every sentence in every mode: one untimed warm-up run, then the
/// median of `reps` timed runs. Runs on the calling thread.
pub fn bench_decode(
    ar: Option<BenchModel<'_>>,
    nar: Option<BenchModel<'_>>,
    sources: &[Vec<usize>],
    cfg: &BenchConfig,
) -> Result<Vec<TimingRecord>> {
    if cfg.reps < MIN_REPS {
        return Err(Error::Config(format!("reps must be at least {MIN_REPS}")));
    }
    cfg.beam.validate()?;
    let models = cfg
        .modes
        .iter()
        .map(|&m| model_for(m, ar, nar).map(|model| (m, model)))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(sources.len() * models.len());
    for (id, src) in sources.iter().enumerate() {
        for &(mode, model) in &models {
            let search = mode.search(&cfg.beam);
            let run = || translate(model.config, model.params, src, &search, cfg.limit);
            let out = run()?;
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let start = Instant::now();
                std::hint::black_box(run()?);
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            records.push(TimingRecord {
                sentence_id: id,
                src_len: src.len(),
                out_len: out.ids.len(),
                mode,
                ms: median(&mut times),
                reps: cfg.reps,
            });
        }
    }
    Ok(records)
}

pub fn write_csv<W: Write>(records: &[TimingRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Corpus(format!("writing timings: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.sentence_id.to_string(),
            r.src_len.to_string(),
            r.out_len.to_string(),
            r.mode.to_string(),
            format!("{:.4}", r.ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Corpus(format!("writing timings: {e}")))
}

/// Mean per-sentence milliseconds per mode.
pub fn mean_ms(records: &[TimingRecord]) -> BTreeMap<Mode, f64> {
    let mut acc: BTreeMap<Mode, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.mode).or_default();
        e.0 += r.ms;
        e.1 += 1;
    }
    acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
}

pub fn summary(records: &[TimingRecord]) -> String {
    let means = mean_ms(records);
    let mut out = String::new();
    for (mode, ms) in &means {
        out.push_str(&format!("mean_ms[{mode}]={ms:.3}\n"));
    }
    for (ar, nar) in [(Mode::ArGreedy, Mode::NarGreedy), (Mode::ArBeam, Mode::NarBeam)] {
        if let (Some(a), Some(n)) = (means.get(&ar), means.get(&nar)) {
            out.push_str(&format!("ratio[{ar}/{nar}]={:.3}\n", a / n));
        }
    }
    out
}
