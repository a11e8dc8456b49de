//! Throughput telemetry on synthetic batches.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::rng;
use crate::model::{loss_and_gradients, model_forward, ForwardCtx, ModelConfig, ModelParams, SequenceBatch};

pub const BENCH_HEADER: &str = "mode,d,n_layers,batch,seq_len,fwd_tok_per_s,fwdbwd_tok_per_s,param_count";

const DATA_STREAM: u64 = 0xBE4C;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub config: ModelConfig,
    pub batch: usize,
    pub seq_len: usize,
    pub n_batches: usize,
    pub fwd_tok_per_s: f64,
    pub fwdbwd_tok_per_s: f64,
    /// Median forward+backward seconds per batch.
    pub fwdbwd_median_s: f64,
    pub param_count: usize,
    /// Process resident-set high-water mark in bytes, when the platform
    /// exposes it.
    pub peak_rss_bytes: Option<u64>,
}

impl BenchReport {
    pub fn fingerprint(&self) -> String {
        format!(
            "{}-d{}-l{}-v{}-b{}-n{}",
            self.config.combine_mode, self.config.d, self.config.n_layers, self.config.vocab_size, self.batch, self.seq_len
        )
    }

    /// Seconds for one pass over `n_examples` at the measured training rate.
    pub fn seconds_per_epoch(&self, n_examples: usize) -> f64 {
        n_examples.div_ceil(self.batch) as f64 * self.fwdbwd_median_s
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.1},{:.1},{}",
            self.config.combine_mode,
            self.config.d,
            self.config.n_layers,
            self.batch,
            self.seq_len,
            self.fwd_tok_per_s,
            self.fwdbwd_tok_per_s,
            self.param_count
        )
    }
}

/// Appends a row to `path`, writing the header first if the file is new.
pub fn append_bench_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{BENCH_HEADER}\n"),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.push_str(&report.csv_row());
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Full-length random sequences, fixed by `config.seed`.
pub fn synthetic_batch(config: &ModelConfig, batch: usize, seq_len: usize) -> SequenceBatch {
    let mut r = rng::stream(config.seed, &[DATA_STREAM, batch as u64, seq_len as u64]);
    let rows: Vec<(Vec<u32>, usize)> = (0..batch)
        .map(|_| {
            let ids = (0..seq_len).map(|_| r.gen_range(2..config.vocab_size as u32)).collect();
            (ids, r.gen_range(0..config.n_classes))
        })
        .collect();
    SequenceBatch::from_sequences(rows.iter().map(|(ids, l)| (ids.as_slice(), *l)))
}

/// Times `n_batches` forward passes and `n_batches` forward+backward passes
/// after one warm-up of each, and reports median-based throughput.
pub fn bench_layer(config: &ModelConfig, n_batches: usize, batch_size: usize, seq_len: usize) -> Result<BenchReport> {
    config.validate()?;
    if n_batches == 0 || batch_size == 0 || seq_len == 0 {
        return Err(Error::InvalidArgument("n_batches, batch_size and seq_len must be positive".into()));
    }
    if seq_len > config.max_len {
        return Err(Error::config("seq_len", format!("exceeds max_len {}", config.max_len)));
    }
    let params = ModelParams::init(config)?;
    let batch = synthetic_batch(config, batch_size, seq_len);
    let train_ctx = ForwardCtx::training(config.seed, 0);
    let infer_ctx = ForwardCtx::inference();

    model_forward(&batch, &params, config, &infer_ctx)?;
    loss_and_gradients(&batch, &params, config, &train_ctx)?;

    let mut fwd = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let t = Instant::now();
        model_forward(&batch, &params, config, &infer_ctx)?;
        fwd.push(t.elapsed().as_secs_f64());
    }
    let mut both = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let t = Instant::now();
        loss_and_gradients(&batch, &params, config, &train_ctx)?;
        both.push(t.elapsed().as_secs_f64());
    }
    let tokens = (batch_size * seq_len) as f64;
    let (fwd_s, both_s) = (median(fwd), median(both));
    Ok(BenchReport {
        config: config.clone(),
        batch: batch_size,
        seq_len,
        n_batches,
        fwd_tok_per_s: tokens / fwd_s.max(f64::MIN_POSITIVE),
        fwdbwd_tok_per_s: tokens / both_s.max(f64::MIN_POSITIVE),
        fwdbwd_median_s: both_s,
        param_count: params.count(),
        peak_rss_bytes: peak_rss_bytes(),
    })
}

/// One side of a paired comparison.
#[derive(Clone, Debug)]
pub struct BenchCase {
    pub config: ModelConfig,
    pub batch: usize,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedComparison {
    /// Median forward+backward tokens/second of each side.
    pub a_tok_per_s: f64,
    pub b_tok_per_s: f64,
    /// Median over rounds of `b / a` throughput, each round timing `a` and
    /// `b` back to back so slow drift in machine speed cancels.
    pub ratio: f64,
}

struct Prepared<'a> {
    case: &'a BenchCase,
    params: ModelParams,
    batch: SequenceBatch,
    ctx: ForwardCtx,
}

impl<'a> Prepared<'a> {
    /// Validates the case and runs one warm-up pass.
    fn new(case: &'a BenchCase) -> Result<Self> {
        case.config.validate()?;
        if case.batch == 0 || case.seq_len == 0 || case.seq_len > case.config.max_len {
            return Err(Error::InvalidArgument(format!("bad bench shape {}x{}", case.batch, case.seq_len)));
        }
        let p = Self {
            case,
            params: ModelParams::init(&case.config)?,
            batch: synthetic_batch(&case.config, case.batch, case.seq_len),
            ctx: ForwardCtx::training(case.config.seed, 0),
        };
        p.time()?;
        Ok(p)
    }

    /// Forward+backward tokens/second of one pass.
    fn time(&self) -> Result<f64> {
        let t = Instant::now();
        loss_and_gradients(&self.batch, &self.params, &self.case.config, &self.ctx)?;
        let tokens = (self.case.batch * self.case.seq_len) as f64;
        Ok(tokens / t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE))
    }
}

/// Alternates timed forward+backward passes of `a` and `b` for `rounds`
/// rounds, after one warm-up of each.
pub fn compare_throughput(a: &BenchCase, b: &BenchCase, rounds: usize) -> Result<PairedComparison> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be positive".into()));
    }
    let (pa, pb) = (Prepared::new(a)?, Prepared::new(b)?);
    let (mut ta, mut tb, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..rounds {
        let ra = pa.time()?;
        let rb = pb.time()?;
        ta.push(ra);
        tb.push(rb);
        ratios.push(rb / ra);
    }
    Ok(PairedComparison {
        a_tok_per_s: median(ta),
        b_tok_per_s: median(tb),
        ratio: median(ratios),
    })
}
