//! The `wavenet` command line.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;

pub use config::RunConfig;

use crate::bench::{append_bench_csv, bench_layer};
use crate::data::{encode_all, load_csv, Vocab};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::math::rng;
use crate::train::{
    append_metrics, evaluate_checkpoint, prepare_from_paths, train_run, write_metrics, Checkpoint, MetricsRecord,
    Phase, Split,
};
use crate::verify::{run_suite, Fault, Suite, VerifyOptions};
use crate::wave::{global_semantics, phase_matrix, to_complex, EmbeddingMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

pub const MODEL_FILE: &str = "model.wvnt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Parser, Debug)]
#[command(name = "wavenet", version, about = "Wave network text classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on <data>/train.csv, score on <data>/test.csv, write artifacts to --out.
    Train(Common),
    /// Evaluate a checkpoint on a CSV file or on <data>/test.csv.
    Eval(Common),
    /// Run the seeded self-check suites.
    Verify(Common),
    /// Show the complex representation built for a piece of text.
    Inspect(Common),
    /// Time forward and forward+backward passes on synthetic batches.
    Bench(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key = value config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    combine_mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
    #[arg(long, hide = true)]
    instances: Option<String>,
}

impl Common {
    fn overrides(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        let pairs = [
            ("data", &self.data),
            ("out", &self.out),
            ("checkpoint", &self.checkpoint),
            ("combine_mode", &self.combine_mode),
            ("seed", &self.seed),
            ("suite", &self.suite),
            ("text", &self.text),
            ("eval_every", &self.eval_every),
            ("instances", &self.instances),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                doc.set(k, v);
            }
        }
        doc
    }

    fn run_config(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

/// Exit code for an error, per the documented table.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Data(_) | Error::LabelOutOfRange { .. } | Error::Io { .. } => EXIT_DATA,
        Error::Integrity(_) | Error::Version { .. } | Error::Mismatch(_) => EXIT_MISMATCH,
        Error::Shape { .. } | Error::NonFinite(_) => EXIT_VERIFY_FAIL,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c, out, err),
        Command::Eval(c) => cmd_eval(c, out),
        Command::Verify(c) => cmd_verify(c, out),
        Command::Inspect(c) => cmd_inspect(c, out),
        Command::Bench(c) => cmd_bench(c, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn cmd_train(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let rc = c.run_config()?;
    let out_dir = rc
        .path("out")
        .ok_or_else(|| Error::config("out", "no output directory given (use --out)"))?;
    let (train_path, test_path) = rc.data_files()?;

    let data = prepare_from_paths(&train_path, &test_path, &rc.schema, &rc.train, rc.model.max_len)?;
    let _ = writeln!(
        err,
        "data: {} train, {} val, {} test, {} rows skipped; vocab {} tokens; val UNK rate {:.2}%",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.skipped_rows,
        data.vocab.len(),
        100.0 * data.val_stats.unk_rate()
    );
    let empty = data.train_stats.empty + data.val_stats.empty + data.test_stats.empty;
    if empty > 0 {
        let _ = writeln!(err, "warning: {empty} texts were empty after tokenization and encoded as a single UNK");
    }

    let outcome = train_run(&rc.model, &rc.train, &data, VOCAB_FILE)?;
    for r in &outcome.metrics {
        if r.phase == Phase::Epoch {
            let _ = writeln!(
                err,
                "epoch {} {}: loss {:.4} accuracy {:.4} ({:.1}s)",
                r.index, r.split, r.loss, r.accuracy, r.seconds
            );
        }
    }

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    data.vocab.save(&out_dir.join(VOCAB_FILE))?;
    outcome.best.save(&out_dir.join(MODEL_FILE))?;
    write_metrics(&out_dir.join(METRICS_FILE), &outcome.metrics)?;

    writeln!(out, "parameters: {}", outcome.best.params.count()).map_err(io_out)?;
    writeln!(out, "best epoch: {} (val accuracy {:.4})", outcome.best_epoch, outcome.best_val_accuracy).map_err(io_out)?;
    if let Some(t) = &outcome.test {
        writeln!(out, "test accuracy: {:.4} (loss {:.4})", t.accuracy, t.loss).map_err(io_out)?;
    }
    if outcome.skipped_steps > 0 {
        let _ = writeln!(err, "warning: {} optimizer steps skipped for non-finite gradients", outcome.skipped_steps);
    }
    Ok(EXIT_OK)
}

fn checkpoint_and_vocab(rc: &RunConfig) -> Result<(PathBuf, Checkpoint, Vocab)> {
    let ck_path = rc
        .path("checkpoint")
        .ok_or_else(|| Error::config("checkpoint", "no checkpoint given (use --checkpoint)"))?;
    if !ck_path.is_file() {
        return Err(Error::Data(format!("checkpoint {} does not exist", ck_path.display())));
    }
    let ck = Checkpoint::load(&ck_path)?;
    let vocab_path = rc.path("vocab").unwrap_or_else(|| sibling(&ck_path, &ck.vocab_ref));
    let vocab = Vocab::load(&vocab_path)?;
    Ok((ck_path, ck, vocab))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn cmd_eval(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let rc = c.run_config()?;
    let (ck_path, ck, vocab) = checkpoint_and_vocab(&rc)?;
    let data = rc.path("data").ok_or_else(|| Error::config("data", "no dataset given (use --data)"))?;
    let file = if data.is_dir() {
        data.join(rc.doc.get("test_file").unwrap_or("test.csv"))
    } else {
        data
    };
    if !file.is_file() {
        return Err(Error::Data(format!("dataset file {} does not exist", file.display())));
    }
    if rc.schema.n_classes != ck.config.n_classes {
        return Err(Error::Mismatch(format!(
            "checkpoint has {} classes, dataset schema `{}` has {}",
            ck.config.n_classes, rc.schema.name, rc.schema.n_classes
        )));
    }
    let loaded = load_csv(&file, &rc.schema)?;
    let (examples, _) = encode_all(&loaded.examples, &vocab, ck.config.max_len);
    let ev = evaluate_checkpoint(&ck, &vocab, &examples)?;
    writeln!(
        out,
        "loss {} accuracy {} ({}/{})",
        ev.loss, ev.accuracy, ev.correct, ev.total
    )
    .map_err(io_out)?;
    let metrics = rc.path("metrics").unwrap_or_else(|| sibling(&ck_path, METRICS_FILE));
    append_metrics(
        &metrics,
        &[MetricsRecord {
            phase: Phase::Batch,
            index: ck.rng_step as usize,
            split: Split::Test,
            loss: ev.loss,
            accuracy: ev.accuracy,
            seconds: 0.0,
        }],
    )?;
    Ok(EXIT_OK)
}

fn cmd_verify(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let rc = c.run_config()?;
    let suite = rc.doc.get("suite").map(str::parse::<Suite>).transpose()?.unwrap_or(Suite::All);
    let fault = c.inject_fault.as_deref().map(str::parse::<Fault>).transpose()?;
    let opts = VerifyOptions {
        seed: rc.train.seed,
        instances: rc.parse_or("instances", VerifyOptions::default().instances)?,
        fault,
    };
    writeln!(out, "verify suite {suite} seed {}", opts.seed).map_err(io_out)?;
    let results = run_suite(suite, &opts)?;
    let mut ok = true;
    for r in &results {
        writeln!(out, "{r}").map_err(io_out)?;
        ok &= r.passed;
    }
    writeln!(out, "{}", if ok { "all checks passed" } else { "verification FAILED" }).map_err(io_out)?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY_FAIL })
}

fn summary(xs: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
        sum += x;
        n += 1;
    }
    (lo, sum / n.max(1) as f64, hi)
}

fn cmd_inspect(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let rc = c.run_config()?;
    let text = rc
        .doc
        .get("text")
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| Error::config("text", "give a non-empty --text"))?
        .to_string();
    let (ids, tokens, e) = if rc.doc.contains("checkpoint") {
        let (_, ck, vocab) = checkpoint_and_vocab(&rc)?;
        let enc = vocab.encode(&text, ck.config.max_len);
        let d = ck.config.d;
        let table = ck.params.embedding.data();
        let rows: Vec<f64> = enc.ids.iter().flat_map(|&i| table[i as usize * d..][..d].iter().copied()).collect();
        let tokens: Vec<String> = enc.ids.iter().map(|&i| vocab.token(i).unwrap_or("?").to_string()).collect();
        (enc.ids, tokens, EmbeddingMatrix::new(enc.length, d, rows)?)
    } else {
        let vocab = Vocab::build([text.as_str()], 1, usize::MAX)?;
        let enc = vocab.encode(&text, rc.model.max_len);
        let d = rc.model.d;
        let mut r = rng::stream(rc.model.seed, &[0x1A5E]);
        let table: Vec<f64> = (0..vocab.len() * d).map(|_| r.sample(StandardNormal)).collect();
        let rows: Vec<f64> = enc.ids.iter().flat_map(|&i| table[i as usize * d..][..d].iter().copied()).collect();
        let tokens: Vec<String> = enc.ids.iter().map(|&i| vocab.token(i).unwrap_or("?").to_string()).collect();
        (enc.ids, tokens, EmbeddingMatrix::new(enc.length, d, rows)?)
    };
    let (n, d) = (e.rows(), e.cols());
    let mask = vec![true; n];
    let g = global_semantics(&e, &mask)?;
    let alpha = phase_matrix(&e, &g, &mask)?;
    let z = to_complex(&e, &g, &mask)?;
    let show = d.min(8);

    writeln!(out, "tokens: {n}  d: {d}").map_err(io_out)?;
    for (j, (t, id)) in tokens.iter().zip(&ids).enumerate() {
        writeln!(out, "  [{j}] {t:?} id {id}").map_err(io_out)?;
    }
    let (lo, mean, hi) = summary(g.0.iter().copied());
    writeln!(out, "G: min {lo:.6} mean {mean:.6} max {hi:.6}").map_err(io_out)?;
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    writeln!(out, "G[..{show}]: {}", fmt(&g.0[..show])).map_err(io_out)?;
    for j in 0..n {
        let row = &alpha.data[j * d..][..d];
        let (lo, mean, hi) = summary(row.iter().copied());
        writeln!(out, "token {j} phase: min {lo:.6} mean {mean:.6} max {hi:.6}").map_err(io_out)?;
        let zs: Vec<String> = (0..show)
            .map(|k| {
                let (re, im) = z.get(j, k);
                format!("{re:.6}{im:+.6}i")
            })
            .collect();
        writeln!(out, "token {j} Z[..{show}]: {}", zs.join(" ")).map_err(io_out)?;
        let mags: Vec<f64> = (0..show).map(|k| z.re[j * d + k].hypot(z.im[j * d + k])).collect();
        writeln!(out, "token {j} |Z|[..{show}]: {}", fmt(&mags)).map_err(io_out)?;
    }
    Ok(EXIT_OK)
}

fn cmd_bench(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let rc = c.run_config()?;
    let batch = rc.train.batch_size;
    let seq_len: usize = rc.parse_or("seq_len", rc.model.max_len)?;
    let n_batches: usize = rc.parse_or("n_batches", 5)?;
    let report = bench_layer(&rc.model, n_batches, batch, seq_len)?;
    writeln!(out, "{}", crate::bench::BENCH_HEADER).map_err(io_out)?;
    writeln!(out, "{}", report.csv_row()).map_err(io_out)?;
    if let Some(rss) = report.peak_rss_bytes {
        writeln!(out, "# peak resident memory {:.1} MiB", rss as f64 / (1024.0 * 1024.0)).map_err(io_out)?;
    }
    if let Some(path) = rc.path("out") {
        append_bench_csv(&path, &report)?;
    }
    Ok(EXIT_OK)
}
