use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::metrics::{MetricsRecord, Phase, Split};
use crate::data::{
    batch_iter, encode_all, load_csv, train_val_split, DatasetSchema, EncodeStats, EncodedExample, Example, Vocab,
};
use crate::error::{Error, Result};
use crate::math::rng;
use crate::model::{loss_and_gradients, model_forward, ForwardCtx, ModelConfig, ModelParams};

const EPOCH_STREAM: u64 = 0xE90C;
const SUBSET_STREAM: u64 = 0x5B5E;
const EVAL_BATCH: usize = 256;

/// Encoded splits plus the vocabulary they were encoded with.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub train_stats: EncodeStats,
    pub val_stats: EncodeStats,
    pub test_stats: EncodeStats,
    /// Rows skipped by the CSV loader across both files.
    pub skipped_rows: usize,
}

/// Optionally draws a seeded `train_subset`, splits `train` 80/20 (per `cfg`), builds the vocabulary on the training
/// part only, and encodes all three splits.
pub fn prepare(train: Vec<Example>, test: Vec<Example>, cfg: &TrainConfig, max_len: usize) -> Result<PreparedData> {
    cfg.validate()?;
    let mut train = train;
    if let Some(n) = cfg.train_subset.filter(|&n| n < train.len()) {
        train.shuffle(&mut rng::stream(cfg.seed, &[SUBSET_STREAM]));
        train.truncate(n);
    }
    let (train, val) = train_val_split(train, cfg.split_ratio, cfg.seed)?;
    let vocab = Vocab::build(train.iter().map(|e| e.text.as_str()), cfg.min_freq, cfg.max_vocab)?;
    let (train, train_stats) = encode_all(&train, &vocab, max_len);
    let (val, val_stats) = encode_all(&val, &vocab, max_len);
    let (test, test_stats) = encode_all(&test, &vocab, max_len);
    Ok(PreparedData {
        vocab,
        train,
        val,
        test,
        train_stats,
        val_stats,
        test_stats,
        skipped_rows: 0,
    })
}

/// Loads `train.csv`-style and `test.csv`-style files and prepares them.
pub fn prepare_from_paths(
    train_path: &Path,
    test_path: &Path,
    schema: &DatasetSchema,
    cfg: &TrainConfig,
    max_len: usize,
) -> Result<PreparedData> {
    let train = load_csv(train_path, schema)?;
    let test = load_csv(test_path, schema)?;
    if train.examples.len() < 2 {
        return Err(Error::Data(format!("{} holds fewer than two usable rows", train_path.display())));
    }
    let mut data = prepare(train.examples, test.examples, cfg, max_len)?;
    data.skipped_rows = train.skipped + test.skipped;
    Ok(data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Dropout off; loss is the example-weighted mean cross-entropy.
pub fn evaluate(params: &ModelParams, config: &ModelConfig, examples: &[EncodedExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let c = config.n_classes;
    if let Some(ex) = examples.iter().find(|e| e.label >= c) {
        return Err(Error::Mismatch(format!("label {} does not fit a {c}-class model", ex.label)));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    let mut loss_sum = 0.0;
    let ctx = ForwardCtx::inference();
    for batch in batch_iter(examples, EVAL_BATCH, false, 0)? {
        let out = model_forward(&batch, params, config, &ctx)?;
        loss_sum += out.loss * batch.batch as f64;
        for (&y, p) in batch.labels.iter().zip(out.predictions()) {
            confusion[y][p] += 1;
        }
    }
    let correct = (0..c).map(|k| confusion[k][k]).sum();
    let total = examples.len();
    Ok(Evaluation {
        loss: loss_sum / total as f64,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        confusion,
    })
}

/// Evaluates a checkpoint against data encoded with `vocab`.
pub fn evaluate_checkpoint(ck: &Checkpoint, vocab: &Vocab, examples: &[EncodedExample]) -> Result<Evaluation> {
    if vocab.fingerprint() != ck.vocab_fingerprint || vocab.len() != ck.config.vocab_size {
        return Err(Error::Mismatch(format!(
            "vocabulary ({} tokens, fingerprint {:016x}) does not match the checkpoint ({} tokens, {:016x})",
            vocab.len(),
            vocab.fingerprint(),
            ck.config.vocab_size,
            ck.vocab_fingerprint
        )));
    }
    evaluate(&ck.params, &ck.config, examples)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRecord>,
    /// Parameters with the best validation accuracy (lower loss breaks
    /// ties), at storage precision.
    pub best: Checkpoint,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub test: Option<Evaluation>,
    pub steps: u64,
    pub skipped_steps: u64,
}

/// Trains on `data.train`, keeps the best-validation parameters, then
/// scores them on `data.test` (when non-empty). `model` supplies
/// everything but `vocab_size`, which comes from the data.
pub fn train_run(model: &ModelConfig, cfg: &TrainConfig, data: &PreparedData, vocab_ref: &str) -> Result<RunOutcome> {
    cfg.validate()?;
    let config = ModelConfig {
        vocab_size: data.vocab.len(),
        ..model.clone()
    };
    config.validate()?;
    for (split, set) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        if let Some(ex) = set.iter().find(|e| e.label >= config.n_classes) {
            return Err(Error::Config {
                key: "n_classes".into(),
                reason: format!(
                    "{split} data has label {} but the model has {} classes",
                    ex.label, config.n_classes
                ),
            });
        }
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }

    let mut params = ModelParams::init(&config)?;
    let mut adam = AdamState::new(&params.tensors());
    let mut metrics = Vec::new();
    let mut steps: u64 = 0;

    let snapshot = |p: &ModelParams| {
        let mut p = p.clone();
        p.round_to_f32();
        p
    };
    let mut best = snapshot(&params);
    let t0 = Instant::now();
    let mut best_eval = evaluate(&best, &config, &data.val)?;
    let mut best_epoch = 0;
    if cfg.epochs == 0 {
        metrics.push(record(Phase::Epoch, 0, Split::Val, &best_eval, t0));
    }

    'epochs: for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let seed = rng::derive_seed(cfg.seed, &[EPOCH_STREAM, epoch as u64]);
        let mut stop = false;
        for batch in batch_iter(&data.train, cfg.batch_size, true, seed)? {
            let ctx = ForwardCtx::training(cfg.seed, steps);
            let (out, grads) = loss_and_gradients(&batch, &params, &config, &ctx)?;
            adam_step(&mut params.tensors_mut(), &grads, &mut adam, cfg)?;
            steps += 1;
            loss_sum += out.loss * batch.batch as f64;
            correct += out.predictions().iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            seen += batch.batch;

            if let Some(k) = cfg.eval_every {
                if steps % k as u64 == 0 && !data.test.is_empty() {
                    let t = Instant::now();
                    let ev = evaluate(&params, &config, &data.test)?;
                    metrics.push(record(Phase::Batch, steps as usize, Split::Test, &ev, t));
                }
            }
            if cfg.max_steps.is_some_and(|m| steps >= m as u64) {
                stop = true;
                break;
            }
        }
        metrics.push(MetricsRecord {
            phase: Phase::Epoch,
            index: epoch,
            split: Split::Train,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        let candidate = snapshot(&params);
        let t = Instant::now();
        let ev = evaluate(&candidate, &config, &data.val)?;
        metrics.push(record(Phase::Epoch, epoch, Split::Val, &ev, t));
        let better = ev.accuracy > best_eval.accuracy || (ev.accuracy == best_eval.accuracy && ev.loss < best_eval.loss);
        if better || best_epoch == 0 {
            best = candidate;
            best_eval = ev;
            best_epoch = epoch;
        }
        if stop {
            break 'epochs;
        }
    }

    let test = if data.test.is_empty() {
        None
    } else {
        let t = Instant::now();
        let ev = evaluate(&best, &config, &data.test)?;
        metrics.push(record(Phase::Epoch, best_epoch, Split::Test, &ev, t));
        Some(ev)
    };
    Ok(RunOutcome {
        metrics,
        best: Checkpoint {
            config,
            params: best,
            vocab_ref: vocab_ref.to_string(),
            vocab_fingerprint: data.vocab.fingerprint(),
            rng_seed: cfg.seed,
            rng_step: steps,
        },
        best_val_accuracy: best_eval.accuracy,
        best_epoch,
        test,
        steps,
        skipped_steps: adam.skipped,
    })
}

fn record(phase: Phase, index: usize, split: Split, ev: &Evaluation, start: Instant) -> MetricsRecord {
    MetricsRecord {
        phase,
        index,
        split,
        loss: ev.loss,
        accuracy: ev.accuracy,
        seconds: start.elapsed().as_secs_f64(),
    }
}
