mod common;

use std::fs;
use std::path::Path;

use common::*;
use wavenet::train::{parse_metrics, Checkpoint, Phase, Split};

fn train(dir: &Path, extra_cfg: &str, args: &[&str]) -> std::process::Output {
    let data = dir.join("data");
    if !data.exists() {
        write_toy_data(&data, 8);
    }
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, format!("{TOY_CONFIG}{extra_cfg}")).unwrap();
    let mut all = vec!["train", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()];
    all.extend_from_slice(args);
    wavenet(&all)
}

#[test]
fn train_writes_checkpoint_vocab_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train(dir.path(), "", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("parameters:") && text.contains("test accuracy:"), "{text}");

    for f in ["model.wvnt", "vocab.txt", "metrics.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let ck = Checkpoint::load(&out.join("model.wvnt")).unwrap();
    assert_eq!(ck.config.d, 16);
    assert_eq!(ck.vocab_ref, "vocab.txt");
    let metrics = parse_metrics(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    let epochs: Vec<_> = metrics.iter().filter(|r| r.phase == Phase::Epoch).collect();
    assert_eq!(epochs.iter().filter(|r| r.split == Split::Train).count(), 3);
    assert_eq!(epochs.iter().filter(|r| r.split == Split::Val).count(), 3);
    assert!(metrics.iter().any(|r| r.split == Split::Test));
}

#[test]
fn missing_data_exits_3_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("nowhere");
    let o = wavenet(&["train", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train(dir.path(), "lr = -1\n", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`lr`"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = wavenet(&["verify", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wavenet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_after_overfit_is_perfect_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // Validation uses a quarter of the rows; enough epochs to fit the rest.
    let o = train(dir.path(), "epochs = 40\nsplit_ratio = 0.99\ndropout_p = 0\n", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = out.join("model.wvnt");
    let train_csv = dir.path().join("data/train.csv");
    let args = ["eval", "--checkpoint", ck.to_str().unwrap(), "--data", train_csv.to_str().unwrap()];
    let first = wavenet(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("accuracy 1 (32/32)"), "{}", stdout(&first));
    let second = wavenet(&args);
    assert_eq!(stdout(&first), stdout(&second));

    let metrics = parse_metrics(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    let evals: Vec<_> = metrics.iter().filter(|r| r.phase == Phase::Batch && r.split == Split::Test && r.seconds == 0.0).collect();
    assert_eq!(evals.len(), 2);
    assert_eq!(evals[0].accuracy, 1.0);
}

#[test]
fn untrained_checkpoint_scores_chance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train(dir.path(), "epochs = 0\n", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = out.join("model.wvnt");
    let data = dir.path().join("data");
    let o = wavenet(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let acc: f64 = text.split_whitespace().skip_while(|w| *w != "accuracy").nth(1).unwrap().parse().unwrap();
    assert!((acc - 0.25).abs() <= 0.02, "{text}");
    let loss: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12, "{text}");
}

#[test]
fn eval_rejects_class_mismatch_and_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train(dir.path(), "epochs = 0\n", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = out.join("model.wvnt");
    let data = dir.path().join("data");
    let imdb = dir.path().join("imdb.cfg");
    fs::write(&imdb, "dataset = imdb\n").unwrap();
    let o = wavenet(&[
        "eval",
        "--config",
        imdb.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let mut bytes = fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&ck, bytes).unwrap();
    let o = wavenet(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn combine_modes_give_different_metrics_same_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = train(dir.path(), "", &["--out", a.to_str().unwrap(), "--combine-mode", "interference"]);
    let ob = train(dir.path(), "", &["--out", b.to_str().unwrap(), "--combine-mode", "modulation"]);
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    assert_eq!(ob.status.code(), Some(0), "{}", stderr(&ob));
    let strip = |p: &Path| {
        let recs = parse_metrics(&fs::read_to_string(p.join("metrics.csv")).unwrap()).unwrap();
        recs.into_iter().map(|r| r.without_time()).collect::<Vec<_>>()
    };
    assert_ne!(strip(&a), strip(&b));
    let (ca, cb) = (Checkpoint::load(&a.join("model.wvnt")).unwrap(), Checkpoint::load(&b.join("model.wvnt")).unwrap());
    let dims = |c: &Checkpoint| c.params.named().iter().map(|(n, t)| (n.to_string(), t.dims().to_vec())).collect::<Vec<_>>();
    assert_eq!(dims(&ca), dims(&cb));
    assert_ne!(ca.config.combine_mode, cb.config.combine_mode);
}

#[test]
fn same_seed_trains_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(train(dir.path(), "", &["--out", a.to_str().unwrap(), "--seed", "9"]).status.code(), Some(0));
    assert_eq!(train(dir.path(), "", &["--out", b.to_str().unwrap(), "--seed", "9"]).status.code(), Some(0));
    let strip = |p: &Path| {
        let recs = parse_metrics(&fs::read_to_string(p.join("metrics.csv")).unwrap()).unwrap();
        recs.into_iter().map(|r| r.without_time()).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(fs::read(a.join("model.wvnt")).unwrap(), fs::read(b.join("model.wvnt")).unwrap());
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let o = wavenet(&["verify", "--suite", "oracle", "--seed", "7", "--instances", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("all checks passed"));
    let again = wavenet(&["verify", "--suite", "oracle", "--seed", "7", "--instances", "50"]);
    assert_eq!(stdout(&o), stdout(&again));

    let o = wavenet(&["verify", "--suite", "oracle", "--instances", "50", "--inject-fault", "modulate-sign"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"), "{}", stdout(&o));
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace().skip_while(|w| *w != key).nth(1).unwrap().parse().unwrap()
}

#[test]
fn inspect_i_am_alive() {
    let o = wavenet(&["inspect", "--text", "I am alive"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("tokens: 3  d: 768"), "{text}");
    for t in ["\"i\"", "\"am\"", "\"alive\""] {
        assert!(text.contains(t), "{t} missing:\n{text}");
    }
    let g: Vec<f64> = text
        .lines()
        .find(|l| l.starts_with("G[..8]:"))
        .unwrap()
        .split_whitespace()
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    for j in 0..3 {
        let phase = text.lines().find(|l| l.starts_with(&format!("token {j} phase:"))).unwrap();
        assert!(field(phase, "min") >= 0.0 && field(phase, "max") <= std::f64::consts::PI);
        let mags: Vec<f64> = text
            .lines()
            .find(|l| l.starts_with(&format!("token {j} |Z|")))
            .unwrap()
            .split_whitespace()
            .skip(3)
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(mags, g);
    }
}

#[test]
fn inspect_single_token_phases_are_zero_or_pi() {
    let o = wavenet(&["inspect", "--text", "alive", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let phase = text.lines().find(|l| l.starts_with("token 0 phase:")).unwrap();
    let (lo, hi) = (field(phase, "min"), field(phase, "max"));
    assert_eq!(lo, 0.0);
    assert_eq!(format!("{hi:.6}"), format!("{:.6}", std::f64::consts::PI));
}

#[test]
fn inspect_with_checkpoint_uses_trained_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(train(dir.path(), "epochs = 0\n", &["--out", out.to_str().unwrap()]).status.code(), Some(0));
    let ck = out.join("model.wvnt");
    let o = wavenet(&["inspect", "--checkpoint", ck.to_str().unwrap(), "--text", "the goal and zebra"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("tokens: 4  d: 16"), "{text}");
    assert!(text.contains("\"<unk>\" id 1"), "{text}");
}

#[test]
fn bench_appends_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let cfg = dir.path().join("b.cfg");
    fs::write(&cfg, "d = 16\nvocab_size = 200\nmax_len = 8\nbatch_size = 4\nn_batches = 2\n").unwrap();
    for _ in 0..2 {
        let o = wavenet(&["bench", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("modulation,16,1,4,8,"), "{}", stdout(&o));
    }
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.lines().next(), Some(wavenet::bench::BENCH_HEADER));
}
