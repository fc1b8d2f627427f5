use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use ttrnn::checkpoint::load_cell;
use ttrnn::evalbench::{eer, read_scores};
use ttrnn::experiment::{train_run, RunConfig};
use ttrnn::features::{write_wav_pcm16, AudioBuffer};
use ttrnn::rng::{normal_tensor, seeded};
use ttrnn::tensor::{load_tten, save_tten};
use ttrnn::tt::tt_svd;
use ttrnn::{Tensor, Truncation, TtMatrix};

fn ttrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttrnn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = ttrnn(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(args: &[&str]) -> i32 {
    ttrnn(args).status.code().expect("exit code")
}

fn json(args: &[&str]) -> Value {
    let mut full = args.to_vec();
    full.extend(["--format", "json"]);
    serde_json::from_str(&ok(&full)).expect("json report")
}

fn column(report: &Value, name: &str) -> usize {
    report["columns"].as_array().unwrap().iter().position(|c| c == name).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn digits_images() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/digits8x8-images.idx")
}

fn write_config(dir: &Path, name: &str, v: Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn params_examples() {
    let out = ok(&["params", "--hidden", "512", "--input", "4096", "--output", "256"]);
    assert!(out.contains("9,570,560"), "{out}");
    let out = ok(&["params", "--hidden", "256", "--input", "1", "--output", "10"]);
    assert!(out.contains("266,762"), "{out}");

    let r = json(&["params", "--hidden", "1", "--input", "1", "--output", "0", "--no-bias"]);
    let total = column(&r, "total");
    assert_eq!(r["rows"][0][total], 8);
}

#[test]
fn params_rejects_bad_config() {
    assert_eq!(code(&["params", "--cell", "rnn"]), 2);
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.json", serde_json::json!({"hidden": 8, "colour": "red"}));
    assert_eq!(code(&["params", "--config", p(&cfg)]), 2);
}

#[test]
fn decompose_rank_one_matrix_is_exact() {
    let dir = TempDir::new().unwrap();
    let m = Tensor::from_fn(&[12, 8], |ix| (ix[0] as f64 + 1.0) * (0.5 - ix[1] as f64));
    let input = dir.path().join("m.tten");
    save_tten(&m, &input).unwrap();
    let out = dir.path().join("tt");
    let r = json(&["decompose", "--input", p(&input), "--rows", "3,4", "--cols", "2,4", "--out", p(&out)]);
    let err = r["rows"][0][column(&r, "rel_error")].as_f64().unwrap();
    assert!(err < 1e-10, "{err}");
    let tt = TtMatrix::load(&out).unwrap();
    assert!(tt.to_dense().relative_error(&m).unwrap() < 1e-10);
}

#[test]
fn decompose_matches_library_truncation() {
    let dir = TempDir::new().unwrap();
    let m = normal_tensor(&mut seeded(3), &[16, 16], 1.0);
    let input = dir.path().join("m.tten");
    save_tten(&m, &input).unwrap();
    let out = dir.path().join("tt");
    let r = json(&[
        "decompose",
        "--input",
        p(&input),
        "--rows",
        "4,4",
        "--cols",
        "4,4",
        "--ranks",
        "1,2,1",
        "--out",
        p(&out),
    ]);
    let printed = r["rows"][0][column(&r, "rel_error")].as_f64().unwrap();

    let lib = tt_svd(&m, &[4, 4], &[4, 4], &Truncation::Ranks(vec![2])).unwrap();
    let expected = lib.to_dense().relative_error(&m).unwrap();
    assert!((printed - expected).abs() <= 1e-12, "{printed} vs {expected}");
    assert_eq!(TtMatrix::load(&out).unwrap(), lib);
}

#[test]
fn decompose_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&["decompose", "--input", p(&dir.path().join("missing.tten"))]), 3);

    let cube = dir.path().join("cube.tten");
    save_tten(&Tensor::zeros(&[2, 2, 2]), &cube).unwrap();
    assert_eq!(code(&["decompose", "--input", p(&cube)]), 2);

    let m = dir.path().join("m.tten");
    save_tten(&Tensor::eye(6), &m).unwrap();
    assert_eq!(code(&["decompose", "--input", p(&m), "--rows", "4,2", "--cols", "2,3"]), 2);
}

fn tiny_digits(mode: &str) -> Value {
    serde_json::json!({
        "task": "mnist-seq",
        "mode": mode,
        "hidden": 16,
        "row_dims": [4, 4],
        "col_dims": [1, 1],
        "ranks": [4],
        "lr": 0.01,
        "batch_size": 64,
        "epochs": 3,
        "data": {"permute": false}
    })
}

fn tiny_speakers() -> Value {
    serde_json::json!({
        "task": "verif-toy",
        "hidden": 8,
        "output": 4,
        "lr": 0.003,
        "epochs": 2,
        "speakers": {"train_speakers": 12, "val_speakers": 6, "test_speakers": 6, "utterances": 4, "frames": 6, "feature_dim": 5}
    })
}

#[test]
fn train_tracks_best_validation_metric() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "dense.json", tiny_digits("dense"));
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--out", p(&run)]);

    let rows =
        ttrnn::autograd::TrainingHistory::read_csv(std::fs::File::open(run.join("history.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let best_epoch = summary["best_epoch"].as_u64().unwrap() as usize;
    let best = summary["best_val_metric"].as_f64().unwrap();

    // accuracy: the running best never decreases and ends at the reported best
    let mut running = f64::NEG_INFINITY;
    let mut arg = 0;
    for r in &rows {
        if r.val_metric > running {
            running = r.val_metric;
            arg = r.epoch;
        }
    }
    assert_eq!(running, best);
    assert_eq!(arg, best_epoch);
}

#[test]
fn fused_checkpoint_loads_back_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let v = tiny_digits("tt-fused");
    let cfg_path = write_config(dir.path(), "fused.json", v.clone());
    let run = dir.path().join("run");
    let out = json(&["train", "--config", p(&cfg_path), "--out", p(&run)]);
    let printed = out["rows"][0][column(&out, "test_metric")].as_f64().unwrap();

    let cfg = RunConfig::from_json(&v.to_string()).unwrap();
    let outcome = train_run(&cfg).unwrap();
    let (cell, head) = outcome.model.to_cell(&outcome.store).unwrap();
    let (loaded, loaded_head) = load_cell(run.join("checkpoint")).unwrap();
    assert_eq!(loaded, cell);
    assert_eq!(loaded_head, head);
    assert_eq!(printed, outcome.test_metric);

    let e = json(&["eval", "--checkpoint", p(&run.join("checkpoint"))]);
    assert_eq!(e["rows"][0][1].as_f64().unwrap(), outcome.test_metric);
}

#[test]
fn eval_rejects_mismatched_input() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "spk.json", tiny_speakers());
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--out", p(&run)]);
    let e = json(&["eval", "--checkpoint", p(&run.join("checkpoint")), "--metric", "eer"]);
    let v = e["rows"][0][1].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));

    let mut other = tiny_speakers();
    other["speakers"]["feature_dim"] = 7.into();
    let other = write_config(dir.path(), "other.json", other);
    assert_eq!(code(&["eval", "--checkpoint", p(&run.join("checkpoint")), "--config", p(&other)]), 2);
    assert_eq!(code(&["eval", "--checkpoint", p(&run.join("checkpoint")), "--metric", "accuracy"]), 2);
}

#[test]
fn eval_scores_matches_library() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("scores.csv");
    let mut text = String::from("label,score\n");
    let mut rng = seeded(11);
    let noise = normal_tensor(&mut rng, &[60], 1.0);
    for (i, n) in noise.data().iter().enumerate() {
        let label = if i % 3 == 0 { "neg" } else { "pos" };
        let shift = if label == "pos" { 1.0 } else { 0.0 };
        text.push_str(&format!("{label},{}\n", n + shift));
    }
    std::fs::write(&path, text).unwrap();
    let expected = eer(&read_scores(std::fs::File::open(&path).unwrap()).unwrap()).unwrap();

    let out = dir.path().join("report");
    let r = json(&["eval", "--scores", p(&path), "--metric", "eer", "--out", p(&out)]);
    assert_eq!(r["rows"][0][1].as_f64().unwrap(), expected);
    assert!(out.join("eval.json").exists() && out.join("eval.csv").exists());
    assert_eq!(code(&["eval", "--scores", p(&dir.path().join("nope.csv"))]), 3);
    assert_eq!(code(&["eval"]), 2);
}

#[test]
fn bench_smoke_and_formats_agree() {
    let dir = TempDir::new().unwrap();
    let args = ["bench", "--reps", "1", "--hidden", "16", "--input", "16", "--output", "8", "--ranks", "2,3"];
    let mut with_out = args.to_vec();
    let out = dir.path().join("b");
    with_out.extend(["--out", p(&out)]);
    ok(&with_out);

    let from_json = ttrnn::evalbench::parse_report(
        &std::fs::read_to_string(out.join("bench.json")).unwrap(),
        ttrnn::evalbench::Format::Json,
    )
    .unwrap();
    let from_csv = ttrnn::evalbench::parse_report(
        &std::fs::read_to_string(out.join("bench.csv")).unwrap(),
        ttrnn::evalbench::Format::Csv,
    )
    .unwrap();
    assert_eq!(from_json, from_csv);
    assert_eq!(from_json.columns, ["model", "rank", "params", "train_step_s", "eval_step_s"]);
    assert_eq!(from_json.rows.len(), 3);
}

#[test]
fn bench_table_dense_row() {
    // one dense row at table scale is cheap with a single repetition
    let r = json(&["bench", "--reps", "1", "--hidden", "512", "--input", "4096", "--output", "256", "--ranks", "2"]);
    let params = column(&r, "params");
    assert_eq!(r["rows"][0][params], 9_570_560);
}

fn one_second_wav(dir: &Path) -> PathBuf {
    let samples: Vec<f64> =
        (0..8000).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 8000.0).sin()).collect();
    let path = dir.join("tone.wav");
    std::fs::write(&path, write_wav_pcm16(&AudioBuffer::new(samples, 8000).unwrap())).unwrap();
    path
}

#[test]
fn featurize_wav_defaults() {
    let dir = TempDir::new().unwrap();
    let wav = one_second_wav(dir.path());
    let out = dir.path().join("f");
    ok(&["featurize", "--input", p(&wav), "--out", p(&out)]);
    assert_eq!(load_tten(out.join("tone.tten")).unwrap().shape(), &[98, 40]);

    let out13 = dir.path().join("m");
    ok(&["featurize", "--input", p(&wav), "--mfcc", "13", "--out", p(&out13)]);
    assert_eq!(load_tten(out13.join("tone.tten")).unwrap().shape(), &[98, 13]);
}

#[test]
fn featurize_idx_permutation_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let idx = digits_images();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    ok(&["featurize", "--input", p(&idx), "--permute", "--seed", "7", "--out", p(&a)]);
    ok(&["featurize", "--input", p(&idx), "--permute", "--seed", "7", "--out", p(&b)]);
    ok(&["featurize", "--input", p(&idx), "--permute", "--seed", "8", "--out", p(&c)]);
    let read = |d: &Path| std::fs::read(d.join("digits8x8-images.tten")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn featurize_rejects_unsupported_input() {
    let dir = TempDir::new().unwrap();
    let mut bytes = std::fs::read(one_second_wav(dir.path())).unwrap();
    // audio format 3 (float) instead of PCM
    bytes[20] = 3;
    let bad = dir.path().join("float.wav");
    std::fs::write(&bad, bytes).unwrap();
    assert_eq!(code(&["featurize", "--input", p(&bad), "--out", p(dir.path())]), 3);

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a feature source").unwrap();
    assert_eq!(code(&["featurize", "--input", p(&junk), "--out", p(dir.path())]), 3);
}

#[test]
fn gradcheck_default_passes() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("tt_lstm_step"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn gradcheck_coarse_step_fails_with_exit_five() {
    let o = ttrnn(&["gradcheck", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(5));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gradient check failed"), "{err}");
}

#[test]
fn gradcheck_single_filter() {
    let r = json(&["gradcheck", "--only", "tt_matvec"]);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "tt_matvec");
    assert_eq!(code(&["gradcheck", "--only", "no_such_check"]), 2);
}

#[test]
fn same_seed_same_output() {
    let a = ok(&["gradcheck", "--only", "ge2e", "--seed", "5"]);
    let b = ok(&["gradcheck", "--only", "ge2e", "--seed", "5"]);
    assert_eq!(a, b);
}
