use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use isoface::data::{eval_sequences, Dataset, Split};
use isoface::metrics::{write_scores_csv, ScoreRecord};
use isoface::model::load_checkpoint;
use isoface::train::{train, RunConfig};
use isoface::Label;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"{
  "data": {"natural": 10, "manipulated": 10, "frames": 16, "height": 16, "width": 16},
  "model": {"height": 16, "width": 16, "frames": 4, "backbone": [8, 16]},
  "epochs": 2,
  "eval_stride": 3
}"#;

fn isoface(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoface")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn small_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

fn small_config() -> RunConfig {
    RunConfig::from_json(SMALL).unwrap()
}

fn write_csv(path: &Path, records: &[ScoreRecord]) {
    write_scores_csv(fs::File::create(path).unwrap(), records).unwrap();
}

fn eval_report(dir: &Path, records: &[ScoreRecord]) -> Value {
    write_csv(&dir.join("s.csv"), records);
    ok_json(&isoface(&["eval", "s.csv", "--out", "rep"], dir))
}

#[test]
fn gen_data_default_config_gives_balanced_three_way_corpus() {
    let dir = TempDir::new().unwrap();
    let v = ok_json(&isoface(&["gen-data", "--out", "data"], dir.path()));
    assert_eq!(v["videos"], 200);
    assert_eq!(v["natural"], 100);
    assert_eq!(v["manipulated"], 100);
    let splits = v["splits"].as_object().unwrap();
    assert_eq!(splits.len(), 3);
    for s in splits.values() {
        assert!(s["natural"].as_u64().unwrap() > 0 && s["manipulated"].as_u64().unwrap() > 0);
    }
    assert!(dir.path().join("data/manifest.json").exists());
}

#[test]
fn gen_data_is_deterministic_and_reports_the_energy_gap() {
    let dir = small_dir();
    let p = dir.path();
    let a = ok_json(&isoface(&["gen-data", "--config", "small.json", "--seed", "3", "--out", "a"], p));
    let b = ok_json(&isoface(&["gen-data", "--config", "small.json", "--seed", "3", "--out", "b"], p));
    let c = ok_json(&isoface(&["gen-data", "--config", "small.json", "--seed", "4", "--out", "c"], p));
    assert_eq!(a["manifest_sha256"], b["manifest_sha256"]);
    assert_ne!(a["manifest_sha256"], c["manifest_sha256"]);

    let gap = isoface::data::energy_gap(&small_config().data, 3, 16).unwrap();
    assert_eq!(a["energy_gap"]["natural"].as_f64().unwrap(), gap.natural);
    assert_eq!(a["energy_gap"]["manipulated"].as_f64().unwrap(), gap.manipulated);
    assert_eq!(a["energy_gap"]["gap"].as_f64().unwrap(), gap.gap());
    assert!(gap.gap() > 0.0);
}

#[test]
fn train_with_zero_epochs_emits_the_initialized_checkpoint() {
    let dir = small_dir();
    let p = dir.path();
    fs::write(p.join("zero.json"), SMALL.replace("\"epochs\": 2", "\"epochs\": 0")).unwrap();
    ok_json(&isoface(&["gen-data", "--config", "zero.json", "--out", "data"], p));
    let v = ok_json(&isoface(&["train", "--config", "zero.json", "--data", "data", "--out", "run"], p));
    assert_eq!(v["epochs"], 0);
    assert!(v["best_epoch"].is_null());
    assert_eq!(fs::read_to_string(p.join("run/train_log.jsonl")).unwrap(), "");

    let cfg = RunConfig { epochs: 0, ..small_config() };
    let expected = train(&cfg, &Dataset::load(&p.join("data")).unwrap()).unwrap().checkpoint;
    let got = load_checkpoint::<f64>(&p.join("run/checkpoint.isof")).unwrap();
    assert_eq!(got.model, expected.model);
    assert_eq!(got.hypersphere, expected.hypersphere);
}

#[test]
fn training_twice_gives_identical_logs_and_checkpoints() {
    let dir = small_dir();
    let p = dir.path();
    ok_json(&isoface(&["gen-data", "--config", "small.json", "--out", "data"], p));
    for run in ["r1", "r2"] {
        ok_json(&isoface(&["train", "--config", "small.json", "--data", "data", "--out", run], p));
    }
    let log = fs::read_to_string(p.join("r1/train_log.jsonl")).unwrap();
    assert_eq!(log, fs::read_to_string(p.join("r2/train_log.jsonl")).unwrap());
    assert_eq!(fs::read(p.join("r1/checkpoint.isof")).unwrap(), fs::read(p.join("r2/checkpoint.isof")).unwrap());
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i);
        for key in ["train_loss", "valid_loss", "valid_auc", "lr"] {
            assert!(l[key].is_f64(), "{key} missing");
        }
    }
}

#[test]
fn scoring_covers_every_window_and_is_byte_stable() {
    let dir = small_dir();
    let p = dir.path();
    ok_json(&isoface(&["gen-data", "--config", "small.json", "--out", "data"], p));
    ok_json(&isoface(&["train", "--config", "small.json", "--data", "data", "--out", "run"], p));
    let args = ["score", "--checkpoint", "run/checkpoint.isof", "--data", "data", "--split", "test", "--stride", "3"];
    let v = ok_json(&isoface(&[&args[..], &["--out", "s1.csv"]].concat(), p));
    ok_json(&isoface(&[&args[..], &["--out", "s2.csv"]].concat(), p));
    assert_eq!(fs::read(p.join("s1.csv")).unwrap(), fs::read(p.join("s2.csv")).unwrap());
    assert_eq!(fs::read(p.join("s1.windows.csv")).unwrap(), fs::read(p.join("s2.windows.csv")).unwrap());

    let ds = Dataset::load(&p.join("data")).unwrap();
    let expected: usize = ds
        .manifest
        .indices(Split::Test)
        .iter()
        .map(|&i| eval_sequences(ds.video(i), "v", Label::Natural, 4, 3).unwrap().len())
        .sum();
    assert_eq!(v["records"], expected);
    let rows = fs::read_to_string(p.join("s1.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, expected);
    let windows = fs::read_to_string(p.join("s1.windows.csv")).unwrap();
    assert!(windows.starts_with("video_id,sequence_index,first_frame,last_frame,stride,score,label"));
    assert_eq!(windows.lines().count() - 1, expected);
}

#[test]
fn natural_only_split_scores_carry_natural_labels() {
    let dir = small_dir();
    let p = dir.path();
    fs::write(p.join("nat.json"), SMALL.replace("\"manipulated\": 10", "\"manipulated\": 0")).unwrap();
    ok_json(&isoface(&["gen-data", "--config", "small.json", "--out", "data"], p));
    ok_json(&isoface(&["gen-data", "--config", "nat.json", "--out", "natural"], p));
    ok_json(&isoface(&["train", "--config", "small.json", "--data", "data", "--out", "run"], p));
    let args = ["score", "--checkpoint", "run/checkpoint.isof", "--data", "natural", "--split", "train", "--out", "n.csv"];
    let v = ok_json(&isoface(&args, p));
    assert!(v["records"].as_u64().unwrap() > 0);
    let text = fs::read_to_string(p.join("n.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn eval_perfect_separation_gives_unit_metrics() {
    let dir = TempDir::new().unwrap();
    let records: Vec<ScoreRecord> = (0..20)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Natural } else { Label::Manipulated };
            let score = if label == Label::Natural { 0.1 + 0.01 * i as f64 } else { 5.0 + 0.01 * i as f64 };
            ScoreRecord::new(format!("v{}", i / 4), i % 4, score, label)
        })
        .collect();
    // Video ids mix labels above; give each video a single label instead.
    let records: Vec<ScoreRecord> = records
        .into_iter()
        .map(|r| ScoreRecord::new(format!("{}-{:?}", r.video_id, r.label), r.sequence_index, r.score, r.label))
        .collect();
    let v = eval_report(dir.path(), &records);
    for level in ["sequence", "video"] {
        let block = &v[level];
        assert_eq!(block["auc"], 1.0);
        let m = &block["at_far"]["0.1"];
        assert_eq!((m["pauc"].as_f64(), m["tauc"].as_f64(), m["tar"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));
        for r in ["0.1", "0.5", "0.9"] {
            assert_eq!(block["log_wp"][r]["log_wp"], 0.0);
        }
    }
    for f in ["roc_sequence.svg", "roc_video.svg", "histogram_sequence.svg", "histogram_sequence.csv", "report.json"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
}

#[test]
fn eval_six_score_fixture_reports_eight_ninths() {
    let dir = TempDir::new().unwrap();
    let mut records: Vec<ScoreRecord> =
        [0.1, 0.2, 0.3].iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("n{i}"), 0, s, Label::Natural)).collect();
    records.extend([0.25, 0.8, 0.9].iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("m{i}"), 0, s, Label::Manipulated)));
    let v = eval_report(dir.path(), &records);
    assert_eq!(v["sequence"]["auc"].as_f64().unwrap(), 8.0 / 9.0);
    assert!((v["video"]["auc"].as_f64().unwrap() - 0.8889).abs() < 1e-4);
}

#[test]
fn eval_shuffled_labels_give_chance_auc() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut labels: Vec<Label> = (0..10_000).map(|i| if i < 5_000 { Label::Natural } else { Label::Manipulated }).collect();
    labels.shuffle(&mut rng);
    let records: Vec<ScoreRecord> =
        labels.iter().enumerate().map(|(i, &l)| ScoreRecord::new(format!("v{i:05}"), 0, rng.gen::<f64>(), l)).collect();
    let v = eval_report(dir.path(), &records);
    assert!((v["sequence"]["auc"].as_f64().unwrap() - 0.5).abs() <= 0.02);
}

#[test]
fn eval_is_idempotent_and_hashes_its_input() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let records = vec![
        ScoreRecord::new("a", 0, 0.2, Label::Natural),
        ScoreRecord::new("a", 1, 0.4, Label::Natural),
        ScoreRecord::new("b", 0, 0.3, Label::Manipulated),
        ScoreRecord::new("b", 1, 0.9, Label::Manipulated),
    ];
    write_csv(&p.join("s.csv"), &records);
    ok_json(&isoface(&["eval", "s.csv", "--out", "r1", "--cutoff", "0.1", "--cutoff", "0.5", "--recall", "0.5"], p));
    ok_json(&isoface(&["eval", "s.csv", "--out", "r2", "--cutoff", "0.1", "--cutoff", "0.5", "--recall", "0.5"], p));
    let a = fs::read_to_string(p.join("r1/report.json")).unwrap();
    let b = fs::read_to_string(p.join("r2/report.json")).unwrap().replace("r2", "r1");
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    use sha2::Digest;
    let digest = hex::encode(sha2::Sha256::digest(fs::read(p.join("s.csv")).unwrap()));
    assert_eq!(v["input"]["sha256"], digest);
    assert_eq!(v["sequence"]["at_far"].as_object().unwrap().len(), 2);
    assert_eq!(v["video"]["count"], 2);
}

#[test]
fn exit_codes_distinguish_config_data_and_check_failures() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("unknown.json"), r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    fs::write(p.join("broken.json"), "{").unwrap();
    fs::write(p.join("one_class.csv"), "video_id,sequence_index,score,label\na,0,0.5,0\nb,0,0.7,0\n").unwrap();
    fs::write(p.join("bad.csv"), "video,score\na,0.5\n").unwrap();
    let code = |args: &[&str]| isoface(args, p).status.code();
    assert_eq!(code(&["train", "--config", "unknown.json"]), Some(2));
    assert_eq!(code(&["gen-data", "--config", "broken.json"]), Some(2));
    assert_eq!(code(&["gen-data", "--config", "missing.json"]), Some(2));
    assert_eq!(code(&["train", "--data", "nowhere", "--out", "run"]), Some(3));
    assert_eq!(code(&["eval", "one_class.csv", "--out", "r"]), Some(3));
    assert_eq!(code(&["eval", "bad.csv", "--out", "r"]), Some(3));
    assert_eq!(code(&["eval", "bad.csv", "--out", "r", "--recall", "1.5"]), Some(2));
    assert_eq!(code(&["grad-check", "--cases", "1", "--inject-fault", "lstm-cell"]), Some(4));
    assert_eq!(code(&["frobnicate"]), Some(2));
}

#[test]
fn grad_check_default_config_passes() {
    let dir = TempDir::new().unwrap();
    let out = isoface(&["grad-check", "--out", "gc.json"], dir.path());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{table}");
    for name in ["conv", "grouped-pointwise", "global-avg-pool", "avg-pool2", "dropout-off", "lstm-cell", "bi-lstm", "deep-log", "end-to-end"] {
        assert!(table.lines().any(|l| l.starts_with(name) && l.ends_with("pass")), "{name}\n{table}");
    }
    let v: Value = serde_json::from_slice(&fs::read(dir.path().join("gc.json")).unwrap()).unwrap();
    assert!(v["results"].as_array().unwrap().iter().all(|r| r["max_rel_error"].as_f64().unwrap() <= 1e-4));
}
