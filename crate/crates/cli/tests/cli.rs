use std::path::Path;
use std::process::{Command, Output};

use eventgc_core::generators::uniform_sequences;
use eventgc_core::npp::{BasisFamily, ModelConfig, NppModel};
use eventgc_core::seqdata::load_matrix_csv;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SUBCOMMANDS: [&str; 7] = ["generate", "train", "attribute", "evaluate", "bench", "axioms", "pipeline"];

fn eventgc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eventgc")).current_dir(dir).args(args).output().expect("spawn eventgc")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = eventgc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn help_lists_every_default() {
    let dir = tempfile::tempdir().unwrap();
    for sub in SUBCOMMANDS {
        let out = eventgc(dir.path(), &[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        // an option line, then its description up to the next option
        let mut blocks: Vec<String> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim_start();
            if trimmed.starts_with("--") || trimmed.starts_with("-h,") {
                blocks.push(trimmed.to_string());
            } else if let Some(last) = blocks.last_mut() {
                last.push(' ');
                last.push_str(trimmed);
            }
        }
        assert!(blocks.len() > 4, "{sub}: {text}");
        for b in blocks.iter().filter(|b| !b.starts_with("-h,")) {
            assert!(b.contains("[default:"), "{sub}: no default in '{b}'");
        }
    }
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(dir.path(), &["generate", "--process", "synergy", "--num-sequences", "5", "--seed", "3", "--out", out]);
    }
    for f in ["dataset.jsonl", "ground_truth.csv", "generator.json", "config.resolved.json"] {
        let a = read(dir.path().join("a").join(f));
        let b = read(dir.path().join("b").join(f));
        if f == "config.resolved.json" {
            let norm = |v: &[u8]| String::from_utf8_lossy(v).replace("\"out\": \"a\"", "\"out\": \"b\"");
            assert_eq!(norm(&a), norm(&b));
        } else {
            assert_eq!(a, b, "{f}");
        }
    }
    ok(dir.path(), &["generate", "--process", "synergy", "--num-sequences", "5", "--seed", "4", "--out", "c"]);
    assert_ne!(read(dir.path().join("a/dataset.jsonl")), read(dir.path().join("c/dataset.jsonl")));
}

#[test]
fn flag_beats_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 9, "generate": {"process": "inhibition", "num_sequences": 2, "out": "g"}}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    ok(dir.path(), &["generate", "--config", "c.json", "--process", "excitation"]);
    let resolved: serde_json::Value = serde_json::from_slice(&read(dir.path().join("g/config.resolved.json"))).unwrap();
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["process"], "excitation");
    assert_eq!(resolved["num_sequences"], 2);
    assert_eq!(resolved["scale"], "desk");
    let lines = String::from_utf8(read(dir.path().join("g/dataset.jsonl"))).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("unknown.json"), r#"{"generate": {"colour": 1}}"#).unwrap();
    std::fs::write(p.join("section.json"), r#"{"frobnicate": {}}"#).unwrap();
    std::fs::write(p.join("broken.json"), "{ not json").unwrap();
    let code = |args: &[&str]| eventgc(p, args).status.code();
    assert_eq!(code(&["generate", "--config", "unknown.json"]), Some(2));
    assert_eq!(code(&["generate", "--config", "section.json"]), Some(2));
    assert_eq!(code(&["generate", "--config", "broken.json"]), Some(2));
    assert_eq!(code(&["generate", "--process", "sideways"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["train", "--data", "nothing.jsonl"]), Some(1));
    assert_eq!(code(&["attribute", "--model", "no.ckpt", "--data", "no.jsonl"]), Some(1));
    ok(p, &["generate", "--num-sequences", "4", "--out", "d"]);
    assert_eq!(code(&["train", "--data", "d/dataset.jsonl", "--lr", "-1", "--out", "m"]), Some(2));
    assert_eq!(code(&["train", "--data", "d/dataset.jsonl", "--epochs", "1", "--batch-size", "0", "--out", "m"]), Some(2));
    assert_eq!(code(&["axioms", "--method", "shapley", "--max-dim", "30"]), Some(2));
    assert_eq!(code(&["evaluate", "--estimate", "d/ground_truth.csv", "--truth", "d/ground_truth.csv", "--model", "x"]), Some(2));
}

/// S=8 sequences of length at most 20 over K=3 types and a random model.
fn fixture(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lengths: Vec<usize> = (0..8).map(|i| 1 + (i * 7) % 20).collect();
    uniform_sequences(3, &lengths, &mut rng).unwrap().save_jsonl(dir.join("fixture.jsonl")).unwrap();
    let cfg = ModelConfig { num_types: 3, embed_dim: 6, hidden: 8 };
    let model = NppModel::init(cfg, BasisFamily::new(4, 3.0).unwrap(), &mut rng).unwrap();
    model.save(dir.join("fixture.ckpt")).unwrap();
}

#[test]
fn attribute_agrees_with_naive() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fixture(p);
    let common = ["attribute", "--model", "fixture.ckpt", "--data", "fixture.jsonl", "--batch-size", "3"];
    ok(p, &[&common[..], &["--out", "fast/Y.csv"]].concat());
    ok(p, &[&common[..], &["--out", "slow/Y.csv", "--naive"]].concat());
    let fast = load_matrix_csv(p.join("fast/Y.csv")).unwrap();
    let slow = load_matrix_csv(p.join("slow/Y.csv")).unwrap();
    let worst = fast.iter().flatten().zip(slow.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "max |dY| = {worst}");
    let meta: serde_json::Value = serde_json::from_slice(&read(p.join("fast/Y.json"))).unwrap();
    assert_eq!(meta["calls"], 9);
    ok(p, &[&common[..], &["--out", "again/Y.csv"]].concat());
    assert_eq!(read(p.join("fast/Y.csv")), read(p.join("again/Y.csv")));
    assert_eq!(read(p.join("fast/Y.json")), read(p.join("again/Y.json")));
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fixture(p);
    ok(p, &["generate", "--num-sequences", "6", "--out", "d"]);
    ok(p, &["evaluate", "--estimate", "d/ground_truth.csv", "--truth", "d/ground_truth.csv", "--out", "e/report.json"]);
    let r: serde_json::Value = serde_json::from_slice(&read(p.join("e/report.json"))).unwrap();
    assert_eq!(r["auc"], 1.0);
    assert_eq!(r["kendall_tau"], 1.0);
    assert!(r["holdout_nll_per_event"].is_null());
    ok(p, &[
        "evaluate", "--estimate", "d/ground_truth.csv", "--truth", "d/ground_truth.csv", "--data", "d/dataset.jsonl",
        "--fit-data", "d/dataset.jsonl", "--generator", "d/generator.json", "--out", "f/report.json",
    ]);
    let r: serde_json::Value = serde_json::from_slice(&read(p.join("f/report.json"))).unwrap();
    assert!(r["poisson_nll_per_event"].as_f64().unwrap() > r["truth_nll_per_event"].as_f64().unwrap());
}

#[test]
fn axioms_linear_family_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["axioms", "--tol", "1e-8", "--families", "linear", "--cases", "40", "--out", "ax.json"]);
    let r: serde_json::Value = serde_json::from_slice(&read(dir.path().join("ax.json"))).unwrap();
    assert_eq!(r["violations"].as_array().unwrap().len(), 0);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["violations"] == 0));
}

#[test]
fn bench_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["bench", "--lengths", "4,8", "--batch-sizes", "1,2", "--repetitions", "1", "--out", "b/bench.csv"]);
    let text = String::from_utf8(read(dir.path().join("b/bench.csv"))).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("length,batch_size"));
    let row: Vec<&str> = lines[4].split(',').collect();
    assert_eq!((row[0], row[1], row[5], row[6]), ("8", "2", "80", "5"));
}

#[test]
fn small_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "pipeline", "--process", "inhibition", "--seed", "7", "--num-sequences", "10", "--epochs", "2", "--embed-dim", "4",
        "--hidden", "4", "--ig-steps", "4", "--axiom-cases", "6", "--bench-lengths", "4", "--bench-batch-sizes", "1",
    ];
    ok(dir.path(), &[&args[..], &["--out", "r1"]].concat());
    ok(dir.path(), &[&args[..], &["--out", "r2"]].concat());
    for f in ["dataset.jsonl", "ground_truth.csv", "model.ckpt", "Y.csv", "Y.json", "history.json", "axioms.json", "split.json"] {
        assert_eq!(read(dir.path().join("r1").join(f)), read(dir.path().join("r2").join(f)), "{f}");
    }
    let r: serde_json::Value = serde_json::from_slice(&read(dir.path().join("r1/report.json"))).unwrap();
    assert_eq!(r["orientation"], "negated");
    for key in ["auc", "holdout_nll_per_event", "poisson_nll_per_event", "truth_nll_per_event"] {
        assert!(r[key].is_number(), "{key}");
    }
    assert!(dir.path().join("r1/bench.csv").exists());
}
