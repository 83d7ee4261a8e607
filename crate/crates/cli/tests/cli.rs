use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_capforge");

fn capforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const POOL: &str = r#"
[[pool]]
model_id = "minigpt4"
protocol = "mock"
preset = "minigpt4"

[[pool]]
model_id = "otter"
protocol = "mock"
preset = "otter"

[[pool]]
model_id = "qwen-vl"
protocol = "mock"
preset = "qwen-vl"

[[pool]]
model_id = "llava-1.5"
protocol = "mock"
preset = "llava-1.5"
"#;

/// A 12-image fixture plus `run.toml` with a mock pool of four.
fn setup(n: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    capforge::fixture::write_fixture(&root.join("data"), n, 1).unwrap();
    let cfg = format!(
        "input = \"data/annotations.jsonl\"\noutput = \"out\"\nshards = 3\nworkers = 2\nseed = 7\n{POOL}"
    );
    fs::write(root.join("run.toml"), cfg).unwrap();
    (dir, root)
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn enhance_writes_one_raw_and_four_generated_per_image() {
    let (_d, root) = setup(12);
    let out = capforge(&root, &["enhance", "-c", "run.toml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let entries = lines(&root.join("out/enhanced.jsonl"));
    assert_eq!(entries.len(), 12);
    for e in &entries {
        assert!(e["caption"].as_str().is_some_and(|c| !c.is_empty()));
        assert_eq!(e["generated"].as_array().unwrap().len(), 4);
    }
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(root.join("out/enhanced.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entry_count"], 12);
    assert!(root.join("out/report.json").is_file());
}

#[test]
fn config_errors_exit_two_without_writing() {
    let (_d, root) = setup(3);
    let cfg = fs::read_to_string(root.join("run.toml")).unwrap().replace("annotations", "nope");
    fs::write(root.join("bad.toml"), cfg).unwrap();
    let out = capforge(&root, &["enhance", "-c", "bad.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.jsonl"));
    assert!(!root.join("out").exists());

    let out = capforge(&root, &["enhance", "-c", "run.toml", "--max-tokens", "0"]);
    assert_eq!(code(&out), 2);
    assert!(!root.join("out").exists());

    fs::write(root.join("typo.toml"), "input = \"data/annotations.jsonl\"\noutptu = \"x\"\n").unwrap();
    assert_eq!(code(&capforge(&root, &["enhance", "-c", "typo.toml"])), 2);
    assert_eq!(code(&capforge(&root, &["enhance", "-c", "missing.toml"])), 2);
    assert_eq!(code(&capforge(&root, &["enhance", "--no-such-flag"])), 2);
    assert_eq!(code(&capforge(&root, &["stats", "--dataset", "x", "--out", "y"])), 2);
}

#[test]
fn strict_mode_fails_on_itemized_slot_errors() {
    let (_d, root) = setup(3);
    let cfg = format!(
        "input = \"data/annotations.jsonl\"\noutput = \"out\"\ndrop_policy = \"keep\"\n{POOL}\n\
         [[pool]]\nmodel_id = \"broken\"\nprotocol = \"mock\"\nmock = {{ fault = {{ status = 500 }} }}\n\
         retry = {{ max_attempts = 1 }}\n"
    );
    fs::write(root.join("run.toml"), cfg).unwrap();
    let lenient = capforge(&root, &["enhance", "-c", "run.toml"]);
    assert_eq!(code(&lenient), 0, "{}", stderr(&lenient));
    assert_eq!(stderr(&lenient).matches("broken: http_status").count(), 3);
    let strict = capforge(&root, &["enhance", "-c", "run.toml", "--output", "out2", "--strict"]);
    assert_eq!(code(&strict), 1);
    // the dataset is still complete; only the exit status differs
    assert_eq!(lines(&root.join("out2/enhanced.jsonl")).len(), 3);
}

#[test]
fn resume_with_changed_policy_is_refused() {
    let (_d, root) = setup(4);
    assert_eq!(code(&capforge(&root, &["enhance", "-c", "run.toml"])), 0);
    let again = capforge(&root, &["enhance", "-c", "run.toml", "--resume"]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    let changed = capforge(&root, &["enhance", "-c", "run.toml", "--resume", "--max-tokens", "9"]);
    assert_eq!(code(&changed), 2, "{}", stderr(&changed));
}

#[test]
fn plan_lists_balanced_shards() {
    let (_d, root) = setup(10);
    let out = capforge(&root, &["plan", "-c", "run.toml", "--shards", "3"]);
    assert_eq!(code(&out), 0);
    let plan: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sizes: Vec<u64> = plan["shards"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["lines"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes, [4, 3, 3]);
    assert!(!root.join("out").exists());
}

#[test]
fn stats_outputs_match_their_oracles() {
    let (_d, root) = setup(12);
    assert_eq!(code(&capforge(&root, &["enhance", "-c", "run.toml"])), 0);
    let out = capforge(
        &root,
        &[
            "stats", "--dataset", "out/enhanced.jsonl", "--out", "st", "--lengths", "--wordfreq", "--top", "50",
            "--similarity", "--provider", "hasher", "--export-embeddings",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stats: Value = serde_json::from_str(&fs::read_to_string(root.join("st/stats.json")).unwrap()).unwrap();

    let entries = lines(&root.join("out/enhanced.jsonl"));
    let raw_mean = entries
        .iter()
        .map(|e| e["caption"].as_str().unwrap().split_whitespace().count() as f64)
        .sum::<f64>()
        / entries.len() as f64;
    let sources = stats["lengths"]["sources"].as_array().unwrap();
    assert_eq!(sources.len(), 5);
    assert!((sources[0]["mean_tokens"].as_f64().unwrap() - raw_mean).abs() < 1e-12);

    for src in ["raw", "minigpt4", "otter", "qwen-vl", "llava-1.5"] {
        let csv = fs::read_to_string(root.join(format!("st/wordfreq_{src}.csv"))).unwrap();
        assert!(csv.starts_with("word,count\n"));
        assert!(csv.lines().count() > 1);
    }

    // histogram rebuilt from the exported vectors
    let vectors: std::collections::HashMap<String, Vec<f64>> = lines(&root.join("st/embeddings.jsonl"))
        .into_iter()
        .map(|r| {
            let v = r["vector"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            (r["id"].as_str().unwrap().to_string(), v)
        })
        .collect();
    let mut hist = vec![0u64; 100];
    let mut sum = 0.0;
    let mut n = 0;
    for e in &entries {
        let img = &vectors[e["id"].as_str().unwrap()];
        for g in e["generated"].as_array().unwrap() {
            let txt = &vectors[&format!("{}#{}", e["id"].as_str().unwrap(), g["model_id"].as_str().unwrap())];
            let dot: f64 = img.iter().zip(txt).map(|(a, b)| a * b).sum();
            let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = dot / (norm(img) * norm(txt));
            hist[(((c + 1.0) / 0.02).floor() as usize).min(99)] += 1;
            sum += c;
            n += 1;
        }
    }
    let got: Vec<u64> = stats["similarity"]["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(got, hist);
    assert!((stats["similarity"]["mean"].as_f64().unwrap() - sum / n as f64).abs() < 1e-9);
}

#[test]
fn shear_command_handles_text_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(
        root.join("caps.txt"),
        "A cat sits on a mat. It also wears a hat.\nno terminator here at all\n",
    )
    .unwrap();
    let out = capforge(root, &["shear", "--input", "caps.txt", "--output", "out.txt", "--max-tokens", "8"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(root.join("out.txt")).unwrap(),
        "A cat sits on a mat.\nno terminator here at all\n"
    );
    let out = capforge(
        root,
        &["shear", "--input", "caps.txt", "--output", "r.txt", "--max-tokens", "3", "--fallback", "reject"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(root.join("r.txt")).unwrap(), "");

    capforge::fixture::write_fixture(root, 4, 3).unwrap();
    let out = capforge(root, &["shear", "--input", "annotations.jsonl", "--output", "s.jsonl", "--max-tokens", "2"]);
    assert_eq!(code(&out), 0);
    for e in lines(&root.join("s.jsonl")) {
        assert_eq!(e["caption"].as_str().unwrap().split_whitespace().count(), 2);
        assert!(e["image"].as_str().unwrap().starts_with("images/"));
    }
}

fn small_toy_config(root: &Path) -> PathBuf {
    let p = root.join("toy.toml");
    fs::write(&p, "[corpus]\nn_items = 300\nn_eval = 100\n\n[train]\nepochs = 4\n").unwrap();
    p
}

fn eval_r1(root: &Path, views: &str, seed: u64, cfg: &Path) -> Value {
    let dir = format!("m_{}_{seed}", views.replace(':', "_"));
    let seed = seed.to_string();
    let cfg = cfg.to_str().unwrap();
    let t = capforge(root, &["train-toy", "--config", cfg, "--views", views, "--seed", &seed, "--out", &dir]);
    assert_eq!(code(&t), 0, "{}", stderr(&t));
    let e = capforge(root, &["eval", "--model", &dir]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    serde_json::from_str(&fs::read_to_string(root.join(&dir).join("retrieval.json")).unwrap()).unwrap()
}

#[test]
fn train_then_eval_reports_ordered_recalls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_toy_config(dir.path());
    let report = eval_r1(dir.path(), "raw-only", 0, &cfg);
    for d in ["i2t", "t2i"] {
        let r = &report[d];
        let (r1, r5, r10) = (r["r1"].as_f64().unwrap(), r["r5"].as_f64().unwrap(), r["r10"].as_f64().unwrap());
        assert!(r1 <= r5 && r5 <= r10, "{r}");
        assert_eq!(r["queries"], 100);
    }
    let bad = capforge(dir.path(), &["train-toy", "--views", "multi:9", "--out", "x"]);
    assert_eq!(code(&bad), 2);
    assert_eq!(code(&capforge(dir.path(), &["eval", "--model", "nowhere"])), 2);
    fs::write(dir.path().join("typo.toml"), "[train]\nepochz = 3\n").unwrap();
    let typo = capforge(dir.path(), &["train-toy", "--config", "typo.toml", "--out", "y"]);
    assert_eq!(code(&typo), 2, "{}", stderr(&typo));
    assert!(!dir.path().join("y").exists());
}

#[test]
fn multi_view_beats_raw_only_over_paired_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_toy_config(dir.path());
    let mut wins = 0;
    let (mut raw_sum, mut multi_sum) = (0.0, 0.0);
    for seed in 0..10 {
        let raw = eval_r1(dir.path(), "raw-only", seed, &cfg)["i2t"]["r1"].as_f64().unwrap();
        let multi = eval_r1(dir.path(), "multi:4", seed, &cfg)["i2t"]["r1"].as_f64().unwrap();
        wins += usize::from(multi > raw);
        raw_sum += raw;
        multi_sum += multi;
    }
    assert!(multi_sum > raw_sum, "{multi_sum} vs {raw_sum}");
    // one-sided sign test at 0.05 needs at least 9 of 10
    assert!(wins >= 9, "{wins} wins");
}

#[test]
fn ablate_writes_one_summary_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_toy_config(dir.path());
    let out = capforge(
        dir.path(),
        &["ablate", "--axis", "num-views", "--grid", "1,2,3,4", "--config", cfg.to_str().unwrap(), "--out", "abl"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("abl/ablation_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("num-views,1,1,"));
    let long = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    assert_eq!(long.lines().next().unwrap(), "axis,setting,seed,direction,r1,r5,r10,mdr");
    assert_eq!(long.lines().count(), 1 + 4 * 2);

    let bad = capforge(dir.path(), &["ablate", "--axis", "width", "--grid", "1", "--out", "x"]);
    assert_eq!(code(&bad), 2);
    let bad = capforge(dir.path(), &["ablate", "--axis", "epochs", "--grid", "1", "--seeds", "5-2", "--out", "x"]);
    assert_eq!(code(&bad), 2);
}
