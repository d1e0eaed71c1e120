use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bestrq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bestrq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("BESTRQ_OUT")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_SYNTH: &str = "count = 12\nseed = 4\n";

const TINY_ENCODER: &str = r#"
num_layers = 1
d_model = 16
num_heads = 2
ffn_dim = 32
input_dim = 80
vocab_size = 16
seed = 1
context_mode = { kind = "full" }
"#;

fn tiny_pretrain_config() -> String {
    format!(
        "[pretrain]\nbatch_size = 2\nsteps = 3\n[pretrain.quantizer]\ncodebook_size = 16\n[pretrain.encoder]{TINY_ENCODER}\n[corpus]\ncount = 8\nseed = 1\n"
    )
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("synth.toml");
    fs::write(&cfg, TINY_SYNTH).unwrap();
    let corpus = dir.join("corpus");
    let out = bestrq(&["synth", "--config", path(&cfg), "--out", path(&corpus)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    corpus
}

#[test]
fn synth_writes_corpus_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    assert!(corpus.join("transcripts.jsonl").exists());
    let resolved: serde_json::Value =
        serde_json::from_slice(&fs::read(corpus.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["count"], 12);
    assert_eq!(resolved["seed"], 4);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, TINY_SYNTH).unwrap();
    let out_dir = dir.path().join("c");
    let out = bestrq(&["synth", "--config", path(&cfg), "--seed", "9", "--out", path(&out_dir)]);
    assert!(out.status.success());
    let resolved: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 9);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, TINY_SYNTH).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_bestrq"))
        .args(["synth", "--config", path(&cfg)])
        .env("BESTRQ_OUT", dir.path())
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("synth").join("transcripts.jsonl").exists());
}

#[test]
fn latency_self_comparison_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("a.jsonl");
    fs::write(
        &hyp,
        "{\"id\":\"u1\",\"words\":[{\"w\":\"hi\",\"s\":0,\"e\":120},{\"w\":\"there\",\"s\":130,\"e\":300}]}\n",
    )
    .unwrap();
    let out = bestrq(&["latency", "--base", path(&hyp), "--comp", path(&hyp)]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["relative_latency_ms"], 0.0);
    assert_eq!(v["matched_words"], 2);
    assert_eq!(v["utterances"], 1);
}

#[test]
fn error_categories_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bestrq(&["synth", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(bestrq(&["no-such-command"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "count = 3\nunknown_key = 1\n").unwrap();
    let out = bestrq(&["synth", "--config", path(&bad), "--out", path(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));

    let missing = dir.path().join("missing.jsonl");
    let out = bestrq(&["latency", "--base", path(&missing), "--comp", path(&missing)]);
    assert_eq!(out.status.code(), Some(4));

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "not json\n").unwrap();
    let out = bestrq(&["latency", "--base", path(&broken), "--comp", path(&broken)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.jsonl:1"));
}

#[test]
fn stats_quantize_and_codebook_probe() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let out = bestrq(&["stats", "--corpus", path(&corpus), "--out", path(&dir.path().join("stats"))]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["mean"].as_array().unwrap().len(), 20);

    let q_out = dir.path().join("q");
    let out = bestrq(&["quantize", "--corpus", path(&corpus), "--out", path(&q_out), "--seed-only"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let labels = fs::read_to_string(q_out.join("labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 12);

    let out = bestrq(&[
        "probe-codebook",
        "--corpus",
        path(&corpus),
        "--quantizer",
        path(&q_out.join("quantizer.bin")),
        "--out",
        path(&dir.path().join("probe")),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fraction = report["codes_used_fraction"].as_f64().unwrap();
    assert!(fraction > 0.0 && fraction <= 1.0);
}

#[test]
fn pretrain_repeats_byte_identically_and_feeds_finetune() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pre.toml");
    fs::write(&cfg, tiny_pretrain_config()).unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let out = bestrq(&["pretrain", "--config", path(&cfg), "--out", path(&out_dir)]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out_dir
        })
        .collect();
    for file in ["metrics.csv", "final.ckpt", "quantizer.bin", "resolved_config.json"] {
        assert_eq!(
            fs::read(runs[0].join(file)).unwrap(),
            fs::read(runs[1].join(file)).unwrap(),
            "{file} differs"
        );
    }

    let ft_cfg = dir.path().join("ft.json");
    fs::write(
        &ft_cfg,
        r#"{"finetune": {"steps": 2, "batch_size": 2}, "train": {"count": 6, "seed": 2}, "eval": {"count": 3, "seed": 3}}"#,
    )
    .unwrap();
    let out = bestrq(&[
        "finetune",
        "--config",
        path(&ft_cfg),
        "--init",
        path(&runs[0].join("final.ckpt")),
        "--out",
        path(&dir.path().join("ft")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["pretrained"], true);
    assert!(result["ter"].as_f64().unwrap() >= 0.0);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bestrq(&["grad-check", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
}
