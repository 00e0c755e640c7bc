use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irsad::io::{load_gate, load_unfolded, read_batch};
use irsad::scenario::ScenarioConfig;

fn irsad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irsad")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = irsad(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = ScenarioConfig { antennas: 2, irs_elements: 8, devices: 6, signature_len: 4, ..ScenarioConfig::desk_scale() };
    let path = dir.join("tiny.toml");
    fs::write(&path, cfg.to_toml_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs `args` with `--threads 1` and `--threads 3`, writing to `out`, and returns both outputs.
fn twice(dir: &Path, name: &str, args: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let mut got = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.join(format!("{name}-{threads}"));
        let mut full = args.to_vec();
        full.extend(["--threads", threads, "--out", s(&out)]);
        ok(&full);
        got.push(fs::read(&out).unwrap());
    }
    let b = got.pop().unwrap();
    (got.pop().unwrap(), b)
}

#[test]
fn csv_commands_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let base = ["--config", s(&cfg), "--seed", "5", "--deterministic", "--detector", "cd", "--detector", "pgd:expert2"];

    let mut eval = vec!["eval", "--trials", "12"];
    eval.extend(base);
    let (a, b) = twice(dir.path(), "roc", &eval);
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("detector,threshold,pf,pm,trials\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 50);

    let mut sweep = vec!["sweep-mix", "--trials", "8", "--fractions", "0,0.4,0.8"];
    sweep.extend(base);
    let (a, b) = twice(dir.path(), "sweep", &sweep);
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("detector,k1_fraction,eer,threshold\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);

    let mut bench = vec!["bench", "--trials", "6", "--fractions", "0.2"];
    bench.extend(base);
    let (a, b) = twice(dir.path(), "bench", &bench);
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("detector,k1_fraction,mean_ms,p95_ms\n"));

    let (a, b) = twice(dir.path(), "frames", &["simulate", "--config", s(&cfg), "--seed", "5", "--trials", "7", "--deterministic"]);
    assert_eq!(a, b);
    let batch = read_batch(&dir.path().join("frames-1")).unwrap();
    assert_eq!(batch.frames.len(), 7);
    assert_eq!(batch.truth.unwrap().len(), 7);
}

#[test]
fn training_commands_are_reproducible_and_feed_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let mut gates = Vec::new();
    for threads in ["1", "3"] {
        let ckpt = d.join(format!("gate-{threads}.ckpt"));
        let trace = d.join(format!("gate-{threads}.csv"));
        ok(&[
            "train-gate", "--config", s(&cfg), "--seed", "2", "--samples", "40", "--epochs", "2",
            "--threads", threads, "--checkpoint", s(&ckpt), "--trace", s(&trace),
        ]);
        gates.push((fs::read(&ckpt).unwrap(), fs::read(&trace).unwrap()));
    }
    assert_eq!(gates[0], gates[1]);
    let gate = d.join("gate-1.ckpt");
    assert_eq!(load_gate(&gate).unwrap().1.input_len, 2 * 4 * 2);

    let mut nets = Vec::new();
    for threads in ["1", "3"] {
        let ckpt = d.join(format!("moe-{threads}.ckpt"));
        ok(&[
            "train-unfold", "--config", s(&cfg), "--seed", "3", "--detector", "unfold:moe", "--gate", s(&gate),
            "--depth", "2", "--samples", "30", "--epochs", "1", "--threads", threads, "--checkpoint", s(&ckpt),
        ]);
        nets.push(fs::read(&ckpt).unwrap());
    }
    assert_eq!(nets[0], nets[1]);
    let net = d.join("moe-1.ckpt");
    let (params, header) = load_unfolded(&net).unwrap();
    assert_eq!((params.depth(), header.detector.as_str()), (2, "unfold:moe"));

    let args = [
        "eval", "--config", s(&cfg), "--seed", "4", "--trials", "10", "--detector", "unfold:moe",
        "--detector", "unfold:expert1", "--checkpoint", s(&net), "--gate", s(&gate),
    ];
    let (a, b) = twice(d, "learned-roc", &args);
    assert_eq!(a, b);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let code = |args: &[&str]| irsad(args).status.code().unwrap();

    assert_eq!(code(&["eval", "--config", s(&cfg), "--detector", "lasso"]), 2);
    assert_eq!(code(&["eval", "--config", s(&cfg), "--detector", "cd", "--trials", "0"]), 2);
    assert_eq!(code(&["sweep-mix", "--config", s(&cfg), "--detector", "cd", "--fractions", "0.9"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "antennas = \"eight\"\n").unwrap();
    assert_eq!(code(&["eval", "--config", s(&bad), "--detector", "cd"]), 2);

    assert_eq!(code(&["eval", "--config", s(&cfg), "--detector", "unfold:expert1", "--trials", "2"]), 4);
    assert_eq!(code(&["eval", "--config", s(&cfg), "--detector", "unfold:moe", "--trials", "2"]), 4);
    let missing = dir.path().join("none.ckpt");
    assert_eq!(code(&["eval", "--config", s(&cfg), "--detector", "unfold:perfect", "--checkpoint", s(&missing)]), 4);

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&["eval", "--config", s(&cfg), "--detector", "unfold:perfect", "--checkpoint", s(&junk)]), 2);

    assert_eq!(code(&["--help"]), 0);
}
