use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Command, Output};

fn knobtune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knobtune"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = knobtune(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path, prefix: &str, suffix: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(prefix) && n.ends_with(suffix))
        .map(|n| dir.join(n).to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn bad_arguments_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(knobtune(dir.path(), &["sample", "--n", "0"]).status.code(), Some(2));
    assert_eq!(knobtune(dir.path(), &["tune", "--optimizer", "gradient"]).status.code(), Some(2));
    assert_eq!(knobtune(dir.path(), &["select", "--design", "x", "--outcomes", "y", "--coverage", "2"]).status.code(), Some(2));
    assert_eq!(knobtune(dir.path(), &["--env", "external", "tune"]).status.code(), Some(2));
    assert_eq!(knobtune(dir.path(), &["--manifest", "missing.json", "sample"]).status.code(), Some(2));
    // a missing input file is an I/O failure, not a usage error
    assert_eq!(knobtune(dir.path(), &["compare", "a.csv", "b.csv"]).status.code(), Some(1));
}

#[test]
fn sampling_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "a", "--seed", "4", "sample", "--n", "40"]);
    ok(d, &["--out", "b", "--seed", "4", "sample", "--n", "40"]);
    ok(d, &["--out", "c", "--seed", "5", "sample", "--n", "40"]);
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/design.jsonl"), read("b/design.jsonl"));
    assert_eq!(read("a/outcomes.jsonl"), read("b/outcomes.jsonl"));
    assert_ne!(read("a/design.jsonl"), read("c/design.jsonl"));
}

#[test]
fn full_flow_with_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.json"),
        r#"{"out_dir": "out", "sample_count": 80, "steps": 12, "repetitions": 2, "repeats": 3, "seed": 2}"#,
    )
    .unwrap();
    let c = ["--config", "run.json"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let s = run(&["sample"]);
    assert!(s.contains("sampled 80 configurations"), "{s}");
    let s = run(&["select", "--design", "out/design.jsonl", "--outcomes", "out/outcomes.jsonl", "--top", "8"]);
    assert!(s.starts_with("selected 8 parameters"), "{s}");
    for m in ["random", "bo", "rl"] {
        let s = run(&["--manifest", "out/reduced_manifest.json", "tune", "--optimizer", m]);
        assert!(s.contains("evaluations: 26"), "{s}");
    }
    let runs = d.join("out/runs");
    let best = files(&runs, "", ".best.json");
    assert_eq!(best.len(), 6);
    let mut args = vec!["--manifest", "out/reduced_manifest.json", "evaluate-best"];
    args.extend(best.iter().map(String::as_str));
    run(&args);
    let tables = files(&d.join("out"), "measurements-", ".csv");
    assert_eq!(tables.len(), 3);
    let mut args = vec!["compare", "--runs", "out/runs"];
    args.extend(tables.iter().map(String::as_str));
    let s = run(&args);
    for m in ["random", "bo", "rl"] {
        assert!(s.contains(&format!("{m:<7} n=6")), "{s}");
    }
    assert_eq!(s.matches(", p = ").count(), 3, "{s}");

    let comparison: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/comparison.json")).unwrap()).unwrap();
    assert_eq!(comparison["methods"].as_array().unwrap().len(), 3);
    let trace = fs::read_to_string(d.join("out/max_trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "step,random,bo,rl");
    assert_eq!(rows.len(), 1 + 12);
}

#[test]
fn identical_tables_compare_with_p_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let header = "method,run,repeat,valid,throughput,default_throughput,flagged\n";
    let mut a = String::from(header);
    let mut b = String::from(header);
    for (i, v) in [50.0, 52.5, 49.0, 51.0].iter().enumerate() {
        a.push_str(&format!("random,0,{i},true,{v},45,false\n"));
        b.push_str(&format!("bo,0,{i},true,{v},45,false\n"));
    }
    fs::write(d.join("a.csv"), a).unwrap();
    fs::write(d.join("b.csv"), b).unwrap();
    let s = ok(d, &["compare", "a.csv", "b.csv"]);
    assert!(s.contains("t = 0.000, df = 3, p = 1.0000"), "{s}");
}

#[test]
fn unequal_tables_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let header = "method,run,repeat,valid,throughput,default_throughput,flagged\n";
    fs::write(d.join("a.csv"), format!("{header}random,0,0,true,50,45,false\nrandom,0,1,true,51,45,false\n")).unwrap();
    fs::write(d.join("b.csv"), format!("{header}bo,0,0,true,50,45,false\n")).unwrap();
    let out = knobtune(d, &["compare", "a.csv", "b.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unequal"));
}

#[test]
fn validity_table() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(dir.path(), &["validity", "--prfs", "2,100", "--n", "50"]);
    assert!(s.contains("prf      2  rss  all  valid"), "{s}");
    assert!(s.contains("prf    100  rss  all  valid   0.0%"), "{s}");
    assert!(dir.path().join("out/validity.csv").is_file());
}

const MANIFEST: &str = r#"{"prf": 10.0, "parameters": [
  {"name": "threads", "default": 8, "kind": "integer"},
  {"name": "buffer_mb", "default": 64.0, "kind": "continuous"},
  {"name": "ratio", "default": 0.5, "kind": "continuous"}
]}"#;

// deterministic benchmark with an optimum away from the default
const BENCH: &str = r#"#!/usr/bin/env python3
import json, sys
c = json.load(open(sys.argv[1]))
tp = 100 - (c["threads"] - 30) ** 2 / 50 - (c["buffer_mb"] - 200) ** 2 / 2000 - 10 * (c["ratio"] - 2) ** 2
json.dump({"valid": tp > 0, "throughput": tp, "metrics": [c["ratio"]]}, open("result.json", "w"))
"#;

fn write_script(path: &Path, body: &str) -> String {
    fs::write(path, body).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
    path.to_string_lossy().into_owned()
}

fn external_tune(d: &Path, out: &str, command: &str, resume: bool) -> Output {
    let mut args = vec![
        "--manifest", "manifest.json", "--out", out, "--env", "external", "--adapter-command", command,
        "--adapter-timeout", "30", "--seed", "3", "tune", "--optimizer", "bo", "--steps", "20",
        "--repetitions", "1", "--checkpoint-every", "4",
    ];
    if resume {
        args.push("--resume");
    }
    knobtune(d, &args)
}

#[test]
fn resume_after_a_crash_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("manifest.json"), MANIFEST).unwrap();
    let bench = write_script(&d.join("bench.py"), BENCH);
    // same benchmark, but the 15th evaluation kills the tuner mid-run
    let crashing = BENCH.replace(
        "c = json.load",
        "import os, signal\nn = int(open('count').read()) + 1 if os.path.exists('count') else 1\nopen('count', 'w').write(str(n))\nif n == 15: os.kill(os.getppid(), signal.SIGKILL)\nc = json.load",
    );
    let crashing = write_script(&d.join("crashing.py"), &crashing);

    assert!(external_tune(d, "clean", &bench, false).status.success());
    let crashed = external_tune(d, "resumed", &crashing, false);
    assert!(!crashed.status.success());
    let checkpoint = fs::read_to_string(d.join("resumed/runs/bo-0.checkpoint.json")).unwrap();
    assert!(checkpoint.contains("\"bo\""));
    let out = external_tune(d, "resumed", &bench, true);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let read = |p: &str| fs::read_to_string(d.join(p)).unwrap();
    let strip = |s: String| -> Vec<serde_json::Value> {
        s.lines()
            .skip(1)
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect()
    };
    let clean = strip(read("clean/runs/bo-0.jsonl"));
    let resumed = strip(read("resumed/runs/bo-0.jsonl"));
    assert_eq!(clean.len(), 20);
    assert_eq!(clean, resumed);
    let best = |p: &str| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_str(&read(p)).unwrap();
        v.as_object_mut().unwrap().remove("_provenance");
        v
    };
    assert_eq!(best("clean/runs/bo-0.best.json"), best("resumed/runs/bo-0.best.json"));
}

#[test]
fn missing_adapter_binary_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("manifest.json"), MANIFEST).unwrap();
    let out = external_tune(d, "out", "no-such-benchmark", false);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-benchmark"));
}

