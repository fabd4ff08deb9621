use std::fs;
use std::path::{Path, PathBuf};

use knobtune::optimizers::Method;
use knobtune::param_space::load_manifest;
use knobtune::pipeline::{
    cmd_compare, cmd_evaluate_best, cmd_sample, cmd_select, cmd_tune, EnvConfig, RunConfig, SimulatorSettings,
};
use knobtune::Error;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn quiet(out: &Path) -> RunConfig {
    RunConfig {
        out_dir: out.to_path_buf(),
        sample_count: 60,
        steps: 8,
        repetitions: 2,
        repeats: 2,
        checkpoint_every: 3,
        env: EnvConfig::Simulator(SimulatorSettings { noise_cv: 0.0, ..Default::default() }),
        ..Default::default()
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

fn sha(p: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(p).unwrap()))
}

/// Sample, select (top 6) and tune every method; returns the config used
/// for tuning and the best-configuration files.
fn run_all(out: &Path) -> (RunConfig, Vec<PathBuf>) {
    let mut cfg = quiet(out);
    cfg.top = Some(6);
    let s = cmd_sample(&cfg).unwrap();
    let sel = cmd_select(&cfg, &s.design, &s.outcomes).unwrap();
    cfg.manifest = Some(sel.manifest);
    let mut best = Vec::new();
    for m in Method::ALL {
        cfg.optimizer = m;
        best.extend(cmd_tune(&cfg, false).unwrap().runs.into_iter().map(|r| r.best));
    }
    (cfg, best)
}

#[test]
fn evaluation_count_is_repetitions_times_steps_plus_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quiet(dir.path());
    cfg.env = EnvConfig::default();
    for (m, steps, reps) in [(Method::Random, 7, 3), (Method::Bo, 12, 2), (Method::Rl, 5, 4)] {
        cfg.optimizer = m;
        cfg.steps = steps;
        cfg.repetitions = reps;
        let s = cmd_tune(&cfg, false).unwrap();
        assert_eq!(s.total_evaluations(), (reps * (steps + 1)) as u64, "{m}");
        for r in &s.runs {
            assert_eq!(read(&r.log).lines().count(), 1 + steps);
        }
    }
}

#[test]
fn stages_are_reproducible_without_noise() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (cfg_a, best_a) = run_all(a.path());
    let (cfg_b, best_b) = run_all(b.path());
    for name in ["design.jsonl", "outcomes.jsonl", "ranking.json", "reduced_manifest.json"] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)), "{name}");
    }
    for m in Method::ALL {
        for rep in 0..2 {
            for ext in ["jsonl", "best.json", "checkpoint.json"] {
                let f = format!("runs/{m}-{rep}.{ext}");
                assert_eq!(read(&a.path().join(&f)), read(&b.path().join(&f)), "{f}");
            }
        }
    }
    let ta = cmd_evaluate_best(&cfg_a, &best_a).unwrap();
    let tb = cmd_evaluate_best(&cfg_b, &best_b).unwrap();
    for (x, y) in ta.iter().zip(&tb) {
        assert_eq!(read(x), read(y));
    }
    let ca = cmd_compare(&cfg_a, &ta, Some(&a.path().join("runs"))).unwrap();
    let cb = cmd_compare(&cfg_b, &tb, Some(&b.path().join("runs"))).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(read(&a.path().join("max_trace.csv")), read(&b.path().join("max_trace.csv")));
}

#[test]
fn artifacts_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, best) = run_all(dir.path());
    let tables = cmd_evaluate_best(&cfg, &best).unwrap();
    cmd_compare(&cfg, &tables, Some(&dir.path().join("runs"))).unwrap();
    let out = dir.path();

    let first_line = |p: &Path| -> Value {
        let text = read(p);
        serde_json::from_str::<Value>(text.lines().next().unwrap()).unwrap()["_provenance"].clone()
    };
    let design = out.join("design.jsonl");
    let outcomes = out.join("outcomes.jsonl");
    for p in [&design, &outcomes, &out.join("runs/bo-1.jsonl")] {
        let prov = first_line(p);
        assert_eq!(prov["version"], env!("CARGO_PKG_VERSION"), "{}", p.display());
        assert!(prov["seed"].is_u64());
        assert!(!prov["inputs"].as_object().unwrap().is_empty());
    }
    assert_eq!(first_line(&out.join("runs/bo-1.jsonl"))["seed"], 1);

    let ranking: Value = serde_json::from_str(&read(&out.join("ranking.json"))).unwrap();
    let inputs = ranking["_provenance"]["inputs"].as_object().unwrap();
    let hashes: Vec<&str> = inputs.values().map(|v| v.as_str().unwrap()).collect();
    assert!(hashes.contains(&sha(&design).as_str()));
    assert!(hashes.contains(&sha(&outcomes).as_str()));

    let manifest_path = out.join("reduced_manifest.json");
    let reduced: Value = serde_json::from_str(&read(&manifest_path)).unwrap();
    assert!(reduced["_provenance"].is_object());
    let space = load_manifest(&manifest_path).unwrap();
    assert_eq!(space.params().len(), 6);
    let ranked: Vec<&str> = ranking["parameters"].as_array().unwrap()[..6]
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    let names: Vec<&str> = space.params().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, ranked);

    for p in tables.iter().chain([&out.join("max_trace.csv")]) {
        let text = read(p);
        assert!(text.starts_with("# provenance: {"), "{}", p.display());
    }
    let comparison: Value = serde_json::from_str(&read(&out.join("comparison.json"))).unwrap();
    assert_eq!(comparison["_provenance"]["inputs"].as_object().unwrap().len(), 3 + 6);
    let best_file: Value = serde_json::from_str(&read(&best[0])).unwrap();
    assert!(best_file["_provenance"]["inputs"].is_object());
}

#[test]
fn resuming_a_finished_run_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quiet(dir.path());
    cfg.env = EnvConfig::default();
    cfg.optimizer = Method::Rl;
    let first = cmd_tune(&cfg, false).unwrap();
    let log = read(&first.runs[0].log);
    let again = cmd_tune(&cfg, true).unwrap();
    assert_eq!(read(&again.runs[0].log), log);
    assert_eq!(first.runs[0].best_throughput, again.runs[0].best_throughput);

    cfg.steps += 1;
    let err = cmd_tune(&cfg, true).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
}

#[test]
fn full_coverage_keeps_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quiet(dir.path());
    cfg.coverage = 1.0;
    let s = cmd_sample(&cfg).unwrap();
    let sel = cmd_select(&cfg, &s.design, &s.outcomes).unwrap();
    let all = knobtune::environment::shipped_manifest().params().len();
    assert_eq!(sel.selected.len(), all);
    assert_eq!(load_manifest(&sel.manifest).unwrap().params().len(), all);
}

#[test]
fn bad_settings_are_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = quiet(dir.path());
    let cases: Vec<RunConfig> = vec![
        RunConfig { sample_count: 0, ..base.clone() },
        RunConfig { steps: 0, ..base.clone() },
        RunConfig { coverage: 1.5, ..base.clone() },
        RunConfig { top: Some(0), ..base.clone() },
        RunConfig { manifest: Some(dir.path().join("nope.json")), ..base.clone() },
    ];
    for cfg in cases {
        let err = cmd_sample(&cfg).err().or_else(|| cmd_tune(&cfg, false).err()).unwrap();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }
}

#[test]
fn compare_rejects_unequal_or_single_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, best) = run_all(dir.path());
    let tables = cmd_evaluate_best(&cfg, &best).unwrap();
    assert!(matches!(cmd_compare(&cfg, &tables[..1], None), Err(Error::InvalidArgument(_))));

    cfg.repeats = 3;
    cfg.out_dir = dir.path().join("more");
    let longer = cmd_evaluate_best(&cfg, &best[..2]).unwrap();
    let err = cmd_compare(&cfg, &[tables[0].clone(), longer[0].clone()], None).unwrap_err();
    assert!(err.to_string().contains("unequal"), "{err}");
}
