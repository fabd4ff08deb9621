use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    ensure_dir, read_json, read_jsonl, write_json, write_jsonl, Input, JsonlWriter, Provenance, RunConfig,
};
use crate::error::{Error, Result};
use crate::feature_select::{fit_forest, forest_inputs, importance, select_by_coverage, ForestParams};
use crate::optimizers::{Method, Tuner};
use crate::param_space::{manifest_with_provenance, Configuration, ParameterSpace};
use crate::sampling::{self, Strategy};
use crate::stats::{paired_t_test, summarize};

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DesignRecord {
    index: usize,
    config: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub index: usize,
    pub valid: bool,
    pub throughput: f64,
    pub metrics: Vec<f64>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedParameter {
    pub name: String,
    pub importance: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RankingReport {
    #[serde(rename = "_provenance")]
    provenance: Provenance,
    coverage: f64,
    rows: usize,
    selected: usize,
    parameters: Vec<RankedParameter>,
}

/// One line of a tuning log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub method: Method,
    pub config: BTreeMap<String, f64>,
    pub valid: bool,
    pub throughput: f64,
    pub reward: f64,
    pub best_so_far: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfigFile {
    #[serde(rename = "_provenance")]
    pub provenance: Provenance,
    pub method: Method,
    pub repetition: usize,
    pub seed: u64,
    pub steps: usize,
    pub default_throughput: f64,
    /// 0 when no step was valid; the config is then the default.
    pub best_throughput: f64,
    pub config: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    #[serde(rename = "_provenance")]
    provenance: Provenance,
    tuner: Tuner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeasurementRow {
    method: Method,
    run: usize,
    repeat: usize,
    valid: bool,
    throughput: f64,
    default_throughput: f64,
    flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub default_throughput: f64,
    pub improvement_pct: f64,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: Method,
    pub b: Method,
    pub t: f64,
    pub df: u32,
    pub p: f64,
    pub mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub methods: Vec<MethodSummary>,
    pub tests: Vec<PairwiseTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ComparisonReport {
    #[serde(rename = "_provenance")]
    provenance: Provenance,
    #[serde(flatten)]
    summary: CompareSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub prf: f64,
    pub strategy: Strategy,
    /// 0 means no random subset.
    pub rss: usize,
    pub seed: u64,
    pub n: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub valid: usize,
    pub validity_rate: f64,
    pub design: PathBuf,
    pub outcomes: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectSummary {
    pub selected: Vec<String>,
    pub ranking: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub repetition: usize,
    pub log: PathBuf,
    pub best: PathBuf,
    pub best_throughput: f64,
    pub default_throughput: f64,
    /// Environment evaluations made by this run, default included.
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSummary {
    pub method: Method,
    pub runs: Vec<RunSummary>,
}

impl TuneSummary {
    pub fn total_evaluations(&self) -> u64 {
        self.runs.iter().map(|r| r.evaluations).sum()
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn settings_json<T: Serialize>(value: T) -> serde_json::Value {
    serde_json::to_value(value).expect("settings serialize")
}

/// Separate noise streams for every (method, repetition) pair, so runs and
/// re-evaluations of different methods do not share noise draws.
fn stream_offset(method: Method, repetition: usize, purpose: u64) -> u64 {
    let m = Method::ALL.iter().position(|&x| x == method).expect("known method") as u64;
    (purpose << 48) | ((m + 1) << 40) | ((repetition as u64) << 24)
}

fn run_stem(method: Method, repetition: usize) -> String {
    format!("{method}-{repetition}")
}

fn write_csv_with_provenance<T: Serialize>(path: &Path, provenance: &Provenance, rows: &[T]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = serde_json::to_string(provenance).map_err(|e| Error::json("provenance", e))?;
    writeln!(file, "# provenance: {header}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Symmetric-LHS design with a random subset, evaluated in full. Nothing is
/// written unless the environment could be set up and every evaluation ran.
pub fn cmd_sample(cfg: &RunConfig) -> Result<SampleSummary> {
    cfg.validate()?;
    let (space, manifest) = cfg.load_space()?;
    let mut env = cfg.environment(&space, "sample")?;
    let mut design = sampling::symmetric_lhs(&space, cfg.sample_count, cfg.seed)?;
    let tunable = space.tunable_count();
    if cfg.rss < tunable {
        design = sampling::apply_random_subset(&design, cfg.rss, &space, cfg.seed.wrapping_add(1))?;
    } else {
        log::info!("rss {} covers all {tunable} tunable parameters; no random subset", cfg.rss);
    }
    let outcomes: Vec<OutcomeRecord> = design
        .configs
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let o = env.evaluate(c);
            OutcomeRecord {
                index,
                valid: o.valid,
                throughput: o.throughput,
                metrics: o.metrics,
                duration: o.duration,
            }
        })
        .collect();

    ensure_dir(&cfg.out_dir)?;
    let provenance = Provenance::new(
        "sample",
        cfg.seed,
        &[&manifest],
        json!({ "prf": cfg.prf, "rss": cfg.rss, "n": cfg.sample_count, "strategy": Strategy::SymmetricLhs }),
    );
    let design_path = cfg.out_dir.join("design.jsonl");
    let records: Vec<DesignRecord> = design
        .configs
        .iter()
        .enumerate()
        .map(|(index, c)| DesignRecord {
            index,
            config: space.config_to_map(c),
        })
        .collect();
    write_jsonl(&design_path, &provenance, &records)?;
    let design_input = Input::read(&design_path)?;
    let outcomes_provenance = Provenance::new(
        "sample",
        cfg.seed,
        &[&manifest, &design_input],
        json!({ "env": cfg.env }),
    );
    let outcomes_path = cfg.out_dir.join("outcomes.jsonl");
    write_jsonl(&outcomes_path, &outcomes_provenance, &outcomes)?;

    let valid = outcomes.iter().filter(|o| o.valid).count();
    Ok(SampleSummary {
        n: outcomes.len(),
        valid,
        validity_rate: valid as f64 / outcomes.len() as f64,
        design: design_path,
        outcomes: outcomes_path,
    })
}

/// Forest ranking over a sampled design, and the reduced manifest holding the
/// parameters that reach `coverage` of the importance mass, in rank order.
pub fn cmd_select(cfg: &RunConfig, design_path: &Path, outcomes_path: &Path) -> Result<SelectSummary> {
    cfg.validate()?;
    let (space, manifest) = cfg.load_space()?;
    let design_input = Input::read(design_path)?;
    let outcomes_input = Input::read(outcomes_path)?;
    let (_, design): (_, Vec<DesignRecord>) = read_jsonl(design_path)?;
    let (_, outcomes): (_, Vec<OutcomeRecord>) = read_jsonl(outcomes_path)?;
    let by_index: BTreeMap<usize, &OutcomeRecord> = outcomes.iter().map(|o| (o.index, o)).collect();

    let mut configs = Vec::with_capacity(design.len());
    let mut y = Vec::with_capacity(design.len());
    for d in &design {
        let o = by_index.get(&d.index).ok_or_else(|| {
            Error::InvalidArgument(format!("design row {} has no outcome in {}", d.index, outcomes_path.display()))
        })?;
        configs.push(space.config_from_map(&d.config)?);
        y.push(if o.valid { o.throughput } else { 0.0 });
    }
    if configs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature selection needs at least 2 evaluated configurations, found {}",
            configs.len()
        )));
    }
    let forest = fit_forest(
        &forest_inputs(&space, &configs),
        &y,
        &ForestParams {
            seed: cfg.seed,
            ..ForestParams::default()
        },
    )?;
    let ranking = importance(&forest);
    let mut selected = select_by_coverage(&ranking, cfg.coverage)?;
    if let Some(k) = cfg.top {
        selected.truncate(k);
    }

    let mut cumulative = 0.0;
    let parameters: Vec<RankedParameter> = ranking
        .order
        .iter()
        .map(|&i| {
            cumulative += ranking.importances[i];
            RankedParameter {
                name: space.params()[i].name.clone(),
                importance: ranking.importances[i],
                cumulative,
            }
        })
        .collect();
    let provenance = Provenance::new(
        "select",
        cfg.seed,
        &[&manifest, &design_input, &outcomes_input],
        json!({ "coverage": cfg.coverage, "top": cfg.top, "prf": cfg.prf, "forest": ForestParams { seed: cfg.seed, ..ForestParams::default() } }),
    );
    ensure_dir(&cfg.out_dir)?;
    let ranking_path = cfg.out_dir.join("ranking.json");
    write_json(
        &ranking_path,
        &RankingReport {
            provenance: provenance.clone(),
            coverage: cfg.coverage,
            rows: configs.len(),
            selected: selected.len(),
            parameters,
        },
    )?;

    let names: Vec<&str> = selected.iter().map(|&i| space.params()[i].name.as_str()).collect();
    let reduced = space.subset(&names)?;
    let manifest_path = cfg.out_dir.join("reduced_manifest.json");
    let text = manifest_with_provenance(&reduced, Some(settings_json(&provenance)));
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(SelectSummary {
        selected: names.iter().map(|s| s.to_string()).collect(),
        ranking: ranking_path,
        manifest: manifest_path,
    })
}

/// `cfg.repetitions` independent runs of `cfg.optimizer` over the run
/// manifest. Runs execute concurrently, each with its own environment; with
/// `resume`, a run continues from its checkpoint when one exists.
pub fn cmd_tune(cfg: &RunConfig, resume: bool) -> Result<TuneSummary> {
    cfg.validate()?;
    let (space, manifest) = cfg.load_space()?;
    let runs_dir = cfg.out_dir.join("runs");
    ensure_dir(&runs_dir)?;
    let method = cfg.optimizer;
    let runs = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| tune_one(cfg, &space, &manifest, &runs_dir, method, rep, resume))
        .collect::<Result<Vec<_>>>()?;
    Ok(TuneSummary { method, runs })
}

fn tune_one(
    cfg: &RunConfig,
    space: &ParameterSpace,
    manifest: &Input,
    runs_dir: &Path,
    method: Method,
    rep: usize,
    resume: bool,
) -> Result<RunSummary> {
    let stem = run_stem(method, rep);
    let log_path = runs_dir.join(format!("{stem}.jsonl"));
    let best_path = runs_dir.join(format!("{stem}.best.json"));
    let checkpoint_path = runs_dir.join(format!("{stem}.checkpoint.json"));
    let seed = cfg.seed.wrapping_add(rep as u64);
    let provenance = Provenance::new(
        "tune",
        seed,
        &[manifest],
        json!({ "method": method, "steps": cfg.steps, "repetition": rep, "prf": cfg.prf, "env": cfg.env }),
    );

    let mut env = cfg.environment(space, &stem)?;
    let offset = stream_offset(method, rep, 1);
    let (mut tuner, mut log) = if resume && checkpoint_path.is_file() {
        let saved: CheckpointFile = read_json(&checkpoint_path)?;
        let tuner = saved.tuner;
        if tuner.method() != method || tuner.total_steps != cfg.steps || tuner.seed != seed {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {} belongs to a different run (method {}, {} steps, seed {})",
                checkpoint_path.display(),
                tuner.method(),
                tuner.total_steps,
                tuner.seed
            )));
        }
        tuner.attach(env.as_mut())?;
        log::info!("{stem}: resuming after step {}", tuner.history.len());
        let log = JsonlWriter::truncate_to(&log_path, 1 + tuner.history.len())?;
        (tuner, log)
    } else {
        env.set_evaluation_count(offset);
        let tuner = Tuner::start(env.as_mut(), method, cfg.steps, seed)
            .map_err(|e| annotate(e, &format!("{stem}: cannot start tuning")))?;
        let log = JsonlWriter::create(&log_path, &provenance)?;
        (tuner, log)
    };

    while !tuner.is_done() {
        tuner.step(env.as_mut())?;
        let h = &tuner.history;
        let step = h.steps.last().expect("a step was just taken");
        let record = StepRecord {
            step: h.len(),
            method,
            config: space.config_to_map(&step.config),
            valid: step.outcome.valid,
            throughput: step.outcome.throughput,
            reward: step.reward,
            best_so_far: h.best_throughput,
            wall_ms: step.outcome.duration * 1000.0,
        };
        log.push(&record)?;
        if tuner.history.len() % cfg.checkpoint_every == 0 || tuner.is_done() {
            log.flush()?;
            write_json(
                &checkpoint_path,
                &CheckpointFile {
                    provenance: provenance.clone(),
                    tuner: tuner.clone(),
                },
            )?;
        }
    }
    log.finish()?;

    let h = &tuner.history;
    write_json(
        &best_path,
        &BestConfigFile {
            provenance,
            method,
            repetition: rep,
            seed,
            steps: cfg.steps,
            default_throughput: h.default_throughput,
            best_throughput: h.best_throughput,
            config: space.config_to_map(&h.best_config),
        },
    )?;
    Ok(RunSummary {
        repetition: rep,
        log: log_path,
        best: best_path,
        best_throughput: h.best_throughput,
        default_throughput: h.default_throughput,
        evaluations: tuner.evaluations - offset,
    })
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::DefaultInvalid(msg) => Error::DefaultInvalid(format!("{context}: {msg}")),
        other => other,
    }
}

/// Re-evaluates every best configuration `cfg.repeats` times. Writes one
/// measurement table per method, `measurements-<method>.csv`. A
/// configuration that fails on re-evaluation is recorded with throughput 0
/// and flagged.
pub fn cmd_evaluate_best(cfg: &RunConfig, best_files: &[PathBuf]) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if best_files.is_empty() {
        return Err(Error::InvalidArgument("no best-configuration files given".into()));
    }
    let (space, manifest) = cfg.load_space()?;
    let mut inputs = vec![manifest];
    let mut by_method: BTreeMap<String, (Method, Vec<MeasurementRow>)> = BTreeMap::new();
    for path in best_files {
        let input = Input::read(path)?;
        let best: BestConfigFile = read_json(path)?;
        inputs.push(input);
        let config: Configuration = space.config_from_map(&best.config)?;
        let mut env = cfg.environment(&space, &format!("eval-{}", run_stem(best.method, best.repetition)))?;
        env.set_evaluation_count(stream_offset(best.method, best.repetition, 2));
        let rows = &mut by_method
            .entry(best.method.to_string())
            .or_insert_with(|| (best.method, Vec::new()))
            .1;
        for repeat in 0..cfg.repeats {
            let o = env.evaluate(&config);
            if !o.valid {
                log::warn!("{}: best configuration invalid on re-evaluation {repeat}", path.display());
            }
            rows.push(MeasurementRow {
                method: best.method,
                run: best.repetition,
                repeat,
                valid: o.valid,
                throughput: if o.valid { o.throughput } else { 0.0 },
                default_throughput: best.default_throughput,
                flagged: !o.valid,
            });
        }
    }
    ensure_dir(&cfg.out_dir)?;
    let refs: Vec<&Input> = inputs.iter().collect();
    let provenance = Provenance::new("evaluate-best", cfg.seed, &refs, json!({ "repeats": cfg.repeats, "env": cfg.env }));
    let mut written = Vec::new();
    for (name, (_, mut rows)) in by_method {
        rows.sort_by_key(|r| (r.run, r.repeat));
        let path = cfg.out_dir.join(format!("measurements-{name}.csv"));
        write_csv_with_provenance(&path, &provenance, &rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Per-method statistics and pairwise paired t-tests over measurement
/// tables, plus a max-trace CSV when the run logs are available.
pub fn cmd_compare(cfg: &RunConfig, tables: &[PathBuf], runs_dir: Option<&Path>) -> Result<CompareSummary> {
    let mut inputs = Vec::new();
    let mut by_method: BTreeMap<String, (Method, Vec<MeasurementRow>)> = BTreeMap::new();
    for path in tables {
        inputs.push(Input::read(path)?);
        for row in read_csv::<MeasurementRow>(path)? {
            by_method
                .entry(row.method.to_string())
                .or_insert_with(|| (row.method, Vec::new()))
                .1
                .push(row);
        }
    }
    let mut groups: Vec<(Method, Vec<MeasurementRow>)> = by_method.into_values().collect();
    groups.sort_by_key(|(m, _)| Method::ALL.iter().position(|x| x == m));
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least 2 methods, found {}",
            groups.len()
        )));
    }
    for (_, rows) in &mut groups {
        rows.sort_by_key(|r| (r.run, r.repeat));
    }
    let (m0, r0) = (&groups[0].0, groups[0].1.len());
    for (m, rows) in &groups[1..] {
        if rows.len() != r0 {
            return Err(Error::InvalidArgument(format!(
                "unequal measurement counts: {m0} has {r0}, {m} has {}",
                rows.len()
            )));
        }
    }

    let mut methods = Vec::new();
    for (m, rows) in &groups {
        let values: Vec<f64> = rows.iter().map(|r| r.throughput).collect();
        let (mean, sd) = summarize(&values)?;
        let (default_throughput, _) = summarize(&rows.iter().map(|r| r.default_throughput).collect::<Vec<_>>())?;
        methods.push(MethodSummary {
            method: *m,
            n: rows.len(),
            mean,
            sd,
            default_throughput,
            improvement_pct: (mean / default_throughput - 1.0) * 100.0,
            invalid: rows.iter().filter(|r| r.flagged).count(),
        });
    }
    let mut tests = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let a: Vec<f64> = groups[i].1.iter().map(|r| r.throughput).collect();
            let b: Vec<f64> = groups[j].1.iter().map(|r| r.throughput).collect();
            let t = paired_t_test(&a, &b)?;
            tests.push(PairwiseTest {
                a: groups[i].0,
                b: groups[j].0,
                t: t.t_statistic,
                df: t.degrees_of_freedom,
                p: t.p_value,
                mean_diff: t.mean_diff,
            });
        }
    }
    let summary = CompareSummary { methods, tests };

    ensure_dir(&cfg.out_dir)?;
    let mut trace_inputs = Vec::new();
    let trace = match runs_dir {
        Some(dir) => Some(max_traces(dir, &groups.iter().map(|g| g.0).collect::<Vec<_>>(), &mut trace_inputs)?),
        None => None,
    };
    let refs: Vec<&Input> = inputs.iter().chain(&trace_inputs).collect();
    let provenance = Provenance::new("compare", cfg.seed, &refs, json!({}));
    write_json(
        &cfg.out_dir.join("comparison.json"),
        &ComparisonReport {
            provenance: provenance.clone(),
            summary: summary.clone(),
        },
    )?;
    if let Some((methods, rows)) = trace {
        write_max_trace(&cfg.out_dir.join("max_trace.csv"), &provenance, &methods, &rows)?;
    }
    Ok(summary)
}

/// Best-so-far after each step, averaged over the repetitions of each method.
fn max_traces(dir: &Path, methods: &[Method], inputs: &mut Vec<Input>) -> Result<(Vec<Method>, Vec<Vec<Option<f64>>>)> {
    let mut per_method: Vec<Vec<f64>> = Vec::new();
    let mut found = Vec::new();
    for &m in methods {
        let mut runs: Vec<Vec<f64>> = Vec::new();
        for rep in 0.. {
            let path = dir.join(format!("{}.jsonl", run_stem(m, rep)));
            if !path.is_file() {
                break;
            }
            inputs.push(Input::read(&path)?);
            let (_, steps): (_, Vec<StepRecord>) = read_jsonl(&path)?;
            runs.push(steps.iter().map(|s| s.best_so_far).collect());
        }
        if runs.is_empty() {
            log::warn!("no run logs for {m} in {}", dir.display());
            continue;
        }
        let len = runs.iter().map(Vec::len).min().unwrap_or(0);
        per_method.push(
            (0..len)
                .map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / runs.len() as f64)
                .collect(),
        );
        found.push(m);
    }
    let steps = per_method.iter().map(Vec::len).max().unwrap_or(0);
    let rows = (0..steps)
        .map(|t| per_method.iter().map(|trace| trace.get(t).copied()).collect())
        .collect();
    Ok((found, rows))
}

fn write_max_trace(path: &Path, provenance: &Provenance, methods: &[Method], rows: &[Vec<Option<f64>>]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = serde_json::to_string(provenance).map_err(|e| Error::json("provenance", e))?;
    writeln!(file, "# provenance: {header}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut head = vec!["step".to_string()];
    head.extend(methods.iter().map(|m| m.to_string()));
    w.write_record(&head)?;
    for (t, row) in rows.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Share of valid configurations among `n`-point designs, one row per range
/// factor, random subset size (`None`: every parameter varies) and seed.
pub fn cmd_validity(
    cfg: &RunConfig,
    prfs: &[f64],
    subsets: &[Option<usize>],
    strategy: Strategy,
    n: usize,
    seeds: usize,
) -> Result<Vec<ValidityRow>> {
    if n == 0 || seeds == 0 {
        return Err(Error::InvalidArgument("validity needs n >= 1 and at least one seed".into()));
    }
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for &prf in prfs {
        let run = RunConfig { prf, ..cfg.clone() };
        run.validate()?;
        let (space, manifest) = run.load_space()?;
        if inputs.is_empty() {
            inputs.push(manifest);
        }
        let mut env = run.environment(&space, "validity")?;
        for &rss in subsets {
            for s in 0..seeds {
                let seed = cfg.seed.wrapping_add(s as u64);
                let rate = crate::environment::validity_rate(
                    &space,
                    &crate::environment::DesignSpec { strategy, rss, seed },
                    n,
                    env.as_mut(),
                )?;
                rows.push(ValidityRow {
                    prf,
                    strategy,
                    rss: rss.unwrap_or(0),
                    seed,
                    n,
                    rate,
                });
            }
        }
    }
    ensure_dir(&cfg.out_dir)?;
    let refs: Vec<&Input> = inputs.iter().collect();
    let provenance = Provenance::new("validity", cfg.seed, &refs, json!({ "env": cfg.env }));
    write_csv_with_provenance(&cfg.out_dir.join("validity.csv"), &provenance, &rows)?;
    Ok(rows)
}
