//! The end-to-end tuning pipeline as file-to-file stages.
//!
//! Each stage reads the artifacts of the previous one from disk and writes
//! its own, so any stage can be rerun or swapped out. Every artifact carries
//! a provenance record (seed, tool version, SHA-256 of each input file); with
//! a noiseless environment, rerunning a stage on identical inputs reproduces
//! its outputs byte for byte.

mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use stages::{
    cmd_compare, cmd_evaluate_best, cmd_sample, cmd_select, cmd_tune, cmd_validity, BestConfigFile,
    CompareSummary, MethodSummary, OutcomeRecord, PairwiseTest, RankedParameter, RunSummary, SampleSummary,
    SelectSummary, StepRecord, TuneSummary, ValidityRow,
};

use crate::environment::{shipped_manifest, AdapterSpec, Environment, ExternalAdapter, Simulator, SimulatorSpec, SHIPPED_MANIFEST};
use crate::error::{Error, Result};
use crate::optimizers::Method;
use crate::param_space::{parse_manifest, parse_manifest_with_prf, ParameterSpace};

pub const TOOL_NAME: &str = "knobtune";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Settings of one pipeline invocation. Every field has a default, so a
/// config file only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Parameter manifest; the bundled 350-parameter manifest when absent.
    pub manifest: Option<PathBuf>,
    pub env: EnvConfig,
    pub prf: f64,
    pub rss: usize,
    pub sample_count: usize,
    pub coverage: f64,
    /// Upper bound on the number of selected parameters, applied after coverage.
    pub top: Option<usize>,
    pub optimizer: Method,
    pub steps: usize,
    pub repetitions: usize,
    /// Re-evaluations of each best configuration.
    pub repeats: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// A tuning checkpoint is written after every this many steps.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            env: EnvConfig::default(),
            prf: 10.0,
            rss: 50,
            sample_count: 200,
            coverage: 0.9,
            top: None,
            optimizer: Method::Bo,
            steps: 200,
            repetitions: 3,
            repeats: 5,
            seed: 0,
            out_dir: PathBuf::from("out"),
            checkpoint_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    #[serde(alias = "sim")]
    Simulator(SimulatorSettings),
    External(AdapterSettings),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Simulator(SimulatorSettings::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSettings {
    pub seed: u64,
    pub noise_cv: f64,
    pub optimum_gain: f64,
    pub important: usize,
    /// Manifest the simulator is built over. Reduced manifests tuned against
    /// it must use a subset of its parameter names. Bundled manifest when
    /// absent.
    pub base_manifest: Option<PathBuf>,
}

impl Default for SimulatorSettings {
    fn default() -> Self {
        SimulatorSettings {
            seed: 7,
            noise_cv: 0.03,
            optimum_gain: 1.45,
            important: 10,
            base_manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSettings {
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Scratch directory for the request/result files; `<out>/adapter` when
    /// absent. Each repetition gets its own subdirectory.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
}

fn default_timeout() -> f64 {
    600.0
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(format!("run config {}", path.display()), e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.prf.is_finite() && self.prf > 1.0) {
            return bad(format!("prf must be > 1, got {}", self.prf));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.sample_count == 0 {
            return bad("sample count must be >= 1".into());
        }
        if self.rss == 0 {
            return bad("rss must be >= 1".into());
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return bad(format!("coverage must be in (0, 1], got {}", self.coverage));
        }
        if self.top == Some(0) {
            return bad("top must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be >= 1".into());
        }
        if let Some(m) = &self.manifest {
            if !m.is_file() {
                return bad(format!("manifest {} does not exist", m.display()));
            }
        }
        match &self.env {
            EnvConfig::Simulator(s) => {
                if !(s.noise_cv >= 0.0) {
                    return bad(format!("noise_cv must be >= 0, got {}", s.noise_cv));
                }
                if !(s.optimum_gain >= 1.0) {
                    return bad(format!("optimum_gain must be >= 1, got {}", s.optimum_gain));
                }
                if let Some(m) = &s.base_manifest {
                    if !m.is_file() {
                        return bad(format!("simulator manifest {} does not exist", m.display()));
                    }
                }
            }
            EnvConfig::External(a) => {
                if a.command.trim().is_empty() {
                    return bad("external adapter command is empty".into());
                }
                if !(a.timeout_secs > 0.0) {
                    return bad(format!("adapter timeout must be positive, got {}", a.timeout_secs));
                }
            }
        }
        Ok(())
    }

    /// The run manifest with ranges derived at `self.prf`, and its source bytes.
    pub fn load_space(&self) -> Result<(ParameterSpace, Input)> {
        match &self.manifest {
            Some(path) => {
                let input = Input::read(path)?;
                let space = parse_manifest_with_prf(input.text()?, self.prf)?;
                Ok((space, input))
            }
            None => {
                let input = Input::bundled("bundled-manifest", SHIPPED_MANIFEST);
                Ok((parse_manifest_with_prf(SHIPPED_MANIFEST, self.prf)?, input))
            }
        }
    }

    /// Environment over `space`. `slot` separates the scratch directories of
    /// concurrent external-adapter runs.
    pub fn environment(&self, space: &ParameterSpace, slot: &str) -> Result<Box<dyn Environment>> {
        match &self.env {
            EnvConfig::Simulator(s) => {
                let base = match &s.base_manifest {
                    Some(path) => parse_manifest(&Input::read(path)?.text()?.to_string())?,
                    None => shipped_manifest(),
                };
                let spec = SimulatorSpec::calibrated_with(&base, s.seed, s.important, s.optimum_gain, s.noise_cv)?;
                Ok(Box::new(Simulator::new(spec, space.clone())?))
            }
            EnvConfig::External(a) => {
                let root = a.workdir.clone().unwrap_or_else(|| self.out_dir.join("adapter"));
                let spec = AdapterSpec {
                    command: a.command.clone(),
                    timeout_secs: a.timeout_secs,
                    workdir: root.join(slot),
                };
                Ok(Box::new(ExternalAdapter::new(spec, space.clone())?))
            }
        }
    }
}

/// An input file, kept in memory so it is hashed exactly as it was read.
#[derive(Debug, Clone)]
pub struct Input {
    pub label: String,
    pub bytes: Vec<u8>,
}

impl Input {
    /// Labelled by file name, so artifacts do not depend on where the
    /// inputs happen to live.
    pub fn read(path: &Path) -> Result<Input> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let label = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Input {
            label,
            bytes,
        })
    }

    pub fn bundled(label: &str, text: &str) -> Input {
        Input {
            label: label.to_string(),
            bytes: text.as_bytes().to_vec(),
        }
    }

    pub fn text(&self) -> Result<&str> {
        std::str::from_utf8(&self.bytes)
            .map_err(|e| Error::InvalidArgument(format!("{} is not UTF-8: {e}", self.label)))
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

/// Same-named inputs from different directories get `#2`, `#3`... suffixes
/// in order of appearance.
fn label_inputs(inputs: &[&Input]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for i in inputs {
        let mut label = i.label.clone();
        let mut k = 2;
        while out.contains_key(&label) {
            label = format!("{}#{k}", i.label);
            k += 1;
        }
        out.insert(label, i.sha256());
    }
    out
}

/// Embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Input label to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Settings that shaped the artifact.
    pub settings: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, inputs: &[&Input], settings: serde_json::Value) -> Provenance {
        Provenance {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            seed,
            inputs: label_inputs(inputs),
            settings,
        }
    }

    fn header_line(&self) -> String {
        serde_json::json!({ "_provenance": self }).to_string()
    }
}

/// Writes a JSON-lines file whose first line is `{"_provenance": ...}`.
pub fn write_jsonl<T: Serialize>(path: &Path, provenance: &Provenance, records: &[T]) -> Result<()> {
    let mut w = JsonlWriter::create(path, provenance)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()
}

/// Reads the records of a JSON-lines file, skipping its provenance line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Provenance>, Vec<T>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut provenance = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let context = || format!("{} line {}", path.display(), i + 1);
        if i == 0 && line.starts_with("{\"_provenance\"") {
            #[derive(Deserialize)]
            struct Header {
                _provenance: Provenance,
            }
            let h: Header = serde_json::from_str(&line).map_err(|e| Error::json(context(), e))?;
            provenance = Some(h._provenance);
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::json(context(), e))?);
    }
    Ok((provenance, records))
}

/// Incremental JSON-lines writer.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl JsonlWriter {
    pub fn create(path: &Path, provenance: &Provenance) -> Result<JsonlWriter> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(&provenance.header_line())?;
        Ok(w)
    }

    /// Appends to an existing file, keeping only its first `keep_lines` lines.
    pub fn truncate_to(path: &Path, keep_lines: usize) -> Result<JsonlWriter> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let kept: Vec<&str> = text.lines().take(keep_lines).collect();
        if kept.len() < keep_lines {
            return Err(Error::InvalidArgument(format!(
                "{} has {} lines, the checkpoint expects {keep_lines}",
                path.display(),
                kept.len()
            )));
        }
        let mut w = JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?),
        };
        for l in kept {
            w.line(l)?;
        }
        Ok(w)
    }

    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::json("serializing record", e))?;
        self.line(&line)
    }

    fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.flush()
    }
}

/// Pretty JSON with a trailing newline, written through a temporary file so
/// readers never see half an artifact.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json("serializing", e))?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
