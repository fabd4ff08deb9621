//! Evaluation through an external benchmark command.
//!
//! For every evaluation the adapter writes `<workdir>/config.json` (parameter
//! name to value), runs `<command> <workdir>/config.json` with `workdir` as
//! the current directory, and reads `<workdir>/result.json`:
//!
//! ```json
//! {"valid": true, "throughput": 48.2, "metrics": [0.1, 0.7]}
//! ```
//!
//! A nonzero exit status, a timeout, or a missing/malformed result file all
//! produce an invalid outcome.

use std::fs;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvaluationOutcome, Environment};
use crate::error::{Error, Result};
use crate::param_space::{Configuration, ParameterSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub command: String,
    pub timeout_secs: f64,
    pub workdir: PathBuf,
}

#[derive(Debug, Deserialize)]
struct ResultFile {
    valid: bool,
    throughput: f64,
    #[serde(default)]
    metrics: Vec<f64>,
}

pub struct ExternalAdapter {
    spec: AdapterSpec,
    program: PathBuf,
    space: ParameterSpace,
    metrics_dim: usize,
    count: u64,
}

impl ExternalAdapter {
    /// Resolves the command up front so a missing binary is reported before
    /// any tuning starts.
    pub fn new(spec: AdapterSpec, space: ParameterSpace) -> Result<ExternalAdapter> {
        let program = which::which(&spec.command).map_err(|e| {
            Error::Environment(format!("cannot resolve adapter command '{}': {e}", spec.command))
        })?;
        if !(spec.timeout_secs > 0.0) {
            return Err(Error::Environment(format!(
                "adapter timeout must be positive, got {}",
                spec.timeout_secs
            )));
        }
        fs::create_dir_all(&spec.workdir).map_err(|e| Error::io(&spec.workdir, e))?;
        // the child runs inside workdir, so the paths handed to it must not be relative
        let workdir = fs::canonicalize(&spec.workdir).map_err(|e| Error::io(&spec.workdir, e))?;
        Ok(ExternalAdapter {
            spec: AdapterSpec { workdir, ..spec },
            program,
            space,
            metrics_dim: 0,
            count: 0,
        })
    }

    fn config_path(&self) -> PathBuf {
        self.spec.workdir.join("config.json")
    }

    fn result_path(&self) -> PathBuf {
        self.spec.workdir.join("result.json")
    }

    fn run(&mut self, config: &Configuration) -> std::result::Result<EvaluationOutcome, String> {
        let request = serde_json::to_string_pretty(&self.space.config_to_map(config))
            .map_err(|e| e.to_string())?;
        let config_path = self.config_path();
        fs::write(&config_path, request).map_err(|e| format!("writing {}: {e}", config_path.display()))?;
        let result_path = self.result_path();
        match fs::remove_file(&result_path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(format!("clearing stale {}: {e}", result_path.display())),
        }

        let child = Command::new(&self.program)
            .arg(&config_path)
            .current_dir(&self.spec.workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawning {}: {e}", self.program.display()))?;
        let timeout = Duration::from_secs_f64(self.spec.timeout_secs);
        let status = wait_with_timeout(child, timeout)?;
        if !status.success() {
            return Err(format!("command exited with {status}"));
        }
        let text = fs::read_to_string(&result_path)
            .map_err(|e| format!("reading {}: {e}", result_path.display()))?;
        let parsed: ResultFile =
            serde_json::from_str(&text).map_err(|e| format!("malformed result file: {e}"))?;
        if !parsed.valid {
            return Ok(EvaluationOutcome::invalid(self.metrics_dim, 0.0));
        }
        if !(parsed.throughput.is_finite() && parsed.throughput > 0.0) {
            return Err(format!("valid result with unusable throughput {}", parsed.throughput));
        }
        if parsed.metrics.iter().any(|m| !m.is_finite()) {
            return Err("non-finite metric in result file".into());
        }
        self.metrics_dim = parsed.metrics.len();
        Ok(EvaluationOutcome {
            valid: true,
            throughput: parsed.throughput,
            metrics: parsed.metrics,
            duration: 0.0,
        })
    }
}

fn wait_with_timeout(
    mut child: Child,
    timeout: Duration,
) -> std::result::Result<std::process::ExitStatus, String> {
    let start = Instant::now();
    let mut poll = Duration::from_millis(2);
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(status),
            Ok(None) => {}
            Err(e) => return Err(format!("waiting for command: {e}")),
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(format!("command exceeded timeout of {:.1}s", timeout.as_secs_f64()));
        }
        thread::sleep(poll);
        poll = (poll * 2).min(Duration::from_millis(50));
    }
}

impl Environment for ExternalAdapter {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn evaluate(&mut self, config: &Configuration) -> EvaluationOutcome {
        self.count += 1;
        let start = Instant::now();
        let result = self.run(config);
        let elapsed = start.elapsed().as_secs_f64();
        match result {
            Ok(mut outcome) => {
                outcome.duration = elapsed;
                outcome
            }
            Err(reason) => {
                log::warn!("evaluation {} marked invalid: {reason}", self.count);
                EvaluationOutcome::invalid(self.metrics_dim, elapsed)
            }
        }
    }

    fn evaluation_count(&self) -> u64 {
        self.count
    }

    fn set_evaluation_count(&mut self, count: u64) {
        self.count = count;
    }
}
