//! Client for simulators that run as a separate program.
//!
//! Protocol, per evaluation:
//! 1. a fresh working directory is created,
//! 2. `params.txt` is written there with one `name=value` line per parameter
//!    (natural space, 17 significant digits),
//! 3. the command runs with the working directory substituted for every
//!    `{workdir}` token (or appended as the last argument when no token is
//!    present), with the working directory as its current directory,
//! 4. the program writes `output.json`:
//!    `{"scalars": {name: number}, "bits": [0|1, ...], "projections": {name: number}}`,
//!    optionally with a `"field": [numbers]` array.

use std::fs;
use std::io::Write as _;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ForwardModel, ModelInput, ModelOutput};
use crate::error::ModelError;
use crate::parallel::StreamKey;

pub const PARAMS_FILE: &str = "params.txt";
pub const OUTPUT_FILE: &str = "output.json";
const WORKDIR_TOKEN: &str = "{workdir}";
const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalModelConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_workdir_root")]
    pub workdir_root: PathBuf,
    #[serde(default)]
    pub keep_workdirs: bool,
}

fn default_timeout() -> f64 {
    3600.0
}

fn default_workdir_root() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone)]
pub struct ExternalModel {
    config: ExternalModelConfig,
    run_id: String,
}

impl ExternalModel {
    pub fn new(config: ExternalModelConfig, run_id: impl Into<String>) -> Self {
        Self {
            config,
            run_id: run_id.into(),
        }
    }

    /// Working directory for one evaluation, unique per
    /// (run, cycle, particle, stage, proposal).
    pub fn workdir_for(&self, key: &StreamKey) -> PathBuf {
        self.config.workdir_root.join(&self.run_id).join(format!(
            "c{}-p{}-{}-i{}",
            key.cycle,
            key.particle,
            key.stage.name(),
            key.proposal_index
        ))
    }
}

impl ForwardModel for ExternalModel {
    fn evaluate(&self, input: &ModelInput<'_>, key: &StreamKey) -> Result<ModelOutput, ModelError> {
        let workdir = self.workdir_for(key);
        let result = external_model_eval(
            &self.config.command,
            input.names,
            input.natural,
            Duration::from_secs_f64(self.config.timeout_secs),
            &workdir,
        );
        if result.is_ok() && !self.config.keep_workdirs {
            let _ = fs::remove_dir_all(&workdir);
        }
        result
    }
}

fn launch_error(path: &Path, e: std::io::Error) -> ModelError {
    ModelError::Launch(format!("{}: {e}", path.display()))
}

/// Writes `params.txt` in `workdir`, runs `command`, and parses `output.json`.
pub fn external_model_eval(
    command: &[String],
    names: &[String],
    natural: &[f64],
    timeout: Duration,
    workdir: &Path,
) -> Result<ModelOutput, ModelError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| ModelError::Launch("empty command".into()))?;
    if workdir.exists() {
        fs::remove_dir_all(workdir).map_err(|e| launch_error(workdir, e))?;
    }
    fs::create_dir_all(workdir).map_err(|e| launch_error(workdir, e))?;
    write_params(&workdir.join(PARAMS_FILE), names, natural)?;

    let workdir_abs = workdir
        .canonicalize()
        .map_err(|e| launch_error(workdir, e))?;
    let workdir_str = workdir_abs.to_string_lossy();
    let mut argv: Vec<String> = args
        .iter()
        .map(|a| a.replace(WORKDIR_TOKEN, &workdir_str))
        .collect();
    if !command.iter().any(|a| a.contains(WORKDIR_TOKEN)) {
        argv.push(workdir_str.to_string());
    }
    let log = fs::File::create(workdir.join("model.log")).map_err(|e| launch_error(workdir, e))?;
    let log_err = log.try_clone().map_err(|e| launch_error(workdir, e))?;

    let mut child = Command::new(program.replace(WORKDIR_TOKEN, &workdir_str))
        .args(&argv)
        .current_dir(&workdir_abs)
        .stdin(Stdio::null())
        .stdout(log)
        .stderr(log_err)
        .process_group(0)
        .spawn()
        .map_err(|e| ModelError::Launch(format!("{program}: {e}")))?;

    let status = wait_with_timeout(&mut child, timeout)?;
    if !status.success() {
        return Err(ModelError::Failed {
            status: status.to_string(),
        });
    }
    read_output(&workdir.join(OUTPUT_FILE))
}

fn write_params(path: &Path, names: &[String], natural: &[f64]) -> Result<(), ModelError> {
    let mut text = String::new();
    for (name, value) in names.iter().zip(natural) {
        text.push_str(&format!("{name}={value:.16e}\n"));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| launch_error(path, e))
}

/// Kills the child's whole process group so helpers it spawned die with it.
fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: plain syscall; a stale group id yields ESRCH, which is ignored.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn wait_with_timeout(
    child: &mut Child,
    timeout: Duration,
) -> Result<std::process::ExitStatus, ModelError> {
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                kill_group(child);
                return Ok(status);
            }
            Ok(None) => {}
            Err(e) => return Err(ModelError::Launch(format!("wait failed: {e}"))),
        }
        if start.elapsed() >= timeout {
            kill_group(child);
            let _ = child.wait();
            return Err(ModelError::Timeout {
                seconds: timeout.as_secs_f64(),
            });
        }
        std::thread::sleep(POLL_INTERVAL);
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFile {
    scalars: std::collections::BTreeMap<String, f64>,
    bits: Vec<u8>,
    #[serde(default)]
    projections: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    field: Option<Vec<f64>>,
}

fn read_output(path: &Path) -> Result<ModelOutput, ModelError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
    let raw: OutputFile = serde_json::from_str(&text)
        .map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
    if let Some(b) = raw.bits.iter().find(|&&b| b > 1) {
        return Err(ModelError::Parse(format!("bit value {b} is not 0 or 1")));
    }
    let non_finite = raw
        .scalars
        .values()
        .chain(raw.projections.values())
        .chain(raw.field.iter().flatten())
        .any(|v| !v.is_finite());
    if non_finite {
        return Err(ModelError::Parse("non-finite value in output".into()));
    }
    Ok(ModelOutput {
        scalars: raw.scalars,
        bits: raw.bits,
        field: raw.field,
        projections: raw.projections,
    })
}
