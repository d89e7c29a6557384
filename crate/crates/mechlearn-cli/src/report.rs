//! Reports: the configuration that produced a run, its seeds, the source version,
//! the result and the hashes of every artifact written. Wall-clock data lives in
//! `run` and is the only part that differs between identical reruns.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use mechlearn::io::{self, Instance};

use crate::args::{Command, Global};
use crate::{commands, generate, verify};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, reason: String },
    Lib { module: &'static str, err: mechlearn::Error },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, reason } => write!(f, "{}: {reason}", path.display()),
            CliError::Lib { module, err } => write!(f, "[{module}] {err}"),
        }
    }
}

impl CliError {
    /// 1 for solver failures, 2 for bad input and guard violations. Failed checks exit 1
    /// through the report instead.
    pub fn exit_code(&self) -> u8 {
        use mechlearn::Error as E;
        match self {
            CliError::Lib {
                err: E::Infeasible | E::Unbounded | E::IterationLimit,
                ..
            } => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches module provenance to library errors.
pub trait Within<T> {
    fn within(self, module: &'static str) -> CliResult<T>;
}

impl<T> Within<T> for mechlearn::Result<T> {
    fn within(self, module: &'static str) -> CliResult<T> {
        self.map_err(|err| CliError::Lib { module, err })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Config {
    pub global: Global,
    pub command: Command,
}

pub struct Artifact {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

/// What a command computed, before it is wrapped into a report.
pub struct Outcome {
    pub result: Value,
    pub artifacts: Vec<Artifact>,
    pub seeds: BTreeMap<String, u64>,
    pub passed: bool,
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn new(result: Value) -> Self {
        Outcome {
            result,
            artifacts: Vec::new(),
            seeds: BTreeMap::new(),
            passed: true,
            summary: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    pub fn artifact(mut self, path: PathBuf, bytes: Vec<u8>) -> Self {
        self.artifacts.push(Artifact { path, bytes });
        self
    }

    pub fn line(mut self, s: impl Into<String>) -> Self {
        self.summary.push(s.into());
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunInfo {
    pub unix_time: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub passed: bool,
    pub result: Value,
    /// sha256 of each artifact, keyed by path.
    pub artifacts: BTreeMap<String, String>,
    pub run: RunInfo,
}

impl Report {
    /// Everything except the wall-clock fields.
    pub fn reproducible_part(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("reports serialize");
        v.as_object_mut().unwrap().remove("run");
        v
    }
}

pub fn version() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("MECHLEARN_SOURCE_HASH"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.into(),
        reason: e.to_string(),
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.into(),
            reason: e.to_string(),
        })?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.into(),
        reason: e.to_string(),
    })
}

pub fn load_instance(path: &Path) -> CliResult<Instance> {
    let text = read_text(path)?;
    io::parse_instance(&text).map_err(|err| match err {
        mechlearn::Error::Parse { path: field, reason } => CliError::Usage(format!("{}: {field}: {reason}", path.display())),
        err => CliError::Lib { module: "io", err },
    })
}

pub fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = io::to_pretty(v);
    s.push('\n');
    s.into_bytes()
}

/// The artifact path of commands that write one.
pub fn required_out(global: &Global, what: &str) -> CliResult<PathBuf> {
    global
        .out
        .clone()
        .ok_or_else(|| CliError::Usage(format!("--out is required: it names the {what} to write")))
}

/// Runs a command without touching the filesystem beyond reading inputs.
pub fn run(config: &Config) -> CliResult<Outcome> {
    let g = &config.global;
    let module = config.command.module();
    let out = match &config.command {
        Command::Generate(a) => generate::cmd_generate(a, g),
        Command::Learn(a) => commands::cmd_learn(a, g),
        Command::Eval(a) => commands::cmd_eval(a, g),
        Command::Exante { op } => commands::cmd_exante(op, g),
        Command::Mech { op } => commands::cmd_mech(op, g),
        Command::Oracle { op } => commands::cmd_oracle(op, g),
        Command::Bounds(a) => commands::cmd_bounds(a),
        Command::Verify(a) => verify::cmd_verify(a, g),
    };
    out.map_err(|e| match e {
        CliError::Lib { module: "", err } => CliError::Lib { module, err },
        other => other,
    })
}

pub fn build_report(config: &Config, outcome: &Outcome, started: Instant) -> Report {
    Report {
        command: config.command.name().into(),
        version: version(),
        config: config.clone(),
        seeds: outcome.seeds.clone(),
        passed: outcome.passed,
        result: outcome.result.clone(),
        artifacts: outcome
            .artifacts
            .iter()
            .map(|a| (a.path.display().to_string(), sha256_hex(&a.bytes)))
            .collect(),
        run: RunInfo {
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_ms: started.elapsed().as_millis() as u64,
        },
    }
}

/// Where the report goes: --out unless an artifact took it, then a sidecar next to the
/// first artifact, else stdout.
fn report_path(config: &Config, outcome: &Outcome) -> Option<PathBuf> {
    let out = config.global.out.clone();
    if out.as_ref().is_some_and(|o| outcome.artifacts.iter().all(|a| &a.path != o)) {
        return out;
    }
    outcome.artifacts.first().map(|a| a.path.with_extension("report.json"))
}

/// Runs, writes artifacts and the report, prints the summary. Returns whether the run passed.
pub fn execute(config: &Config) -> CliResult<bool> {
    let started = Instant::now();
    let outcome = run(config)?;
    let report = build_report(config, &outcome, started);
    for a in &outcome.artifacts {
        write_bytes(&a.path, &a.bytes)?;
    }
    let bytes = json_bytes(&report);
    match report_path(config, &outcome) {
        Some(p) => {
            write_bytes(&p, &bytes)?;
            eprintln!("report: {}", p.display());
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    for line in &outcome.summary {
        eprintln!("{line}");
    }
    eprintln!("{}", if report.passed { "PASS" } else { "FAIL" });
    Ok(report.passed)
}
