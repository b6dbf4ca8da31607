//! Running a target on one candidate config and classifying what happened.
//!
//! Builtin targets run in-process and report coverage natively. External
//! targets are spawned from a command template such as
//! `./validator --config {input}`; they may report coverage by printing
//! `##branch:<id>` lines on stderr.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::gnb_validator;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const INPUT_PLACEHOLDER: &str = "{input}";
pub const BRANCH_PREFIX: &str = "##branch:";
pub const TMPDIR_ENV: &str = "CONFFUZZ_TMPDIR";
pub const STDERR_EXCERPT_LIMIT: usize = 4096;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("unknown builtin target {0:?} (available: gnb-validator)")]
    UnknownBuiltin(String),
    #[error("bad command template {0:?}: it must contain {{input}} exactly once")]
    BadTemplate(String),
    #[error("timeout must be at least 1 ms")]
    BadTimeout,
    #[error("failed to spawn {command:?}: {source}")]
    SpawnFailure {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("I/O error while executing target: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetKind {
    Builtin(String),
    External(String),
}

/// `builtin:<name>`, `exec:<template>`, or a bare command template.
impl FromStr for TargetKind {
    type Err = TargetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix("builtin:") {
            return Ok(TargetKind::Builtin(name.to_string()));
        }
        let template = s.strip_prefix("exec:").unwrap_or(s);
        Ok(TargetKind::External(template.to_string()))
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Builtin(name) => write!(f, "builtin:{name}"),
            TargetKind::External(template) => write!(f, "exec:{template}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub timeout_ms: u64,
}

impl TargetSpec {
    pub fn builtin(name: &str) -> Self {
        TargetSpec {
            kind: TargetKind::Builtin(name.to_string()),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn external(template: &str, timeout_ms: u64) -> Self {
        TargetSpec {
            kind: TargetKind::External(template.to_string()),
            timeout_ms,
        }
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if self.timeout_ms == 0 {
            return Err(TargetError::BadTimeout);
        }
        match &self.kind {
            TargetKind::Builtin(name) if Builtin::from_name(name).is_none() => {
                Err(TargetError::UnknownBuiltin(name.clone()))
            }
            TargetKind::External(template)
                if template.matches(INPUT_PLACEHOLDER).count() != 1
                    || shell_words::split(template).map_or(true, |argv| argv.is_empty()) =>
            {
                Err(TargetError::BadTemplate(template.clone()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "class", content = "code")]
pub enum OutcomeClass {
    Ok,
    Reject(i32),
    Crash(i32),
    Timeout,
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeClass::Ok => f.write_str("ok"),
            OutcomeClass::Reject(code) => write!(f, "reject({code})"),
            OutcomeClass::Crash(id) => write!(f, "crash({id})"),
            OutcomeClass::Timeout => f.write_str("timeout"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub class: OutcomeClass,
    pub stderr_excerpt: String,
}

impl ExecOutcome {
    pub fn new(class: OutcomeClass, stderr: &str) -> Self {
        ExecOutcome {
            class,
            stderr_excerpt: truncate_utf8(stderr, STDERR_EXCERPT_LIMIT).to_string(),
        }
    }

    pub fn crash_id(&self) -> Option<i32> {
        match self.class {
            OutcomeClass::Crash(id) => Some(id),
            _ => None,
        }
    }
}

fn truncate_utf8(s: &str, limit: usize) -> &str {
    if s.len() <= limit {
        return s;
    }
    let mut end = limit;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Coverage observed during one execution.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Feedback {
    branches: BTreeSet<String>,
    digest: u64,
}

impl Feedback {
    pub fn new(branches: BTreeSet<String>) -> Self {
        let digest = branch_digest(&branches);
        Feedback { branches, digest }
    }

    pub fn branches(&self) -> &BTreeSet<String> {
        &self.branches
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }
}

impl FromIterator<String> for Feedback {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Feedback::new(iter.into_iter().collect())
    }
}

fn branch_digest(branches: &BTreeSet<String>) -> u64 {
    let mut hasher = Sha256::new();
    for b in branches {
        hasher.update(b.as_bytes());
        hasher.update([0u8]);
    }
    let out = hasher.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Raw process state as observed by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawStatus {
    Exited(i32),
    Signaled(i32),
    /// Still running when the harness gave up waiting.
    Running,
}

pub fn classify_outcome(raw: RawStatus, elapsed_ms: u64, timeout_ms: u64) -> OutcomeClass {
    if raw == RawStatus::Running || elapsed_ms > timeout_ms {
        return OutcomeClass::Timeout;
    }
    match raw {
        RawStatus::Exited(0) => OutcomeClass::Ok,
        RawStatus::Exited(code) => OutcomeClass::Reject(code),
        RawStatus::Signaled(sig) => OutcomeClass::Crash(sig),
        RawStatus::Running => OutcomeClass::Timeout,
    }
}

/// Anything that can execute one input and report its outcome.
pub trait Target: Send + Sync {
    fn execute(&self, input: &str) -> Result<(ExecOutcome, Feedback), TargetError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    GnbValidator,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gnb-validator" => Some(Builtin::GnbValidator),
            _ => None,
        }
    }
}

impl Target for Builtin {
    fn execute(&self, input: &str) -> Result<(ExecOutcome, Feedback), TargetError> {
        match self {
            Builtin::GnbValidator => Ok(gnb_validator::validate_text(input)),
        }
    }
}

/// Details of one external execution, beyond what the fuzzer needs.
#[derive(Debug, Clone)]
pub struct ExecRecord {
    pub outcome: ExecOutcome,
    pub feedback: Feedback,
    pub pid: u32,
    pub elapsed: Duration,
}

#[derive(Debug)]
pub struct ExternalTarget {
    argv: Vec<String>,
    timeout: Duration,
    timeout_ms: u64,
    dir: PathBuf,
    seq: AtomicU64,
}

impl ExternalTarget {
    pub fn new(template: &str, timeout_ms: u64, campaign_id: &str) -> Result<Self, TargetError> {
        TargetSpec::external(template, timeout_ms).validate()?;
        let argv = shell_words::split(template).map_err(|_| TargetError::BadTemplate(template.into()))?;
        let dir = temp_root().join(campaign_id);
        fs::create_dir_all(&dir)?;
        Ok(ExternalTarget {
            argv,
            timeout: Duration::from_millis(timeout_ms),
            timeout_ms,
            dir,
            seq: AtomicU64::new(0),
        })
    }

    pub fn temp_dir(&self) -> &Path {
        &self.dir
    }

    pub fn execute_detailed(&self, input: &str) -> Result<ExecRecord, TargetError> {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        let input_path = self.dir.join(format!("{seq}.conf"));
        fs::write(&input_path, input)?;
        let result = self.run(&input_path);
        let _ = fs::remove_file(&input_path);
        result
    }

    fn run(&self, input_path: &Path) -> Result<ExecRecord, TargetError> {
        let path_str = input_path.to_string_lossy();
        let argv: Vec<String> = self
            .argv
            .iter()
            .map(|a| a.replace(INPUT_PLACEHOLDER, &path_str))
            .collect();

        let started = Instant::now();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
            .map_err(|source| TargetError::SpawnFailure {
                command: argv[0].clone(),
                source,
            })?;
        let pid = child.id();

        let stderr = child.stderr.take().expect("stderr is piped");
        let reader = thread::spawn(move || {
            let mut branches = BTreeSet::new();
            let mut text = String::new();
            for line in BufReader::new(stderr).lines() {
                let Ok(line) = line else { break };
                if let Some(id) = line.strip_prefix(BRANCH_PREFIX) {
                    branches.insert(id.trim_end().to_string());
                } else if text.len() <= STDERR_EXCERPT_LIMIT {
                    text.push_str(&line);
                    text.push('\n');
                }
            }
            (branches, text)
        });

        let status = child.wait_timeout(self.timeout)?;
        // Take down the whole process group, including anything the
        // target left running, whether or not it exited on its own.
        kill_group(pid);
        let raw = match status {
            Some(status) => match (status.code(), status.signal()) {
                (Some(code), _) => RawStatus::Exited(code),
                (None, Some(sig)) => RawStatus::Signaled(sig),
                (None, None) => RawStatus::Exited(-1),
            },
            None => {
                child.wait()?;
                RawStatus::Running
            }
        };
        let elapsed = started.elapsed();
        let (branches, text) = reader.join().unwrap_or_default();

        let class = classify_outcome(raw, elapsed.as_millis() as u64, self.timeout_ms);
        Ok(ExecRecord {
            outcome: ExecOutcome::new(class, &text),
            feedback: Feedback::new(branches),
            pid,
            elapsed,
        })
    }
}

impl Drop for ExternalTarget {
    fn drop(&mut self) {
        let _ = fs::remove_dir(&self.dir);
    }
}

impl Target for ExternalTarget {
    fn execute(&self, input: &str) -> Result<(ExecOutcome, Feedback), TargetError> {
        self.execute_detailed(input).map(|r| (r.outcome, r.feedback))
    }
}

fn kill_group(pgid: u32) {
    // SAFETY: kill(2) with a negative pid signals the process group; it has
    // no memory-safety preconditions.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}

/// True if a process with this pid exists (zombies included).
pub fn process_alive(pid: u32) -> bool {
    // SAFETY: signal 0 only performs the existence and permission check.
    unsafe { libc::kill(pid as libc::pid_t, 0) == 0 }
}

pub fn temp_root() -> PathBuf {
    std::env::var_os(TMPDIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

/// Builds a runnable target from a spec. External targets stage inputs
/// under `<tmp>/<campaign_id>/`.
pub fn make_target(spec: &TargetSpec, campaign_id: &str) -> Result<Box<dyn Target>, TargetError> {
    spec.validate()?;
    match &spec.kind {
        TargetKind::Builtin(name) => {
            let builtin = Builtin::from_name(name).ok_or_else(|| TargetError::UnknownBuiltin(name.clone()))?;
            Ok(Box::new(builtin))
        }
        TargetKind::External(template) => Ok(Box::new(ExternalTarget::new(
            template,
            spec.timeout_ms,
            campaign_id,
        )?)),
    }
}

/// One-shot execution of `input` under `spec`.
pub fn execute(spec: &TargetSpec, input: &str) -> Result<(ExecOutcome, Feedback), TargetError> {
    let id = format!("exec-{}-{}", std::process::id(), unique_suffix());
    make_target(spec, &id)?.execute(input)
}

pub(crate) fn unique_suffix() -> u64 {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos() as u64)
        .unwrap_or(0);
    (nanos << 16) ^ COUNTER.fetch_add(1, Ordering::Relaxed)
}
