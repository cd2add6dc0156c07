//! Sandbox drivers: the container runtime and a scripted mock.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{LazyLock, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::harness::HarnessBundle;
use super::{ExecutionResult, HarnessEvent, SandboxError, SandboxSpec, GIB, MIB};
use crate::util::Semaphore;

pub const CONTAINER_BIN_ENV: &str = "VLF_CONTAINER_BIN";
pub const STREAM_CAP: usize = 245_760;

pub fn container_bin() -> String {
    std::env::var(CONTAINER_BIN_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "docker".to_string())
}

/// `1g`, `256m`, or plain bytes when neither unit divides evenly.
pub fn format_size(bytes: u64) -> String {
    if bytes > 0 && bytes % GIB == 0 {
        format!("{}g", bytes / GIB)
    } else if bytes > 0 && bytes % MIB == 0 {
        format!("{}m", bytes / MIB)
    } else {
        bytes.to_string()
    }
}

pub fn assemble_sandbox_command(
    spec: &SandboxSpec,
    bundle: &HarnessBundle,
    workdir: &Path,
) -> Vec<String> {
    let mut argv: Vec<String> = vec![
        "run".into(),
        "--rm".into(),
        format!("--network={}", spec.network),
        format!("--memory={}", format_size(spec.memory_limit)),
        format!("--cpus={}", spec.cpu_quota),
    ];
    if spec.read_only {
        argv.push("--read-only".into());
    }
    argv.push("-v".into());
    argv.push(format!("{}:/work:ro", workdir.display()));
    argv.push("--tmpfs".into());
    argv.push(format!("/tmp:size={}", format_size(spec.tmpfs_size)));
    argv.push(format!("--pids-limit={}", spec.pid_limit));
    if spec.no_new_privileges {
        argv.push("--security-opt".into());
        argv.push("no-new-privileges".into());
    }
    argv.push(spec.image.clone());
    argv.extend(bundle.entry_command.iter().cloned());
    argv
}

/// Keeps at most `STREAM_CAP` bytes, cut back to a character boundary.
pub fn truncate_stream(bytes: &[u8]) -> String {
    let head = &bytes[..bytes.len().min(STREAM_CAP)];
    let mut s = String::from_utf8_lossy(head).into_owned();
    if s.len() > STREAM_CAP {
        let mut cut = STREAM_CAP;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

static ASAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"ERROR: AddressSanitizer: ([\w-]+)").expect("static regex"));
static ASAN_SUMMARY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"SUMMARY: AddressSanitizer: (.*)").expect("static regex"));
static UBSAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"runtime error: (.*)").expect("static regex"));

/// `VLF_EVENT` lines from stdout plus sanitizer reports from stderr.
pub fn parse_events(stdout: &str, stderr: &str) -> Vec<HarnessEvent> {
    let mut events: Vec<HarnessEvent> = stdout
        .lines()
        .filter_map(|l| l.strip_prefix("VLF_EVENT "))
        .filter_map(|json| serde_json::from_str(json.trim()).ok())
        .collect();
    if let Some(c) = ASAN.captures(stderr) {
        let mut arg = c[1].to_string();
        if let Some(s) = ASAN_SUMMARY.captures(stderr) {
            arg = format!("{arg}: {}", s[1].trim());
        }
        events.push(HarnessEvent {
            sink: "asan".into(),
            arg,
            ts: None,
        });
    }
    for c in UBSAN.captures_iter(stderr) {
        events.push(HarnessEvent {
            sink: "ubsan".into(),
            arg: c[1].trim().to_string(),
            ts: None,
        });
    }
    events
}

pub trait Driver: Send + Sync {
    fn execute(
        &self,
        bundle: &HarnessBundle,
        spec: &SandboxSpec,
        timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError>;
}

/// Runs the bundle through `driver` and enforces the result invariants.
pub fn execute_in_sandbox(
    bundle: &HarnessBundle,
    spec: &SandboxSpec,
    driver: &dyn Driver,
    timeout_ms: u64,
) -> Result<ExecutionResult, SandboxError> {
    spec.validate()?;
    let mut r = driver.execute(bundle, spec, timeout_ms)?;
    if r.timed_out {
        r.exit_code = None;
    }
    if r.stdout.len() > STREAM_CAP {
        r.stdout = truncate_stream(r.stdout.as_bytes());
    }
    if r.stderr.len() > STREAM_CAP {
        r.stderr = truncate_stream(r.stderr.as_bytes());
    }
    Ok(r)
}

pub struct ContainerDriver {
    bin: String,
    slots: Semaphore,
    workdir_lock: Mutex<()>,
    scratch: Option<PathBuf>,
}

impl ContainerDriver {
    pub fn new(bin: impl Into<String>, max_concurrent: usize) -> Self {
        Self {
            bin: bin.into(),
            slots: Semaphore::new(max_concurrent),
            workdir_lock: Mutex::new(()),
            scratch: None,
        }
    }

    pub fn from_env() -> Self {
        Self::new(container_bin(), 2)
    }

    /// Parent directory for per-run workdirs (default: the system temp dir).
    pub fn with_scratch(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch = Some(dir.into());
        self
    }

    pub fn bin(&self) -> &str {
        &self.bin
    }

    fn make_workdir(&self, bundle: &HarnessBundle) -> Result<tempfile::TempDir, SandboxError> {
        let _guard = self.workdir_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut builder = tempfile::Builder::new();
        builder.prefix("vlf-work-");
        let dir = match &self.scratch {
            Some(p) => builder.tempdir_in(p),
            None => builder.tempdir(),
        }
        .map_err(|e| SandboxError::SpawnFailure(format!("workdir: {e}")))?;
        for (name, contents) in &bundle.files {
            std::fs::write(dir.path().join(name), contents)
                .map_err(|e| SandboxError::SpawnFailure(format!("writing {name}: {e}")))?;
        }
        Ok(dir)
    }

    fn compile(&self, cmd: &[String], workdir: &Path) -> Result<(), SandboxError> {
        let (prog, args) = cmd
            .split_first()
            .ok_or_else(|| SandboxError::CompileFailure("empty command".into()))?;
        let out = Command::new(prog)
            .args(args)
            .current_dir(workdir)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| SandboxError::CompileFailure(format!("{prog}: {e}")))?;
        if !out.status.success() {
            let err = String::from_utf8_lossy(&out.stderr);
            return Err(SandboxError::CompileFailure(
                err.chars().take(4000).collect(),
            ));
        }
        Ok(())
    }
}

fn drain(mut r: impl Read + Send + 'static) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        // keep reading past the cap so the child never blocks on a full pipe
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = (STREAM_CAP + 4).saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> (Option<i32>, bool) {
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return (status.code().or(Some(-1)), false),
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return (None, true);
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(_) => return (None, false),
        }
    }
}

impl Driver for ContainerDriver {
    fn execute(
        &self,
        bundle: &HarnessBundle,
        spec: &SandboxSpec,
        timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError> {
        let _slot = self.slots.acquire();
        let workdir = self.make_workdir(bundle)?;
        if let Some(cmd) = &bundle.compile_command {
            self.compile(cmd, workdir.path())?;
        }
        let argv = assemble_sandbox_command(spec, bundle, workdir.path());
        let start = Instant::now();
        let mut child = Command::new(&self.bin)
            .args(&argv)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| match e.kind() {
                ErrorKind::NotFound => {
                    SandboxError::DriverUnavailable(format!("{}: not found", self.bin))
                }
                _ => SandboxError::SpawnFailure(format!("{}: {e}", self.bin)),
            })?;
        let out = drain(child.stdout.take().expect("piped"));
        let err = drain(child.stderr.take().expect("piped"));
        let (exit_code, timed_out) =
            wait_with_timeout(&mut child, Duration::from_millis(timeout_ms));
        let wall_time_ms = start.elapsed().as_millis() as u64;
        let stdout = truncate_stream(&out.join().unwrap_or_default());
        let stderr = truncate_stream(&err.join().unwrap_or_default());
        let events = parse_events(&stdout, &stderr);
        log::debug!(
            "{} {}: exit {exit_code:?} in {wall_time_ms} ms",
            bundle.sample_id,
            bundle.payload_id
        );
        Ok(ExecutionResult {
            exit_code,
            timed_out,
            stdout,
            stderr,
            events,
            wall_time_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResult {
    #[serde(default)]
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub timed_out: bool,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default = "default_wall")]
    pub wall_time_ms: u64,
}

fn default_wall() -> u64 {
    100
}

impl Default for ScriptedResult {
    fn default() -> Self {
        Self {
            exit_code: Some(0),
            timed_out: false,
            stdout: String::new(),
            stderr: String::new(),
            wall_time_ms: default_wall(),
        }
    }
}

/// Results keyed by sample id, then payload id. `{marker}` in the scripted
/// streams is replaced by the payload's marker. Unscripted pairs exit cleanly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockDriver {
    pub script: BTreeMap<String, BTreeMap<String, ScriptedResult>>,
}

impl MockDriver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SandboxError::DriverUnavailable(format!("{}: {e}", path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| SandboxError::DriverUnavailable(format!("{}: {e}", path.display())))?;
        Ok(Self { script })
    }

    pub fn insert(
        &mut self,
        sample_id: &str,
        payload_id: &str,
        result: ScriptedResult,
    ) -> &mut Self {
        self.script
            .entry(sample_id.to_string())
            .or_default()
            .insert(payload_id.to_string(), result);
        self
    }
}

impl Driver for MockDriver {
    fn execute(
        &self,
        bundle: &HarnessBundle,
        _spec: &SandboxSpec,
        timeout_ms: u64,
    ) -> Result<ExecutionResult, SandboxError> {
        let s = self
            .script
            .get(&bundle.sample_id)
            .and_then(|m| m.get(&bundle.payload_id))
            .cloned()
            .unwrap_or_default();
        let stdout = truncate_stream(s.stdout.replace("{marker}", &bundle.marker).as_bytes());
        let stderr = truncate_stream(s.stderr.replace("{marker}", &bundle.marker).as_bytes());
        let events = parse_events(&stdout, &stderr);
        let over = s.wall_time_ms > timeout_ms;
        let timed_out = s.timed_out || over;
        Ok(ExecutionResult {
            exit_code: if timed_out { None } else { s.exit_code },
            timed_out,
            stdout,
            stderr,
            events,
            wall_time_ms: if over { timeout_ms } else { s.wall_time_ms },
        })
    }
}
