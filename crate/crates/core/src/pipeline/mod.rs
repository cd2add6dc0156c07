//! The closed lifecycle: detect, validate, and repair only what validation
//! confirmed. Runs persist to an append-only run directory.

pub mod corpus;
mod report;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fusion::{detect_document, explain, load_checkpoint, FusionModel};
use crate::repair::{repair_exploited, Generator, RepairOutcome};
use crate::semantic::EmbedderConfig;
use crate::uast::{content_hash, detect_language, Language};
use crate::validation::{
    validate_sample, ContainerDriver, Driver, ExploitedTrace, MockDriver, Planner,
    ValidationConfig, ValidationSample, VerdictKind,
};

pub use report::{report_metrics, Report, ReportCounts};

pub const PLANNER_URL_ENV: &str = "VLF_PLANNER_URL";
pub const PATCHER_URL_ENV: &str = "VLF_PATCHER_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("serialization: {0}")]
    Serde(String),
    #[error("labels missing for {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingLabels(Vec<String>),
    #[error("model: {0}")]
    Model(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SandboxDriverConfig {
    Container {
        #[serde(default)]
        bin: Option<String>,
    },
    Mock {
        script: PathBuf,
    },
}

impl Default for SandboxDriverConfig {
    fn default() -> Self {
        SandboxDriverConfig::Container { bin: None }
    }
}

/// Which flag-0 samples still get a short validation probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbePolicy {
    #[default]
    All,
    None,
    Fraction {
        f: f64,
    },
}

impl ProbePolicy {
    /// Deterministic per sample id and seed.
    pub fn selects(&self, sample_id: &str, seed: u64) -> bool {
        match *self {
            ProbePolicy::All => true,
            ProbePolicy::None => false,
            ProbePolicy::Fraction { f } => {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(sample_id.as_bytes());
                let d = h.finalize();
                let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
                (x >> 11) as f64 / (1u64 << 53) as f64 <= f && f > 0.0
            }
        }
    }
}

fn default_harness_timeout() -> u64 {
    30
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleConfig {
    pub model_path: PathBuf,
    /// Overrides the embedder stored with the model.
    #[serde(default)]
    pub embedder: Option<EmbedderConfig>,
    #[serde(default)]
    pub planner: Planner,
    #[serde(default = "default_harness_timeout")]
    pub harness_timeout_s: u64,
    #[serde(default)]
    pub sandbox_driver: SandboxDriverConfig,
    #[serde(default)]
    pub generator: Generator,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub flag0_probe_policy: ProbePolicy,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
}

impl LifecycleConfig {
    pub fn new(model_path: impl Into<PathBuf>, run_dir: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            embedder: None,
            planner: Planner::default(),
            harness_timeout_s: default_harness_timeout(),
            sandbox_driver: SandboxDriverConfig::default(),
            generator: Generator::default(),
            run_dir: run_dir.into(),
            flag0_probe_policy: ProbePolicy::default(),
            workers: default_workers(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Remote planner and patcher endpoints from the environment.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(PLANNER_URL_ENV) {
            if !url.is_empty() {
                self.planner = Planner::Remote {
                    url,
                    timeout_ms: 30_000,
                };
            }
        }
        if let Ok(url) = std::env::var(PATCHER_URL_ENV) {
            if !url.is_empty() {
                self.generator = Generator::Remote {
                    url,
                    timeout_ms: 60_000,
                };
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.model_path.is_file() {
            return Err(PipelineError::Config(format!(
                "model {} does not exist",
                self.model_path.display()
            )));
        }
        if let SandboxDriverConfig::Mock { script } = &self.sandbox_driver {
            if !script.is_file() {
                return Err(PipelineError::Config(format!(
                    "mock script {} does not exist",
                    script.display()
                )));
            }
        }
        if let ProbePolicy::Fraction { f } = self.flag0_probe_policy {
            if !(0.0..=1.0).contains(&f) {
                return Err(PipelineError::Config(format!(
                    "probe fraction {f} is outside [0, 1]"
                )));
            }
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if self.harness_timeout_s == 0 {
            return Err(PipelineError::Config(
                "harness_timeout_s must be at least 1".into(),
            ));
        }
        if let Some(e) = &self.embedder {
            e.validate().map_err(PipelineError::Config)?;
        }
        Ok(())
    }

    pub fn driver(&self) -> Result<Box<dyn Driver>, PipelineError> {
        Ok(match &self.sandbox_driver {
            SandboxDriverConfig::Container { bin: Some(bin) } => {
                Box::new(ContainerDriver::new(bin.clone(), self.workers))
            }
            SandboxDriverConfig::Container { bin: None } => Box::new(ContainerDriver::from_env()),
            SandboxDriverConfig::Mock { script } => Box::new(
                MockDriver::from_file(script).map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
        })
    }

    pub fn model(&self) -> Result<FusionModel, PipelineError> {
        let mut model =
            load_checkpoint(&self.model_path).map_err(|e| PipelineError::Model(e.to_string()))?;
        if let Some(e) = &self.embedder {
            model.embedder_cfg = e.clone();
        }
        model.embedder_cfg = model.embedder_cfg.with_env_overrides();
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub id: String,
    pub path: PathBuf,
}

fn is_source(path: &Path) -> bool {
    detect_language(path, b"").is_ok()
}

/// Files are taken as given; directories are walked in sorted order and
/// their files get ids relative to the directory.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<InputFile>, PipelineError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut stack = vec![p.clone()];
            let mut found = Vec::new();
            while let Some(dir) = stack.pop() {
                for entry in fs::read_dir(&dir).map_err(|e| PipelineError::io(&dir, e))? {
                    let path = entry.map_err(|e| PipelineError::io(&dir, e))?.path();
                    if path.is_dir() {
                        stack.push(path);
                    } else if is_source(&path) {
                        found.push(path);
                    }
                }
            }
            found.sort();
            for f in found {
                let rel = f.strip_prefix(p).unwrap_or(&f);
                let id = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push(InputFile { id, path: f });
            }
        } else {
            let id = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push(InputFile {
                id,
                path: p.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairKind {
    Success,
    NonConvergent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub parse_ms: f64,
    pub detect_ms: f64,
    pub validate_ms: f64,
    pub repair_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub path: String,
    pub language: Option<Language>,
    pub hash: Option<String>,
    pub flag: Option<u8>,
    pub prob_vulnerable: Option<f64>,
    pub validated: bool,
    pub verdict: Option<VerdictKind>,
    pub repair_kind: Option<RepairKind>,
    pub repair_iterations: Option<usize>,
    pub error: Option<String>,
    pub timings: StageTimings,
}

impl SampleRecord {
    fn new(input: &InputFile) -> Self {
        Self {
            sample_id: input.id.clone(),
            path: input.path.display().to_string(),
            language: None,
            hash: None,
            flag: None,
            prob_vulnerable: None,
            validated: false,
            verdict: None,
            repair_kind: None,
            repair_iterations: None,
            error: None,
            timings: StageTimings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub samples: usize,
    pub errors: usize,
    pub flagged: usize,
    pub validated: usize,
    pub exploited: usize,
    pub not_exploited: usize,
    pub inconclusive: usize,
    pub repairs: usize,
    pub repaired: usize,
    pub non_convergent: usize,
}

impl Aggregate {
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let mut a = Aggregate {
            samples: records.len(),
            ..Default::default()
        };
        for r in records {
            a.errors += r.error.is_some() as usize;
            a.flagged += (r.flag == Some(1)) as usize;
            a.validated += r.validated as usize;
            match r.verdict {
                Some(VerdictKind::Exploited) => a.exploited += 1,
                Some(VerdictKind::NotExploited) => a.not_exploited += 1,
                Some(VerdictKind::Inconclusive) => a.inconclusive += 1,
                None => {}
            }
            match r.repair_kind {
                Some(RepairKind::Success) => {
                    a.repairs += 1;
                    a.repaired += 1;
                }
                Some(RepairKind::NonConvergent) => {
                    a.repairs += 1;
                    a.non_convergent += 1;
                }
                None => {}
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub started_at: u64,
    pub config: LifecycleConfig,
    pub records: Vec<SampleRecord>,
    pub aggregate: Aggregate,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Serde(format!("{}: {e}", path.display())))
    }

    /// Stored aggregate agrees with the records.
    pub fn is_consistent(&self) -> bool {
        self.aggregate == Aggregate::from_records(&self.records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub sample_id: String,
    pub flag: u8,
    pub prob_vulnerable: f64,
    pub alpha_g: f64,
    pub alpha_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairLine {
    pub sample_id: String,
    pub verdict: VerdictKind,
    pub outcome: RepairOutcome,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const VALIDATIONS_FILE: &str = "validations.jsonl";
pub const REPAIRS_FILE: &str = "repairs.jsonl";
pub const REVIEW_DIR: &str = "review";

struct RunFiles {
    detections: File,
    validations: File,
    repairs: File,
}

struct Writer {
    dir: PathBuf,
    files: Mutex<RunFiles>,
}

impl Writer {
    fn open(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir.join(REVIEW_DIR)).map_err(|e| PipelineError::io(dir, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| PipelineError::io(&p, e))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Mutex::new(RunFiles {
                detections: open(DETECTIONS_FILE)?,
                validations: open(VALIDATIONS_FILE)?,
                repairs: open(REPAIRS_FILE)?,
            }),
        })
    }

    fn append<T: Serialize>(
        &self,
        pick: fn(&mut RunFiles) -> &mut File,
        value: &T,
    ) -> Result<(), String> {
        let mut line = serde_json::to_string(value).map_err(|e| e.to_string())?;
        line.push('\n');
        let mut files = self.files.lock().unwrap_or_else(|p| p.into_inner());
        pick(&mut files)
            .write_all(line.as_bytes())
            .map_err(|e| e.to_string())
    }

    fn review<T: Serialize>(&self, sample_id: &str, value: &T) -> Result<(), String> {
        let name: String = sample_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let path = self.dir.join(REVIEW_DIR).join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
        fs::write(path, text).map_err(|e| e.to_string())
    }
}

struct Stages<'a> {
    cfg: &'a LifecycleConfig,
    model: &'a FusionModel,
    driver: &'a dyn Driver,
    validation: ValidationConfig,
    writer: &'a Writer,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

impl Stages<'_> {
    fn run(&self, input: &InputFile, rec: &mut SampleRecord) -> Result<(), String> {
        let t = Instant::now();
        let source = fs::read_to_string(&input.path)
            .map_err(|e| format!("read {}: {e}", input.path.display()))?;
        let language =
            detect_language(&input.path, source.as_bytes()).map_err(|e| e.to_string())?;
        rec.language = Some(language);
        rec.hash = Some(content_hash(source.as_bytes()));
        let sample =
            ValidationSample::parse(&input.id, language, source).map_err(|e| e.to_string())?;
        rec.timings.parse_ms = ms(t);

        let t = Instant::now();
        let det =
            detect_document(&sample.doc, &sample.source, self.model).map_err(|e| e.to_string())?;
        rec.timings.detect_ms = ms(t);
        rec.flag = Some(det.flag);
        rec.prob_vulnerable = Some(det.prob_vulnerable);
        self.writer.append(
            |f| &mut f.detections,
            &DetectionLine {
                sample_id: input.id.clone(),
                flag: det.flag,
                prob_vulnerable: det.prob_vulnerable,
                alpha_g: det.alpha_g,
                alpha_l: det.alpha_l,
            },
        )?;

        if det.flag == 0
            && !self
                .cfg
                .flag0_probe_policy
                .selects(&input.id, self.cfg.seed)
        {
            return Ok(());
        }
        let t = Instant::now();
        let mut trace = validate_sample(&sample, det.flag, &self.validation, self.driver);
        trace.explanation = Some(explain(&det));
        rec.timings.validate_ms = ms(t);
        rec.validated = true;
        rec.verdict = Some(trace.verdict.kind);
        self.writer.append(|f| &mut f.validations, &trace)?;

        // the gate: only an execution-confirmed trace converts
        let Ok(exploited) = ExploitedTrace::try_from(trace) else {
            return Ok(());
        };
        let t = Instant::now();
        let outcome = repair_exploited(&sample, &exploited, self.model, &self.cfg.generator);
        rec.timings.repair_ms = ms(t);
        rec.repair_iterations = Some(outcome.iterations_used());
        rec.repair_kind = Some(if outcome.is_success() {
            RepairKind::Success
        } else {
            RepairKind::NonConvergent
        });
        if let RepairOutcome::NonConvergent { trace } = &outcome {
            self.writer.review(&input.id, trace)?;
        }
        self.writer.append(
            |f| &mut f.repairs,
            &RepairLine {
                sample_id: input.id.clone(),
                verdict: exploited.trace().verdict.kind,
                outcome,
            },
        )?;
        Ok(())
    }

    fn process(&self, input: &InputFile) -> SampleRecord {
        let mut rec = SampleRecord::new(input);
        let result = catch_unwind(AssertUnwindSafe(|| self.run(input, &mut rec)));
        let error = match result {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e),
            Err(panic) => Some(format!(
                "panicked: {}",
                panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        if let Some(e) = &error {
            log::warn!("{}: {e}", input.id);
        }
        rec.error = error;
        rec
    }
}

fn run_id(cfg: &LifecycleConfig, inputs: &[InputFile]) -> String {
    let mut h = Sha256::new();
    let mut echo = cfg.clone();
    echo.run_dir = PathBuf::new();
    h.update(serde_json::to_vec(&echo).unwrap_or_default());
    for i in inputs {
        h.update(i.id.as_bytes());
        h.update(fs::read(&i.path).unwrap_or_default());
    }
    hex::encode(&h.finalize()[..8])
}

pub fn run_lifecycle(
    inputs: &[InputFile],
    cfg: &LifecycleConfig,
) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let model = cfg.model()?;
    let driver = cfg.driver()?;
    let writer = Writer::open(&cfg.run_dir)?;
    let stages = Stages {
        cfg,
        model: &model,
        driver: driver.as_ref(),
        validation: ValidationConfig {
            planner: cfg.planner.clone(),
            harness_timeout_s: cfg.harness_timeout_s,
        },
        writer: &writer,
    };
    let started_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    log::info!(
        "lifecycle over {} sample(s) with {} worker(s)",
        inputs.len(),
        cfg.workers
    );
    let records: Vec<SampleRecord> =
        pool.install(|| inputs.par_iter().map(|i| stages.process(i)).collect());
    let manifest = RunManifest {
        run_id: run_id(cfg, inputs),
        started_at,
        config: cfg.clone(),
        aggregate: Aggregate::from_records(&records),
        records,
    };
    corpus::write_json(&cfg.run_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads one JSONL file of the run directory.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Serde(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Labels keyed by sample id, usually from `labels.json`.
pub type Labels = BTreeMap<String, u8>;
