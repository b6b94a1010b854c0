//! Config-driven stage runner and run manifests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use coarsegrain::data::sidecar_path;

use crate::ops::{Format, Op, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `{"stages": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub op: String,
    #[serde(default)]
    pub args: Value,
    /// Input name to a file path or an earlier stage's output
    /// (`@stage` or `@stage:key`).
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Report formats for this stage; defaults to the run-wide setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<Format>>,
}

#[derive(Debug)]
pub enum PipelineError {
    /// Malformed or inconsistent configuration (exit code 2).
    Config(String),
    /// A stage failed (exit code 3); the manifest records the failure.
    Stage {
        stage: String,
        source: anyhow::Error,
    },
    /// The manifest or output directory could not be written (exit code 1).
    Io(anyhow::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::Config(msg) => write!(f, "config error: {msg}"),
            PipelineError::Stage { stage, source } => {
                write!(f, "stage {stage:?} failed: {source:#}")
            }
            PipelineError::Io(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    /// Output paths are relative to the output directory.
    pub path: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub op: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: PipelineConfig,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Seed for stages that do not set one.
    pub seed: u64,
    /// Report formats for stages that do not set their own.
    pub formats: Vec<Format>,
    /// Relative input paths are resolved against this directory.
    pub base_dir: PathBuf,
    pub command: Vec<String>,
    pub manifest_name: String,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            seed: 0,
            formats: Vec::new(),
            base_dir: PathBuf::from("."),
            command: Vec::new(),
            manifest_name: MANIFEST_FILE.to_string(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

enum InputRef {
    File(PathBuf),
    Stage { stage: String, key: String },
}

struct Planned {
    op: Op,
    inputs: BTreeMap<String, InputRef>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Validate every stage and resolve its input references up front, so a
/// config error never leaves partial outputs behind.
fn plan(config: &PipelineConfig, base_dir: &Path) -> Result<Vec<Planned>, PipelineError> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut planned: Vec<Planned> = Vec::with_capacity(config.stages.len());
    for spec in &config.stages {
        let err = |msg: String| PipelineError::Config(format!("stage {:?}: {msg}", spec.name));
        if !valid_name(&spec.name) {
            return Err(err("names may only use letters, digits, '_' and '-'".into()));
        }
        if seen.contains_key(spec.name.as_str()) {
            return Err(err("duplicate stage name".into()));
        }
        let op = Op::parse(&spec.op, &spec.args).map_err(err)?;
        for required in op.required_inputs() {
            if !spec.inputs.contains_key(*required) {
                return Err(err(format!("{} needs input {required:?}", op.name())));
            }
        }
        let mut inputs = BTreeMap::new();
        for (name, value) in &spec.inputs {
            if !op.accepts_input(name) {
                return Err(err(format!("{} takes no input {name:?}", op.name())));
            }
            let resolved = match value.strip_prefix('@') {
                Some(reference) => {
                    let (stage, key) = match reference.split_once(':') {
                        Some((s, k)) => (s, Some(k)),
                        None => (reference, None),
                    };
                    let source = seen
                        .get(stage)
                        .map(|&i| &planned[i].op)
                        .ok_or_else(|| err(format!("{value:?} does not name an earlier stage")))?;
                    let key = match key {
                        Some(k) if source.output_keys().contains(&k) => k,
                        Some(k) => {
                            return Err(err(format!(
                                "stage {stage:?} ({}) has no output {k:?}",
                                source.name()
                            )))
                        }
                        None => source.output_keys()[0],
                    };
                    InputRef::Stage {
                        stage: stage.to_string(),
                        key: key.to_string(),
                    }
                }
                None => InputRef::File(base_dir.join(value)),
            };
            inputs.insert(name.clone(), resolved);
        }
        seen.insert(spec.name.as_str(), planned.len());
        planned.push(Planned { op, inputs });
    }
    Ok(planned)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of `path` (plus its EMB1 sidecar when present). The recorded path
/// is relative to `out_dir` when the file lives there.
fn digest_file(name: &str, path: &Path, out_dir: &Path) -> anyhow::Result<FileRecord> {
    use anyhow::Context;
    let bytes = fs::read(path).with_context(|| format!("reading {name:?} ({})", path.display()))?;
    let meta = sidecar_path(path);
    let sidecar_sha256 = match fs::read(&meta) {
        Ok(b) => Some(sha256_hex(&b)),
        Err(_) => None,
    };
    let shown = path.strip_prefix(out_dir).unwrap_or(path);
    Ok(FileRecord {
        name: name.to_string(),
        path: shown.to_string_lossy().into_owned(),
        sha256: sha256_hex(&bytes),
        sidecar_sha256,
    })
}

fn run_stage(
    spec: &StageSpec,
    planned: &Planned,
    produced: &HashMap<String, BTreeMap<String, PathBuf>>,
    opts: &RunOptions,
    seed: u64,
    record: &mut StageRecord,
) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut inputs = BTreeMap::new();
    for (name, source) in &planned.inputs {
        let path = match source {
            InputRef::File(path) => path.clone(),
            InputRef::Stage { stage, key } => produced
                .get(stage)
                .and_then(|outputs| outputs.get(key))
                .cloned()
                .ok_or_else(|| anyhow::anyhow!("stage {stage:?} produced no {key:?} output"))?,
        };
        record.inputs.push(digest_file(name, &path, &opts.out_dir)?);
        inputs.insert(name.clone(), path);
    }
    let formats = spec.formats.as_deref().unwrap_or(&opts.formats);
    let mut stage = Stage {
        name: &spec.name,
        out_dir: &opts.out_dir,
        formats,
        inputs: &inputs,
        outputs: Vec::new(),
    };
    let result = planned.op.run(&mut stage, seed);
    // partial outputs stay listed so a failed run can be inspected
    for (key, path) in &stage.outputs {
        if let Ok(file) = digest_file(key, path, &opts.out_dir) {
            record.outputs.push(file);
        }
    }
    result?;
    Ok(stage.outputs.into_iter().collect())
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), PipelineError> {
    let mut text =
        serde_json::to_string_pretty(manifest).map_err(|e| PipelineError::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| PipelineError::Io(anyhow::anyhow!("writing {}: {e}", path.display())))
}

/// Run every stage in order, writing outputs and the manifest to
/// `opts.out_dir`. Stages after a failure are recorded as not run.
pub fn run_pipeline(
    config: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunManifest, PipelineError> {
    let planned = plan(config, &opts.base_dir)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| {
        PipelineError::Io(anyhow::anyhow!("creating {}: {e}", opts.out_dir.display()))
    })?;

    let mut manifest = RunManifest {
        tool: "coarsegrain".into(),
        version: crate::VERSION.into(),
        command: opts.command.clone(),
        config: config.clone(),
        seed: opts.seed,
        status: Status::Ok,
        failed_stage: None,
        stages: Vec::with_capacity(config.stages.len()),
    };
    let mut produced: HashMap<String, BTreeMap<String, PathBuf>> = HashMap::new();
    let mut failure: Option<(String, anyhow::Error)> = None;

    for (spec, step) in config.stages.iter().zip(&planned) {
        let seed = step
            .op
            .uses_seed()
            .then(|| step.op.seed().unwrap_or(opts.seed));
        let mut record = StageRecord {
            name: spec.name.clone(),
            op: step.op.name().into(),
            status: Status::NotRun,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            error: None,
        };
        if failure.is_none() {
            log::info!("stage {} ({})", spec.name, step.op.name());
            match run_stage(spec, step, &produced, opts, seed.unwrap_or(0), &mut record) {
                Ok(outputs) => {
                    record.status = Status::Ok;
                    produced.insert(spec.name.clone(), outputs);
                }
                Err(e) => {
                    record.status = Status::Failed;
                    record.error = Some(format!("{e:#}"));
                    manifest.status = Status::Failed;
                    manifest.failed_stage = Some(spec.name.clone());
                    failure = Some((spec.name.clone(), e));
                }
            }
        }
        manifest.stages.push(record);
    }

    write_manifest(&manifest, &opts.out_dir.join(&opts.manifest_name))?;
    match failure {
        Some((stage, source)) => Err(PipelineError::Stage { stage, source }),
        None => Ok(manifest),
    }
}

/// Recompute the digest of every output listed in a manifest. Returns one
/// message per missing or changed file.
pub fn verify_manifest(out_dir: &Path, manifest_name: &str) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(out_dir.join(manifest_name))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let mut problems = Vec::new();
    for stage in &manifest.stages {
        for out in &stage.outputs {
            let path = out_dir.join(&out.path);
            match digest_file(&out.name, &path, out_dir) {
                Ok(now) if now.sha256 == out.sha256 && now.sidecar_sha256 == out.sidecar_sha256 => {
                }
                Ok(_) => problems.push(format!("{}: digest changed", out.path)),
                Err(e) => problems.push(format!("{}: {e:#}", out.path)),
            }
        }
    }
    Ok(problems)
}
