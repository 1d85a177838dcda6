//! The local stack: probing a machine through an injectable command runner,
//! and environment snapshot files.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::model::{parse_version, StackLayer, Version, VersionedComponent};
use crate::project::normalize_package;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Exit status reported for commands that could not be started.
pub const NOT_FOUND: i32 = 127;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("environment JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("snapshot schema version {found} is not supported (expected {expected})")]
    Schema { expected: u32, found: u64 },
    #[error("snapshot: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandOutput {
    pub exit_status: i32,
    pub stdout: String,
    pub stderr: String,
}

pub trait CommandRunner {
    fn run(&self, command: &str, args: &[String]) -> CommandOutput;
}

/// Runs real processes.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemRunner;

impl CommandRunner for SystemRunner {
    fn run(&self, command: &str, args: &[String]) -> CommandOutput {
        match Command::new(command).args(args).output() {
            Ok(out) => CommandOutput {
                exit_status: out.status.code().unwrap_or(-1),
                stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
                stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
            },
            Err(e) => CommandOutput { exit_status: NOT_FOUND, stdout: String::new(), stderr: e.to_string() },
        }
    }
}

/// One recorded command and its output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub exit_status: i32,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
}

/// Replays a recorded transcript; commands not in it behave as missing.
#[derive(Debug, Clone, Default)]
pub struct ReplayRunner {
    entries: HashMap<(String, Vec<String>), CommandOutput>,
}

impl ReplayRunner {
    pub fn new(transcript: Vec<TranscriptEntry>) -> Self {
        let entries = transcript
            .into_iter()
            .map(|t| {
                let out = CommandOutput { exit_status: t.exit_status, stdout: t.stdout, stderr: t.stderr };
                ((t.command, t.args), out)
            })
            .collect();
        Self { entries }
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EnvError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

impl CommandRunner for ReplayRunner {
    fn run(&self, command: &str, args: &[String]) -> CommandOutput {
        self.entries.get(&(command.to_string(), args.to_vec())).cloned().unwrap_or_else(|| CommandOutput {
            exit_status: NOT_FOUND,
            stdout: String::new(),
            stderr: format!("{command}: command not found"),
        })
    }
}

/// Wraps another runner and keeps a transcript of every call.
pub struct RecordingRunner<R> {
    inner: R,
    log: RefCell<Vec<TranscriptEntry>>,
}

impl<R: CommandRunner> RecordingRunner<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, log: RefCell::new(Vec::new()) }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.log.borrow().clone()
    }
}

impl<R: CommandRunner> CommandRunner for RecordingRunner<R> {
    fn run(&self, command: &str, args: &[String]) -> CommandOutput {
        let out = self.inner.run(command, args);
        self.log.borrow_mut().push(TranscriptEntry {
            command: command.to_string(),
            args: args.to_vec(),
            exit_status: out.exit_status,
            stdout: out.stdout.clone(),
            stderr: out.stderr.clone(),
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvironmentKind {
    Native,
    Conda,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalComponent {
    pub name: String,
    pub version: Option<Version>,
    pub layer: StackLayer,
}

impl LocalComponent {
    pub fn versioned(&self) -> VersionedComponent {
        VersionedComponent::new(self.name.clone(), self.version.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureEntry {
    pub command: String,
    pub exit_status: i32,
    /// SHA-256 of stdout followed by stderr, hex encoded.
    pub digest: String,
    /// Components this command established.
    pub yields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub environment_kind: EnvironmentKind,
    /// Sorted by name, one entry per component.
    pub components: Vec<LocalComponent>,
    pub capture_log: Vec<CaptureEntry>,
}

impl EnvSnapshot {
    pub fn new(environment_kind: EnvironmentKind, mut components: Vec<LocalComponent>) -> Result<Self, EnvError> {
        components.sort_by(|a, b| a.name.cmp(&b.name));
        let snap = Self { environment_kind, components, capture_log: Vec::new() };
        snap.validate()?;
        Ok(snap)
    }

    pub fn get(&self, name: &str) -> Option<&LocalComponent> {
        self.components.binary_search_by(|c| c.name.as_str().cmp(name)).ok().map(|i| &self.components[i])
    }

    fn validate(&self) -> Result<(), EnvError> {
        for w in self.components.windows(2) {
            if w[0].name >= w[1].name {
                return Err(EnvError::Invalid(format!(
                    "components must be sorted and unique (`{}` before `{}`)",
                    w[0].name, w[1].name
                )));
            }
        }
        for c in &self.components {
            if c.version.as_ref().is_some_and(Version::is_wildcard) {
                return Err(EnvError::Invalid(format!("installed `{}` has a wildcard version", c.name)));
            }
            c.versioned().check_layer(c.layer).map_err(|e| EnvError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    schema_version: u32,
    #[serde(flatten)]
    snapshot: EnvSnapshot,
}

pub fn snapshot_to_json(snap: &EnvSnapshot) -> String {
    let file = SnapshotFile { schema_version: SNAPSHOT_SCHEMA_VERSION, snapshot: snap.clone() };
    let mut text = serde_json::to_string_pretty(&file).expect("snapshot serializes");
    text.push('\n');
    text
}

pub fn snapshot_from_json(text: &str) -> Result<EnvSnapshot, EnvError> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| EnvError::Invalid("missing schema_version".into()))?;
    if found != u64::from(SNAPSHOT_SCHEMA_VERSION) {
        return Err(EnvError::Schema { expected: SNAPSHOT_SCHEMA_VERSION, found });
    }
    let file: SnapshotFile = serde_json::from_value(raw)?;
    file.snapshot.validate()?;
    Ok(file.snapshot)
}

pub fn save_snapshot(snap: &EnvSnapshot, path: &Path) -> Result<(), EnvError> {
    std::fs::write(path, snapshot_to_json(snap))
        .map_err(|source| EnvError::Io { path: path.display().to_string(), source })
}

pub fn load_snapshot(path: &Path) -> Result<EnvSnapshot, EnvError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| EnvError::Io { path: path.display().to_string(), source })?;
    snapshot_from_json(&text)
}

fn conda_probe() -> (String, Vec<String>) {
    ("sh".to_string(), vec!["-c".to_string(), "echo $CONDA_PREFIX".to_string()])
}

/// Conda when `$CONDA_PREFIX` expands to a non-empty path.
pub fn detect_environment(runner: &dyn CommandRunner) -> EnvironmentKind {
    let (cmd, args) = conda_probe();
    classify_environment(&runner.run(&cmd, &args))
}

fn classify_environment(out: &CommandOutput) -> EnvironmentKind {
    if out.exit_status == 0 && !out.stdout.trim().is_empty() {
        EnvironmentKind::Conda
    } else {
        EnvironmentKind::Native
    }
}

static VERSION_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+(?:\.\d+){0,2}").unwrap());

/// The leading release number of a version string (`2.0.0rc1` gives `2.0.0`).
pub fn version_prefix(text: &str) -> Option<Version> {
    let text = text.trim().trim_start_matches(['v', 'V']);
    VERSION_PREFIX.find(text).and_then(|m| parse_version(m.as_str()).ok())
}

/// `(name, version)` rows of `pip freeze` output.
pub fn parse_pip_freeze(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') || l.starts_with('-') {
                return None;
            }
            let (name, version) = l.split_once("==")?;
            Some((name.trim().to_string(), version.trim().to_string()))
        })
        .collect()
}

/// `(name, version)` rows of `conda list` output.
pub fn parse_conda_list(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            if l.trim_start().starts_with('#') {
                return None;
            }
            let mut cols = l.split_whitespace();
            Some((cols.next()?.to_string(), cols.next()?.to_string()))
        })
        .collect()
}

struct Prober<'a> {
    runner: &'a dyn CommandRunner,
    cache: HashMap<(String, Vec<String>), (usize, CommandOutput)>,
    log: Vec<CaptureEntry>,
}

impl Prober<'_> {
    /// Runs a command once; later calls reuse the output. Returns the index
    /// of its capture-log entry.
    fn run(&mut self, command: &str, args: &[String]) -> (usize, CommandOutput) {
        let key = (command.to_string(), args.to_vec());
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let out = self.runner.run(command, args);
        let mut hasher = Sha256::new();
        hasher.update(out.stdout.as_bytes());
        hasher.update(out.stderr.as_bytes());
        let shown = std::iter::once(command).chain(args.iter().map(String::as_str)).collect::<Vec<_>>().join(" ");
        self.log.push(CaptureEntry {
            command: shown,
            exit_status: out.exit_status,
            digest: hex::encode(hasher.finalize()),
            yields: Vec::new(),
        });
        let idx = self.log.len() - 1;
        self.cache.insert(key, (idx, out.clone()));
        (idx, out)
    }
}

/// Identifies installed components. The package listing (`pip freeze`, or
/// `conda list` inside a conda environment) comes first; then each lexicon
/// probe runs for components the listing did not cover. Failures are logged
/// and the component is left out.
pub fn probe_local_stack(runner: &dyn CommandRunner, lexicon: &Lexicon) -> EnvSnapshot {
    let mut p = Prober { runner, cache: HashMap::new(), log: Vec::new() };
    let (cmd, args) = conda_probe();
    let (_, out) = p.run(&cmd, &args);
    let kind = classify_environment(&out);

    let mut found: BTreeMap<String, (LocalComponent, usize)> = BTreeMap::new();
    let (list_cmd, list_args): (&str, Vec<String>) = match kind {
        EnvironmentKind::Native => ("pip", vec!["freeze".into()]),
        EnvironmentKind::Conda => ("conda", vec!["list".into()]),
    };
    let (idx, out) = p.run(list_cmd, &list_args);
    if out.exit_status == 0 {
        let rows = match kind {
            EnvironmentKind::Native => parse_pip_freeze(&out.stdout),
            EnvironmentKind::Conda => parse_conda_list(&out.stdout),
        };
        for (raw_name, raw_version) in rows {
            let Some(version) = version_prefix(&raw_version) else {
                log::warn!("{list_cmd}: unreadable version `{raw_version}` for {raw_name}");
                continue;
            };
            let (name, layer) = match lexicon.lookup(&raw_name) {
                Some(spec) => (spec.canonical_name().to_string(), spec.layer()),
                None => (normalize_package(&raw_name), StackLayer::Library),
            };
            found.entry(name.clone()).or_insert((LocalComponent { name, version: Some(version), layer }, idx));
        }
    }

    for spec in lexicon.components() {
        let name = spec.canonical_name();
        if found.contains_key(name) {
            continue;
        }
        for probe in lexicon.probes(name) {
            let (idx, out) = p.run(&probe.command, &probe.args);
            if out.exit_status != 0 {
                continue;
            }
            let text = format!("{}{}", out.stdout, out.stderr);
            let Some(caps) = probe.pattern.captures(&text) else { continue };
            let version = match caps.get(1) {
                Some(m) => match version_prefix(m.as_str()) {
                    Some(v) => Some(v),
                    None => continue,
                },
                None if spec.layer() == StackLayer::Hardware => None,
                None => continue,
            };
            let local = LocalComponent { name: name.to_string(), version, layer: spec.layer() };
            found.insert(name.to_string(), (local, idx));
            break;
        }
    }

    let mut components = Vec::with_capacity(found.len());
    for (name, (local, idx)) in found {
        p.log[idx].yields.push(name);
        components.push(local);
    }
    EnvSnapshot { environment_kind: kind, components, capture_log: p.log }
}
