//! On-disk runs. One directory per run:
//!
//! ```text
//! <run_dir>/<run_id>/
//!   manifest.json    rewritten atomically (temp file + rename)
//!   tasks.jsonl      TaskRecord per line; a later line with the same id supersedes
//!   outcomes.jsonl   ClassificationOutcome per line; last line per task wins
//!   review.jsonl     ReviewEntry per line; last line per task wins
//!   errors.jsonl     ErrorRecord per line
//!   templates/       prompt templates and descriptions used by the run
//! ```
//!
//! Lines are only ever appended. Each line is written with a single
//! `write_all` on an append-mode handle while holding that file's lock.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::pipeline::{apply_review, GenerationPlan, ReviewEntry, SamplingPlan};
use crate::prompt::{PromptError, PromptForge, PromptVariant, TemplateFingerprint};
use crate::provider::{GatewayError, SubjectProfile};
use crate::records::{ClassificationOutcome, TaskId, TaskRecord};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TASKS_FILE: &str = "tasks.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const REVIEW_FILE: &str = "review.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const TEMPLATES_DIR: &str = "templates";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run `{0}` already exists")]
    AlreadyExists(String),
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("invalid run id `{0}`")]
    InvalidRunId(String),
    #[error("run `{0}` is sealed")]
    Sealed(String),
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("outcome for unknown task {0}")]
    DanglingOutcome(TaskId),
    #[error("template fingerprint mismatch for {name}")]
    FingerprintMismatch { name: String },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Templates(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub model_id: String,
    pub provider_id: String,
    pub variant: PromptVariant,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingPlan>,
    /// Tasks chosen for classification, in the order they were sent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampled_task_ids: Vec<TaskId>,
    /// Subject profile for simulated runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<SubjectProfile>,
    pub templates: Vec<TemplateFingerprint>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub tool_version: String,
    #[serde(default)]
    pub sealed: bool,
}

impl RunManifest {
    pub fn new(
        run_id: impl Into<String>,
        model_id: impl Into<String>,
        provider_id: impl Into<String>,
        variant: PromptVariant,
        seed: u64,
        now: DateTime<Utc>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.into(),
            model_id: model_id.into(),
            provider_id: provider_id.into(),
            variant,
            seed,
            generation: None,
            sampling: None,
            sampled_task_ids: Vec::new(),
            profile: None,
            templates: Vec::new(),
            created_at: now,
            updated_at: now,
            tool_version: TOOL_VERSION.to_string(),
            sealed: false,
        }
    }
}

/// A provider failure kept for the record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub request_id: String,
    pub kind: String,
    pub message: String,
}

impl From<&GatewayError> for ErrorRecord {
    fn from(e: &GatewayError) -> Self {
        Self {
            request_id: e.request_id().to_string(),
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Root directory holding runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn check_run_id(run_id: &str) -> Result<(), StoreError> {
    let ok = !run_id.is_empty()
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !run_id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidRunId(run_id.to_string()))
    }
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_path(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Creates the run directory, copies the forge's templates into it and
    /// records their fingerprints in the manifest.
    pub fn create_run(
        &self,
        mut manifest: RunManifest,
        forge: &PromptForge,
    ) -> Result<RunHandle, StoreError> {
        check_run_id(&manifest.run_id)?;
        let dir = self.run_path(&manifest.run_id);
        if dir.exists() {
            return Err(StoreError::AlreadyExists(manifest.run_id));
        }
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let templates = dir.join(TEMPLATES_DIR);
        forge.write_to_dir(&templates).map_err(io_err(&templates))?;
        manifest.templates = forge.fingerprints();
        for name in [TASKS_FILE, OUTCOMES_FILE, REVIEW_FILE, ERRORS_FILE] {
            let path = dir.join(name);
            File::create(&path).map_err(io_err(&path))?;
        }
        write_manifest(&dir, &manifest)?;
        Ok(RunHandle::new(dir, manifest))
    }

    /// Opens an existing run for appending.
    pub fn open(&self, run_id: &str) -> Result<RunHandle, StoreError> {
        check_run_id(run_id)?;
        let dir = self.run_path(run_id);
        let manifest = read_manifest(&dir, run_id)?;
        Ok(RunHandle::new(dir, manifest))
    }

    pub fn load_run(&self, run_id: &str) -> Result<LoadedRun, StoreError> {
        check_run_id(run_id)?;
        load_run_dir(&self.run_path(run_id))
    }

    /// Run ids under the root, sorted.
    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join(MANIFEST_FILE).is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }
}

fn read_manifest(dir: &Path, run_id: &str) -> Result<RunManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::NotFound(run_id.to_string()))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(StoreError::SchemaVersion(manifest.schema_version));
    }
    Ok(manifest)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(".manifest.json.tmp");
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Appender for one run. Safe to share across threads.
#[derive(Debug)]
pub struct RunHandle {
    dir: PathBuf,
    manifest: Mutex<RunManifest>,
    tasks: Mutex<()>,
    outcomes: Mutex<()>,
    review: Mutex<()>,
    errors: Mutex<()>,
}

impl RunHandle {
    fn new(dir: PathBuf, manifest: RunManifest) -> Self {
        Self {
            dir,
            manifest: Mutex::new(manifest),
            tasks: Mutex::new(()),
            outcomes: Mutex::new(()),
            review: Mutex::new(()),
            errors: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> RunManifest {
        self.manifest.lock().unwrap().clone()
    }

    fn ensure_open(&self) -> Result<(), StoreError> {
        let m = self.manifest.lock().unwrap();
        if m.sealed {
            Err(StoreError::Sealed(m.run_id.clone()))
        } else {
            Ok(())
        }
    }

    fn append<T: Serialize>(&self, lock: &Mutex<()>, file: &str, value: &T) -> Result<(), StoreError> {
        self.ensure_open()?;
        let mut line = serde_json::to_string(value).expect("record serializes");
        line.push('\n');
        let path = self.dir.join(file);
        let _guard = lock.lock().unwrap();
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))
    }

    pub fn append_task(&self, record: &TaskRecord) -> Result<(), StoreError> {
        self.append(&self.tasks, TASKS_FILE, record)
    }

    pub fn append_outcome(&self, outcome: &ClassificationOutcome) -> Result<(), StoreError> {
        self.append(&self.outcomes, OUTCOMES_FILE, outcome)
    }

    pub fn append_review(&self, entry: &ReviewEntry) -> Result<(), StoreError> {
        self.append(&self.review, REVIEW_FILE, entry)
    }

    pub fn append_error(&self, error: &ErrorRecord) -> Result<(), StoreError> {
        self.append(&self.errors, ERRORS_FILE, error)
    }

    /// Applies `edit` and rewrites the manifest atomically.
    pub fn update_manifest(
        &self,
        now: DateTime<Utc>,
        edit: impl FnOnce(&mut RunManifest),
    ) -> Result<(), StoreError> {
        let mut m = self.manifest.lock().unwrap();
        if m.sealed {
            return Err(StoreError::Sealed(m.run_id.clone()));
        }
        let mut next = m.clone();
        edit(&mut next);
        next.updated_at = now;
        write_manifest(&self.dir, &next)?;
        *m = next;
        Ok(())
    }

    /// Marks the run read-only. Further appends fail.
    pub fn seal(&self, now: DateTime<Utc>) -> Result<(), StoreError> {
        self.update_manifest(now, |m| m.sealed = true)
    }
}

/// A run read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Latest line per task id, in order of first appearance.
    pub tasks: Vec<TaskRecord>,
    /// Latest line per task id, in order of first appearance.
    pub outcomes: Vec<ClassificationOutcome>,
    pub review: Vec<ReviewEntry>,
    pub errors: Vec<ErrorRecord>,
    pub forge: PromptForge,
}

impl LoadedRun {
    /// Tasks with review decisions applied.
    pub fn reviewed_tasks(&self) -> Vec<TaskRecord> {
        let mut tasks = self.tasks.clone();
        apply_review(&mut tasks, &self.review);
        tasks
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if !buf.ends_with('\n') {
            return Err(corrupt("truncated line".to_string()));
        }
        if buf.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&buf).map_err(|e| corrupt(e.to_string()))?);
    }
    Ok(out)
}

fn latest_by<T, K: std::hash::Hash + Eq + Clone>(items: Vec<T>, key: impl Fn(&T) -> K) -> Vec<T> {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut out: Vec<T> = Vec::new();
    for item in items {
        let k = key(&item);
        match index.get(&k) {
            Some(&i) => out[i] = item,
            None => {
                index.insert(k, out.len());
                out.push(item);
            }
        }
    }
    out
}

/// Loads and checks a run directory: every line parses, every outcome joins
/// a task and the stored templates match their recorded fingerprints.
pub fn load_run_dir(dir: &Path) -> Result<LoadedRun, StoreError> {
    let run_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = read_manifest(dir, &run_id)?;
    for name in [TASKS_FILE, OUTCOMES_FILE, REVIEW_FILE, ERRORS_FILE, TEMPLATES_DIR] {
        let path = dir.join(name);
        if !path.exists() {
            return Err(StoreError::Io {
                path,
                source: std::io::ErrorKind::NotFound.into(),
            });
        }
    }
    let tasks = latest_by(read_jsonl::<TaskRecord>(&dir.join(TASKS_FILE))?, |t| {
        t.id.clone()
    });
    let outcomes = latest_by(
        read_jsonl::<ClassificationOutcome>(&dir.join(OUTCOMES_FILE))?,
        |o| o.task_id.clone(),
    );
    let review = read_jsonl(&dir.join(REVIEW_FILE))?;
    let errors = read_jsonl(&dir.join(ERRORS_FILE))?;

    let ids: BTreeSet<&TaskId> = tasks.iter().map(|t| &t.id).collect();
    if let Some(o) = outcomes.iter().find(|o| !ids.contains(&o.task_id)) {
        return Err(StoreError::DanglingOutcome(o.task_id.clone()));
    }

    let forge = PromptForge::from_dir(&dir.join(TEMPLATES_DIR))?;
    let actual: HashMap<String, String> = forge
        .fingerprints()
        .into_iter()
        .map(|f| (f.name, f.sha256))
        .collect();
    for expected in &manifest.templates {
        if actual.get(&expected.name) != Some(&expected.sha256) {
            return Err(StoreError::FingerprintMismatch {
                name: expected.name.clone(),
            });
        }
    }

    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        tasks,
        outcomes,
        review,
        errors,
        forge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ReviewDecision;
    use crate::records::{TaskStatus, Verdict};
    use crate::taxonomy::{FeasibilityLabel, InfeasibilityReason};
    use std::sync::Arc;

    fn epoch() -> DateTime<Utc> {
        DateTime::UNIX_EPOCH
    }

    fn new_run(store: &RunStore, id: &str) -> RunHandle {
        let manifest = RunManifest::new(id, "model", "scripted", PromptVariant::Vanilla, 7, epoch());
        store.create_run(manifest, &PromptForge::builtin()).unwrap()
    }

    fn task(ordinal: usize) -> TaskRecord {
        let label = FeasibilityLabel::Infeasible(InfeasibilityReason::MissingContext);
        TaskRecord {
            id: TaskId::for_slot(label, ordinal),
            label,
            variant: PromptVariant::Vanilla,
            text: "Fix the bug in the attached function please.".into(),
            raw_response: "TASK: Fix the bug in the attached function please.".into(),
            status: TaskStatus::Valid,
            issue: None,
            model_id: "model".into(),
            attempts: 1,
            created_at: epoch(),
        }
    }

    fn outcome(t: &TaskRecord) -> ClassificationOutcome {
        ClassificationOutcome {
            task_id: t.id.clone(),
            verdict: Verdict::DeclaredInfeasible {
                reason: InfeasibilityReason::MissingContext,
            },
            raw_response: "VERDICT: INFEASIBLE\nREASON: missing_context\n".into(),
            attempts: 1,
        }
    }

    #[test]
    fn append_then_reload_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let run = new_run(&store, "r1");
        let t = task(0);
        run.append_task(&t).unwrap();
        run.append_outcome(&outcome(&t)).unwrap();
        run.append_error(&ErrorRecord {
            request_id: "x".into(),
            kind: "transport".into(),
            message: "reset".into(),
        })
        .unwrap();
        let loaded = store.load_run("r1").unwrap();
        assert_eq!(loaded.tasks, vec![t.clone()]);
        assert_eq!(loaded.outcomes, vec![outcome(&t)]);
        assert_eq!(loaded.errors.len(), 1);
        assert_eq!(loaded.manifest, run.manifest());
        assert_eq!(store.list_runs().unwrap(), vec!["r1".to_string()]);
    }

    #[test]
    fn sealed_run_rejects_appends() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let run = new_run(&store, "r1");
        run.seal(epoch()).unwrap();
        assert!(matches!(run.append_task(&task(0)), Err(StoreError::Sealed(_))));
        let reopened = store.open("r1").unwrap();
        assert!(matches!(
            reopened.append_outcome(&outcome(&task(0))),
            Err(StoreError::Sealed(_))
        ));
        assert!(store.load_run("r1").unwrap().manifest.sealed);
    }

    #[test]
    fn existing_run_is_not_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        new_run(&store, "r1");
        let again = RunManifest::new("r1", "m", "p", PromptVariant::Vanilla, 0, epoch());
        assert!(matches!(
            store.create_run(again, &PromptForge::builtin()),
            Err(StoreError::AlreadyExists(_))
        ));
        assert!(matches!(
            store.create_run(
                RunManifest::new("../x", "m", "p", PromptVariant::Vanilla, 0, epoch()),
                &PromptForge::builtin()
            ),
            Err(StoreError::InvalidRunId(_))
        ));
    }

    #[test]
    fn concurrent_appends_all_land_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let run = Arc::new(new_run(&store, "r1"));
        let tasks: Vec<TaskRecord> = (0..400).map(task).collect();
        for t in &tasks {
            run.append_task(t).unwrap();
        }
        std::thread::scope(|s| {
            for chunk in tasks.chunks(50) {
                let run = Arc::clone(&run);
                s.spawn(move || {
                    for t in chunk {
                        run.append_outcome(&outcome(t)).unwrap();
                    }
                });
            }
        });
        let raw = std::fs::read_to_string(dir.path().join("r1").join(OUTCOMES_FILE)).unwrap();
        assert_eq!(raw.lines().count(), 400);
        let loaded = store.load_run("r1").unwrap();
        let got: BTreeSet<_> = loaded.outcomes.iter().map(|o| o.task_id.clone()).collect();
        let want: BTreeSet<_> = tasks.iter().map(|t| t.id.clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn truncated_final_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let run = new_run(&store, "r1");
        run.append_task(&task(0)).unwrap();
        run.append_task(&task(1)).unwrap();
        let path = dir.path().join("r1").join(TASKS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":\"infeasible-missing_context-002\",\"la").unwrap();
        match store.load_run("r1") {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_outcome_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let run = new_run(&store, "r1");
        run.append_outcome(&outcome(&task(5))).unwrap();
        assert!(matches!(
            store.load_run("r1"),
            Err(StoreError::DanglingOutcome(id)) if id == task(5).id
        ));
    }

    #[test]
    fn edited_template_fails_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        new_run(&store, "r1");
        let path = dir
            .path()
            .join("r1")
            .join(TEMPLATES_DIR)
            .join("classify.vanilla.txt");
        let mut body = std::fs::read_to_string(&path).unwrap();
        body.push_str("\nExtra line.");
        std::fs::write(&path, body).unwrap();
        assert!(matches!(
            store.load_run("r1"),
            Err(StoreError::FingerprintMismatch { name }) if name == "classify.vanilla.txt"
        ));
    }

    #[test]
    fn later_lines_supersede_and_review_applies() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let run = new_run(&store, "r1");
        let mut t = task(0);
        t.status = TaskStatus::Failed;
        run.append_task(&t).unwrap();
        run.append_task(&task(1)).unwrap();
        t.status = TaskStatus::Malformed;
        run.append_task(&t).unwrap();
        run.append_review(&ReviewEntry {
            task_id: t.id.clone(),
            issue: "x".into(),
            text: t.text.clone(),
            decision: ReviewDecision::Restore,
        })
        .unwrap();
        let loaded = store.load_run("r1").unwrap();
        assert_eq!(loaded.tasks.len(), 2);
        assert_eq!(loaded.tasks[0].id, t.id);
        assert_eq!(loaded.tasks[0].status, TaskStatus::Malformed);
        assert_eq!(loaded.reviewed_tasks()[0].status, TaskStatus::Valid);
    }

    #[test]
    fn custom_descriptions_survive_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let mut d = crate::prompt::Descriptions::default();
        d.set_reason(InfeasibilityReason::MaliciousIntent, "Custom wording.");
        let forge = PromptForge::builtin().with_descriptions(d).unwrap();
        let manifest = RunManifest::new("r1", "m", "p", PromptVariant::Vanilla, 0, epoch());
        store.create_run(manifest, &forge).unwrap();
        let loaded = store.load_run("r1").unwrap();
        assert_eq!(loaded.forge.fingerprints(), forge.fingerprints());
    }
}
