//! End-to-end steps over a [`RunStore`]: generate, classify, simulate,
//! evaluate and validate a run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::DateTime;

use crate::config::ConfigError;
use crate::pipeline::{
    plan_generation, run_classification, run_generation, sample_balanced, validate_tasks, Clock,
    GenerationSettings, PipelineError, SamplingPlan, MALFORMED_RETRIES,
};
use crate::prompt::{PromptError, PromptForge, PromptVariant};
use crate::provider::{
    Gateway, GatewayError, ProfileError, RetryPolicy, ScriptedProvider, SubjectProfile,
    DEFAULT_MAX_IN_FLIGHT,
};
use crate::records::{TaskRecord, TaskStatus};
use crate::report::{ReportBundle, ReportError};
use crate::store::{ErrorRecord, LoadedRun, RunManifest, RunStore, StoreError};

pub const REPORT_MARKDOWN: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PATTERNS_CSV: &str = "patterns.csv";

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl WorkflowError {
    /// True for problems the user fixes by changing configuration,
    /// credentials, templates or arguments.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            WorkflowError::Config(_)
                | WorkflowError::Profile(_)
                | WorkflowError::Prompt(_)
                | WorkflowError::Pipeline(PipelineError::Prompt(_))
                | WorkflowError::Store(StoreError::Templates(_) | StoreError::InvalidRunId(_))
                | WorkflowError::Gateway(GatewayError::Auth { .. } | GatewayError::InvalidRequest { .. })
        )
    }
}

/// Credential failures abort the step; other provider failures stay in the
/// run's error log.
fn fatal_failure(failures: &[GatewayError]) -> Option<GatewayError> {
    failures
        .iter()
        .find(|e| matches!(e, GatewayError::Auth { .. }))
        .cloned()
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub run_id: String,
    pub model_id: String,
    pub variant: PromptVariant,
    pub per_category: usize,
    pub seed: u64,
    pub malformed_retries: u32,
    pub clock: Clock,
}

impl GenerateOptions {
    pub fn new(run_id: impl Into<String>, model_id: impl Into<String>, variant: PromptVariant, per_category: usize) -> Self {
        Self {
            run_id: run_id.into(),
            model_id: model_id.into(),
            variant,
            per_category,
            seed: 0,
            malformed_retries: MALFORMED_RETRIES,
            clock: Clock::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub run_id: String,
    pub planned_feasible: usize,
    pub planned_infeasible: usize,
    pub valid: usize,
    pub malformed: usize,
    pub failed: usize,
    pub queued_for_review: usize,
}

/// Creates a run, generates every planned task, validates them and queues
/// malformed ones for review.
pub fn generate(
    store: &RunStore,
    forge: &PromptForge,
    gateway: &Gateway,
    opts: &GenerateOptions,
    profile: Option<&SubjectProfile>,
) -> Result<GenerateSummary, WorkflowError> {
    let plan = plan_generation(opts.per_category, opts.variant);
    let mut manifest = RunManifest::new(
        &opts.run_id,
        &opts.model_id,
        gateway.provider_id(),
        opts.variant,
        opts.seed,
        opts.clock.now(),
    );
    manifest.generation = Some(plan.clone());
    manifest.profile = profile.cloned();
    let run = store.create_run(manifest, forge)?;

    let settings = GenerationSettings {
        model_id: opts.model_id.clone(),
        variant: opts.variant,
        malformed_retries: opts.malformed_retries,
        clock: opts.clock,
    };
    let out = run_generation(&plan.slots(), forge, gateway, &settings)?;
    let (records, review) = validate_tasks(out.records);
    for r in &records {
        run.append_task(r)?;
    }
    for e in &review {
        run.append_review(e)?;
    }
    for f in &out.failures {
        run.append_error(&ErrorRecord::from(f))?;
    }
    if let Some(e) = fatal_failure(&out.failures) {
        return Err(WorkflowError::Gateway(e));
    }
    let count = |s: TaskStatus| records.iter().filter(|r| r.status == s).count();
    Ok(GenerateSummary {
        run_id: opts.run_id.clone(),
        planned_feasible: plan.total_feasible(),
        planned_infeasible: plan.total_infeasible(),
        valid: count(TaskStatus::Valid),
        malformed: count(TaskStatus::Malformed),
        failed: count(TaskStatus::Failed),
        queued_for_review: review.len(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifyOptions {
    pub sampling: SamplingPlan,
    pub clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifySummary {
    pub run_id: String,
    pub sampled: usize,
    pub answered: usize,
    pub declared_infeasible: usize,
    pub parse_failures: usize,
    pub provider_failures: usize,
}

impl ClassifySummary {
    pub fn parse_failure_rate(&self) -> Option<f64> {
        let n = self.answered + self.declared_infeasible + self.parse_failures;
        (n > 0).then(|| self.parse_failures as f64 / n as f64)
    }
}

/// Samples the run's valid tasks and asks the subject to attempt each one,
/// using the templates stored with the run.
pub fn classify(
    store: &RunStore,
    run_id: &str,
    gateway: &Gateway,
    opts: &ClassifyOptions,
) -> Result<ClassifySummary, WorkflowError> {
    let loaded = store.load_run(run_id)?;
    let run = store.open(run_id)?;
    let tasks = loaded.reviewed_tasks();
    let sample: Vec<TaskRecord> = sample_balanced(&tasks, opts.sampling)?;
    let variant = loaded.manifest.variant;
    let out = run_classification(
        &sample,
        variant,
        &loaded.forge,
        gateway,
        &loaded.manifest.model_id,
    )?;
    for o in &out.outcomes {
        run.append_outcome(o)?;
    }
    for f in &out.failures {
        run.append_error(&ErrorRecord::from(f))?;
    }
    run.update_manifest(opts.clock.now(), |m| {
        m.sampling = Some(opts.sampling);
        m.sampled_task_ids = sample.iter().map(|t| t.id.clone()).collect();
    })?;
    if let Some(e) = fatal_failure(&out.failures) {
        return Err(WorkflowError::Gateway(e));
    }
    let mut summary = ClassifySummary {
        run_id: run_id.to_string(),
        sampled: sample.len(),
        answered: 0,
        declared_infeasible: 0,
        parse_failures: 0,
        provider_failures: out.failures.len(),
    };
    for o in &out.outcomes {
        match o.verdict {
            crate::records::Verdict::Answered { .. } => summary.answered += 1,
            crate::records::Verdict::DeclaredInfeasible { .. } => summary.declared_infeasible += 1,
            crate::records::Verdict::ParseFailure { .. } => summary.parse_failures += 1,
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub run_id: String,
    pub variant: PromptVariant,
    pub per_category: usize,
    pub n_feasible: usize,
    pub n_infeasible: usize,
    /// Sampling seed; the subject's own draws use the profile seed.
    pub seed: u64,
    pub max_in_flight: usize,
}

impl SimulateOptions {
    pub fn new(run_id: impl Into<String>, per_category: usize, n_feasible: usize, n_infeasible: usize) -> Self {
        Self {
            run_id: run_id.into(),
            variant: PromptVariant::Vanilla,
            per_category,
            n_feasible,
            n_infeasible,
            seed: 0,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Model id recorded for a simulated subject.
pub fn simulated_model_id(profile: &SubjectProfile) -> String {
    format!("scripted:{}", profile.name)
}

/// Generate and classify against a scripted subject, then seal the run.
/// Timestamps are frozen at the epoch so identical options replay to
/// byte-identical files.
pub fn simulate(
    store: &RunStore,
    forge: &PromptForge,
    profile: &SubjectProfile,
    opts: &SimulateOptions,
) -> Result<(GenerateSummary, ClassifySummary), WorkflowError> {
    profile.validate()?;
    let clock = Clock::Frozen(DateTime::UNIX_EPOCH);
    let gateway = Gateway::new(
        Arc::new(ScriptedProvider::new(profile.clone())),
        RetryPolicy::immediate(1),
        opts.max_in_flight,
    );
    let gen_opts = GenerateOptions {
        seed: opts.seed,
        clock,
        ..GenerateOptions::new(&opts.run_id, simulated_model_id(profile), opts.variant, opts.per_category)
    };
    let generated = generate(store, forge, &gateway, &gen_opts, Some(profile))?;
    let classified = classify(
        store,
        &opts.run_id,
        &gateway,
        &ClassifyOptions {
            sampling: SamplingPlan {
                n_feasible: opts.n_feasible,
                n_infeasible: opts.n_infeasible,
                seed: opts.seed,
            },
            clock,
        },
    )?;
    store.open(&opts.run_id)?.seal(clock.now())?;
    Ok((generated, classified))
}

/// Loads the runs, builds the report and writes every rendering to
/// `out_dir`.
pub fn evaluate(
    store: &RunStore,
    run_ids: &[String],
    out_dir: &Path,
) -> Result<ReportBundle, WorkflowError> {
    let runs = run_ids
        .iter()
        .map(|id| store.load_run(id))
        .collect::<Result<Vec<LoadedRun>, _>>()?;
    let bundle = ReportBundle::build(&runs)?;
    std::fs::create_dir_all(out_dir).map_err(|source| WorkflowError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    for (name, body) in [
        (REPORT_MARKDOWN, bundle.to_markdown()),
        (REPORT_JSON, bundle.to_json()),
        (METRICS_CSV, bundle.metrics_csv()),
        (PATTERNS_CSV, bundle.patterns_csv()),
    ] {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|source| WorkflowError::Io { path, source })?;
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunCheck {
    pub run_id: String,
    pub tasks: usize,
    pub outcomes: usize,
    pub review_entries: usize,
    pub errors: usize,
    pub sealed: bool,
}

/// Loads a run with every integrity check applied.
pub fn validate_run(store: &RunStore, run_id: &str) -> Result<RunCheck, WorkflowError> {
    let run = store.load_run(run_id)?;
    Ok(RunCheck {
        run_id: run_id.to_string(),
        tasks: run.tasks.len(),
        outcomes: run.outcomes.len(),
        review_entries: run.review.len(),
        errors: run.errors.len(),
        sealed: run.manifest.sealed,
    })
}
