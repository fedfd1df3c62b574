//! Generation and classification protocol.
//!
//! 1. [`plan_generation`] fixes how many tasks of each label to request.
//! 2. [`run_generation`] asks the subject for each task at temperature 1,
//!    re-asking a slot up to twice when the output fails automatic checks.
//! 3. [`validate_tasks`] queues malformed tasks for human review.
//! 4. [`sample_balanced`] draws the classification set.
//! 5. [`run_classification`] asks the subject to attempt each task at
//!    temperature 0 and parses the verdict block.

mod plan;
mod sample;
mod validate;
mod verdict;

use chrono::{DateTime, Utc};

pub use plan::{plan_generation, GenerationPlan, Slot};
pub use sample::{sample_balanced, type_quotas, SamplingPlan};
pub use validate::{
    apply_review, check_task_text, extract_task_text, validate_tasks, ReviewDecision,
    ReviewEntry, MIN_TASK_CHARS,
};
pub use verdict::parse_verdict;

use crate::prompt::{PromptError, PromptForge, PromptVariant};
use crate::provider::{CompletionRequest, Gateway, GatewayError, RequestPurpose};
use crate::records::{ClassificationOutcome, TaskRecord, TaskStatus};
use crate::taxonomy::{SelfKnowledgeType, Side};

/// Extra generation rounds for a slot whose output fails validation.
pub const MALFORMED_RETRIES: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("not enough valid {side} tasks for {self_knowledge_type}: need {needed}, have {available}")]
    InsufficientTasks {
        side: Side,
        self_knowledge_type: SelfKnowledgeType,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Source of record timestamps. Replays use a frozen clock so their output
/// is byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Frozen(DateTime<Utc>),
}

impl Clock {
    pub fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Frozen(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationSettings {
    pub model_id: String,
    pub variant: PromptVariant,
    pub malformed_retries: u32,
    pub clock: Clock,
}

impl GenerationSettings {
    pub fn new(model_id: impl Into<String>, variant: PromptVariant) -> Self {
        Self {
            model_id: model_id.into(),
            variant,
            malformed_retries: MALFORMED_RETRIES,
            clock: Clock::System,
        }
    }
}

#[derive(Debug)]
pub struct GenerationOutput {
    /// One record per slot, in slot order.
    pub records: Vec<TaskRecord>,
    /// Provider failures; the matching records have status `Failed`.
    pub failures: Vec<GatewayError>,
}

struct SlotState {
    raw: String,
    text: String,
    issue: Option<String>,
    rounds: u32,
    failed: bool,
}

/// Generates one task per slot. Provider errors mark the slot `Failed`
/// without aborting the run; slots whose output keeps failing validation
/// after the retry rounds end up `Malformed`.
pub fn run_generation(
    slots: &[Slot],
    forge: &PromptForge,
    gateway: &Gateway,
    settings: &GenerationSettings,
) -> Result<GenerationOutput, PipelineError> {
    let prompts = slots
        .iter()
        .map(|s| forge.render_generation_prompt(s.label, settings.variant))
        .collect::<Result<Vec<_>, _>>()?;
    let mut states: Vec<SlotState> = slots
        .iter()
        .map(|_| SlotState {
            raw: String::new(),
            text: String::new(),
            issue: Some("not generated".to_string()),
            rounds: 0,
            failed: false,
        })
        .collect();
    let mut failures = Vec::new();

    for _round in 0..=settings.malformed_retries {
        let pending: Vec<usize> = states
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.failed && s.issue.is_some())
            .map(|(i, _)| i)
            .collect();
        if pending.is_empty() {
            break;
        }
        let requests: Vec<CompletionRequest> = pending
            .iter()
            .map(|&i| {
                CompletionRequest::for_purpose(
                    RequestPurpose::Generation,
                    slots[i].id.as_str(),
                    settings.model_id.as_str(),
                    prompts[i].text.as_str(),
                )
            })
            .collect();
        for (&i, result) in pending.iter().zip(gateway.complete_all(&requests)) {
            let state = &mut states[i];
            state.rounds += 1;
            match result {
                Ok(completion) => {
                    state.text = extract_task_text(&completion.text);
                    state.raw = completion.text;
                    state.issue = check_task_text(&state.text).err();
                }
                Err(e) => {
                    state.failed = true;
                    state.issue = Some(e.to_string());
                    failures.push(e);
                }
            }
        }
    }

    let created_at = settings.clock.now();
    let records = slots
        .iter()
        .zip(states)
        .map(|(slot, state)| TaskRecord {
            id: slot.id.clone(),
            label: slot.label,
            variant: settings.variant,
            status: match (&state.issue, state.failed) {
                (_, true) => TaskStatus::Failed,
                (Some(_), false) => TaskStatus::Malformed,
                (None, false) => TaskStatus::Valid,
            },
            text: state.text,
            raw_response: state.raw,
            issue: state.issue,
            model_id: settings.model_id.clone(),
            attempts: state.rounds,
            created_at,
        })
        .collect();
    Ok(GenerationOutput { records, failures })
}

#[derive(Debug)]
pub struct ClassificationOutput {
    /// Outcomes for every task whose request succeeded, in task order.
    pub outcomes: Vec<ClassificationOutcome>,
    pub failures: Vec<GatewayError>,
}

/// Asks the subject to attempt every task and parses each response.
pub fn run_classification(
    tasks: &[TaskRecord],
    variant: PromptVariant,
    forge: &PromptForge,
    gateway: &Gateway,
    model_id: &str,
) -> Result<ClassificationOutput, PipelineError> {
    let requests = tasks
        .iter()
        .map(|t| {
            let prompt = forge.render_classification_prompt(&t.text, variant)?;
            Ok(CompletionRequest::for_purpose(
                RequestPurpose::Classification,
                t.id.as_str(),
                model_id,
                prompt.text,
            ))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut outcomes = Vec::with_capacity(tasks.len());
    let mut failures = Vec::new();
    for (task, result) in tasks.iter().zip(gateway.complete_all(&requests)) {
        match result {
            Ok(completion) => outcomes.push(ClassificationOutcome {
                task_id: task.id.clone(),
                verdict: parse_verdict(&completion.text),
                raw_response: completion.text,
                attempts: completion.attempt_count,
            }),
            Err(e) => failures.push(e),
        }
    }
    Ok(ClassificationOutput { outcomes, failures })
}
