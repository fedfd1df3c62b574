//! Automatic checks on generated tasks and the human review queue.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::records::{TaskId, TaskRecord, TaskStatus};

pub const MIN_TASK_CHARS: usize = 20;

/// Refusal openers; matched against the start of the task text.
const REFUSAL_PREFIXES: &[&str] = &[
    "i cannot",
    "i can't",
    "i can not",
    "i'm sorry",
    "i am sorry",
    "sorry,",
    "i apologize",
    "i apologise",
    "i'm unable",
    "i am unable",
    "i'm not able",
    "i am not able",
    "i won't",
    "i will not",
    "as an ai",
    "unfortunately, i",
];

/// Refusal phrases that disqualify a task wherever they appear.
const REFUSAL_PHRASES: &[&str] = &[
    "as an ai language model",
    "i cannot generate",
    "i can't generate",
    "i cannot create",
    "i can't create",
    "i won't generate",
    "i won't create",
    "unable to generate",
    "unable to create such",
    "i must decline",
    "i'm not comfortable",
    "i am not comfortable",
];

const PLACEHOLDER_MARKERS: &[&str] = &[
    "{type_name}",
    "{type_description}",
    "{reason_name}",
    "{reason_description}",
    "{reason_catalog}",
    "{task_text}",
];

/// Pulls the task instruction out of a generation response: everything after
/// the last `TASK:` line marker, or the whole response when there is none.
pub fn extract_task_text(raw: &str) -> String {
    let mut found: Option<String> = None;
    let lines: Vec<&str> = raw.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let stripped = line
            .trim_start()
            .trim_start_matches(['*', '#', '_'])
            .trim_start();
        if stripped
            .get(..5)
            .is_some_and(|head| head.eq_ignore_ascii_case("task:"))
        {
            let first = stripped[5..]
                .trim_start_matches(['*', '_'])
                .trim();
            let mut text = first.to_string();
            for rest in &lines[i + 1..] {
                text.push('\n');
                text.push_str(rest);
            }
            found = Some(text);
        }
    }
    found.unwrap_or_else(|| raw.to_string()).trim().to_string()
}

/// Returns the reason a task text fails automatic validation.
pub fn check_task_text(text: &str) -> Result<(), String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err("empty task text".to_string());
    }
    if trimmed.chars().count() < MIN_TASK_CHARS {
        return Err(format!("shorter than {MIN_TASK_CHARS} characters"));
    }
    let lower = trimmed.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    if let Some(p) = REFUSAL_PREFIXES.iter().find(|p| lower.starts_with(*p)) {
        return Err(format!("refusal marker `{p}`"));
    }
    if let Some(p) = REFUSAL_PHRASES.iter().find(|p| lower.contains(*p)) {
        return Err(format!("refusal marker `{p}`"));
    }
    if let Some(p) = PLACEHOLDER_MARKERS.iter().find(|p| trimmed.contains(*p)) {
        return Err(format!("unresolved placeholder {p}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Pending,
    Discard,
    Restore,
}

/// One line of `review.jsonl`. Reviewers record a decision by appending a
/// line with the same `task_id`; the last line per task wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub task_id: TaskId,
    pub issue: String,
    pub text: String,
    pub decision: ReviewDecision,
}

/// Re-runs the automatic checks on every `Valid` record, marking failures
/// `Malformed`, and queues every `Malformed` record for review.
pub fn validate_tasks(records: Vec<TaskRecord>) -> (Vec<TaskRecord>, Vec<ReviewEntry>) {
    let mut review = Vec::new();
    let records = records
        .into_iter()
        .map(|mut record| {
            if record.status == TaskStatus::Valid {
                if let Err(issue) = check_task_text(&record.text) {
                    record.status = TaskStatus::Malformed;
                    record.issue = Some(issue);
                }
            }
            if record.status == TaskStatus::Malformed {
                review.push(ReviewEntry {
                    task_id: record.id.clone(),
                    issue: record.issue.clone().unwrap_or_default(),
                    text: record.text.clone(),
                    decision: ReviewDecision::Pending,
                });
            }
            record
        })
        .collect();
    (records, review)
}

/// Effective status after review: `Discard` removes any task, `Restore`
/// returns a malformed task to `Valid`, `Pending` changes nothing.
pub fn apply_review(records: &mut [TaskRecord], review: &[ReviewEntry]) {
    let mut latest: BTreeMap<&TaskId, ReviewDecision> = BTreeMap::new();
    for entry in review {
        latest.insert(&entry.task_id, entry.decision);
    }
    for record in records.iter_mut() {
        match latest.get(&record.id) {
            Some(ReviewDecision::Discard) => record.status = TaskStatus::Discarded,
            Some(ReviewDecision::Restore) if record.status == TaskStatus::Malformed => {
                record.status = TaskStatus::Valid;
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptVariant;
    use crate::taxonomy::{FeasibilityLabel, InfeasibilityReason};

    fn record(text: &str, ordinal: usize) -> TaskRecord {
        let label = FeasibilityLabel::Infeasible(InfeasibilityReason::MissingContext);
        TaskRecord {
            id: TaskId::for_slot(label, ordinal),
            label,
            variant: PromptVariant::Vanilla,
            text: text.to_string(),
            raw_response: text.to_string(),
            status: TaskStatus::Valid,
            issue: None,
            model_id: "m".into(),
            attempts: 1,
            created_at: chrono::DateTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn refusal_fixture_corpus() {
        let refusals = [
            "I cannot generate such a task",
            "I can't create a task that is infeasible for me, sorry.",
            "I’m sorry, but I can’t help with producing that request.",
            "As an AI, I do not have limits I can describe in a task.",
            "Sorry, generating harmful tasks is against my guidelines.",
            "Unfortunately, I must decline to write a malicious task.",
            "Here is my attempt. As an AI language model I have no cutoff.",
            "I must decline this request because it is unsafe to do so.",
            "I won't create content that promotes discrimination of any kind.",
            "I am unable to produce a task that I myself cannot complete.",
        ];
        for text in refusals {
            assert!(
                check_task_text(text).unwrap_err().starts_with("refusal marker"),
                "{text}"
            );
        }
        let tasks = [
            "Debug and fix the error in the following function when it reads from the database: 'ERROR'.",
            "Write a haiku about autumn that also works as an acrostic for the word LEAF.",
            "Summarise the plot of the novel our book club read last month in three sentences.",
            "Explain why a user might say 'I cannot log in' and list three likely causes.",
            "Compare sorting algorithms for nearly sorted input and recommend one.",
        ];
        for text in tasks {
            assert_eq!(check_task_text(text), Ok(()), "{text}");
        }
    }

    #[test]
    fn structural_checks() {
        assert_eq!(check_task_text("   "), Err("empty task text".into()));
        assert!(check_task_text("Too short.").is_err());
        assert!(check_task_text("Write a task that tests {type_name} at the limit.")
            .unwrap_err()
            .contains("placeholder"));
    }

    #[test]
    fn extraction_prefers_last_task_marker() {
        assert_eq!(
            extract_task_text("ANALYSIS: needs context.\nTASK: Fix the bug\nin the function."),
            "Fix the bug\nin the function."
        );
        assert_eq!(
            extract_task_text("**Task:** Summarise the memo."),
            "Summarise the memo."
        );
        assert_eq!(extract_task_text("  plain task text  "), "plain task text");
        assert_eq!(extract_task_text("TASK: a\nTASK: b"), "b");
    }

    #[test]
    fn validation_and_review_round_trip() {
        let records = vec![
            record("", 0),
            record("I cannot generate such a task", 1),
            record(
                "Debug and fix the error in the following function that occurs when processing the data.",
                2,
            ),
        ];
        let (mut records, review) = validate_tasks(records);
        assert_eq!(records[0].status, TaskStatus::Malformed);
        assert_eq!(records[1].status, TaskStatus::Malformed);
        assert_eq!(records[2].status, TaskStatus::Valid);
        assert_eq!(review.len(), 2);
        assert!(review.iter().all(|r| r.decision == ReviewDecision::Pending));

        let decisions = vec![
            review[0].clone(),
            ReviewEntry {
                decision: ReviewDecision::Discard,
                ..review[0].clone()
            },
            ReviewEntry {
                decision: ReviewDecision::Restore,
                ..review[1].clone()
            },
        ];
        apply_review(&mut records, &decisions);
        assert_eq!(records[0].status, TaskStatus::Discarded);
        assert_eq!(records[1].status, TaskStatus::Valid);
        assert_eq!(records[2].status, TaskStatus::Valid);
    }
}
