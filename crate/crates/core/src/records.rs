//! Persistent record types shared by the pipeline, the scripted provider and
//! the run store.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::prompt::PromptVariant;
use crate::taxonomy::{FeasibilityLabel, InfeasibilityReason, SelfKnowledgeType};

/// Stable task identifier: `<side>-<slug>-<ordinal>`, e.g.
/// `infeasible-missing_context-003`.
///
/// Identifiers are derived from the generation plan, never from clocks or
/// random sources, so replays produce the same ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn for_slot(label: FeasibilityLabel, ordinal: usize) -> Self {
        let (side, slug) = match label {
            FeasibilityLabel::Feasible(t) => ("feasible", t.slug()),
            FeasibilityLabel::Infeasible(r) => ("infeasible", r.slug()),
        };
        TaskId(format!("{side}-{slug}-{ordinal:03}"))
    }

    pub fn new(raw: impl Into<String>) -> Self {
        TaskId(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Recovers the planned label from an id built by [`TaskId::for_slot`].
    pub fn planned_label(&self) -> Option<FeasibilityLabel> {
        let (side, rest) = self.0.split_once('-')?;
        let (slug, ordinal) = rest.rsplit_once('-')?;
        if ordinal.is_empty() || !ordinal.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        match side {
            "feasible" => slug.parse().ok().map(FeasibilityLabel::Feasible),
            "infeasible" => slug.parse().ok().map(FeasibilityLabel::Infeasible),
            _ => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Valid,
    /// Failed an automatic check; waiting for (or confirmed by) review.
    Malformed,
    /// Removed by a reviewer.
    Discarded,
    /// The provider call failed; the slot can be generated again.
    Failed,
}

/// One generated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: TaskId,
    pub label: FeasibilityLabel,
    pub variant: PromptVariant,
    /// Task instruction extracted from the response.
    pub text: String,
    /// Provider output, verbatim.
    pub raw_response: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<String>,
    pub model_id: String,
    /// Provider calls spent on this slot, including malformed retries.
    pub attempts: u32,
    pub created_at: DateTime<Utc>,
}

impl TaskRecord {
    pub fn self_knowledge_type(&self) -> SelfKnowledgeType {
        self.label.self_knowledge_type()
    }

    pub fn is_valid(&self) -> bool {
        self.status == TaskStatus::Valid
    }
}

/// What the subject did with a task it was asked to attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Answered { answer: String },
    DeclaredInfeasible { reason: InfeasibilityReason },
    ParseFailure { raw: String },
}

impl Verdict {
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, Verdict::ParseFailure { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub task_id: TaskId,
    pub verdict: Verdict,
    pub raw_response: String,
    pub attempts: u32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::InfeasibilityReason;

    #[test]
    fn task_id_encodes_label() {
        for r in InfeasibilityReason::ALL {
            let label = FeasibilityLabel::Infeasible(r);
            let id = TaskId::for_slot(label, 7);
            assert_eq!(id.planned_label(), Some(label));
        }
        for t in SelfKnowledgeType::ALL {
            let label = FeasibilityLabel::Feasible(t);
            assert_eq!(TaskId::for_slot(label, 1234).planned_label(), Some(label));
        }
        assert_eq!(
            TaskId::for_slot(
                FeasibilityLabel::Infeasible(InfeasibilityReason::MissingContext),
                3
            )
            .as_str(),
            "infeasible-missing_context-003"
        );
        assert_eq!(TaskId::new("custom").planned_label(), None);
        assert_eq!(TaskId::new("feasible-nope-001").planned_label(), None);
        assert_eq!(TaskId::new("feasible-ethical_integrity-").planned_label(), None);
    }

    #[test]
    fn verdict_json_shape() {
        let v = Verdict::DeclaredInfeasible {
            reason: InfeasibilityReason::OffensiveTopics,
        };
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"kind":"declared_infeasible","reason":"offensive_topics"}"#
        );
    }
}
