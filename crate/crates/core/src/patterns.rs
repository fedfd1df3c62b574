//! Where misclassifications concentrate: which reasons drive overconfidence
//! and conservatism, and which reasons or types get confused with each other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::ConfusionMatrix;
use crate::taxonomy::{InfeasibilityReason, SelfKnowledgeType};

/// One entry of a ranked distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked<K> {
    pub key: K,
    pub count: u64,
    pub share: f64,
}

/// Entries sorted by count descending, then by key order. An empty
/// distribution has no entries and `empty == true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution<K> {
    pub total: u64,
    pub entries: Vec<Ranked<K>>,
    pub empty: bool,
    /// More than one entry shares the top count.
    pub top_tied: bool,
}

impl<K: Ord + Copy> Distribution<K> {
    fn from_counts(counts: &BTreeMap<K, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let mut entries: Vec<Ranked<K>> = counts
            .iter()
            .filter(|(_, c)| **c > 0)
            .map(|(k, c)| Ranked {
                key: *k,
                count: *c,
                share: *c as f64 / total as f64,
            })
            .collect();
        // Stable sort keeps key order among equal counts.
        entries.sort_by_key(|e| std::cmp::Reverse(e.count));
        let top_tied = entries.len() > 1 && entries[0].count == entries[1].count;
        Self {
            total,
            empty: entries.is_empty(),
            entries,
            top_tied,
        }
    }
}

impl<K> Distribution<K> {
    pub fn top(&self) -> Option<&Ranked<K>> {
        self.entries.first()
    }
}

/// Classified reasons among feasible tasks declared infeasible (`FR`).
pub fn overconfidence_distribution(m: &ConfusionMatrix) -> Distribution<InfeasibilityReason> {
    Distribution::from_counts(m.overconfident_reasons())
}

/// Generated reasons among infeasible tasks that were answered (`RF`).
pub fn conservatism_distribution(m: &ConfusionMatrix) -> Distribution<InfeasibilityReason> {
    Distribution::from_counts(m.conservative_reasons())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLevel {
    Type,
    Reason,
}

/// An ordered (generated, classified) pair at either level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "level")]
pub enum ConfusionPair {
    Type {
        generated: SelfKnowledgeType,
        classified: SelfKnowledgeType,
    },
    Reason {
        generated: InfeasibilityReason,
        classified: InfeasibilityReason,
    },
}

impl ConfusionPair {
    /// Both sides fall under the same self-knowledge type.
    pub fn within_type(&self) -> bool {
        match *self {
            ConfusionPair::Type {
                generated,
                classified,
            } => generated == classified,
            ConfusionPair::Reason {
                generated,
                classified,
            } => generated.self_knowledge_type() == classified.self_knowledge_type(),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ConfusionPair::Type {
                generated,
                classified,
            } => format!("{} - {}", generated.display_name(), classified.display_name()),
            ConfusionPair::Reason {
                generated,
                classified,
            } => format!("{} - {}", generated.display_name(), classified.display_name()),
        }
    }
}

/// Distribution over mismatched-reason pairs (`RRprime`). At type level
/// pairs map through each reason's type; same-type swaps stay in and are
/// marked by [`ConfusionPair::within_type`].
pub fn confusion_pairs(m: &ConfusionMatrix, level: PairLevel) -> Distribution<ConfusionPair> {
    let mut counts: BTreeMap<ConfusionPair, u64> = BTreeMap::new();
    for (&(g, c), &n) in m.reason_pairs() {
        let key = match level {
            PairLevel::Reason => ConfusionPair::Reason {
                generated: g,
                classified: c,
            },
            PairLevel::Type => ConfusionPair::Type {
                generated: g.self_knowledge_type(),
                classified: c.self_knowledge_type(),
            },
        };
        *counts.entry(key).or_default() += n;
    }
    Distribution::from_counts(&counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub overconfidence: Distribution<InfeasibilityReason>,
    pub conservatism: Distribution<InfeasibilityReason>,
    pub type_confusion: Distribution<ConfusionPair>,
    pub reason_confusion: Distribution<ConfusionPair>,
}

impl PatternReport {
    pub fn from_matrix(m: &ConfusionMatrix) -> Self {
        Self {
            overconfidence: overconfidence_distribution(m),
            conservatism: conservatism_distribution(m),
            type_confusion: confusion_pairs(m, PairLevel::Type),
            reason_confusion: confusion_pairs(m, PairLevel::Reason),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptVariant;
    use crate::records::{ClassificationOutcome, TaskId, TaskRecord, TaskStatus, Verdict};
    use crate::taxonomy::{FeasibilityLabel, InfeasibilityReason as R, SelfKnowledgeType as T};
    use proptest::prelude::*;

    struct Builder {
        m: ConfusionMatrix,
        next: usize,
    }

    impl Builder {
        fn new() -> Self {
            Self {
                m: ConfusionMatrix::new(),
                next: 0,
            }
        }

        fn add(&mut self, label: FeasibilityLabel, verdict: Verdict, times: usize) -> &mut Self {
            for _ in 0..times {
                let task = TaskRecord {
                    id: TaskId::for_slot(label, self.next),
                    label,
                    variant: PromptVariant::Vanilla,
                    text: "t".into(),
                    raw_response: String::new(),
                    status: TaskStatus::Valid,
                    issue: None,
                    model_id: "m".into(),
                    attempts: 1,
                    created_at: chrono::DateTime::UNIX_EPOCH,
                };
                self.next += 1;
                let outcome = ClassificationOutcome {
                    task_id: task.id.clone(),
                    verdict: verdict.clone(),
                    raw_response: String::new(),
                    attempts: 1,
                };
                self.m.record(&task, &outcome).unwrap();
            }
            self
        }
    }

    fn declared(reason: R) -> Verdict {
        Verdict::DeclaredInfeasible { reason }
    }

    fn answered() -> Verdict {
        Verdict::Answered { answer: "a".into() }
    }

    #[test]
    fn overconfidence_top_reason_and_share() {
        let mut b = Builder::new();
        let feasible = FeasibilityLabel::Feasible(T::FunctionalCeiling);
        b.add(feasible, declared(R::MissingContext), 42);
        for (i, r) in R::ALL.iter().filter(|r| **r != R::MissingContext).enumerate() {
            b.add(feasible, declared(*r), if i < 8 { 6 } else { 5 });
        }
        let d = overconfidence_distribution(&b.m);
        assert_eq!(d.total, 100);
        let top = d.top().unwrap();
        assert_eq!((top.key, top.share), (R::MissingContext, 0.42));
        assert!(!d.top_tied);
    }

    #[test]
    fn conservatism_singleton_and_empty() {
        let mut b = Builder::new();
        assert!(conservatism_distribution(&b.m).empty);
        b.add(FeasibilityLabel::Infeasible(R::ComputationalComplexityExceeded), answered(), 1);
        let d = conservatism_distribution(&b.m);
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.top().unwrap().share, 1.0);
        assert!(!d.empty);
    }

    #[test]
    fn conservatism_top_from_generated_reason() {
        let mut b = Builder::new();
        b.add(FeasibilityLabel::Infeasible(R::ComputationalComplexityExceeded), answered(), 77)
            .add(FeasibilityLabel::Infeasible(R::MissingContext), answered(), 23);
        let d = conservatism_distribution(&b.m);
        assert_eq!(d.top().unwrap().key, R::ComputationalComplexityExceeded);
        assert!((d.top().unwrap().share - 0.77).abs() < 1e-12);
    }

    #[test]
    fn tie_takes_enumeration_order_and_flags() {
        let mut b = Builder::new();
        let f = FeasibilityLabel::Feasible(T::EthicalIntegrity);
        b.add(f, declared(R::OutsideTrainingCutoff), 3)
            .add(f, declared(R::MissingContext), 3);
        let d = overconfidence_distribution(&b.m);
        assert!(d.top_tied);
        assert_eq!(d.top().unwrap().key, R::MissingContext);
    }

    #[test]
    fn reason_pair_maps_across_types() {
        let mut b = Builder::new();
        b.add(FeasibilityLabel::Infeasible(R::IncoherentContext), declared(R::IllogicalIllFormed), 36)
            .add(FeasibilityLabel::Infeasible(R::VagueOpenEnded), declared(R::MissingContext), 34)
            .add(FeasibilityLabel::Infeasible(R::MissingContext), declared(R::IncoherentContext), 30);
        let reasons = confusion_pairs(&b.m, PairLevel::Reason);
        assert_eq!(
            reasons.top().unwrap().key,
            ConfusionPair::Reason {
                generated: R::IncoherentContext,
                classified: R::IllogicalIllFormed
            }
        );
        assert_eq!(reasons.top().unwrap().share, 0.36);
        let types = confusion_pairs(&b.m, PairLevel::Type);
        let top = types.top().unwrap();
        assert_eq!(
            top.key,
            ConfusionPair::Type {
                generated: T::ContextualAwareness,
                classified: T::FunctionalCeiling
            }
        );
        let within = types
            .entries
            .iter()
            .find(|e| e.key.within_type())
            .expect("within-type swap retained");
        assert_eq!(within.count, 30);
    }

    fn any_matrix() -> impl Strategy<Value = ConfusionMatrix> {
        let labels = prop::collection::vec((0usize..11, 0usize..11, 0usize..3), 0..200);
        labels.prop_map(|draws| {
            let mut b = Builder::new();
            for (g, c, kind) in draws {
                let (g, c) = (R::ALL[g], R::ALL[c]);
                match kind {
                    0 => b.add(FeasibilityLabel::Feasible(g.self_knowledge_type()), declared(c), 1),
                    1 => b.add(FeasibilityLabel::Infeasible(g), answered(), 1),
                    _ => b.add(FeasibilityLabel::Infeasible(g), declared(c), 1),
                };
            }
            b.m
        })
    }

    proptest! {
        #[test]
        fn shares_sum_to_one_and_top_is_maximal(m in any_matrix()) {
            let report = PatternReport::from_matrix(&m);
            let check = |entries: Vec<(u64, f64)>, empty: bool| -> Result<(), TestCaseError> {
                prop_assert_eq!(entries.is_empty(), empty);
                if !entries.is_empty() {
                    let sum: f64 = entries.iter().map(|e| e.1).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                    prop_assert!(entries.iter().all(|e| e.0 <= entries[0].0));
                }
                Ok(())
            };
            check(report.overconfidence.entries.iter().map(|e| (e.count, e.share)).collect(), report.overconfidence.empty)?;
            check(report.conservatism.entries.iter().map(|e| (e.count, e.share)).collect(), report.conservatism.empty)?;
            check(report.type_confusion.entries.iter().map(|e| (e.count, e.share)).collect(), report.type_confusion.empty)?;
            check(report.reason_confusion.entries.iter().map(|e| (e.count, e.share)).collect(), report.reason_confusion.empty)?;
        }

        #[test]
        fn type_shares_are_sums_of_reason_shares(m in any_matrix()) {
            let reasons = confusion_pairs(&m, PairLevel::Reason);
            let types = confusion_pairs(&m, PairLevel::Type);
            for t in &types.entries {
                let ConfusionPair::Type { generated, classified } = t.key else { unreachable!() };
                let sum: f64 = reasons.entries.iter().filter(|r| match r.key {
                    ConfusionPair::Reason { generated: g, classified: c } =>
                        g.self_knowledge_type() == generated && c.self_knowledge_type() == classified,
                    _ => false,
                }).map(|r| r.share).sum();
                prop_assert!((sum - t.share).abs() < 1e-9);
            }
            for r in &reasons.entries {
                let ConfusionPair::Reason { generated, classified } = r.key else { unreachable!() };
                prop_assert_ne!(generated, classified);
            }
        }
    }
}
