use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prompt::PromptVariant;
use crate::records::TaskId;
use crate::taxonomy::{FeasibilityLabel, InfeasibilityReason, SelfKnowledgeType};

/// How many tasks to generate for each label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub per_category: usize,
    pub variant: PromptVariant,
    pub feasible: BTreeMap<SelfKnowledgeType, usize>,
    /// Quota per reason; the per-type infeasible count is the sum over the
    /// type's reasons.
    pub infeasible: BTreeMap<InfeasibilityReason, usize>,
}

/// One task to generate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub id: TaskId,
    pub label: FeasibilityLabel,
}

/// Balanced plan: `per_category` feasible and `per_category` infeasible tasks
/// for every type. A type's infeasible quota is split evenly across its
/// reasons, with the remainder going to the earliest reasons.
pub fn plan_generation(per_category: usize, variant: PromptVariant) -> GenerationPlan {
    let feasible = SelfKnowledgeType::ALL
        .iter()
        .map(|t| (*t, per_category))
        .collect();
    let mut infeasible = BTreeMap::new();
    for t in SelfKnowledgeType::ALL {
        let reasons = t.reasons();
        let base = per_category / reasons.len();
        let extra = per_category % reasons.len();
        for (i, r) in reasons.into_iter().enumerate() {
            infeasible.insert(r, base + usize::from(i < extra));
        }
    }
    GenerationPlan {
        per_category,
        variant,
        feasible,
        infeasible,
    }
}

impl GenerationPlan {
    pub fn total_feasible(&self) -> usize {
        self.feasible.values().sum()
    }

    pub fn total_infeasible(&self) -> usize {
        self.infeasible.values().sum()
    }

    pub fn infeasible_for_type(&self, t: SelfKnowledgeType) -> usize {
        t.reasons()
            .iter()
            .map(|r| self.infeasible.get(r).copied().unwrap_or(0))
            .sum()
    }

    /// Every slot: feasible labels first, then infeasible, each in
    /// enumeration order with ordinals from zero.
    pub fn slots(&self) -> Vec<Slot> {
        let feasible = self
            .feasible
            .iter()
            .map(|(t, n)| (FeasibilityLabel::Feasible(*t), *n));
        let infeasible = self
            .infeasible
            .iter()
            .map(|(r, n)| (FeasibilityLabel::Infeasible(*r), *n));
        feasible
            .chain(infeasible)
            .flat_map(|(label, n)| {
                (0..n).map(move |ordinal| Slot {
                    id: TaskId::for_slot(label, ordinal),
                    label,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ninety_per_category_gives_450_each_side() {
        let plan = plan_generation(90, PromptVariant::Vanilla);
        assert_eq!(plan.total_feasible(), 450);
        assert_eq!(plan.total_infeasible(), 450);
        for t in SelfKnowledgeType::ALL {
            assert_eq!(plan.feasible[&t], 90);
            assert_eq!(plan.infeasible_for_type(t), 90);
        }
        assert_eq!(plan.slots().len(), 900);
    }

    #[test]
    fn one_per_category() {
        let plan = plan_generation(1, PromptVariant::ChallengeQap);
        assert_eq!((plan.total_feasible(), plan.total_infeasible()), (5, 5));
    }

    /// Enumerates every even split of `n` over `k` buckets (differences of at
    /// most one, sum n) and checks the plan picks the one that favours
    /// earlier reasons.
    #[test]
    fn reason_quotas_follow_even_split_rule() {
        fn oracle(n: usize, k: usize) -> Vec<usize> {
            // Brute force over all k-tuples with entries in [n/k, n/k + 1].
            let lo = n / k;
            let mut best: Option<Vec<usize>> = None;
            for mask in 0..(1usize << k) {
                let v: Vec<usize> = (0..k).map(|i| lo + ((mask >> i) & 1)).collect();
                if v.iter().sum::<usize>() != n {
                    continue;
                }
                // Lexicographically largest = remainder on earliest reasons.
                if best.as_ref().is_none_or(|b| v > *b) {
                    best = Some(v);
                }
            }
            best.unwrap()
        }
        for n in 1..=40 {
            let plan = plan_generation(n, PromptVariant::Vanilla);
            for t in SelfKnowledgeType::ALL {
                let got: Vec<usize> = t.reasons().iter().map(|r| plan.infeasible[r]).collect();
                assert_eq!(got, oracle(n, got.len()), "n={n} type={t:?}");
            }
        }
        let two = plan_generation(2, PromptVariant::Vanilla);
        let fc: Vec<usize> = SelfKnowledgeType::FunctionalCeiling
            .reasons()
            .iter()
            .map(|r| two.infeasible[r])
            .collect();
        assert_eq!(fc, vec![1, 1, 0]);
    }

    #[test]
    fn slot_ids_are_unique_and_decode_to_their_label() {
        let plan = plan_generation(7, PromptVariant::Vanilla);
        let slots = plan.slots();
        let ids: std::collections::BTreeSet<_> = slots.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), slots.len());
        for s in &slots {
            assert_eq!(s.id.planned_label(), Some(s.label));
        }
    }
}
