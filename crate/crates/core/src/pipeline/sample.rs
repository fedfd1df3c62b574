use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::records::TaskRecord;
use crate::taxonomy::{SelfKnowledgeType, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_feasible: usize,
    pub n_infeasible: usize,
    pub seed: u64,
}

/// Per-type quotas for one side: `n / 5` each, remainder to the earliest
/// types.
pub fn type_quotas(n: usize) -> [usize; 5] {
    let k = SelfKnowledgeType::ALL.len();
    std::array::from_fn(|i| n / k + usize::from(i < n % k))
}

/// Seeded uniform sampling without replacement of `Valid` records,
/// balanced across self-knowledge types on each side. The selection is
/// shuffled with the same generator before returning.
pub fn sample_balanced(
    records: &[TaskRecord],
    plan: SamplingPlan,
) -> Result<Vec<TaskRecord>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut selected = Vec::with_capacity(plan.n_feasible + plan.n_infeasible);
    for (side, n) in [
        (Side::Feasible, plan.n_feasible),
        (Side::Infeasible, plan.n_infeasible),
    ] {
        for (t, quota) in SelfKnowledgeType::ALL.iter().zip(type_quotas(n)) {
            let pool: Vec<&TaskRecord> = records
                .iter()
                .filter(|r| r.is_valid() && r.label.side() == side && r.self_knowledge_type() == *t)
                .collect();
            if pool.len() < quota {
                return Err(PipelineError::InsufficientTasks {
                    side,
                    self_knowledge_type: *t,
                    needed: quota,
                    available: pool.len(),
                });
            }
            let mut picks = index::sample(&mut rng, pool.len(), quota).into_vec();
            picks.sort_unstable();
            selected.extend(picks.into_iter().map(|i| pool[i].clone()));
        }
    }
    selected.shuffle(&mut rng);
    Ok(selected)
}
