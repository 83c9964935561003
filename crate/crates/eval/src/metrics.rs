//! Retention and root-cause ranking metrics.

use std::collections::BTreeSet;

use postsample_core::model::ServiceId;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no labeled items to cover")]
    EmptyLabelSet,
    #[error("no fault cases to score")]
    EmptyCaseSet,
    #[error("k must be at least 1")]
    ZeroK,
}

/// `|selected ∩ labeled| / |labeled|`
pub fn coverage<S: AsRef<str>>(selected: &BTreeSet<&str>, labeled: &BTreeSet<S>) -> Result<f64, EvalError> {
    if labeled.is_empty() {
        return Err(EvalError::EmptyLabelSet);
    }
    let hit = labeled.iter().filter(|l| selected.contains(l.as_ref())).count();
    Ok(hit as f64 / labeled.len() as f64)
}

/// One diagnosed fault: the service ranking and the true root causes.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCase {
    pub ranking: Vec<ServiceId>,
    pub truth: BTreeSet<ServiceId>,
}

/// Mean over cases of the hits among the first `k` positions divided by
/// `min(k, |truth|)`.
pub fn ac_at_k(cases: &[RankedCase], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if cases.is_empty() {
        return Err(EvalError::EmptyCaseSet);
    }
    let total: f64 = cases
        .iter()
        .map(|c| {
            let hits = c.ranking.iter().take(k).filter(|s| c.truth.contains(s)).count();
            let denom = k.min(c.truth.len());
            if denom == 0 {
                0.0
            } else {
                hits as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / cases.len() as f64)
}

/// Mean reciprocal 1-based rank of the first true root cause; a miss counts
/// as 0. An empty case list scores 0.
pub fn mrr(cases: &[RankedCase]) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    let total: f64 = cases
        .iter()
        .map(|c| {
            c.ranking
                .iter()
                .position(|s| c.truth.contains(s))
                .map_or(0.0, |i| 1.0 / (i + 1) as f64)
        })
        .sum();
    total / cases.len() as f64
}
