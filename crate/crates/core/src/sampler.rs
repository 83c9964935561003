//! Edge-case and analysis-guided sampling probabilities, cross-modal
//! propagation and budgeted selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Composition, Pillars, SelectionMode, SamplerConfig};
use crate::model::{CallPath, OpKey, ServiceId, SpanRecord, TemplateId};
use crate::profile::ReferenceProfile;
use crate::rca::{PatternEvent, ServiceScore};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplerError {
    #[error("the reference profile has no call paths")]
    EmptyReferenceSet,
    #[error("analysis probabilities need an anomalous window")]
    InactiveAnalysis,
}

/// Largest double below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `2 / (1 + e^{-2x}) - 1`, kept strictly below 1.
pub fn g(x: f64) -> f64 {
    x.tanh().min(BELOW_ONE)
}

/// `|a ∩ b| / |a ∪ b|`, 1 for two empty sets.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Fault-free call paths prepared for repeated similarity queries.
#[derive(Debug, Clone)]
pub struct TopoIndex<'a> {
    paths: &'a BTreeSet<CallPath>,
    sets: Vec<(&'a CallPath, BTreeSet<&'a OpKey>)>,
}

impl<'a> TopoIndex<'a> {
    pub fn new(profile: &'a ReferenceProfile) -> Result<Self, SamplerError> {
        if profile.path_set.is_empty() {
            return Err(SamplerError::EmptyReferenceSet);
        }
        let sets = profile.path_set.iter().map(|p| (p, p.element_set())).collect();
        Ok(TopoIndex {
            paths: &profile.path_set,
            sets,
        })
    }

    /// `1 - max Sim` for one path and its nearest reference path.
    pub fn path_score(&self, path: &CallPath) -> (f64, &'a CallPath) {
        if let Some(hit) = self.paths.get(path) {
            return (0.0, hit);
        }
        let elements = path.element_set();
        let mut best = (f64::NEG_INFINITY, self.sets[0].0);
        for (reference, set) in &self.sets {
            if *set == elements {
                return (0.0, reference);
            }
            let sim = jaccard(&elements, set);
            if sim > best.0 {
                best = (sim, reference);
            }
        }
        (1.0 - best.0, best.1)
    }
}

/// Structural novelty of a trace: the worst of its paths, with that path and
/// its nearest reference when the score is positive.
pub fn topo_score(paths: &BTreeSet<CallPath>, index: &TopoIndex<'_>) -> (f64, Option<(CallPath, CallPath)>) {
    let mut best: Option<(f64, &CallPath, &CallPath)> = None;
    for path in paths {
        let (score, nearest) = index.path_score(path);
        if best.is_none_or(|(b, _, _)| score > b) {
            best = Some((score, path, nearest));
        }
    }
    match best {
        Some((score, path, nearest)) if score > 0.0 => (score, Some((path.clone(), nearest.clone()))),
        Some((score, _, _)) => (score, None),
        None => (0.0, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEvidence {
    pub span_id: String,
    pub service: ServiceId,
    pub operation: String,
    pub z: f64,
}

/// Largest `|d - mu| / sigma` over the spans, with unknown operations
/// contributing `z_unknown`.
pub fn behavior_score_trace(
    spans: &[&SpanRecord],
    profile: &ReferenceProfile,
    z_unknown: f64,
) -> (f64, Option<SpanEvidence>) {
    let mut best: Option<(f64, &SpanRecord)> = None;
    for span in spans {
        let z = match profile.span_stats.get(&span.op_key()) {
            Some(stat) => (span.duration_ms - stat.mean_ms).abs() / stat.std_ms,
            None => z_unknown,
        };
        if best.is_none_or(|(b, s)| z > b || (z == b && span.span_id < s.span_id)) {
            best = Some((z, span));
        }
    }
    match best {
        Some((z, span)) => (
            z,
            Some(SpanEvidence {
                span_id: span.span_id.clone(),
                service: span.service.clone(),
                operation: span.operation.clone(),
                z,
            }),
        ),
        None => (0.0, None),
    }
}

pub fn edge_prob_trace(topo: f64, behavior: f64) -> f64 {
    g(topo.tanh().max(behavior))
}

/// `-ln(p' + eps)` clamped at 0.
pub fn log_rarity(probability: f64, eps: f64) -> f64 {
    (-(probability + eps).ln()).max(0.0)
}

pub fn edge_prob_log(probability: f64, eps: f64) -> f64 {
    g(log_rarity(probability, eps))
}

/// Service scores as a lookup table; services without a score read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable(BTreeMap<ServiceId, f64>);

impl ScoreTable {
    pub fn new(scores: &[ServiceScore]) -> Self {
        ScoreTable(scores.iter().map(|s| (s.service.clone(), s.score)).collect())
    }

    pub fn get(&self, service: &ServiceId) -> f64 {
        self.0.get(service).copied().unwrap_or(0.0)
    }
}

/// `g(max phi_s)` over the services a trace touches.
pub fn analysis_prob_trace<'s>(
    services: impl IntoIterator<Item = &'s ServiceId>,
    scores: Option<&ScoreTable>,
) -> Result<f64, SamplerError> {
    let scores = scores.ok_or(SamplerError::InactiveAnalysis)?;
    let phi = services.into_iter().map(|s| scores.get(s)).fold(0.0, f64::max);
    Ok(g(phi))
}

pub fn analysis_prob_log(service: &ServiceId, scores: Option<&ScoreTable>) -> Result<f64, SamplerError> {
    let scores = scores.ok_or(SamplerError::InactiveAnalysis)?;
    Ok(g(scores.get(service).max(0.0)))
}

/// A log inherits part of its trace's anomaly likelihood.
pub fn propagate_trace_to_log(p_log: f64, p_trace: Option<f64>, w_t: f64) -> f64 {
    match p_trace {
        Some(p) => p_log.max(1.0 - (1.0 - p).powf(w_t)),
        None => p_log,
    }
}

/// A trace inherits from the most anomalous of its logs.
pub fn propagate_log_to_trace(p_trace: f64, p_logs: impl IntoIterator<Item = f64>, w_l: f64) -> f64 {
    match p_logs.into_iter().reduce(f64::max) {
        Some(p) => p_trace.max(1.0 - (1.0 - p).powf(w_l)),
        None => p_trace,
    }
}

/// Final probability for one item under the configured pillars.
pub fn compose(p_edge: f64, p_analysis: Option<f64>, config: &SamplerConfig) -> f64 {
    match (config.pillars, p_analysis) {
        (Pillars::EdgeOnly, _) | (Pillars::Full, None) => p_edge,
        (Pillars::AnalysisOnly, None) => 0.0,
        (Pillars::AnalysisOnly, Some(pa)) => pa,
        (Pillars::Full, Some(pa)) => match config.composition {
            Composition::Multiply => p_edge * pa,
            Composition::Max => p_edge.max(pa),
        },
    }
}

/// `ceil(budget * n)`, treating products within 1e-9 of an integer as that
/// integer so that e.g. `0.07 * 100` selects 7.
pub fn budget_count(budget: f64, n: usize) -> usize {
    let x = budget * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Trace,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEvidence {
    pub template_id: TemplateId,
    pub pattern: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deviant_path: Option<CallPath>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nearest_reference: Option<CallPath>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_z_span: Option<SpanEvidence>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rare_template: Option<TemplateEvidence>,
    /// Largest relative latency increase over the reference median.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pattern_events: Vec<PatternEvent>,
}

impl Evidence {
    pub fn is_empty(&self) -> bool {
        self.deviant_path.is_none()
            && self.max_z_span.is_none()
            && self.rare_template.is_none()
            && self.latency_deviation.is_none()
            && self.pattern_events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDecision {
    pub data_type: DataType,
    /// Trace id or log id.
    pub subject: String,
    pub window_start_ns: u64,
    pub p_edge: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_analysis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_analysis_propagated: Option<f64>,
    pub p_final: f64,
    pub selected: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence: Option<Evidence>,
}

fn rank_order(decisions: &[SamplingDecision]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..decisions.len()).collect();
    order.sort_by(|&a, &b| {
        decisions[b]
            .p_final
            .total_cmp(&decisions[a].p_final)
            .then_with(|| decisions[a].subject.cmp(&decisions[b].subject))
    });
    order
}

/// Marks exactly `budget_count(budget, n)` decisions as selected. The slice
/// holds one window and one data type.
pub fn select_within_budget(decisions: &mut [SamplingDecision], budget: f64, mode: SelectionMode, seed: u64) {
    let target = budget_count(budget, decisions.len());
    let order = rank_order(decisions);
    let mut chosen = vec![false; decisions.len()];
    match mode {
        SelectionMode::Rank => {
            for &i in order.iter().take(target) {
                chosen[i] = true;
            }
        }
        SelectionMode::Bernoulli => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Draw in rank order so the outcome does not depend on input order.
            let mut drawn: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| rng.random::<f64>() < decisions[i].p_final)
                .collect();
            drawn.truncate(target);
            for &i in &drawn {
                chosen[i] = true;
            }
            let mut missing = target - drawn.len();
            for &i in &order {
                if missing == 0 {
                    break;
                }
                if !chosen[i] {
                    chosen[i] = true;
                    missing -= 1;
                }
            }
        }
    }
    for (d, c) in decisions.iter_mut().zip(chosen) {
        d.selected = c;
    }
}

/// Seed for one (window, data type) selection, mixed with splitmix64.
pub fn selection_seed(seed: u64, window_start_ns: u64, data_type: DataType) -> u64 {
    let mut z = seed
        ^ window_start_ns.rotate_left(17)
        ^ match data_type {
            DataType::Trace => 0x5452_4143,
            DataType::Log => 0x4c4f_4753,
        };
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
