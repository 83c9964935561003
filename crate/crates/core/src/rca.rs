//! Pattern mining and anomaly service scoring.
//!
//! Each modality yields [`PatternEvent`]s describing how a metric, span name
//! or ERROR template deviates from its fault-free reference. Events are ranked
//! per modality and folded into one score per service:
//!
//! ```text
//! phi_s = sum_Z |A_s^Z| / |A^Z| * sum_{a in A_s^Z} dev_a / (rank_a + 1)
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{OverlapMode, RcaConfig};
use crate::model::{LogLevel, LogRecord, MetricSample, ServiceId, SpanRecord, TemplateId, Window};
use crate::profile::ReferenceProfile;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RcaError {
    #[error("no reference histogram for metric {metric} of {service}")]
    MissingHistogram { service: String, metric: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    Metric,
    Trace,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternEvent {
    pub modality: Modality,
    /// 1-based position within its modality; 0 until ranked.
    pub ranking: usize,
    /// Metric name, span name or log template.
    pub name: String,
    pub service: ServiceId,
    pub normal_value: f64,
    pub observed_value: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceScore {
    pub service: ServiceId,
    pub score: f64,
    pub contributing_events: Vec<PatternEvent>,
}

/// Composite metric deviation from overlap `O` and relative mean shift.
pub fn metric_deviation(overlap: f64, mean_shift: f64, weight: f64, mode: OverlapMode) -> f64 {
    let o = match mode {
        OverlapMode::Complement => 1.0 - overlap,
        OverlapMode::Literal => overlap,
    };
    weight * o + (1.0 - weight) * mean_shift
}

pub fn relative_mean_shift(observed: f64, reference: f64, eps: f64) -> f64 {
    (observed - reference).abs() / (reference.abs() + eps)
}

/// Relative latency increase over the reference, clamped at 0.
pub fn latency_deviation(observed: f64, reference: f64) -> f64 {
    if reference <= 0.0 {
        return 0.0;
    }
    ((observed - reference) / reference).max(0.0)
}

/// `(r - r_hat) / (r_hat + eps)`
pub fn log_deviation(rate: f64, reference: f64, eps: f64) -> f64 {
    (rate - reference) / (reference + eps)
}

/// Metric patterns from the raw readings of one window.
pub fn mine_metric_patterns(
    samples: &[&MetricSample],
    profile: &ReferenceProfile,
    config: &RcaConfig,
) -> Result<Vec<PatternEvent>, RcaError> {
    let mut values: BTreeMap<(&ServiceId, usize), Vec<f64>> = BTreeMap::new();
    for s in samples {
        for (d, v) in s.values.iter().enumerate() {
            values.entry((&s.service, d)).or_default().push(*v);
        }
    }
    let mut events = Vec::new();
    for ((service, d), vals) in values {
        let name = &profile.metric_names[d.min(profile.metric_names.len().saturating_sub(1))];
        let hist = profile
            .metric_ref
            .get(&(service.clone(), name.clone()))
            .ok_or_else(|| RcaError::MissingHistogram {
                service: service.to_string(),
                metric: name.clone(),
            })?;
        let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let q = hist.distribution(&finite);
        let observed = finite.iter().sum::<f64>() / finite.len() as f64;
        let deviation = metric_deviation(
            hist.overlap(&q),
            relative_mean_shift(observed, hist.mean, config.eps_mean),
            config.metric_weight,
            config.overlap,
        );
        if deviation >= config.tau_metric {
            events.push(PatternEvent {
                modality: Modality::Metric,
                ranking: 0,
                name: name.clone(),
                service: service.clone(),
                normal_value: hist.mean,
                observed_value: observed,
                deviation,
            });
        }
    }
    Ok(events)
}

/// Span-name latency patterns plus the per-trace maximum relative increase.
pub fn mine_trace_patterns(
    spans: &[&SpanRecord],
    profile: &ReferenceProfile,
    config: &RcaConfig,
) -> (Vec<PatternEvent>, BTreeMap<String, f64>) {
    let mut sums: BTreeMap<(&ServiceId, &str), (f64, usize)> = BTreeMap::new();
    let mut per_trace: BTreeMap<String, f64> = BTreeMap::new();
    for span in spans {
        let Some(stat) = profile.span_stats.get(&span.op_key()) else {
            continue;
        };
        let e = sums.entry((&span.service, &span.operation)).or_default();
        e.0 += span.duration_ms;
        e.1 += 1;
        let dev = latency_deviation(span.duration_ms, stat.median_ms);
        let t = per_trace.entry(span.trace_id.clone()).or_insert(0.0);
        *t = t.max(dev);
    }
    let events = sums
        .into_iter()
        .filter_map(|((service, op), (sum, n))| {
            let reference = profile
                .span_stats
                .get(&crate::model::OpKey::new(service.clone(), op))?
                .median_ms;
            let observed = sum / n as f64;
            let deviation = latency_deviation(observed, reference);
            (deviation >= config.tau_trace && deviation > 0.0).then(|| PatternEvent {
                modality: Modality::Trace,
                ranking: 0,
                name: op.to_owned(),
                service: service.clone(),
                normal_value: reference,
                observed_value: observed,
                deviation,
            })
        })
        .collect();
    (events, per_trace)
}

/// ERROR-template frequency patterns. Logs need a template id.
pub fn mine_log_patterns(logs: &[&LogRecord], profile: &ReferenceProfile, config: &RcaConfig) -> Vec<PatternEvent> {
    let mut counts: BTreeMap<(TemplateId, &ServiceId), f64> = BTreeMap::new();
    for log in logs.iter().filter(|l| l.level == LogLevel::Error) {
        if let Some(id) = log.template_id {
            *counts.entry((id, &log.service)).or_default() += 1.0;
        }
    }
    counts
        .into_iter()
        .filter_map(|((id, service), rate)| {
            let reference = profile.template_rate.get(&id).copied().unwrap_or(0.0);
            let deviation = log_deviation(rate, reference, config.eps_freq);
            (deviation > config.tau_log && deviation > 0.0).then(|| PatternEvent {
                modality: Modality::Log,
                ranking: 0,
                name: profile.templates.pattern(id).unwrap_or_else(|| format!("template-{id}")),
                service: service.clone(),
                normal_value: reference,
                observed_value: rate,
                deviation,
            })
        })
        .collect()
}

/// Sorts each modality by deviation (descending, ties by service then name)
/// and assigns 1-based rankings. Output is grouped by modality.
pub fn rank_patterns(events: Vec<PatternEvent>) -> Vec<PatternEvent> {
    let mut by_modality: BTreeMap<Modality, Vec<PatternEvent>> = BTreeMap::new();
    for e in events {
        by_modality.entry(e.modality).or_default().push(e);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_modality {
        group.sort_by(|a, b| {
            b.deviation
                .total_cmp(&a.deviation)
                .then_with(|| a.service.cmp(&b.service))
                .then_with(|| a.name.cmp(&b.name))
        });
        for (i, e) in group.iter_mut().enumerate() {
            e.ranking = i + 1;
        }
        out.extend(group);
    }
    out
}

/// Scores every service in `universe` and every service owning an event.
/// Output is sorted by score descending, ties by service name.
pub fn score_services(ranked: &[PatternEvent], universe: &BTreeSet<ServiceId>) -> Vec<ServiceScore> {
    let mut totals: BTreeMap<Modality, usize> = BTreeMap::new();
    let mut per_service: BTreeMap<&ServiceId, BTreeMap<Modality, Vec<&PatternEvent>>> =
        universe.iter().map(|s| (s, BTreeMap::new())).collect();
    for e in ranked {
        *totals.entry(e.modality).or_default() += 1;
        per_service
            .entry(&e.service)
            .or_default()
            .entry(e.modality)
            .or_default()
            .push(e);
    }
    let mut scores: Vec<ServiceScore> = per_service
        .into_iter()
        .map(|(service, groups)| {
            let mut score = 0.0;
            let mut contributing = Vec::new();
            for (modality, events) in groups {
                let total = totals[&modality] as f64;
                let mass: f64 = events.iter().map(|e| e.deviation / (e.ranking as f64 + 1.0)).sum();
                score += events.len() as f64 / total * mass;
                contributing.extend(events.into_iter().cloned());
            }
            ServiceScore {
                service: service.clone(),
                score,
                contributing_events: contributing,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.service.cmp(&b.service)));
    scores
}

/// Diagnostic report for one anomalous window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    pub window: Window,
    pub events: Vec<PatternEvent>,
    pub scores: Vec<ServiceScore>,
}

impl RcaReport {
    pub fn score_of(&self, service: &ServiceId) -> f64 {
        self.scores
            .iter()
            .find(|s| &s.service == service)
            .map_or(0.0, |s| s.score)
    }

    pub fn total_deviation(&self) -> f64 {
        self.events.iter().map(|e| e.deviation).sum()
    }

    pub fn ranking(&self) -> Vec<ServiceId> {
        self.scores.iter().map(|s| s.service.clone()).collect()
    }
}

/// Runs all three miners over one window and scores the services.
/// Also returns the per-trace latency deviation.
pub fn analyze_window(
    window: Window,
    spans: &[&SpanRecord],
    logs: &[&LogRecord],
    samples: &[&MetricSample],
    profile: &ReferenceProfile,
    config: &RcaConfig,
) -> Result<(RcaReport, BTreeMap<String, f64>), RcaError> {
    let mut events = mine_metric_patterns(samples, profile, config)?;
    let (trace_events, per_trace) = mine_trace_patterns(spans, profile, config);
    events.extend(trace_events);
    events.extend(mine_log_patterns(logs, profile, config));
    let ranked = rank_patterns(events);
    let scores = score_services(&ranked, &profile.services);
    Ok((
        RcaReport {
            window,
            events: ranked,
            scores,
        },
        per_trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(modality: Modality, service: &str, name: &str, deviation: f64) -> PatternEvent {
        PatternEvent {
            modality,
            ranking: 0,
            name: name.into(),
            service: service.into(),
            normal_value: 0.0,
            observed_value: 0.0,
            deviation,
        }
    }

    #[test]
    fn identical_distribution_has_zero_metric_deviation() {
        assert_eq!(metric_deviation(1.0, 0.0, 0.8, OverlapMode::Complement), 0.0);
    }

    #[test]
    fn disjoint_distribution() {
        let d = metric_deviation(0.0, 1.0, 0.8, OverlapMode::Complement);
        assert!((d - 1.0).abs() < 1e-15);
        // Literal form inverts the overlap term.
        assert!((metric_deviation(1.0, 0.0, 0.8, OverlapMode::Literal) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn latency_deviation_examples() {
        assert!((latency_deviation(0.56, 0.03) - 0.53 / 0.03).abs() < 1e-12);
        assert_eq!(latency_deviation(1.0, 1.0), 0.0);
        assert_eq!(latency_deviation(0.5, 1.0), 0.0);
    }

    #[test]
    fn log_deviation_examples() {
        assert_eq!(log_deviation(4.05, 0.0, 1.0), 4.05);
        assert_eq!(log_deviation(2.0, 2.0, 1.0), 0.0);
        assert!((log_deviation(6.0, 2.0, 1.0) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranking_breaks_ties_lexicographically() {
        let ranked = rank_patterns(vec![
            event(Modality::Trace, "b", "x", 3.0),
            event(Modality::Trace, "a", "x", 3.0),
            event(Modality::Trace, "c", "x", 5.0),
        ]);
        let order: Vec<(&str, usize)> = ranked.iter().map(|e| (e.service.as_str(), e.ranking)).collect();
        assert_eq!(order, vec![("c", 1), ("a", 2), ("b", 3)]);
        assert_eq!(rank_patterns(vec![event(Modality::Log, "a", "x", 1.0)])[0].ranking, 1);
        assert!(rank_patterns(Vec::new()).is_empty());
    }

    #[test]
    fn score_example() {
        let ranked = rank_patterns(vec![event(Modality::Log, "s", "x", 4.0), event(Modality::Log, "t", "y", 1.0)]);
        let universe = BTreeSet::from([ServiceId::from("u")]);
        let scores = score_services(&ranked, &universe);
        assert_eq!(scores[0].service.as_str(), "s");
        assert!((scores[0].score - 1.0).abs() < 1e-15);
        let u = scores.iter().find(|s| s.service.as_str() == "u").unwrap();
        assert_eq!(u.score, 0.0);
        assert!(u.contributing_events.is_empty());
    }

    #[test]
    fn modalities_add() {
        let one = rank_patterns(vec![event(Modality::Log, "s", "x", 4.0), event(Modality::Log, "t", "y", 1.0)]);
        let v = score_services(&one, &BTreeSet::new())[0].score;
        let two = rank_patterns(vec![
            event(Modality::Log, "s", "x", 4.0),
            event(Modality::Log, "t", "y", 1.0),
            event(Modality::Metric, "s", "x", 4.0),
            event(Modality::Metric, "t", "y", 1.0),
        ]);
        let s = score_services(&two, &BTreeSet::new());
        assert!((s[0].score - 2.0 * v).abs() < 1e-15);
    }
}
