//! Production-phase pipeline: windowing, detection, RCA on anomalous windows,
//! per-item scoring and budgeted selection.
//!
//! [`analyze`] does the expensive, config-independent part once; [`sample`]
//! turns an [`Analysis`] into decisions for any sampler configuration, which
//! lets ablations share one analysis.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PipelineConfig, Pillars, SamplerConfig};
use crate::detect::{detect_window, DetectError, DetectionReport, WindowSlice};
use crate::ingest::{aggregate_metrics, extract_call_paths, mine_all, IngestError};
use crate::io::Telemetry;
use crate::model::{group_traces, validate_trace, CallPath, LogRecord, ServiceId, TemplateId, TraceGraph, Window};
use crate::profile::ReferenceProfile;
use crate::rca::{analyze_window, PatternEvent, RcaError, RcaReport};
use crate::sampler::{
    analysis_prob_log, analysis_prob_trace, behavior_score_trace, compose, edge_prob_log, edge_prob_trace,
    propagate_log_to_trace, propagate_trace_to_log, select_within_budget, selection_seed, topo_score, DataType,
    Evidence, SamplerError, SamplingDecision, ScoreTable, SpanEvidence, TemplateEvidence, TopoIndex,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Rca(#[from] RcaError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("profile uses {profile} ns windows but the run is configured for {config} ns")]
    WindowMismatch { profile: u64, config: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceItem {
    pub trace_id: String,
    pub window: usize,
    pub services: Vec<ServiceId>,
    pub topo: f64,
    pub topo_evidence: Option<(CallPath, CallPath)>,
    pub behavior: f64,
    pub max_z_span: Option<SpanEvidence>,
    pub latency_deviation: Option<f64>,
    pub p_edge: f64,
    pub p_analysis: Option<f64>,
    /// Indices into [`Analysis::logs`].
    pub logs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogItem {
    pub log_id: String,
    pub window: usize,
    pub service: ServiceId,
    pub template_id: Option<TemplateId>,
    pub template_probability: f64,
    pub p_edge: f64,
    pub p_analysis: Option<f64>,
    /// Index into [`Analysis::traces`].
    pub trace: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAnalysis {
    pub detection: DetectionReport,
    pub rca: Option<RcaReport>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub windows: Vec<WindowAnalysis>,
    /// Valid traces, ordered by trace id.
    pub traces: Vec<TraceItem>,
    /// Logs ordered by log id.
    pub logs: Vec<LogItem>,
    /// Traces dropped for structural errors, with the reason.
    pub rejected_traces: Vec<(String, String)>,
    pub template_patterns: BTreeMap<TemplateId, String>,
    pub evidence_events: usize,
}

impl Analysis {
    pub fn rca_reports(&self) -> impl Iterator<Item = &RcaReport> {
        self.windows.iter().filter_map(|w| w.rca.as_ref())
    }
}

fn bucket<T>(n: usize, items: impl Iterator<Item = (usize, T)>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = (0..n).map(|_| Vec::new()).collect();
    for (w, item) in items {
        out[w].push(item);
    }
    out
}

/// Runs ingest, detection, RCA and per-item scoring over production data.
pub fn analyze(data: &Telemetry, profile: &ReferenceProfile, config: &PipelineConfig) -> Result<Analysis, PipelineError> {
    let window_ns = config.window_length_ns();
    if profile.window_length_ns != window_ns {
        return Err(PipelineError::WindowMismatch {
            profile: profile.window_length_ns,
            config: window_ns,
        });
    }
    let topo = TopoIndex::new(profile)?;

    // Ingest.
    let graphs = group_traces(data.spans.iter().cloned());
    let checked: Vec<Result<(TraceGraph, BTreeSet<CallPath>), (String, String)>> = graphs
        .into_par_iter()
        .map(|t| {
            validate_trace(&t)
                .and_then(|_| extract_call_paths(&t))
                .map(|paths| (t.clone(), paths))
                .map_err(|e| (t.trace_id.clone(), e.to_string()))
        })
        .collect();
    let mut traces = Vec::new();
    let mut rejected_traces = Vec::new();
    for c in checked {
        match c {
            Ok(t) => traces.push(t),
            Err(r) => rejected_traces.push(r),
        }
    }
    let mut logs: Vec<LogRecord> = data.logs.clone();
    let mut miner = profile.templates.clone();
    mine_all(&mut logs, &mut miner);
    logs.sort_by(|a, b| a.log_id.cmp(&b.log_id));

    let Some((first, last)) = data.time_range() else {
        return Ok(Analysis {
            windows: Vec::new(),
            traces: Vec::new(),
            logs: Vec::new(),
            rejected_traces,
            template_patterns: BTreeMap::new(),
            evidence_events: config.sampler.evidence_events,
        });
    };
    let windows = Window::tiling(first, last, window_ns);
    let origin = windows[0].start_ns;
    let index_of = |ts: u64| ((Window::containing(ts, window_ns).start_ns - origin) / window_ns) as usize;
    let vectors = aggregate_metrics(&data.metrics, &profile.metric_names, window_ns, Some((first, last)))?;

    let trace_window: Vec<usize> = traces.iter().map(|(t, _)| index_of(t.start_ns())).collect();
    let spans_by_window = bucket(
        windows.len(),
        traces
            .iter()
            .zip(&trace_window)
            .flat_map(|((t, _), &w)| t.spans.iter().map(move |s| (w, s))),
    );
    let logs_by_window = bucket(windows.len(), logs.iter().map(|l| (index_of(l.timestamp_ns), l)));
    let vectors_by_window = bucket(windows.len(), vectors.iter().map(|v| (index_of(v.window_start_ns), v)));
    let samples_by_window = bucket(windows.len(), data.metrics.iter().map(|m| (index_of(m.timestamp_ns), m)));

    // Detection and RCA per window.
    let per_window: Vec<(WindowAnalysis, BTreeMap<String, f64>)> = (0..windows.len())
        .into_par_iter()
        .map(|w| -> Result<_, PipelineError> {
            let slice = WindowSlice {
                spans: spans_by_window[w].clone(),
                logs: logs_by_window[w].clone(),
                vectors: vectors_by_window[w].clone(),
            };
            let detection = detect_window(windows[w], &slice, profile, &config.detect)?;
            if !detection.anomalous {
                return Ok((WindowAnalysis { detection, rca: None }, BTreeMap::new()));
            }
            let (report, per_trace) = analyze_window(
                windows[w],
                &slice.spans,
                &slice.logs,
                &samples_by_window[w],
                profile,
                &config.rca,
            )?;
            Ok((
                WindowAnalysis {
                    detection,
                    rca: Some(report),
                },
                per_trace,
            ))
        })
        .collect::<Result<_, _>>()?;
    let tables: Vec<Option<ScoreTable>> = per_window
        .iter()
        .map(|(w, _)| w.rca.as_ref().map(|r| ScoreTable::new(&r.scores)))
        .collect();

    // Per-item scores.
    let z_unknown = config.sampler.z_unknown;
    let mut trace_items: Vec<TraceItem> = traces
        .par_iter()
        .zip(&trace_window)
        .map(|((t, paths), &w)| {
            let (topo_s, topo_evidence) = topo_score(paths, &topo);
            let spans: Vec<_> = t.spans.iter().collect();
            let (behavior, max_z_span) = behavior_score_trace(&spans, profile, z_unknown);
            let services: Vec<ServiceId> = t.services().into_iter().cloned().collect();
            let p_analysis = tables[w]
                .as_ref()
                .map(|table| analysis_prob_trace(&services, Some(table)).expect("table present"));
            TraceItem {
                trace_id: t.trace_id.clone(),
                window: w,
                latency_deviation: per_window[w].1.get(&t.trace_id).copied(),
                services,
                topo: topo_s,
                topo_evidence,
                behavior,
                max_z_span,
                p_edge: edge_prob_trace(topo_s, behavior),
                p_analysis,
                logs: Vec::new(),
            }
        })
        .collect();
    let trace_index: BTreeMap<&str, usize> = traces
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (t.trace_id.as_str(), i))
        .collect();
    let eps = config.sampler.template_eps;
    let log_items: Vec<LogItem> = logs
        .par_iter()
        .map(|l| {
            let w = index_of(l.timestamp_ns);
            let template_probability = l.template_id.map_or(0.0, |id| profile.template_probability(id));
            LogItem {
                log_id: l.log_id.clone(),
                window: w,
                service: l.service.clone(),
                template_id: l.template_id,
                template_probability,
                p_edge: if l.template_id.is_some() {
                    edge_prob_log(template_probability, eps)
                } else {
                    0.0
                },
                p_analysis: tables[w]
                    .as_ref()
                    .map(|table| analysis_prob_log(&l.service, Some(table)).expect("table present")),
                trace: l.trace_id.as_deref().and_then(|id| trace_index.get(id).copied()),
            }
        })
        .collect();
    for (i, l) in log_items.iter().enumerate() {
        if let Some(t) = l.trace {
            trace_items[t].logs.push(i);
        }
    }
    let template_patterns = log_items
        .iter()
        .filter_map(|l| l.template_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter_map(|id| miner.pattern(id).map(|p| (id, p)))
        .collect();

    Ok(Analysis {
        windows: per_window.into_iter().map(|(w, _)| w).collect(),
        traces: trace_items,
        logs: log_items,
        rejected_traces,
        template_patterns,
        evidence_events: config.sampler.evidence_events,
    })
}

fn top_events<'a>(
    analysis: &'a Analysis,
    sources: impl IntoIterator<Item = (usize, &'a ServiceId)>,
    limit: usize,
) -> Vec<PatternEvent> {
    let mut events: Vec<&PatternEvent> = Vec::new();
    let mut seen = BTreeSet::new();
    for (w, service) in sources {
        if !seen.insert((w, service)) {
            continue;
        }
        let Some(report) = analysis.windows[w].rca.as_ref() else {
            continue;
        };
        events.extend(report.events.iter().filter(|e| &e.service == service));
    }
    events.sort_by(|a, b| {
        b.deviation
            .total_cmp(&a.deviation)
            .then_with(|| a.service.cmp(&b.service))
            .then_with(|| a.name.cmp(&b.name))
    });
    events.into_iter().take(limit).cloned().collect()
}

fn finish(evidence: Evidence) -> Option<Evidence> {
    (!evidence.is_empty()).then_some(evidence)
}

/// Composes final probabilities and selects within the budget per window and
/// data type. Output is ordered by window, then traces before logs, then id.
pub fn sample(analysis: &Analysis, config: &SamplerConfig, seed: u64) -> Vec<SamplingDecision> {
    let use_analysis = config.pillars != Pillars::EdgeOnly;
    let limit = analysis.evidence_events;

    let mut traces: Vec<SamplingDecision> = analysis
        .traces
        .par_iter()
        .map(|t| {
            let p_analysis = t.p_analysis.filter(|_| use_analysis);
            let propagated = p_analysis.map(|pa| {
                let from_logs = t.logs.iter().filter_map(|&l| analysis.logs[l].p_analysis);
                propagate_log_to_trace(pa, from_logs, config.w_l)
            });
            let mut evidence = Evidence {
                max_z_span: t.max_z_span.clone().filter(|s| s.z > 0.0),
                latency_deviation: t.latency_deviation.filter(|d| *d > 0.0),
                ..Evidence::default()
            };
            if let Some((path, nearest)) = &t.topo_evidence {
                evidence.deviant_path = Some(path.clone());
                evidence.nearest_reference = Some(nearest.clone());
            }
            if propagated.is_some_and(|p| p > 0.0) {
                let sources = t
                    .services
                    .iter()
                    .map(|s| (t.window, s))
                    .chain(t.logs.iter().map(|&l| (analysis.logs[l].window, &analysis.logs[l].service)));
                evidence.pattern_events = top_events(analysis, sources, limit);
            }
            SamplingDecision {
                data_type: DataType::Trace,
                subject: t.trace_id.clone(),
                window_start_ns: analysis.windows[t.window].detection.window.start_ns,
                p_edge: t.p_edge,
                p_analysis,
                p_analysis_propagated: propagated,
                p_final: compose(t.p_edge, propagated, config),
                selected: false,
                evidence: finish(evidence),
            }
        })
        .collect();

    let mut logs: Vec<SamplingDecision> = analysis
        .logs
        .par_iter()
        .map(|l| {
            let p_analysis = l.p_analysis.filter(|_| use_analysis);
            let trace = l.trace.map(|t| &analysis.traces[t]);
            let propagated = p_analysis.map(|pa| propagate_trace_to_log(pa, trace.and_then(|t| t.p_analysis), config.w_t));
            let mut evidence = Evidence::default();
            if let Some(id) = l.template_id.filter(|_| l.p_edge > 0.0) {
                evidence.rare_template = Some(TemplateEvidence {
                    template_id: id,
                    pattern: analysis.template_patterns.get(&id).cloned().unwrap_or_default(),
                    probability: l.template_probability,
                });
            }
            if propagated.is_some_and(|p| p > 0.0) {
                let own = std::iter::once((l.window, &l.service));
                let via_trace = trace.into_iter().flat_map(|t| t.services.iter().map(move |s| (t.window, s)));
                evidence.pattern_events = top_events(analysis, own.chain(via_trace), limit);
            }
            SamplingDecision {
                data_type: DataType::Log,
                subject: l.log_id.clone(),
                window_start_ns: analysis.windows[l.window].detection.window.start_ns,
                p_edge: l.p_edge,
                p_analysis,
                p_analysis_propagated: propagated,
                p_final: compose(l.p_edge, propagated, config),
                selected: false,
                evidence: finish(evidence),
            }
        })
        .collect();

    let mut out = Vec::with_capacity(traces.len() + logs.len());
    let trace_groups = bucket(
        analysis.windows.len(),
        analysis.traces.iter().enumerate().map(|(i, t)| (t.window, i)),
    );
    let log_groups = bucket(
        analysis.windows.len(),
        analysis.logs.iter().enumerate().map(|(i, l)| (l.window, i)),
    );
    for (w, window) in analysis.windows.iter().enumerate() {
        let start = window.detection.window.start_ns;
        for (data_type, group, pool) in [
            (DataType::Trace, &trace_groups[w], &mut traces),
            (DataType::Log, &log_groups[w], &mut logs),
        ] {
            let mut batch: Vec<SamplingDecision> = group.iter().map(|&i| pool[i].clone()).collect();
            select_within_budget(
                &mut batch,
                config.budget,
                config.mode,
                selection_seed(seed, start, data_type),
            );
            batch.sort_by(|a, b| a.subject.cmp(&b.subject));
            out.extend(batch);
        }
    }
    out
}

/// Recomposes stored decisions under another sampler configuration and
/// selects again. On decisions from a full-pillar run this reproduces what
/// [`sample`] selects for `config`. Output order matches [`sample`].
pub fn resample(decisions: &[SamplingDecision], config: &SamplerConfig, seed: u64) -> Vec<SamplingDecision> {
    let use_analysis = config.pillars != Pillars::EdgeOnly;
    let mut groups: BTreeMap<(u64, DataType), Vec<SamplingDecision>> = BTreeMap::new();
    for d in decisions {
        let mut d = d.clone();
        if !use_analysis {
            d.p_analysis = None;
            d.p_analysis_propagated = None;
        }
        d.p_final = compose(d.p_edge, d.p_analysis_propagated, config);
        d.selected = false;
        groups.entry((d.window_start_ns, d.data_type)).or_default().push(d);
    }
    let mut out = Vec::with_capacity(decisions.len());
    for ((start, data_type), mut batch) in groups {
        select_within_budget(&mut batch, config.budget, config.mode, selection_seed(seed, start, data_type));
        batch.sort_by(|a, b| a.subject.cmp(&b.subject));
        out.extend(batch);
    }
    out
}

/// Ids of the selected traces and logs.
pub fn selected_ids(decisions: &[SamplingDecision]) -> (BTreeSet<&str>, BTreeSet<&str>) {
    let mut traces = BTreeSet::new();
    let mut logs = BTreeSet::new();
    for d in decisions.iter().filter(|d| d.selected) {
        match d.data_type {
            DataType::Trace => traces.insert(d.subject.as_str()),
            DataType::Log => logs.insert(d.subject.as_str()),
        };
    }
    (traces, logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LogLevel, SpanRecord, NANOS_PER_SEC};
    use crate::profile::build_profile;

    fn span(trace: &str, id: &str, parent: Option<&str>, service: &str, start_s: u64, ms: f64) -> SpanRecord {
        SpanRecord {
            span_id: id.into(),
            trace_id: trace.into(),
            parent_span_id: parent.map(Into::into),
            service: service.into(),
            operation: "op".into(),
            start_ns: start_s * NANOS_PER_SEC,
            duration_ms: ms,
        }
    }

    fn phase(n: usize, offset_s: u64, slow: bool) -> Telemetry {
        let mut t = Telemetry::default();
        for i in 0..n {
            let id = format!("{offset_s}-{i:04}");
            let jitter = (i % 5) as f64 * 0.1;
            t.spans.push(span(&id, &format!("{id}a"), None, "A", offset_s + i as u64, 10.0 + jitter));
            let b = if slow && i > n / 2 { 100.0 } else { 5.0 + jitter };
            t.spans.push(span(&id, &format!("{id}b"), Some(&format!("{id}a")), "B", offset_s + i as u64, b));
            t.logs.push(LogRecord {
                log_id: format!("{id}l"),
                timestamp_ns: (offset_s + i as u64) * NANOS_PER_SEC,
                service: "B".into(),
                level: LogLevel::Info,
                message: format!("served request {i}"),
                trace_id: Some(id.clone()),
                template_id: None,
            });
        }
        t
    }

    #[test]
    fn normal_windows_use_edge_probability() {
        let cfg = PipelineConfig::default();
        let profile = build_profile(&phase(300, 0, false), None, &cfg).unwrap();
        let analysis = analyze(&phase(120, 600, false), &profile, &cfg).unwrap();
        assert!(analysis.rca_reports().next().is_none());
        let decisions = sample(&analysis, &cfg.sampler, 0);
        assert_eq!(decisions.len(), 240);
        assert!(decisions.iter().all(|d| d.p_final == d.p_edge && d.p_analysis.is_none()));
    }

    #[test]
    fn slow_service_is_found_and_sampled() {
        let cfg = PipelineConfig::default();
        let profile = build_profile(&phase(300, 0, false), None, &cfg).unwrap();
        let analysis = analyze(&phase(120, 600, true), &profile, &cfg).unwrap();
        let report = analysis.rca_reports().last().unwrap();
        assert_eq!(report.scores[0].service.as_str(), "B");
        let decisions = sample(&analysis, &cfg.sampler, 0);
        for w in analysis.windows.iter().map(|w| w.detection.window.start_ns) {
            let n = decisions
                .iter()
                .filter(|d| d.window_start_ns == w && d.data_type == DataType::Trace)
                .count();
            let k = decisions
                .iter()
                .filter(|d| d.window_start_ns == w && d.data_type == DataType::Trace && d.selected)
                .count();
            assert_eq!(k, crate::sampler::budget_count(0.05, n));
        }
        for d in decisions.iter().filter(|d| d.selected) {
            let needs = d.p_analysis_propagated.is_some_and(|p| p > 0.0)
                || d.evidence.as_ref().is_some_and(|e| e.deviant_path.is_some());
            if needs {
                assert!(d.evidence.as_ref().is_some_and(|e| !e.is_empty()));
            }
        }
    }

    #[test]
    fn resample_matches_direct_sampling() {
        use crate::config::{Composition, SelectionMode};
        let cfg = PipelineConfig::default();
        let profile = build_profile(&phase(300, 0, false), None, &cfg).unwrap();
        let analysis = analyze(&phase(180, 600, true), &profile, &cfg).unwrap();
        let stored = sample(&analysis, &cfg.sampler, 3);
        for pillars in [Pillars::Full, Pillars::EdgeOnly, Pillars::AnalysisOnly] {
            for (mode, composition, budget) in [
                (SelectionMode::Rank, Composition::Multiply, 0.1),
                (SelectionMode::Bernoulli, Composition::Max, 0.3),
            ] {
                let sc = SamplerConfig {
                    pillars,
                    mode,
                    composition,
                    budget,
                    ..cfg.sampler.clone()
                };
                let direct = sample(&analysis, &sc, 3);
                let again = resample(&stored, &sc, 3);
                let key = |d: &SamplingDecision| (d.subject.clone(), d.p_final, d.selected);
                assert_eq!(
                    direct.iter().map(key).collect::<Vec<_>>(),
                    again.iter().map(key).collect::<Vec<_>>()
                );
            }
        }
    }

    #[test]
    fn window_length_must_match_profile() {
        let cfg = PipelineConfig::default();
        let profile = build_profile(&phase(10, 0, false), None, &cfg).unwrap();
        let other = PipelineConfig {
            window_length_s: 30,
            ..cfg
        };
        assert!(matches!(
            analyze(&phase(10, 600, false), &profile, &other),
            Err(PipelineError::WindowMismatch { .. })
        ));
    }
}
