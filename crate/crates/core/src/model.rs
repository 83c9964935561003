//! Shared telemetry vocabulary: spans, traces, call paths, logs, metrics and
//! windows.
//!
//! Timestamps are integer nanoseconds since the epoch, latencies are float
//! milliseconds. Identifiers are opaque hex strings compared lexicographically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;
pub const DEFAULT_WINDOW_NS: u64 = 60 * NANOS_PER_SEC;

/// Name of a microservice.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(String);

impl ServiceId {
    pub fn new(name: impl Into<String>) -> Self {
        ServiceId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ServiceId {
    fn from(s: &str) -> Self {
        ServiceId(s.to_owned())
    }
}

/// One operation execution inside a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub span_id: String,
    pub trace_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_span_id: Option<String>,
    pub service: ServiceId,
    pub operation: String,
    pub start_ns: u64,
    pub duration_ms: f64,
}

impl SpanRecord {
    pub fn op_key(&self) -> OpKey {
        OpKey::new(self.service.clone(), self.operation.clone())
    }
}

/// `(service, operation)` pair; the element type of call paths and the key of
/// per-operation statistics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpKey {
    pub service: ServiceId,
    pub operation: String,
}

impl OpKey {
    pub fn new(service: ServiceId, operation: impl Into<String>) -> Self {
        OpKey {
            service,
            operation: operation.into(),
        }
    }
}

impl fmt::Display for OpKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.service, self.operation)
    }
}

/// Ordered `(service, operation)` sequence from a trace's root to one leaf.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallPath(Vec<OpKey>);

impl CallPath {
    /// Returns `None` for an empty element list.
    pub fn new(elements: Vec<OpKey>) -> Option<Self> {
        if elements.is_empty() {
            None
        } else {
            Some(CallPath(elements))
        }
    }

    pub fn elements(&self) -> &[OpKey] {
        &self.0
    }

    pub fn root(&self) -> &OpKey {
        &self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Element set view used for Jaccard comparisons.
    pub fn element_set(&self) -> BTreeSet<&OpKey> {
        self.0.iter().collect()
    }
}

impl fmt::Display for CallPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, el) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{el}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Info,
    Warn,
    Error,
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogLevel::Info => "INFO",
            LogLevel::Warn => "WARN",
            LogLevel::Error => "ERROR",
        })
    }
}

pub type TemplateId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub log_id: String,
    pub timestamp_ns: u64,
    pub service: ServiceId,
    pub level: LogLevel,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<TemplateId>,
}

/// A mined log pattern. Wildcard slots are rendered as `<*>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub template_id: TemplateId,
    pub service: ServiceId,
    pub pattern: String,
}

/// One raw metric reading as emitted by an exporter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub service: ServiceId,
    pub timestamp_ns: u64,
    pub metric_names: Vec<String>,
    pub values: Vec<f64>,
}

/// Window-aggregated metric state of one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub service: ServiceId,
    pub window_start_ns: u64,
    pub window_length_ns: u64,
    pub metric_names: Vec<String>,
    pub values: Vec<f64>,
    /// Raw readings folded into this vector.
    pub sample_count: usize,
}

impl MetricVector {
    pub fn window(&self) -> Window {
        Window {
            start_ns: self.window_start_ns,
            length_ns: self.window_length_ns,
        }
    }
}

/// Fixed-length, epoch-aligned time interval `[start, start + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start_ns: u64,
    pub length_ns: u64,
}

impl Window {
    pub fn containing(ts_ns: u64, length_ns: u64) -> Window {
        assert!(length_ns > 0, "window length must be positive");
        Window {
            start_ns: ts_ns - ts_ns % length_ns,
            length_ns,
        }
    }

    pub fn end_ns(&self) -> u64 {
        self.start_ns + self.length_ns
    }

    pub fn contains(&self, ts_ns: u64) -> bool {
        ts_ns >= self.start_ns && ts_ns < self.end_ns()
    }

    pub fn next(&self) -> Window {
        Window {
            start_ns: self.end_ns(),
            length_ns: self.length_ns,
        }
    }

    /// All windows covering `[first_ts, last_ts]`, in order.
    pub fn tiling(first_ts: u64, last_ts: u64, length_ns: u64) -> Vec<Window> {
        let mut out = Vec::new();
        let mut w = Window::containing(first_ts, length_ns);
        let last = Window::containing(last_ts, length_ns);
        while w.start_ns <= last.start_ns {
            out.push(w);
            w = w.next();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace has no spans")]
    EmptyTrace,
    #[error("cycle through spans {0:?}")]
    CyclicTrace(Vec<String>),
    #[error("multiple root spans {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("spans {0:?} reference a parent outside the trace")]
    OrphanSpan(Vec<String>),
    #[error("duplicate span ids {0:?}")]
    DuplicateSpan(Vec<String>),
    #[error("spans {0:?} have a negative duration")]
    NegativeDuration(Vec<String>),
    #[error("spans {0:?} belong to another trace")]
    ForeignSpan(Vec<String>),
}

/// The span DAG of one request. Edges are `(parent, child)` index pairs into
/// `spans`; by default they come from each span's `parent_span_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGraph {
    pub trace_id: String,
    pub spans: Vec<SpanRecord>,
    pub edges: Vec<(usize, usize)>,
}

impl TraceGraph {
    /// Builds the graph from parent links. Spans are ordered by
    /// `(start_ns, span_id)`; links to unknown parents produce no edge and are
    /// reported by [`validate_trace`].
    pub fn from_spans(trace_id: impl Into<String>, mut spans: Vec<SpanRecord>) -> TraceGraph {
        spans.sort_by(|a, b| (a.start_ns, &a.span_id).cmp(&(b.start_ns, &b.span_id)));
        let index: BTreeMap<&str, usize> = spans
            .iter()
            .enumerate()
            .map(|(i, s)| (s.span_id.as_str(), i))
            .collect();
        let mut edges = Vec::new();
        for (i, s) in spans.iter().enumerate() {
            if let Some(p) = s.parent_span_id.as_deref().and_then(|p| index.get(p)) {
                edges.push((*p, i));
            }
        }
        TraceGraph {
            trace_id: trace_id.into(),
            spans,
            edges,
        }
    }

    /// Adds an extra DAG edge (a span with more than one caller).
    pub fn with_edge(mut self, parent: usize, child: usize) -> TraceGraph {
        self.edges.push((parent, child));
        self
    }

    /// Index of the first span without a parent link.
    pub fn root(&self) -> Option<usize> {
        self.spans.iter().position(|s| s.parent_span_id.is_none())
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.spans.len()];
        for &(p, c) in &self.edges {
            out[p].push(c);
        }
        out
    }

    pub fn services(&self) -> BTreeSet<&ServiceId> {
        self.spans.iter().map(|s| &s.service).collect()
    }

    /// Start of the root span, or of the earliest span when there is no root.
    pub fn start_ns(&self) -> u64 {
        self.root()
            .map(|r| self.spans[r].start_ns)
            .or_else(|| self.spans.iter().map(|s| s.start_ns).min())
            .unwrap_or(0)
    }
}

/// Checks the structural invariants of a trace: non-empty, unique span ids,
/// non-negative durations, every parent link resolvable, exactly one root,
/// acyclic, and every span reachable from the root.
pub fn validate_trace(trace: &TraceGraph) -> Result<(), TraceError> {
    if trace.spans.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let foreign: Vec<String> = trace
        .spans
        .iter()
        .filter(|s| s.trace_id != trace.trace_id)
        .map(|s| s.span_id.clone())
        .collect();
    if !foreign.is_empty() {
        return Err(TraceError::ForeignSpan(foreign));
    }

    let mut seen = BTreeSet::new();
    let dups: BTreeSet<String> = trace
        .spans
        .iter()
        .filter(|s| !seen.insert(s.span_id.as_str()))
        .map(|s| s.span_id.clone())
        .collect();
    if !dups.is_empty() {
        return Err(TraceError::DuplicateSpan(dups.into_iter().collect()));
    }

    let negative: Vec<String> = trace
        .spans
        .iter()
        .filter(|s| !(s.duration_ms >= 0.0))
        .map(|s| s.span_id.clone())
        .collect();
    if !negative.is_empty() {
        return Err(TraceError::NegativeDuration(negative));
    }

    let orphans: Vec<String> = trace
        .spans
        .iter()
        .filter(|s| {
            s.parent_span_id
                .as_deref()
                .is_some_and(|p| !seen.contains(p))
        })
        .map(|s| s.span_id.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(TraceError::OrphanSpan(orphans));
    }

    let n = trace.spans.len();
    let mut indegree = vec![0usize; n];
    for &(_, c) in &trace.edges {
        indegree[c] += 1;
    }
    let roots: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    if roots.len() > 1 {
        return Err(TraceError::MultipleRoots(
            roots.iter().map(|&i| trace.spans[i].span_id.clone()).collect(),
        ));
    }

    // Kahn's algorithm: whatever is left unvisited sits on or behind a cycle.
    let children = trace.children();
    let mut remaining = indegree.clone();
    let mut queue: Vec<usize> = roots.clone();
    let mut visited = vec![false; n];
    while let Some(u) = queue.pop() {
        visited[u] = true;
        for &v in &children[u] {
            remaining[v] -= 1;
            if remaining[v] == 0 {
                queue.push(v);
            }
        }
    }
    let stuck: Vec<String> = (0..n)
        .filter(|&i| !visited[i])
        .map(|i| trace.spans[i].span_id.clone())
        .collect();
    if !stuck.is_empty() {
        return Err(TraceError::CyclicTrace(stuck));
    }
    Ok(())
}

/// Groups spans by trace id. Output is ordered by trace id.
pub fn group_traces(spans: impl IntoIterator<Item = SpanRecord>) -> Vec<TraceGraph> {
    let mut by_trace: BTreeMap<String, Vec<SpanRecord>> = BTreeMap::new();
    for s in spans {
        by_trace.entry(s.trace_id.clone()).or_default().push(s);
    }
    by_trace
        .into_iter()
        .map(|(id, spans)| TraceGraph::from_spans(id, spans))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn span(id: &str, parent: Option<&str>, service: &str, op: &str) -> SpanRecord {
        SpanRecord {
            span_id: id.into(),
            trace_id: "t1".into(),
            parent_span_id: parent.map(Into::into),
            service: service.into(),
            operation: op.into(),
            start_ns: 0,
            duration_ms: 1.0,
        }
    }

    #[test]
    fn single_span_is_valid() {
        let t = TraceGraph::from_spans("t1", vec![span("a", None, "A", "op")]);
        assert_eq!(validate_trace(&t), Ok(()));
    }

    #[test]
    fn mutual_parents_are_a_cycle() {
        let t = TraceGraph::from_spans(
            "t1",
            vec![span("a", Some("b"), "A", "x"), span("b", Some("a"), "B", "y")],
        );
        match validate_trace(&t) {
            Err(TraceError::CyclicTrace(ids)) => assert_eq!(ids, vec!["a", "b"]),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn chain_is_valid() {
        let t = TraceGraph::from_spans(
            "t1",
            vec![
                span("r", None, "A", "x"),
                span("a", Some("r"), "B", "y"),
                span("b", Some("a"), "C", "z"),
            ],
        );
        assert_eq!(validate_trace(&t), Ok(()));
        assert_eq!(t.edges.len(), t.spans.len() - 1);
    }

    #[test]
    fn two_roots_rejected() {
        let t = TraceGraph::from_spans("t1", vec![span("a", None, "A", "x"), span("b", None, "B", "y")]);
        assert!(matches!(validate_trace(&t), Err(TraceError::MultipleRoots(ids)) if ids.len() == 2));
    }

    #[test]
    fn orphan_rejected() {
        let t = TraceGraph::from_spans("t1", vec![span("a", None, "A", "x"), span("b", Some("zz"), "B", "y")]);
        assert_eq!(validate_trace(&t), Err(TraceError::OrphanSpan(vec!["b".into()])));
    }

    #[test]
    fn dag_with_shared_child_is_valid() {
        let t = TraceGraph::from_spans(
            "t1",
            vec![
                span("r", None, "A", "x"),
                span("b", Some("r"), "B", "y"),
                span("c", Some("r"), "C", "z"),
                span("d", Some("b"), "D", "w"),
            ],
        );
        let c = t.spans.iter().position(|s| s.span_id == "c").unwrap();
        let d = t.spans.iter().position(|s| s.span_id == "d").unwrap();
        let t = t.with_edge(c, d);
        assert_eq!(validate_trace(&t), Ok(()));
    }

    #[test]
    fn window_tiling() {
        let w = Window::containing(125 * NANOS_PER_SEC, DEFAULT_WINDOW_NS);
        assert_eq!(w.start_ns, 120 * NANOS_PER_SEC);
        let tiles = Window::tiling(59 * NANOS_PER_SEC, 180 * NANOS_PER_SEC, DEFAULT_WINDOW_NS);
        assert_eq!(tiles.len(), 4);
        assert!(tiles.windows(2).all(|p| p[0].end_ns() == p[1].start_ns));
    }

    fn arb_service() -> impl Strategy<Value = ServiceId> {
        "[a-z]{1,8}".prop_map(ServiceId::new)
    }

    proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { failure_persistence: None, ..Default::default() })]

        #[test]
        fn span_round_trips(
            id in "[0-9a-f]{16}",
            parent in proptest::option::of("[0-9a-f]{16}"),
            service in arb_service(),
            op in "[A-Za-z /]{1,12}",
            start in any::<u64>(),
            dur in 0.0f64..1e6,
        ) {
            let s = SpanRecord { span_id: id, trace_id: "ab".into(), parent_span_id: parent, service, operation: op, start_ns: start, duration_ms: dur };
            let back: SpanRecord = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn log_and_metric_round_trip(
            msg in ".{1,40}",
            trace in proptest::option::of("[0-9a-f]{32}"),
            tid in proptest::option::of(any::<u32>()),
            values in proptest::collection::vec(-1e9f64..1e9, 1..16),
        ) {
            let l = LogRecord { log_id: "1".into(), timestamp_ns: 5, service: "svc".into(), level: LogLevel::Warn, message: msg, trace_id: trace, template_id: tid };
            let back: LogRecord = serde_json::from_str(&serde_json::to_string(&l).unwrap()).unwrap();
            prop_assert_eq!(back, l);
            let names = (0..values.len()).map(|i| format!("m{i}")).collect();
            let v = MetricVector { service: "svc".into(), window_start_ns: 60, window_length_ns: 60, metric_names: names, values, sample_count: 3 };
            let back: MetricVector = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn random_trees_validate_with_n_minus_one_edges(parents in proptest::collection::vec(any::<prop::sample::Index>(), 0..30)) {
            let mut spans = vec![span("s0", None, "A", "root")];
            for (i, p) in parents.iter().enumerate() {
                let parent = format!("s{}", p.index(i + 1));
                spans.push(span(&format!("s{}", i + 1), Some(&parent), "B", "op"));
            }
            let t = TraceGraph::from_spans("t1", spans);
            prop_assert_eq!(validate_trace(&t), Ok(()));
            prop_assert_eq!(t.edges.len(), t.spans.len() - 1);
        }
    }
}
