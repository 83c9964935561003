use std::collections::BTreeMap;

use crate::model::{LogRecord, TraceGraph};

/// `trace_id -> (trace, its logs)`, plus every log that could not be linked.
#[derive(Debug, Default)]
pub struct CorrelationContext<'a> {
    pub traces: BTreeMap<&'a str, CorrelatedTrace<'a>>,
    pub uncorrelated: Vec<&'a LogRecord>,
}

#[derive(Debug)]
pub struct CorrelatedTrace<'a> {
    pub trace: &'a TraceGraph,
    pub logs: Vec<&'a LogRecord>,
}

impl<'a> CorrelationContext<'a> {
    pub fn get(&self, trace_id: &str) -> Option<&CorrelatedTrace<'a>> {
        self.traces.get(trace_id)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn correlated_log_count(&self) -> usize {
        self.traces.values().map(|c| c.logs.len()).sum()
    }
}

/// Links every trace with the logs that carry its id. Logs without a trace id
/// or with an unknown one end up in `uncorrelated`.
pub fn correlate<'a>(traces: &'a [TraceGraph], logs: &'a [LogRecord]) -> CorrelationContext<'a> {
    let mut ctx = CorrelationContext {
        traces: traces
            .iter()
            .map(|t| (t.trace_id.as_str(), CorrelatedTrace { trace: t, logs: Vec::new() }))
            .collect(),
        uncorrelated: Vec::new(),
    };
    for log in logs {
        match log.trace_id.as_deref().and_then(|id| ctx.traces.get_mut(id)) {
            Some(entry) => entry.logs.push(log),
            None => ctx.uncorrelated.push(log),
        }
    }
    ctx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LogLevel, SpanRecord};

    fn trace(id: &str) -> TraceGraph {
        TraceGraph::from_spans(
            id,
            vec![SpanRecord {
                span_id: "s".into(),
                trace_id: id.into(),
                parent_span_id: None,
                service: "A".into(),
                operation: "op".into(),
                start_ns: 0,
                duration_ms: 1.0,
            }],
        )
    }

    fn log(id: &str, trace: Option<&str>) -> LogRecord {
        LogRecord {
            log_id: id.into(),
            timestamp_ns: 0,
            service: "A".into(),
            level: LogLevel::Info,
            message: "m".into(),
            trace_id: trace.map(Into::into),
            template_id: None,
        }
    }

    #[test]
    fn logs_attach_to_their_trace() {
        let traces = vec![trace("t1")];
        let logs = vec![log("1", Some("t1")), log("2", Some("t1"))];
        let ctx = correlate(&traces, &logs);
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx.get("t1").unwrap().logs.len(), 2);
        assert!(ctx.uncorrelated.is_empty());
    }

    #[test]
    fn unknown_trace_id_is_uncorrelated() {
        let traces = vec![trace("t1")];
        let logs = vec![log("1", Some("zz")), log("2", None)];
        let ctx = correlate(&traces, &logs);
        assert_eq!(ctx.uncorrelated.len(), 2);
        assert!(ctx.get("t1").unwrap().logs.is_empty());
    }

    #[test]
    fn no_traces() {
        let logs: Vec<_> = (0..5).map(|i| log(&i.to_string(), Some("t"))).collect();
        let ctx = correlate(&[], &logs);
        assert!(ctx.is_empty());
        assert_eq!(ctx.uncorrelated.len(), 5);
        assert_eq!(ctx.correlated_log_count() + ctx.uncorrelated.len(), logs.len());
    }
}
