//! Turns raw telemetry into the correlated representation the analysis works
//! on: log templates, call paths, windowed metric vectors and the
//! `trace_id` correlation map.

mod correlate;
mod metrics;
mod paths;
pub mod template;

use thiserror::Error;

pub use correlate::{correlate, CorrelatedTrace, CorrelationContext};
pub use metrics::aggregate_metrics;
pub use paths::extract_call_paths;
pub use template::TemplateMiner;

use crate::model::{LogRecord, LogTemplate, TemplateId};

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("metric reading from {service} at {timestamp_ns} does not match the declared schema")]
    SchemaMismatch { service: String, timestamp_ns: u64 },
    #[error("log {0} has an empty message")]
    EmptyMessage(String),
}

/// Mines a template for one log and records its id on the record.
pub fn mine_template(log: &mut LogRecord, store: &mut TemplateMiner) -> Result<TemplateId, IngestError> {
    if log.message.trim().is_empty() {
        return Err(IngestError::EmptyMessage(log.log_id.clone()));
    }
    let id = store.mine(&log.service, &log.message);
    log.template_id = Some(id);
    Ok(id)
}

/// Mines every log in `(timestamp, log_id)` order. Empty messages keep no
/// template.
pub fn mine_all(logs: &mut [LogRecord], store: &mut TemplateMiner) {
    let mut order: Vec<usize> = (0..logs.len()).collect();
    order.sort_by(|&a, &b| (logs[a].timestamp_ns, &logs[a].log_id).cmp(&(logs[b].timestamp_ns, &logs[b].log_id)));
    for i in order {
        let _ = mine_template(&mut logs[i], store);
    }
}

pub fn template_rows(store: &TemplateMiner) -> Vec<LogTemplate> {
    store.templates()
}
