//! Always-on modality-wise detectors. A window is anomalous when any of the
//! log-rate, span-latency or metric-reconstruction detectors flags a service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DetectConfig;
use crate::model::{LogLevel, LogRecord, MetricVector, ServiceId, SpanRecord, Window};
use crate::profile::{PcaError, ReferenceProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("service {0} has no fault-free baseline")]
    UnknownService(String),
    #[error("metric vector of {service}: {source}")]
    DimensionMismatch {
        service: String,
        #[source]
        source: PcaError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFlag {
    pub service: ServiceId,
    pub rate: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFlag {
    pub service: ServiceId,
    pub operation: String,
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFlag {
    pub service: ServiceId,
    pub reconstruction_error: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub window: Window,
    pub log_flags: Vec<LogFlag>,
    pub trace_flags: Vec<TraceFlag>,
    pub metric_flags: Vec<MetricFlag>,
    /// Spans whose operation has no fault-free statistics.
    pub skipped_spans: usize,
    pub anomalous: bool,
}

impl DetectionReport {
    pub fn flagged_services(&self) -> impl Iterator<Item = &ServiceId> {
        self.log_flags
            .iter()
            .map(|f| &f.service)
            .chain(self.trace_flags.iter().map(|f| &f.service))
            .chain(self.metric_flags.iter().map(|f| &f.service))
    }
}

/// Weighted ERROR/WARN rate per service against its fault-free baseline:
/// flag iff `w * errors + (1 - w) * warns - r_bar > k * sigma_r`.
pub fn detect_logs(
    logs: &[&LogRecord],
    profile: &ReferenceProfile,
    weight: f64,
    k: f64,
) -> Result<Vec<LogFlag>, DetectError> {
    let mut counts: BTreeMap<&ServiceId, (f64, f64)> = BTreeMap::new();
    for log in logs {
        let c = counts.entry(&log.service).or_default();
        match log.level {
            LogLevel::Error => c.0 += 1.0,
            LogLevel::Warn => c.1 += 1.0,
            LogLevel::Info => {}
        }
    }
    let mut flags = Vec::new();
    for (service, (errors, warns)) in counts {
        let base = profile
            .log_rate_base
            .get(service)
            .ok_or_else(|| DetectError::UnknownService(service.to_string()))?;
        let (mean, std) = base.at(weight, profile.rate_sigma_floor);
        let rate = weighted_rate(errors, warns, weight);
        if rate - mean > k * std {
            flags.push(LogFlag {
                service: service.clone(),
                rate,
                baseline_mean: mean,
                baseline_std: std,
            });
        }
    }
    Ok(flags)
}

pub fn weighted_rate(errors: f64, warns: f64, weight: f64) -> f64 {
    weight * errors + (1.0 - weight) * warns
}

/// One-sided span latency k-sigma rule. Returns the flags and the number of
/// spans skipped for lack of a reference.
pub fn detect_traces(spans: &[&SpanRecord], profile: &ReferenceProfile, k: f64) -> (Vec<TraceFlag>, usize) {
    let mut worst: BTreeMap<&ServiceId, (f64, &str)> = BTreeMap::new();
    let mut skipped = 0;
    for span in spans {
        let Some(stat) = profile.span_stats.get(&span.op_key()) else {
            skipped += 1;
            continue;
        };
        let z = (span.duration_ms - stat.mean_ms) / stat.std_ms;
        if z > k {
            let entry = worst.entry(&span.service).or_insert((f64::NEG_INFINITY, ""));
            if z > entry.0 || (z == entry.0 && span.operation.as_str() < entry.1) {
                *entry = (z, &span.operation);
            }
        }
    }
    let flags = worst
        .into_iter()
        .map(|(service, (max_z, op))| TraceFlag {
            service: service.clone(),
            operation: op.to_owned(),
            max_z,
        })
        .collect();
    (flags, skipped)
}

/// PCA reconstruction error per service vector against the service's
/// threshold.
pub fn detect_metrics(vectors: &[&MetricVector], profile: &ReferenceProfile) -> Result<Vec<MetricFlag>, DetectError> {
    let mut flags = Vec::new();
    for v in vectors {
        let model = profile
            .pca
            .get(&v.service)
            .ok_or_else(|| DetectError::UnknownService(v.service.to_string()))?;
        let re = model
            .reconstruction_error(&v.values)
            .map_err(|source| DetectError::DimensionMismatch {
                service: v.service.to_string(),
                source,
            })?;
        if re > model.threshold {
            flags.push(MetricFlag {
                service: v.service.clone(),
                reconstruction_error: re,
                threshold: model.threshold,
            });
        }
    }
    Ok(flags)
}

/// Telemetry of one window, borrowed from the phase data.
#[derive(Debug, Clone, Default)]
pub struct WindowSlice<'a> {
    pub spans: Vec<&'a SpanRecord>,
    pub logs: Vec<&'a LogRecord>,
    pub vectors: Vec<&'a MetricVector>,
}

pub fn detect_window(
    window: Window,
    data: &WindowSlice<'_>,
    profile: &ReferenceProfile,
    config: &DetectConfig,
) -> Result<DetectionReport, DetectError> {
    let log_flags = detect_logs(&data.logs, profile, config.log_weight, config.log_k)?;
    let (trace_flags, skipped_spans) = detect_traces(&data.spans, profile, config.trace_k);
    let metric_flags = detect_metrics(&data.vectors, profile)?;
    let anomalous = !(log_flags.is_empty() && trace_flags.is_empty() && metric_flags.is_empty());
    Ok(DetectionReport {
        window,
        log_flags,
        trace_flags,
        metric_flags,
        skipped_spans,
        anomalous,
    })
}
