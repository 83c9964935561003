//! Fault-free reference statistics.
//!
//! A [`ReferenceProfile`] is built once from the fault-free phase and is
//! read-only afterwards. It carries everything the detectors, the pattern
//! miner and the edge-case sampler compare production data against.

mod histogram;
mod pca;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use histogram::MetricHistogram;
pub use pca::{fit_pca, ComponentRule, PcaError, PcaModel};

use crate::config::{PipelineConfig, ProfileConfig};
use crate::ingest::{aggregate_metrics, extract_call_paths, mine_all, IngestError, TemplateMiner};
use crate::io::Telemetry;
use crate::model::{group_traces, CallPath, LogLevel, OpKey, ServiceId, TemplateId, Window};
use crate::serde_entries;

pub const PROFILE_FORMAT: &str = "postsample-profile";
pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("fault-free phase contains no spans")]
    EmptyPhase,
    #[error("declared service {0} has no fault-free spans")]
    MissingService(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("unsupported profile format {format} v{version}")]
    Version { format: String, version: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanStat {
    pub mean_ms: f64,
    /// Population standard deviation, floored.
    pub std_ms: f64,
    /// Reference latency for relative-increase patterns.
    pub median_ms: f64,
    pub count: usize,
}

/// Per-service ERROR/WARN count moments per fault-free window. The weighted
/// rate baseline for any weight follows from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBaseline {
    /// `r_bar` at the profile's log weight.
    pub mean: f64,
    /// `sigma_r` at the profile's log weight, floored.
    pub std: f64,
    pub error_mean: f64,
    pub warn_mean: f64,
    pub error_var: f64,
    pub warn_var: f64,
    pub covariance: f64,
}

impl RateBaseline {
    fn from_counts(errors: &[f64], warns: &[f64], weight: f64, floor: f64) -> RateBaseline {
        let n = errors.len().max(1) as f64;
        let em = errors.iter().sum::<f64>() / n;
        let wm = warns.iter().sum::<f64>() / n;
        let ev = errors.iter().map(|e| (e - em).powi(2)).sum::<f64>() / n;
        let wv = warns.iter().map(|w| (w - wm).powi(2)).sum::<f64>() / n;
        let cov = errors
            .iter()
            .zip(warns)
            .map(|(e, w)| (e - em) * (w - wm))
            .sum::<f64>()
            / n;
        let mut b = RateBaseline {
            mean: 0.0,
            std: 0.0,
            error_mean: em,
            warn_mean: wm,
            error_var: ev,
            warn_var: wv,
            covariance: cov,
        };
        (b.mean, b.std) = b.at(weight, floor);
        b
    }

    /// `(r_bar, sigma_r)` of `w * errors + (1 - w) * warns`.
    pub fn at(&self, weight: f64, floor: f64) -> (f64, f64) {
        let mean = weight * self.error_mean + (1.0 - weight) * self.warn_mean;
        let var = weight * weight * self.error_var
            + (1.0 - weight) * (1.0 - weight) * self.warn_var
            + 2.0 * weight * (1.0 - weight) * self.covariance;
        (mean, var.max(0.0).sqrt().max(floor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub format: String,
    pub version: u32,
    pub window_length_ns: u64,
    pub fault_free_windows: usize,
    pub log_weight: f64,
    pub rate_sigma_floor: f64,
    pub services: BTreeSet<ServiceId>,
    pub metric_names: Vec<String>,
    #[serde(with = "serde_entries")]
    pub span_stats: BTreeMap<OpKey, SpanStat>,
    pub path_set: BTreeSet<CallPath>,
    pub templates: TemplateMiner,
    /// `p'_l`: probability of a template among its service's fault-free logs.
    pub template_freq: BTreeMap<TemplateId, f64>,
    /// `r_hat(l)`: fault-free occurrences of a template per window.
    pub template_rate: BTreeMap<TemplateId, f64>,
    pub log_rate_base: BTreeMap<ServiceId, RateBaseline>,
    #[serde(with = "serde_entries")]
    pub metric_ref: BTreeMap<(ServiceId, String), MetricHistogram>,
    pub pca: BTreeMap<ServiceId, PcaModel>,
}

impl ReferenceProfile {
    pub fn check_version(&self) -> Result<(), ProfileError> {
        if self.format != PROFILE_FORMAT || self.version != PROFILE_VERSION {
            return Err(ProfileError::Version {
                format: self.format.clone(),
                version: self.version,
            });
        }
        Ok(())
    }

    pub fn span_stat(&self, key: &OpKey) -> Option<&SpanStat> {
        self.span_stats.get(key)
    }

    /// `p'_l`, 0 for templates never seen in the fault-free phase.
    pub fn template_probability(&self, id: TemplateId) -> f64 {
        self.template_freq.get(&id).copied().unwrap_or(0.0)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Builds the reference profile from fault-free telemetry.
///
/// `declared`, when given, lists services that must have fault-free spans.
pub fn build_profile(
    data: &Telemetry,
    declared: Option<&[ServiceId]>,
    config: &PipelineConfig,
) -> Result<ReferenceProfile, ProfileError> {
    let pc: &ProfileConfig = &config.profile;
    let window_ns = config.window_length_ns();
    if data.spans.is_empty() {
        return Err(ProfileError::EmptyPhase);
    }
    let span_services: BTreeSet<&ServiceId> = data.spans.iter().map(|s| &s.service).collect();
    if let Some(declared) = declared {
        if let Some(missing) = declared.iter().find(|s| !span_services.contains(s)) {
            return Err(ProfileError::MissingService(missing.to_string()));
        }
    }
    let services: BTreeSet<ServiceId> = data
        .spans
        .iter()
        .map(|s| s.service.clone())
        .chain(data.logs.iter().map(|l| l.service.clone()))
        .chain(data.metrics.iter().map(|m| m.service.clone()))
        .collect();
    let (first_ts, last_ts) = data.time_range().expect("spans are non-empty");
    let windows = Window::tiling(first_ts, last_ts, window_ns);
    let window_index = |ts: u64| ((Window::containing(ts, window_ns).start_ns - windows[0].start_ns) / window_ns) as usize;

    // Spans and paths.
    let mut durations: BTreeMap<OpKey, Vec<f64>> = BTreeMap::new();
    for s in &data.spans {
        durations.entry(s.op_key()).or_default().push(s.duration_ms);
    }
    let span_stats = durations
        .into_iter()
        .map(|(key, mut d)| {
            let (mean, std) = mean_std(&d);
            let count = d.len();
            let std = if count < 2 { pc.span_sigma_floor_ms } else { std.max(pc.span_sigma_floor_ms) };
            let stat = SpanStat {
                mean_ms: mean,
                std_ms: std,
                median_ms: median(&mut d),
                count,
            };
            (key, stat)
        })
        .collect();
    let traces = group_traces(data.spans.iter().cloned());
    let path_set: BTreeSet<CallPath> = traces
        .par_iter()
        .filter_map(|t| extract_call_paths(t).ok())
        .flatten()
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    // Logs.
    let mut logs = data.logs.clone();
    let mut templates = TemplateMiner::with_similarity(pc.template_similarity);
    mine_all(&mut logs, &mut templates);
    let mut per_service_total: BTreeMap<&ServiceId, usize> = BTreeMap::new();
    let mut per_template: BTreeMap<TemplateId, usize> = BTreeMap::new();
    let mut level_counts: BTreeMap<&ServiceId, (Vec<f64>, Vec<f64>)> = services
        .iter()
        .map(|s| (s, (vec![0.0; windows.len()], vec![0.0; windows.len()])))
        .collect();
    for log in &logs {
        if let Some(id) = log.template_id {
            *per_template.entry(id).or_default() += 1;
            *per_service_total.entry(&log.service).or_default() += 1;
        }
        let w = window_index(log.timestamp_ns);
        let counts = level_counts.get_mut(&log.service).expect("service collected above");
        match log.level {
            LogLevel::Error => counts.0[w] += 1.0,
            LogLevel::Warn => counts.1[w] += 1.0,
            LogLevel::Info => {}
        }
    }
    let template_freq = per_template
        .iter()
        .map(|(&id, &count)| {
            let service = templates.service_of(id).expect("mined template");
            (id, count as f64 / per_service_total[service] as f64)
        })
        .collect();
    let template_rate = per_template
        .iter()
        .map(|(&id, &count)| (id, count as f64 / windows.len() as f64))
        .collect();
    let log_rate_base = level_counts
        .into_iter()
        .map(|(s, (errors, warns))| {
            (
                s.clone(),
                RateBaseline::from_counts(&errors, &warns, config.detect.log_weight, pc.rate_sigma_floor),
            )
        })
        .collect();

    // Metrics.
    let metric_names = data
        .metrics
        .first()
        .map(|m| m.metric_names.clone())
        .unwrap_or_default();
    let vectors = aggregate_metrics(&data.metrics, &metric_names, window_ns, Some((first_ts, last_ts)))?;
    let mut per_service_vectors: BTreeMap<&ServiceId, Vec<Vec<f64>>> = BTreeMap::new();
    for v in &vectors {
        per_service_vectors.entry(&v.service).or_default().push(v.values.clone());
    }
    let pca = per_service_vectors
        .into_par_iter()
        .map(|(service, training)| {
            let model = match fit_pca(
                &training,
                ComponentRule::VarianceTarget(pc.variance_target),
                pc.rho_sigma,
                pc.rho_floor,
            ) {
                Ok(m) => m,
                Err(_) => {
                    let n = training.len().max(1) as f64;
                    let mut mean = vec![0.0; metric_names.len()];
                    for v in &training {
                        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / n);
                    }
                    PcaModel::degenerate(mean, pc.rho_floor)
                }
            };
            (service.clone(), model)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let mut raw: BTreeMap<(&ServiceId, usize), Vec<f64>> = BTreeMap::new();
    for m in &data.metrics {
        for (d, v) in m.values.iter().enumerate() {
            raw.entry((&m.service, d)).or_default().push(*v);
        }
    }
    let metric_ref = raw
        .into_iter()
        .filter_map(|((service, d), values)| {
            MetricHistogram::fit(&values, pc.histogram_bins)
                .map(|h| ((service.clone(), metric_names[d].clone()), h))
        })
        .collect();

    Ok(ReferenceProfile {
        format: PROFILE_FORMAT.to_owned(),
        version: PROFILE_VERSION,
        window_length_ns: window_ns,
        fault_free_windows: windows.len(),
        log_weight: config.detect.log_weight,
        rate_sigma_floor: pc.rate_sigma_floor,
        services,
        metric_names,
        span_stats,
        path_set,
        templates,
        template_freq,
        template_rate,
        log_rate_base,
        metric_ref,
        pca,
    })
}
