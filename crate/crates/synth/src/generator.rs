//! Request-level simulation of the fault-free and production phases.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use postsample_core::ingest::extract_call_paths;
use postsample_core::io::{write_json, IoError, Telemetry};
use postsample_core::model::{
    group_traces, CallPath, LogLevel, LogRecord, MetricSample, ServiceId, SpanRecord, NANOS_PER_SEC,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{FaultKind, FaultSpec, Scenario};
use crate::topology::{CallNode, CallTemplate};

pub const FAULT_FREE_DIR: &str = "fault_free";
pub const PRODUCTION_DIR: &str = "production";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub const METRIC_NAMES: [&str; 16] = [
    "k8s.pod.cpu.usage",
    "k8s.pod.cpu.time",
    "k8s.pod.memory.usage",
    "k8s.pod.memory.working_set",
    "k8s.pod.network.rx_bytes",
    "k8s.pod.network.tx_bytes",
    "k8s.pod.network.errors",
    "k8s.pod.fs.read_bytes",
    "k8s.pod.fs.write_bytes",
    "k8s.pod.fs.usage",
    "process.threads",
    "process.gc_pause_ms",
    "http.server.request_rate",
    "http.server.error_rate",
    "http.server.latency_avg_ms",
    "http.server.active_requests",
];
const CPU_DIMS: [usize; 2] = [0, 1];

/// Probability that a failing call drops its downstream calls.
pub const TRUNCATION_PROBABILITY: f64 = 0.5;
const BACKGROUND_ERROR_RATE: f64 = 0.002;
const RARE_LOG_RATE: f64 = 0.0005;
const HEARTBEAT_S: u64 = 10;
const JITTER: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("topology declares no services or no call templates")]
    EmptyTopology,
}

/// One injected fault with the data it affected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultCase {
    pub kind: FaultKind,
    pub root_cause: ServiceId,
    pub start_ns: u64,
    pub end_ns: u64,
    pub magnitude: f64,
    pub labeled_traces: BTreeSet<String>,
    pub labeled_logs: BTreeSet<String>,
}

impl FaultCase {
    pub fn contains(&self, ts: u64) -> bool {
        self.start_ns <= ts && ts < self.end_ns
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub faults: Vec<FaultCase>,
    /// Traces through a fault target during its window, plus production
    /// traces with a call path never seen in the fault-free phase.
    pub labeled_traces: BTreeSet<String>,
    /// ERROR logs of a fault target during its window.
    pub labeled_logs: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub fault_free: Telemetry,
    pub production: Telemetry,
    pub truth: GroundTruth,
}

impl Generated {
    /// Writes `fault_free/`, `production/` and `ground_truth.json` under
    /// `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        self.fault_free.save_dir(&dir.join(FAULT_FREE_DIR))?;
        self.production.save_dir(&dir.join(PRODUCTION_DIR))?;
        write_json(&dir.join(GROUND_TRUTH_FILE), &self.truth)
    }
}

#[derive(Debug, Clone)]
struct ActiveFault {
    kind: FaultKind,
    target: ServiceId,
    start_ns: u64,
    end_ns: u64,
    magnitude: f64,
}

impl ActiveFault {
    fn hits(&self, kind: FaultKind, service: &ServiceId, ts: u64) -> bool {
        self.kind == kind && &self.target == service && self.start_ns <= ts && ts < self.end_ns
    }
}

struct Call {
    service: ServiceId,
    start_ns: u64,
    duration_ms: f64,
    failed: bool,
}

struct Phase {
    spans: Vec<SpanRecord>,
    logs: Vec<LogRecord>,
    calls: Vec<Call>,
}

struct Sim<'a> {
    rng: ChaCha8Rng,
    faults: &'a [ActiveFault],
    out: Phase,
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round().max(0.0) as u64
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

impl Sim<'_> {
    fn hex64(&mut self) -> String {
        format!("{:016x}", self.rng.random::<u64>())
    }

    fn active(&self, kind: FaultKind, service: &ServiceId, ts: u64) -> Option<f64> {
        self.faults
            .iter()
            .find(|f| f.hits(kind, service, ts))
            .map(|f| f.magnitude)
    }

    fn log(&mut self, ts: u64, service: &ServiceId, level: LogLevel, message: String, trace_id: Option<&str>) {
        let log_id = self.hex64();
        self.out.logs.push(LogRecord {
            log_id,
            timestamp_ns: ts,
            service: service.clone(),
            level,
            message,
            trace_id: trace_id.map(str::to_owned),
            template_id: None,
        });
    }

    /// Simulates one call and its subtree. Returns the call duration and
    /// whether it failed.
    fn call(&mut self, node: &CallNode, parent: Option<&str>, trace_id: &str, start_ns: u64) -> (f64, bool) {
        let span_id = self.hex64();
        let own = LogNormal::new(node.median_ms.ln(), node.sigma)
            .expect("validated latency")
            .sample(&mut self.rng);
        let failed = self
            .active(FaultKind::ErrorReturn, &node.service, start_ns)
            .is_some_and(|p| self.rng.random::<f64>() < p);
        let truncated = failed && self.rng.random::<f64>() < TRUNCATION_PROBABILITY;

        let mut child_start = start_ns + ms_to_ns(own * 0.25);
        let mut children_ms = 0.0;
        let mut failed_children = Vec::new();
        if !truncated {
            for child in &node.children {
                let (d, child_failed) = self.call(child, Some(&span_id), trace_id, child_start);
                if child_failed {
                    failed_children.push((child, child_start + ms_to_ns(d)));
                }
                child_start += ms_to_ns(d);
                children_ms += d;
            }
        }
        let mut duration = own + children_ms;
        if let Some(m) = self.active(FaultKind::LatencyInjection, &node.service, start_ns) {
            duration *= m;
        }
        let end = start_ns + ms_to_ns(duration);
        let op = &node.operation;
        let within = |rng: &mut ChaCha8Rng| start_ns + (rng.random::<f64>() * (end - start_ns) as f64) as u64;

        for _ in 0..poisson(&mut self.rng, node.info_rate) {
            let ts = within(&mut self.rng);
            let msg = match self.rng.random_range(0..3) {
                0 => format!(
                    "{op} request accepted user={} session={:08x}",
                    self.rng.random_range(1000..99999),
                    self.rng.random::<u32>()
                ),
                1 => format!("{op} completed status=200 elapsed={:.1}ms", duration),
                _ => format!(
                    "{op} cache lookup key={:012x} hit={}",
                    self.rng.random::<u64>() >> 16,
                    self.rng.random_bool(0.8)
                ),
            };
            self.log(ts, &node.service, LogLevel::Info, msg, Some(trace_id));
        }
        for _ in 0..poisson(&mut self.rng, node.warn_rate) {
            let ts = within(&mut self.rng);
            let msg = if self.rng.random_bool(0.5) {
                format!("{op} slow response elapsed={:.1}ms budget=250ms", duration)
            } else {
                format!("{op} retrying downstream call attempt={}", self.rng.random_range(1..4))
            };
            self.log(ts, &node.service, LogLevel::Warn, msg, Some(trace_id));
        }
        if self.rng.random::<f64>() < BACKGROUND_ERROR_RATE {
            let ts = within(&mut self.rng);
            let msg = format!("{op} request failed status=500 reason=internal_error");
            self.log(ts, &node.service, LogLevel::Error, msg, Some(trace_id));
        }
        if self.rng.random::<f64>() < RARE_LOG_RATE {
            let ts = within(&mut self.rng);
            let msg = match self.rng.random_range(0..4) {
                0 => format!("{op} deprecated client protocol detected version={}", self.rng.random_range(1..4)),
                1 => format!(
                    "connection pool resized from {} to {}",
                    self.rng.random_range(8..16),
                    self.rng.random_range(16..64)
                ),
                2 => format!(
                    "{op} feature flag evaluated flag=new-pricing variant={}",
                    self.rng.random_range(0..3)
                ),
                _ => "tls certificate reload requested by operator".to_owned(),
            };
            self.log(ts, &node.service, LogLevel::Info, msg, Some(trace_id));
        }
        for (child, ts) in failed_children {
            let msg = format!("{op} downstream call to {} failed status=503", child.service);
            self.log(ts, &node.service, LogLevel::Warn, msg, Some(trace_id));
        }
        if failed {
            let msg = format!(
                "{op} aborted request error=ServiceUnavailable code={}",
                self.rng.random_range(5000..5100)
            );
            self.log(end, &node.service, LogLevel::Error, msg, Some(trace_id));
        }

        self.out.spans.push(SpanRecord {
            span_id,
            trace_id: trace_id.to_owned(),
            parent_span_id: parent.map(str::to_owned),
            service: node.service.clone(),
            operation: node.operation.clone(),
            start_ns,
            duration_ms: duration,
        });
        self.out.calls.push(Call {
            service: node.service.clone(),
            start_ns,
            duration_ms: duration,
            failed,
        });
        (duration, failed)
    }
}

fn pick<'a>(templates: &'a [CallTemplate], total: f64, rng: &mut ChaCha8Rng) -> &'a CallTemplate {
    let mut x = rng.random::<f64>() * total;
    for t in templates {
        if x < t.weight {
            return t;
        }
        x -= t.weight;
    }
    templates.last().expect("non-empty topology")
}

/// Nominal latency of each service: the median own latency of its first
/// operation in the topology.
fn nominal_latency(scenario: &Scenario) -> BTreeMap<ServiceId, f64> {
    let mut out = BTreeMap::new();
    for t in &scenario.topology.templates {
        t.root.visit(&mut |n| {
            out.entry(n.service.clone()).or_insert(n.median_ms);
        });
    }
    out
}

fn simulate_phase(scenario: &Scenario, start_ns: u64, duration_s: f64, faults: &[ActiveFault], rng: ChaCha8Rng) -> Phase {
    let mut sim = Sim {
        rng,
        faults,
        out: Phase {
            spans: Vec::new(),
            logs: Vec::new(),
            calls: Vec::new(),
        },
    };
    let templates = &scenario.topology.templates;
    let total: f64 = templates.iter().map(|t| t.weight).sum();
    let gap = Exp::new(scenario.request_rate).expect("validated rate");
    let end_ns = start_ns + (duration_s * NANOS_PER_SEC as f64) as u64;
    let mut t = start_ns as f64;
    loop {
        t += gap.sample(&mut sim.rng) * NANOS_PER_SEC as f64;
        if t >= end_ns as f64 {
            break;
        }
        let template = pick(templates, total, &mut sim.rng);
        let trace_id = format!("{:032x}", sim.rng.random::<u128>());
        sim.call(&template.root, None, &trace_id, t as u64);
    }
    for service in &scenario.topology.services {
        let offset = sim.rng.random_range(0..HEARTBEAT_S * NANOS_PER_SEC);
        let mut ts = start_ns + offset;
        while ts < end_ns {
            let uptime = (ts - start_ns) / NANOS_PER_SEC;
            sim.log(ts, service, LogLevel::Info, format!("heartbeat ok uptime={uptime}s"), None);
            ts += HEARTBEAT_S * NANOS_PER_SEC;
        }
    }
    sim.out
}

fn jitter(rng: &mut ChaCha8Rng) -> f64 {
    1.0 + rng.random_range(-JITTER..JITTER)
}

/// Metric readings per service every `metric_interval_s`, each summarizing
/// the calls that started in the preceding interval.
fn metrics_for(
    scenario: &Scenario,
    calls: &[Call],
    start_ns: u64,
    duration_s: f64,
    faults: &[ActiveFault],
    rng: &mut ChaCha8Rng,
) -> Vec<MetricSample> {
    let interval_ns = (scenario.metric_interval_s * NANOS_PER_SEC as f64) as u64;
    let buckets = (duration_s / scenario.metric_interval_s).floor() as usize;
    let nominal = nominal_latency(scenario);
    let names: Vec<String> = METRIC_NAMES.iter().map(|s| s.to_string()).collect();
    let mut agg: BTreeMap<&ServiceId, Vec<(usize, f64, usize)>> = BTreeMap::new();
    for s in &scenario.topology.services {
        agg.insert(s, vec![(0, 0.0, 0); buckets]);
    }
    for c in calls {
        let b = ((c.start_ns - start_ns) / interval_ns) as usize;
        if let Some(slot) = agg.get_mut(&c.service).and_then(|v| v.get_mut(b)) {
            slot.0 += 1;
            slot.1 += c.duration_ms;
            slot.2 += usize::from(c.failed);
        }
    }
    let mut out = Vec::new();
    for (service, slots) in agg {
        let mut last_latency = nominal.get(service).copied().unwrap_or(1.0);
        for (b, (n, total_ms, errors)) in slots.into_iter().enumerate() {
            let bucket_start = start_ns + b as u64 * interval_ns;
            let ts = bucket_start + interval_ns - 1;
            let rate = n as f64 / scenario.metric_interval_s;
            let err = if n > 0 { errors as f64 / n as f64 } else { 0.0 };
            if n > 0 {
                last_latency = total_ms / n as f64;
            }
            let active = rate * last_latency / 1000.0;
            let cpu_mult = faults
                .iter()
                .find(|f| f.hits(FaultKind::CpuSurge, service, bucket_start))
                .map_or(1.0, |f| f.magnitude);
            let elapsed_s = (ts - start_ns) as f64 / NANOS_PER_SEC as f64;
            let mut j = || jitter(rng);
            let cpu = (0.02 + 0.004 * rate) * j();
            let mem = (180.0 + 40.0 * active) * j();
            let mut values = vec![
                cpu,
                cpu * scenario.metric_interval_s * j(),
                mem,
                mem * 0.8 * j(),
                rate * 2048.0 * j(),
                rate * 4096.0 * j(),
                rate * err * j(),
                rate * 512.0 * j(),
                rate * 256.0 * j(),
                (1000.0 + 0.01 * elapsed_s) * j(),
                (16.0 + 4.0 * active) * j(),
                (1.5 + 0.002 * mem) * j(),
                rate,
                err,
                last_latency,
                active,
            ];
            for d in CPU_DIMS {
                values[d] *= cpu_mult;
            }
            out.push(MetricSample {
                service: service.clone(),
                timestamp_ns: ts,
                metric_names: names.clone(),
                values,
            });
        }
    }
    out
}

fn telemetry(mut phase: Phase, metrics: Vec<MetricSample>) -> Telemetry {
    phase
        .spans
        .sort_by(|a, b| (a.start_ns, &a.span_id).cmp(&(b.start_ns, &b.span_id)));
    phase
        .logs
        .sort_by(|a, b| (a.timestamp_ns, &a.log_id).cmp(&(b.timestamp_ns, &b.log_id)));
    let mut metrics = metrics;
    metrics.sort_by(|a, b| (a.timestamp_ns, &a.service).cmp(&(b.timestamp_ns, &b.service)));
    Telemetry {
        spans: phase.spans,
        logs: phase.logs,
        metrics,
    }
}

fn check(scenario: &Scenario) -> Result<(), GenError> {
    let topo = &scenario.topology;
    if topo.services.is_empty() || topo.templates.is_empty() {
        return Err(GenError::EmptyTopology);
    }
    let declared = topo.service_set();
    for t in &topo.templates {
        let mut unknown = None;
        t.root.visit(&mut |n| {
            if !declared.contains(&n.service) {
                unknown = Some(n.service.to_string());
            }
        });
        if let Some(s) = unknown {
            return Err(GenError::UnknownService(s));
        }
    }
    if let Some(f) = scenario.faults.iter().find(|f| !declared.contains(&f.target)) {
        return Err(GenError::UnknownService(f.target.to_string()));
    }
    Ok(())
}

fn activate(f: &FaultSpec, production_start: u64) -> ActiveFault {
    let s = |secs: f64| production_start + (secs * NANOS_PER_SEC as f64).round() as u64;
    ActiveFault {
        kind: f.kind,
        target: f.target.clone(),
        start_ns: s(f.start_s),
        end_ns: s(f.start_s + f.duration_s),
        magnitude: f.magnitude,
    }
}

fn label(fault_free: &Telemetry, production: &Telemetry, faults: &[ActiveFault]) -> GroundTruth {
    let known: BTreeSet<CallPath> = group_traces(fault_free.spans.iter().cloned())
        .iter()
        .filter_map(|t| extract_call_paths(t).ok())
        .flatten()
        .collect();
    let traces = group_traces(production.spans.iter().cloned());
    let novel: BTreeMap<&str, u64> = traces
        .iter()
        .filter(|t| extract_call_paths(t).is_ok_and(|paths| paths.iter().any(|p| !known.contains(p))))
        .map(|t| (t.trace_id.as_str(), t.start_ns()))
        .collect();

    let cases: Vec<FaultCase> = faults
        .iter()
        .map(|f| {
            let in_window = |ts: u64| f.start_ns <= ts && ts < f.end_ns;
            let mut labeled_traces: BTreeSet<String> = production
                .spans
                .iter()
                .filter(|s| s.service == f.target && in_window(s.start_ns))
                .map(|s| s.trace_id.clone())
                .collect();
            labeled_traces.extend(
                novel
                    .iter()
                    .filter(|(_, &ts)| in_window(ts))
                    .map(|(id, _)| id.to_string()),
            );
            let labeled_logs = production
                .logs
                .iter()
                .filter(|l| l.service == f.target && l.level == LogLevel::Error && in_window(l.timestamp_ns))
                .map(|l| l.log_id.clone())
                .collect();
            FaultCase {
                kind: f.kind,
                root_cause: f.target.clone(),
                start_ns: f.start_ns,
                end_ns: f.end_ns,
                magnitude: f.magnitude,
                labeled_traces,
                labeled_logs,
            }
        })
        .collect();
    let mut labeled_traces: BTreeSet<String> = novel.keys().map(|s| s.to_string()).collect();
    let mut labeled_logs = BTreeSet::new();
    for c in &cases {
        labeled_traces.extend(c.labeled_traces.iter().cloned());
        labeled_logs.extend(c.labeled_logs.iter().cloned());
    }
    GroundTruth {
        faults: cases,
        labeled_traces,
        labeled_logs,
    }
}

/// Generates both phases and the ground truth. Identical inputs give
/// identical output.
pub fn generate(scenario: &Scenario, seed: u64) -> Result<Generated, GenError> {
    check(scenario)?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = || ChaCha8Rng::seed_from_u64(master.random());
    let (ff_rng, prod_rng, mut ff_metric_rng, mut prod_metric_rng) = (stream(), stream(), stream(), stream());

    let ff_start = scenario.epoch_s * NANOS_PER_SEC;
    let prod_start = ff_start + (scenario.fault_free_s * NANOS_PER_SEC as f64) as u64;
    let faults: Vec<ActiveFault> = scenario.faults.iter().map(|f| activate(f, prod_start)).collect();

    let ff = simulate_phase(scenario, ff_start, scenario.fault_free_s, &[], ff_rng);
    let ff_metrics = metrics_for(scenario, &ff.calls, ff_start, scenario.fault_free_s, &[], &mut ff_metric_rng);
    let prod = simulate_phase(scenario, prod_start, scenario.production_s, &faults, prod_rng);
    let prod_metrics = metrics_for(
        scenario,
        &prod.calls,
        prod_start,
        scenario.production_s,
        &faults,
        &mut prod_metric_rng,
    );
    let fault_free = telemetry(ff, ff_metrics);
    let production = telemetry(prod, prod_metrics);
    let truth = label(&fault_free, &production, &faults);
    Ok(Generated {
        fault_free,
        production,
        truth,
    })
}

/// A single-fault scenario on the default topology: the target is drawn
/// from the low-traffic services, the kind alternates between latency
/// injection (x10) and error return, and the window starts at a random,
/// non-aligned offset.
pub fn single_fault_scenario(case: u64) -> Scenario {
    let mut scenario = Scenario::default();
    let targets = scenario.topology.low_traffic_services(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + case);
    let target = targets[rng.random_range(0..targets.len())].clone();
    let duration_s = 180.0;
    let start_s = rng.random_range(60.0..scenario.production_s - duration_s - 60.0);
    let (kind, magnitude) = if case.is_multiple_of(2) {
        (FaultKind::LatencyInjection, 10.0)
    } else {
        (FaultKind::ErrorReturn, 0.5)
    };
    scenario.faults.push(FaultSpec {
        kind,
        target,
        start_s,
        duration_s,
        magnitude,
    });
    scenario
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Topology;

    fn tiny() -> Scenario {
        Scenario {
            request_rate: 10.0,
            fault_free_s: 60.0,
            production_s: 60.0,
            topology: Topology {
                services: vec!["solo".into()],
                templates: vec![CallTemplate {
                    name: "only".into(),
                    weight: 1.0,
                    root: CallNode::new("solo", "Ping", 5.0),
                }],
            },
            ..Scenario::default()
        }
    }

    #[test]
    fn empty_topology_rejected() {
        let mut s = tiny();
        s.topology.templates.clear();
        assert_eq!(generate(&s, 1).unwrap_err(), GenError::EmptyTopology);
    }

    #[test]
    fn unknown_target_rejected() {
        let mut s = tiny();
        s.faults.push(FaultSpec {
            kind: FaultKind::CpuSurge,
            target: "ghost".into(),
            start_s: 0.0,
            duration_s: 10.0,
            magnitude: 2.0,
        });
        assert_eq!(generate(&s, 1).unwrap_err(), GenError::UnknownService("ghost".into()));
    }

    #[test]
    fn metrics_have_sixteen_dimensions_every_interval() {
        let g = generate(&tiny(), 3).unwrap();
        assert_eq!(g.fault_free.metrics.len(), 12);
        assert!(g.fault_free.metrics.iter().all(|m| m.values.len() == 16));
    }

    #[test]
    fn cpu_surge_scales_cpu_only() {
        let mut s = tiny();
        s.faults.push(FaultSpec {
            kind: FaultKind::CpuSurge,
            target: "solo".into(),
            start_s: 0.0,
            duration_s: 60.0,
            magnitude: 5.0,
        });
        let faulty = generate(&s, 4).unwrap();
        let clean = generate(&tiny(), 4).unwrap();
        let mean = |t: &Telemetry, d: usize| t.metrics.iter().map(|m| m.values[d]).sum::<f64>() / t.metrics.len() as f64;
        let ratio = mean(&faulty.production, 0) / mean(&clean.production, 0);
        assert!((ratio - 5.0).abs() < 0.5, "{ratio}");
        assert_eq!(faulty.production.spans, clean.production.spans);
    }

    #[test]
    fn single_fault_scenarios_alternate() {
        let a = single_fault_scenario(0);
        let b = single_fault_scenario(1);
        assert_eq!(a.faults[0].kind, FaultKind::LatencyInjection);
        assert_eq!(b.faults[0].kind, FaultKind::ErrorReturn);
        a.validate().unwrap();
        b.validate().unwrap();
        let low = Topology::default_shop().low_traffic_services(0.05);
        assert!(low.contains(&a.faults[0].target));
    }
}
