use postsample_core::config::{Pillars, PipelineConfig};
use postsample_core::io::Telemetry;
use postsample_core::model::{LogLevel, LogRecord, ServiceId, SpanRecord, NANOS_PER_SEC};
use postsample_core::pipeline::{analyze, resample, sample, selected_ids};
use postsample_core::profile::build_profile;
use postsample_core::sampler::DataType;

const EPOCH: u64 = 1_700_000_040 * NANOS_PER_SEC;

fn span(trace: &str, id: &str, parent: Option<&str>, service: &str, start_ns: u64, ms: f64) -> SpanRecord {
    SpanRecord {
        span_id: id.into(),
        trace_id: trace.into(),
        parent_span_id: parent.map(Into::into),
        service: ServiceId::new(service),
        operation: "Handle".into(),
        start_ns,
        duration_ms: ms,
    }
}

fn log(id: &str, trace: &str, service: &str, ts: u64, level: LogLevel, message: String) -> LogRecord {
    LogRecord {
        log_id: id.into(),
        timestamp_ns: ts,
        service: ServiceId::new(service),
        level,
        message,
        trace_id: Some(trace.into()),
        template_id: None,
    }
}

/// A front -> back request with one INFO log, latencies wobbling around
/// 20 ms and 10 ms.
fn request(out: &mut Telemetry, tag: &str, ts: u64, k: u64) {
    let wobble = (k % 5) as f64 * 0.5;
    let trace = format!("t-{tag}");
    out.spans.push(span(&trace, &format!("{tag}-f"), None, "front", ts, 20.0 + wobble));
    out.spans.push(span(&trace, &format!("{tag}-b"), Some(&format!("{tag}-f")), "back", ts + 1_000_000, 10.0 + wobble));
    out.logs.push(log(
        &format!("l-{tag}"),
        &trace,
        "front",
        ts,
        LogLevel::Info,
        format!("request {k} served in {} ms", 20 + k % 5),
    ));
}

fn fault_free() -> Telemetry {
    let mut t = Telemetry::default();
    for w in 0..10u64 {
        for i in 0..8u64 {
            let k = w * 8 + i;
            request(&mut t, &format!("ff{k}"), EPOCH + w * 60 * NANOS_PER_SEC + i * 5 * NANOS_PER_SEC, k);
        }
    }
    t
}

fn production() -> Telemetry {
    let start = EPOCH + 3600 * NANOS_PER_SEC;
    let mut t = Telemetry::default();
    for i in 0..8u64 {
        request(&mut t, &format!("p{i}"), start + i * 5 * NANOS_PER_SEC, i);
    }
    // A slow back call with an error log, and a request over an unseen path.
    let slow = start + 50 * NANOS_PER_SEC;
    t.spans.push(span("t-slow", "slow-f", None, "front", slow, 520.0));
    t.spans.push(span("t-slow", "slow-b", Some("slow-f"), "back", slow + 1_000_000, 500.0));
    t.logs.push(log("l-slow", "t-slow", "back", slow, LogLevel::Error, "database timeout after 500 ms".into()));
    let novel = start + 55 * NANOS_PER_SEC;
    t.spans.push(span("t-novel", "novel-f", None, "front", novel, 21.0));
    t.spans.push(span("t-novel", "novel-c", Some("novel-f"), "cache", novel + 1_000_000, 2.0));
    t
}

#[test]
fn telemetry_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let data = production();
    data.save_dir(dir.path()).unwrap();
    assert_eq!(Telemetry::load_dir(dir.path()).unwrap(), data);
}

#[test]
fn slow_request_kept_and_unseen_path_favoured_by_edge() {
    let cfg = PipelineConfig::default();
    let profile = build_profile(&fault_free(), None, &cfg).unwrap();
    assert_eq!(profile.fault_free_windows, 10);
    let analysis = analyze(&production(), &profile, &cfg).unwrap();
    assert_eq!(analysis.windows.len(), 1);
    let window = &analysis.windows[0];
    assert!(window.detection.anomalous);
    let report = analysis.rca_reports().next().expect("anomalous window has a report");
    assert_eq!(report.ranking()[0].as_str(), "back");

    let mut sampler = cfg.sampler.clone();
    sampler.budget = 0.2;
    let decisions = sample(&analysis, &sampler, 0);
    let traces = decisions.iter().filter(|d| d.data_type == DataType::Trace).count();
    assert_eq!(traces, 10);
    let (kept_traces, kept_logs) = selected_ids(&decisions);
    assert_eq!(kept_traces.len(), 2);
    assert!(kept_traces.contains("t-slow"), "{kept_traces:?}");
    assert!(kept_logs.contains("l-slow"), "{kept_logs:?}");

    // The unseen path is the most unusual request after the slow one, but
    // it avoids the top-ranked service, so only the edge pillar keeps it.
    let edge = |id: &str| decisions.iter().find(|d| d.subject == id).unwrap().p_edge;
    for d in decisions.iter().filter(|d| d.data_type == DataType::Trace) {
        if d.subject != "t-slow" && d.subject != "t-novel" {
            assert!(edge("t-novel") > d.p_edge, "{} {}", d.subject, d.p_edge);
        }
    }
    sampler.pillars = Pillars::EdgeOnly;
    let edge_only = resample(&decisions, &sampler, 0);
    let (kept_traces, _) = selected_ids(&edge_only);
    assert!(kept_traces.contains("t-novel"), "{kept_traces:?}");
}
