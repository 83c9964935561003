use std::collections::BTreeMap;

use crate::model::{MetricSample, MetricVector, ServiceId, Window};

use super::IngestError;

/// Folds raw readings into one mean vector per `(service, window)`.
///
/// Windows tile `timeline` (inclusive first/last timestamp) or, when it is
/// `None`, the span of all readings. A dimension with no reading in a window
/// carries the previous window's value, or 0 before any reading.
pub fn aggregate_metrics(
    samples: &[MetricSample],
    schema: &[String],
    window_length_ns: u64,
    timeline: Option<(u64, u64)>,
) -> Result<Vec<MetricVector>, IngestError> {
    let dims = schema.len();
    let mut per_service: BTreeMap<&ServiceId, Vec<&MetricSample>> = BTreeMap::new();
    for s in samples {
        if s.metric_names.as_slice() != schema || s.values.len() != dims {
            return Err(IngestError::SchemaMismatch {
                service: s.service.to_string(),
                timestamp_ns: s.timestamp_ns,
            });
        }
        per_service.entry(&s.service).or_default().push(s);
    }
    let Some((first, last)) = timeline.or_else(|| {
        let lo = samples.iter().map(|s| s.timestamp_ns).min()?;
        let hi = samples.iter().map(|s| s.timestamp_ns).max()?;
        Some((lo, hi))
    }) else {
        return Ok(Vec::new());
    };
    let windows = Window::tiling(first, last, window_length_ns);

    let mut out = Vec::with_capacity(per_service.len() * windows.len());
    for (service, readings) in per_service {
        let mut sums: BTreeMap<u64, (Vec<f64>, Vec<usize>, usize)> = BTreeMap::new();
        for r in readings {
            let w = Window::containing(r.timestamp_ns, window_length_ns);
            let entry = sums
                .entry(w.start_ns)
                .or_insert_with(|| (vec![0.0; dims], vec![0; dims], 0));
            entry.2 += 1;
            for (d, v) in r.values.iter().enumerate() {
                if v.is_finite() {
                    entry.0[d] += v;
                    entry.1[d] += 1;
                }
            }
        }
        let mut carried = vec![0.0; dims];
        for w in &windows {
            let count = match sums.get(&w.start_ns) {
                Some((sum, n, count)) => {
                    for d in 0..dims {
                        if n[d] > 0 {
                            carried[d] = sum[d] / n[d] as f64;
                        }
                    }
                    *count
                }
                None => 0,
            };
            out.push(MetricVector {
                service: service.clone(),
                window_start_ns: w.start_ns,
                window_length_ns,
                metric_names: schema.to_vec(),
                values: carried.clone(),
                sample_count: count,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NANOS_PER_SEC;
    use proptest::prelude::*;

    const W: u64 = 60 * NANOS_PER_SEC;

    fn sample(ts_s: u64, v: f64) -> MetricSample {
        MetricSample {
            service: "A".into(),
            timestamp_ns: ts_s * NANOS_PER_SEC,
            metric_names: vec!["cpu".into()],
            values: vec![v],
        }
    }

    fn schema() -> Vec<String> {
        vec!["cpu".into()]
    }

    #[test]
    fn mean_within_window() {
        let out = aggregate_metrics(&[sample(1, 2.0), sample(30, 4.0)], &schema(), W, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].values, vec![3.0]);
        assert_eq!(out[0].sample_count, 2);
    }

    #[test]
    fn empty_window_carries_previous_value() {
        let out = aggregate_metrics(&[sample(1, 5.0), sample(130, 7.0)], &schema(), W, None).unwrap();
        let vals: Vec<f64> = out.iter().map(|v| v.values[0]).collect();
        assert_eq!(vals, vec![5.0, 5.0, 7.0]);
        assert_eq!(out[1].sample_count, 0);
    }

    #[test]
    fn leading_empty_window_is_zero() {
        let out = aggregate_metrics(&[sample(70, 5.0)], &schema(), W, Some((0, 70 * NANOS_PER_SEC))).unwrap();
        assert_eq!(out[0].values, vec![0.0]);
        assert_eq!(out[1].values, vec![5.0]);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let mut bad = sample(1, 1.0);
        bad.metric_names = vec!["mem".into()];
        let err = aggregate_metrics(&[bad], &schema(), W, None).unwrap_err();
        assert!(matches!(err, IngestError::SchemaMismatch { .. }));
    }

    proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { failure_persistence: None, ..Default::default() })]

        #[test]
        fn no_reading_lost(ts in proptest::collection::vec(0u64..3600, 1..200)) {
            let samples: Vec<_> = ts.iter().map(|&t| sample(t, t as f64)).collect();
            let out = aggregate_metrics(&samples, &schema(), W, None).unwrap();
            prop_assert_eq!(out.iter().map(|v| v.sample_count).sum::<usize>(), samples.len());
        }
    }
}
