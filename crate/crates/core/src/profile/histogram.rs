use serde::{Deserialize, Serialize};

/// Equal-width reference histogram over `[min, max]` of fault-free readings.
/// Query-time values outside the range fall into the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricHistogram {
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
    pub mean: f64,
}

impl MetricHistogram {
    /// Returns `None` when there are no finite values.
    pub fn fit(values: &[f64], bins: usize) -> Option<MetricHistogram> {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() || bins == 0 {
            return None;
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut hist = MetricHistogram {
            edges,
            probs: vec![0.0; bins],
            mean: finite.iter().sum::<f64>() / finite.len() as f64,
        };
        hist.probs = hist.distribution(&finite);
        Some(hist)
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let bins = self.bins();
        let lo = self.edges[0];
        let hi = self.edges[bins];
        if !(hi > lo) {
            return if x > hi { bins - 1 } else { 0 };
        }
        let pos = ((x - lo) / (hi - lo) * bins as f64).floor();
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        }
    }

    /// Normalized histogram of `values` over this histogram's bins.
    pub fn distribution(&self, values: &[f64]) -> Vec<f64> {
        let mut counts = vec![0.0; self.bins()];
        let mut n = 0usize;
        for &v in values.iter().filter(|v| v.is_finite()) {
            counts[self.bin_of(v)] += 1.0;
            n += 1;
        }
        if n > 0 {
            counts.iter_mut().for_each(|c| *c /= n as f64);
        }
        counts
    }

    /// `sum_b min(P_b, Q_b)`
    pub fn overlap(&self, q: &[f64]) -> f64 {
        self.probs.iter().zip(q).map(|(p, q)| p.min(*q)).sum()
    }
}
