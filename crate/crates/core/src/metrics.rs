//! Cumulative forecast error bookkeeping.

use serde::{Deserialize, Serialize};

/// Running squared and absolute error sums over every forecast value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub horizon: usize,
    /// Number of scalar forecast values scored.
    pub count: u64,
    pub cumulative_se: f64,
    pub cumulative_ae: f64,
    pub mse: f64,
    pub mae: f64,
}

impl MetricsSummary {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn record(&mut self, error: f64) {
        self.count += 1;
        self.cumulative_se += error * error;
        self.cumulative_ae += error.abs();
        self.mse = self.cumulative_se / self.count as f64;
        self.mae = self.cumulative_ae / self.count as f64;
    }

    pub fn record_all<I: IntoIterator<Item = f64>>(&mut self, errors: I) {
        errors.into_iter().for_each(|e| self.record(e));
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
