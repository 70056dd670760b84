use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Per-frame compute budget: one STFT hop at 16 kHz (128 samples).
pub const FRAME_BUDGET: Duration = Duration::from_millis(8);

/// Summary of measured per-frame compute times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub budget_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[Duration]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let pick = |q: f64| ms[((ms.len() - 1) as f64 * q).round() as usize];
        Some(Self {
            frames: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: *ms.last().unwrap(),
            budget_ms: FRAME_BUDGET.as_secs_f64() * 1e3,
        })
    }

    /// The 95th-percentile frame fits the budget.
    pub fn meets_budget(&self) -> bool {
        self.p95_ms <= self.budget_ms
    }
}
