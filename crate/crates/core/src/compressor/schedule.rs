use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic sparsity ramp from `s_i` at `t_i` to `s_f` at `t_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub s_i: f64,
    pub s_f: f64,
    pub t_i: u64,
    pub t_f: u64,
    pub total: u64,
    pub updates_per_epoch: u32,
}

/// One mask update of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTracePoint {
    pub epoch: u64,
    pub update: u32,
    pub step: u64,
    pub sparsity: f64,
}

impl PruneSchedule {
    pub fn new(s_i: f64, s_f: f64, t_i: u64, t_f: u64, total: u64) -> Result<Self> {
        let s = Self {
            s_i,
            s_f,
            t_i,
            t_f,
            total,
            updates_per_epoch: 3,
        };
        s.validate()?;
        Ok(s)
    }

    /// Ramp from step 0 to three quarters of the run.
    pub fn standard(s_i: f64, s_f: f64, total: u64) -> Result<Self> {
        Self::new(s_i, s_f, 0, (total as f64 * 0.75).round() as u64, total)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s_i && self.s_i <= self.s_f && self.s_f < 1.0) {
            return Err(Error::Range(format!(
                "need 0 <= S_i <= S_f < 1, got S_i={} S_f={}",
                self.s_i, self.s_f
            )));
        }
        if !(self.t_i < self.t_f && self.t_f <= self.total) {
            return Err(Error::Range(format!(
                "need t_i < t_f <= T, got {} {} {}",
                self.t_i, self.t_f, self.total
            )));
        }
        if self.updates_per_epoch == 0 {
            return Err(Error::Range("updates_per_epoch must be positive".into()));
        }
        Ok(())
    }

    /// `S_t = S_f - (S_f - S_i) (1 - (t - t_i)/(t_f - t_i))^3`, held at `S_i`
    /// before `t_i` and at `S_f` from `t_f` on.
    pub fn sparsity(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.total as f64).contains(&t) {
            return Err(Error::Range(format!("step {t} outside [0, {}]", self.total)));
        }
        let (ti, tf) = (self.t_i as f64, self.t_f as f64);
        if t >= tf {
            return Ok(self.s_f);
        }
        if t <= ti {
            return Ok(self.s_i);
        }
        let r = 1.0 - (t - ti) / (tf - ti);
        Ok(self.s_f - (self.s_f - self.s_i) * r * r * r)
    }

    /// Sparsity at every mask update of an `epochs`-epoch run: updates are
    /// evenly spaced, the last one of each epoch on its final step.
    pub fn trace(&self, epochs: u64) -> Result<Vec<ScheduleTracePoint>> {
        if epochs == 0 {
            return Err(Error::Range("epochs must be positive".into()));
        }
        let per_epoch = self.total as f64 / epochs as f64;
        let u = self.updates_per_epoch;
        let mut out = Vec::with_capacity((epochs * u as u64) as usize);
        for e in 0..epochs {
            for k in 1..=u {
                let step = ((e as f64 + k as f64 / u as f64) * per_epoch).round() as u64;
                let step = step.min(self.total);
                out.push(ScheduleTracePoint {
                    epoch: e,
                    update: k,
                    step,
                    sparsity: self.sparsity(step as f64)?,
                });
            }
        }
        Ok(out)
    }
}
