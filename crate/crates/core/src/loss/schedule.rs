use serde::{Deserialize, Serialize};

/// Piecewise-linear weight: `warmup_initial` at step 0, `warmup_final` at
/// `warmup_steps`, then a straight line to `final_value` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub warmup_steps: u64,
    pub warmup_initial: f64,
    pub warmup_final: f64,
    pub final_value: f64,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Self {
            warmup_steps: 0,
            warmup_initial: v,
            warmup_final: v,
            final_value: v,
        }
    }

    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t.clamp(0.0, 1.0);
        if step < self.warmup_steps {
            return lerp(
                self.warmup_initial,
                self.warmup_final,
                step as f64 / self.warmup_steps as f64,
            );
        }
        let span = total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.final_value;
        }
        let t = (step - self.warmup_steps) as f64 / span as f64;
        lerp(self.warmup_final, self.final_value, t)
    }

    pub fn is_nonnegative(&self) -> bool {
        [self.warmup_initial, self.warmup_final, self.final_value]
            .iter()
            .all(|v| *v >= 0.0)
    }
}

/// Linear warm-up to `peak`, then a cosine envelope that decays to
/// `peak·(1 − decay)` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    pub peak: f64,
    pub warmup_steps: u64,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-4,
            peak: 1e-2,
            warmup_steps: 500,
            decay: 0.99,
        }
    }
}

impl LrSchedule {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        if step < self.warmup_steps {
            let t = step as f64 / self.warmup_steps as f64;
            return self.initial + (self.peak - self.initial) * t;
        }
        let span = total_steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.peak * ((1.0 - self.decay) + self.decay * cosine)
    }
}
