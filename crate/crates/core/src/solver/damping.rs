//! Gain ratio and the damping-parameter schedule.

use serde::{Deserialize, Serialize};

/// Relative size below which the predicted improvement counts as zero.
const PREDICTION_EPS: f64 = 4.0 * f64::EPSILON;

/// Actual over predicted decrease of the squared error.
///
/// When the predicted decrease vanishes (relative to `prev_sq_err`) the
/// linear model is treated as exact and `f64::INFINITY` is returned, which
/// every rule handles like a ratio above `gain_high`.
pub fn gain_ratio(prev_sq_err: f64, new_sq_err: f64, predicted_sq_err: f64) -> f64 {
    let den = prev_sq_err - predicted_sq_err;
    if den.abs() <= PREDICTION_EPS * prev_sq_err.abs() || den == 0.0 {
        return f64::INFINITY;
    }
    (prev_sq_err - new_sq_err) / den
}

/// Direction in which `mu` moves for a given gain ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingRule {
    /// `g < gain_low` shrinks `mu`, `g > gain_high` grows it.
    Inverse,
    /// `g < gain_low` grows `mu`, `g > gain_high` shrinks it (trust-region
    /// direction: a good model earns a longer step).
    #[default]
    Classical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingSchedule {
    pub rule: DampingRule,
    pub grow: f64,
    pub shrink: f64,
    pub gain_low: f64,
    pub gain_high: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Default for DampingSchedule {
    fn default() -> Self {
        Self {
            rule: DampingRule::Inverse,
            grow: 1.5,
            shrink: 0.5,
            gain_low: 0.75,
            gain_high: 0.9,
            mu_min: 1e-300,
            mu_max: 1e300,
        }
    }
}

impl DampingSchedule {
    pub fn update(&self, mu: f64, g: f64) -> f64 {
        let (low_factor, high_factor) = match self.rule {
            DampingRule::Inverse => (self.shrink, self.grow),
            DampingRule::Classical => (self.grow, self.shrink),
        };
        let next = if g < self.gain_low {
            mu * low_factor
        } else if g > self.gain_high {
            mu * high_factor
        } else {
            mu
        };
        self.clamp(next)
    }

    pub fn clamp(&self, mu: f64) -> f64 {
        mu.clamp(self.mu_min, self.mu_max)
    }
}

/// The literal schedule: halve `mu` when `g < 0.75`, multiply by 1.5 when
/// `g > 0.9`, otherwise keep it.
pub fn update_mu(mu: f64, g: f64) -> f64 {
    DampingSchedule::default().update(mu, g)
}
