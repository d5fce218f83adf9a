use serde::{Deserialize, Serialize};

use super::damping::{DampingRule, DampingSchedule};
use crate::error::{CpdError, Result};
use crate::exec::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub rank: usize,
    pub max_outer_iters: usize,
    /// Inner iteration cap; `None` means `min(R * sum(I_l), 10 + k)` at outer step `k`.
    pub cg_max_iters: Option<usize>,
    /// Starting relative-residual tolerance for CG. It is halved whenever
    /// `mu` shrinks (down to `1e-4` of this value) and doubled back when
    /// `mu` grows.
    pub cg_rel_tol: f64,
    /// `None` uses the mean diagonal of `J^T J` at the starting point.
    pub initial_mu: Option<f64>,
    pub mu_grow: f64,
    pub mu_shrink: f64,
    pub gain_low: f64,
    pub gain_high: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub damping_rule: DampingRule,
    /// Trial steps rejected in a row before the iteration keeps its current point.
    pub max_rejections: usize,
    pub stop_rel_error: f64,
    /// Stop when `||step|| <= stop_step_norm * ||w||`.
    pub stop_step_norm: f64,
    /// Stop after `stagnation_window` accepted steps in a row whose relative
    /// error improvement is at most this value.
    pub stop_improvement: f64,
    pub stagnation_window: usize,
    /// Average the factors after every step (for symmetric targets).
    pub symmetric: bool,
    /// Solve on the truncated MLSVD core instead of the full tensor.
    pub compress: bool,
    pub compress_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rank: 1,
            max_outer_iters: 200,
            cg_max_iters: None,
            cg_rel_tol: 1e-2,
            initial_mu: None,
            mu_grow: 1.5,
            mu_shrink: 0.5,
            gain_low: 0.75,
            gain_high: 0.9,
            mu_min: 1e-300,
            mu_max: 1e300,
            damping_rule: DampingRule::Classical,
            max_rejections: 5,
            stop_rel_error: 1e-12,
            stop_step_norm: 1e-10,
            stop_improvement: 1e-10,
            stagnation_window: 3,
            symmetric: false,
            compress: true,
            compress_tol: 1e-10,
            restarts: 1,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl SolverOptions {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CpdError::Parameter(msg));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be at least 1".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if self.cg_max_iters == Some(0) {
            return bad("cg_max_iters must be at least 1".into());
        }
        let positive = [
            ("cg_rel_tol", self.cg_rel_tol),
            ("mu_min", self.mu_min),
            ("mu_max", self.mu_max),
            ("stop_rel_error", self.stop_rel_error),
            ("stop_step_norm", self.stop_step_norm),
            ("stop_improvement", self.stop_improvement),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if let Some(mu) = self.initial_mu {
            if !(mu.is_finite() && mu > 0.0) {
                return bad(format!("initial_mu must be positive and finite, got {mu}"));
            }
        }
        if self.gain_low.partial_cmp(&self.gain_high) != Some(std::cmp::Ordering::Less) {
            return bad(format!(
                "gain_low {} must be below gain_high {}",
                self.gain_low, self.gain_high
            ));
        }
        if !(0.0 < self.mu_shrink && self.mu_shrink < 1.0 && 1.0 < self.mu_grow && self.mu_grow.is_finite()) {
            return bad(format!(
                "need 0 < mu_shrink < 1 < mu_grow, got {} and {}",
                self.mu_shrink, self.mu_grow
            ));
        }
        if self.mu_min > self.mu_max {
            return bad("mu_min exceeds mu_max".into());
        }
        if self.stagnation_window == 0 {
            return bad("stagnation_window must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.compress_tol) {
            return bad(format!("compress_tol must lie in [0, 1), got {}", self.compress_tol));
        }
        Ok(())
    }

    pub fn damping(&self) -> DampingSchedule {
        DampingSchedule {
            rule: self.damping_rule,
            grow: self.mu_grow,
            shrink: self.mu_shrink,
            gain_low: self.gain_low,
            gain_high: self.gain_high,
            mu_min: self.mu_min,
            mu_max: self.mu_max,
        }
    }
}
