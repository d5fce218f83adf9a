use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cg::{cg_solve, CgOptions};
use super::damping::gain_ratio;
use super::gradient_from_residual;
use super::gram::{gram_cache, gram_matvec, jtj_diagonal, regularizer_diag};
use super::options::SolverOptions;
use crate::error::{CpdError, Result};
use crate::exec::map_indexed;
use crate::kruskal::KruskalOperand;
use crate::mlsvd::{compute_mlsvd, decompress_cpd, symmetric_mlsvd, truncate, MlsvdResult};
use crate::tensor::DenseTensor;
use crate::Matrix;

/// Lower bound on the CG tolerance, relative to `cg_rel_tol`.
const CG_TOL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Relative error `||T - T_k|| / ||T||` after this iteration.
    pub rel_error: f64,
    /// Damping used for the step that was finally taken (or last tried).
    pub mu: f64,
    /// `None` when the predicted decrease vanished.
    pub gain: Option<f64>,
    /// CG iterations summed over all trial steps of this iteration.
    pub cg_iterations: usize,
    pub step_norm: f64,
    /// `<grad F, step>` for the final trial step.
    pub grad_dot_step: f64,
    pub accepted: bool,
    pub rejections: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    RelativeError,
    StepNorm,
    Stagnation,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub operand: KruskalOperand,
    pub initial_operand: KruskalOperand,
    pub rel_error: f64,
    pub initial_rel_error: f64,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub seed: u64,
    pub restart: usize,
    /// Dimensions the iteration ran in (the truncated core when compressing).
    pub working_dims: Vec<usize>,
    /// Relative error introduced by compression alone.
    pub compression_rel_error: f64,
    pub wall_time_secs: f64,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn accepted_steps(&self) -> usize {
        self.history.iter().filter(|r| r.accepted).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub restart: usize,
    pub rel_error: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStartReport {
    pub best: SolveReport,
    pub runs: Vec<RunSummary>,
    pub wall_time_secs: f64,
}

/// Replaces every factor by the mean of all factors.
pub fn enforce_symmetry(k: &KruskalOperand) -> Result<KruskalOperand> {
    let dims = k.dims();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(CpdError::Shape(format!("symmetric operand needs equal dims, got {dims:?}")));
    }
    let mut mean = Matrix::zeros(dims[0], k.rank());
    for f in k.factors() {
        mean += f;
    }
    mean /= k.order() as f64;
    Ok(KruskalOperand::from_factors_unchecked(vec![mean; k.order()]))
}

/// Generator for restart `index` of a run seeded with `seed`.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Input tensor after the (optional) compression step, shared by restarts.
#[derive(Clone, Debug)]
pub struct PreparedProblem {
    target: DenseTensor,
    compression: Option<MlsvdResult>,
    tensor_norm: f64,
    truncation_sq: f64,
    rank: usize,
    symmetric: bool,
}

impl PreparedProblem {
    pub fn new(t: &DenseTensor, opts: &SolverOptions) -> Result<Self> {
        opts.validate()?;
        if !t.is_finite() {
            return Err(CpdError::Degenerate("tensor has non-finite entries".into()));
        }
        let tensor_norm = t.norm();
        if tensor_norm == 0.0 {
            return Err(CpdError::Degenerate("tensor is zero".into()));
        }
        if opts.symmetric && t.dims().iter().any(|&d| d != t.dims()[0]) {
            return Err(CpdError::Shape(format!(
                "symmetric solve needs equal dims, got {:?}",
                t.dims()
            )));
        }
        let compression = if opts.compress {
            let res = if opts.symmetric {
                symmetric_mlsvd(t, opts.compress_tol)?
            } else {
                compute_mlsvd(t, opts.compress_tol)?
            };
            let capped: Vec<usize> = res.core.dims().iter().map(|&d| d.min(opts.rank)).collect();
            let res = if capped.as_slice() != res.core.dims() {
                truncate(&res, &capped)?
            } else {
                res
            };
            res.is_truncated().then_some(res)
        } else {
            None
        };
        let (target, truncation_sq) = match &compression {
            Some(res) => (res.core.clone(), res.truncation_error.powi(2)),
            None => (t.clone(), 0.0),
        };
        Ok(Self {
            target,
            compression,
            tensor_norm,
            truncation_sq,
            rank: opts.rank,
            symmetric: opts.symmetric,
        })
    }

    /// Dimensions the iteration runs in.
    pub fn working_dims(&self) -> &[usize] {
        self.target.dims()
    }

    pub fn compression(&self) -> Option<&MlsvdResult> {
        self.compression.as_ref()
    }

    /// Gaussian starting point in the working space.
    pub fn random_start(&self, rng: &mut ChaCha8Rng) -> Result<KruskalOperand> {
        let k = KruskalOperand::random_gaussian(self.target.dims(), self.rank, rng)?;
        if self.symmetric {
            enforce_symmetry(&k)
        } else {
            Ok(k)
        }
    }

    fn full_rel_error(&self, err_sq: f64) -> f64 {
        (self.truncation_sq + err_sq).sqrt() / self.tensor_norm
    }

    fn lift(&self, k: &KruskalOperand) -> Result<KruskalOperand> {
        match &self.compression {
            Some(res) => decompress_cpd(res, k),
            None => Ok(k.clone()),
        }
    }

    /// Runs restart `restart` from its seeded random start.
    pub fn run(&self, opts: &SolverOptions, restart: usize) -> Result<SolveReport> {
        let mut rng = restart_rng(opts.seed, restart);
        let init = self.random_start(&mut rng)?;
        let mut report = self.run_from(init, opts)?;
        report.restart = restart;
        Ok(report)
    }

    /// Runs the damped Gauss-Newton iteration from `init`, given in the
    /// working space.
    pub fn run_from(&self, init: KruskalOperand, opts: &SolverOptions) -> Result<SolveReport> {
        let start = Instant::now();
        if init.dims() != self.target.dims() || init.rank() != self.rank {
            return Err(CpdError::Shape(format!(
                "starting point has dims {:?} and rank {}, expected {:?} and {}",
                init.dims(),
                init.rank(),
                self.target.dims(),
                self.rank
            )));
        }
        let schedule = opts.damping();
        let n = init.num_params();
        let base_tol = opts.cg_rel_tol;

        let mut w = init.clone();
        let mut resid = self.target.sub(&w.to_full())?;
        let mut err_sq = resid.norm().powi(2);
        if !err_sq.is_finite() {
            return Err(CpdError::Numerical {
                iteration: 0,
                message: "starting point has non-finite error".into(),
            });
        }
        let initial_rel_error = self.full_rel_error(err_sq);

        let mut mu = match opts.initial_mu {
            Some(mu) => mu,
            None => {
                let diag = jtj_diagonal(&gram_cache(&w), &w);
                let mean = diag.iter().sum::<f64>() / diag.len() as f64;
                if mean > 0.0 && mean.is_finite() {
                    mean
                } else {
                    1.0
                }
            }
        };
        mu = schedule.clamp(mu);
        let mut tol_scale = 1.0;
        let mut stagnant = 0;
        let mut history = Vec::new();
        let mut termination = Termination::MaxIterations;

        if self.full_rel_error(err_sq) <= opts.stop_rel_error {
            termination = Termination::RelativeError;
        } else {
            for it in 0..opts.max_outer_iters {
                let cache = gram_cache(&w);
                let d = regularizer_diag(&cache, &w);
                let grad = gradient_from_residual(&resid, &w);
                let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
                let cg_opts = CgOptions {
                    max_iters: opts.cg_max_iters.unwrap_or_else(|| n.min(10 + it)),
                    rel_tol: base_tol * tol_scale,
                };

                let mut cg_total = 0;
                let mut rejections = 0;
                let mut grow = opts.mu_grow;
                let mut outcome = None;
                let mut last_step_norm: f64;
                let mut last_dot: f64;
                loop {
                    let sol = cg_solve(&cache, &w, mu, &d, &rhs, &cg_opts).map_err(|e| match e {
                        CpdError::Numerical { message, .. } => CpdError::Numerical {
                            iteration: it,
                            message,
                        },
                        other => other,
                    })?;
                    cg_total += sol.iterations;
                    let x = sol.step;
                    last_step_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    last_dot = grad.iter().zip(&x).map(|(g, s)| g * s).sum();
                    let jx = gram_matvec(&cache, &w, &x)?;
                    let curvature: f64 = x.iter().zip(&jx).map(|(a, b)| a * b).sum();
                    let predicted_sq = (err_sq + 2.0 * last_dot + curvature).max(0.0);

                    let mut trial = w.axpy(1.0, &x)?;
                    if self.symmetric {
                        trial = enforce_symmetry(&trial)?;
                    }
                    let trial_resid = self.target.sub(&trial.to_full())?;
                    let new_sq = trial_resid.norm().powi(2);
                    if new_sq.is_finite() && new_sq <= err_sq {
                        outcome = Some((trial, trial_resid, new_sq, predicted_sq));
                        break;
                    }
                    rejections += 1;
                    // repeated rejections escalate the growth factor
                    mu = schedule.clamp(mu * grow);
                    grow *= 2.0;
                    if rejections >= opts.max_rejections {
                        break;
                    }
                }

                let Some((trial, trial_resid, new_sq, predicted_sq)) = outcome else {
                    history.push(IterationRecord {
                        iteration: it,
                        rel_error: self.full_rel_error(err_sq),
                        mu,
                        gain: None,
                        cg_iterations: cg_total,
                        step_norm: last_step_norm,
                        grad_dot_step: last_dot,
                        accepted: false,
                        rejections,
                    });
                    stagnant += 1;
                    if stagnant >= opts.stagnation_window {
                        termination = Termination::Stagnation;
                        break;
                    }
                    continue;
                };

                let g = gain_ratio(err_sq, new_sq, predicted_sq);
                let step_mu = mu;
                let next_mu = schedule.update(mu, g);
                if next_mu < mu {
                    tol_scale = (tol_scale * 0.5).max(CG_TOL_FLOOR);
                } else if next_mu > mu {
                    tol_scale = (tol_scale * 2.0).min(1.0);
                }
                mu = next_mu;

                let prev_rel = self.full_rel_error(err_sq);
                let new_rel = self.full_rel_error(new_sq);
                w = trial;
                resid = trial_resid;
                err_sq = new_sq;
                history.push(IterationRecord {
                    iteration: it,
                    rel_error: new_rel,
                    mu: step_mu,
                    gain: g.is_finite().then_some(g),
                    cg_iterations: cg_total,
                    step_norm: last_step_norm,
                    grad_dot_step: last_dot,
                    accepted: true,
                    rejections,
                });

                if new_rel <= opts.stop_rel_error {
                    termination = Termination::RelativeError;
                    break;
                }
                if last_step_norm <= opts.stop_step_norm * w.param_norm() {
                    termination = Termination::StepNorm;
                    break;
                }
                let improvement = if prev_rel > 0.0 {
                    (prev_rel - new_rel) / prev_rel
                } else {
                    0.0
                };
                if improvement <= opts.stop_improvement {
                    stagnant += 1;
                } else {
                    stagnant = 0;
                }
                if stagnant >= opts.stagnation_window {
                    termination = Termination::Stagnation;
                    break;
                }
            }
        }

        Ok(SolveReport {
            operand: self.lift(&w)?,
            initial_operand: self.lift(&init)?,
            rel_error: self.full_rel_error(err_sq),
            initial_rel_error,
            history,
            termination,
            seed: opts.seed,
            restart: 0,
            working_dims: self.target.dims().to_vec(),
            compression_rel_error: self.truncation_sq.sqrt() / self.tensor_norm,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs `opts.restarts` seeded restarts (concurrently when enabled) and
/// keeps the one with the smallest relative error, ties going to the lower
/// restart index.
pub fn solve_multistart(t: &DenseTensor, opts: &SolverOptions) -> Result<MultiStartReport> {
    let start = Instant::now();
    let problem = PreparedProblem::new(t, opts)?;
    let results = map_indexed(opts.restarts, opts.execution, |i| problem.run(opts, i));
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        reports.push(r?);
    }
    let runs = reports
        .iter()
        .map(|r| RunSummary {
            restart: r.restart,
            rel_error: r.rel_error,
            iterations: r.iterations(),
            termination: r.termination,
        })
        .collect();
    let best = reports
        .into_iter()
        .min_by(|a, b| a.rel_error.total_cmp(&b.rel_error).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart");
    Ok(MultiStartReport {
        best,
        runs,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Best-of-`opts.restarts` CPD of `t`.
pub fn solve_cpd(t: &DenseTensor, opts: &SolverOptions) -> Result<SolveReport> {
    Ok(solve_multistart(t, opts)?.best)
}
