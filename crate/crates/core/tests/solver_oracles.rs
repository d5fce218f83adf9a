mod common;

use common::*;
use cpd_core::generators::{border_rank_instance, random_instance};
use cpd_core::solver::{
    cg_solve, enforce_symmetry, gram_cache, gram_matvec, jtj_diagonal, objective, regularizer_diag, solve_cpd,
    CgOptions, DampingRule, PreparedProblem, Termination,
};
use cpd_core::{DenseTensor, KruskalOperand, Matrix, SolverOptions};

fn tight(n: usize) -> CgOptions {
    CgOptions {
        max_iters: 20 * n,
        rel_tol: 1e-14,
    }
}

#[test]
fn matvec_matches_dense_order_three() {
    let k = random_operand(&[2, 2, 2], 2, 1);
    let v = random_operand(&[2, 2, 2], 2, 2).to_vec();
    let fast = gram_matvec(&gram_cache(&k), &k, &v).unwrap();
    let dense = dense_jtj(&k) * nalgebra::DVector::from_vec(v);
    assert!(rel_diff(&fast, dense.as_slice()) <= 1e-12);
}

#[test]
fn matvec_matches_dense_order_four() {
    let k = random_operand(&[2, 2, 2, 2], 2, 3);
    let v = random_operand(&[2, 2, 2, 2], 2, 4).to_vec();
    let fast = gram_matvec(&gram_cache(&k), &k, &v).unwrap();
    let dense = dense_jtj(&k) * nalgebra::DVector::from_vec(v);
    assert!(rel_diff(&fast, dense.as_slice()) <= 1e-12);
}

#[test]
fn assembled_operator_is_the_dense_gram() {
    let k = random_operand(&[3, 2, 4], 3, 5);
    let a = jtj_from_matvec(&k);
    let b = dense_jtj(&k);
    assert!((&a - &b).norm() <= 1e-12 * b.norm());
    let diag = jtj_diagonal(&gram_cache(&k), &k);
    for (i, d) in diag.iter().enumerate() {
        assert!((d - b[(i, i)]).abs() <= 1e-12 * b[(i, i)].abs().max(1.0));
    }
}

#[test]
fn regularized_matrix_is_diagonally_dominant() {
    for seed in 0..20 {
        let k = random_operand(&[2, 2, 2], 2, 100 + seed);
        let a = dense_jtj(&k);
        let d = regularizer_diag(&gram_cache(&k), &k);
        for i in 0..a.nrows() {
            let off: f64 = (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            assert!(a[(i, i)] + d[i] >= off * (1.0 - 1e-12), "seed {seed} row {i}");
        }
    }
}

#[test]
fn regularizer_growth_follows_the_diagonal() {
    let k = random_operand(&[3, 3, 3], 2, 9);
    let k2 = KruskalOperand::new(k.factors().iter().map(|f| f * 2.0).collect()).unwrap();
    let a1 = dense_jtj(&k);
    let a2 = dense_jtj(&k2);
    let d1 = regularizer_diag(&gram_cache(&k), &k);
    let d2 = regularizer_diag(&gram_cache(&k2), &k2);
    for i in 0..a1.nrows() {
        assert!((a2[(i, i)] / a1[(i, i)] - 16.0).abs() < 1e-10);
        assert!((d2[i] / d1[i] - 16.0).abs() < 1e-10);
    }
}

#[test]
fn cg_zero_rhs_gives_zero_step() {
    let k = random_operand(&[3, 3, 3], 2, 10);
    let cache = gram_cache(&k);
    let d = regularizer_diag(&cache, &k);
    let sol = cg_solve(&cache, &k, 1.0, &d, &vec![0.0; k.num_params()], &tight(18)).unwrap();
    assert_eq!(sol.iterations, 0);
    assert!(sol.step.iter().all(|&x| x == 0.0));
}

#[test]
fn cg_matches_dense_solve() {
    let k = random_operand(&[2, 2, 2], 2, 11);
    let t = random_operand(&[2, 2, 2], 3, 12).to_full();
    let g = cpd_core::solver::gradient(&t, &k).unwrap();
    let b: Vec<f64> = g.iter().map(|x| -x).collect();
    let cache = gram_cache(&k);
    let d = regularizer_diag(&cache, &k);
    let mu = 0.3;
    let sol = cg_solve(&cache, &k, mu, &d, &b, &tight(k.num_params())).unwrap();
    let m = dense_jtj(&k) + Matrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * mu;
    let x = m.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
    assert!(rel_diff(&sol.step, x.as_slice()) <= 1e-8);
}

#[test]
fn cg_large_mu_rank_one_orthonormal() {
    let e = |i: usize| {
        let mut m = Matrix::zeros(3, 1);
        m[(i, 0)] = 1.0;
        m
    };
    let k = KruskalOperand::new(vec![e(0), e(1), e(2)]).unwrap();
    let t = random_operand(&[3, 3, 3], 2, 13).to_full();
    let g = cpd_core::solver::gradient(&t, &k).unwrap();
    let b: Vec<f64> = g.iter().map(|x| -x).collect();
    let cache = gram_cache(&k);
    let d = regularizer_diag(&cache, &k);
    let mu = 1e6;
    let sol = cg_solve(&cache, &k, mu, &d, &b, &tight(9)).unwrap();
    let limit: Vec<f64> = g.iter().zip(&d).map(|(gi, di)| -gi / (mu * di)).collect();
    assert!(rel_diff(&sol.step, &limit) <= 1e-2);
}

#[test]
fn cg_rejects_non_finite_input() {
    let k = random_operand(&[2, 2, 2], 1, 14);
    let cache = gram_cache(&k);
    let d = regularizer_diag(&cache, &k);
    let mut b = vec![1.0; 6];
    b[0] = f64::NAN;
    assert!(matches!(
        cg_solve(&cache, &k, 1.0, &d, &b, &tight(6)),
        Err(cpd_core::CpdError::Numerical { .. })
    ));
}

#[test]
fn step_is_a_descent_direction_for_small_alpha() {
    for seed in 0..5 {
        let k = random_operand(&[3, 4, 2], 2, 200 + seed);
        let t = random_operand(&[3, 4, 2], 2, 300 + seed).to_full();
        let g = cpd_core::solver::gradient(&t, &k).unwrap();
        let b: Vec<f64> = g.iter().map(|x| -x).collect();
        let cache = gram_cache(&k);
        let d = regularizer_diag(&cache, &k);
        let sol = cg_solve(&cache, &k, 1.0, &d, &b, &CgOptions { max_iters: 3, rel_tol: 1e-2 }).unwrap();
        let f0 = objective(&t, &k).unwrap();
        let f1 = objective(&t, &k.axpy(1e-4, &sol.step).unwrap()).unwrap();
        assert!(f1 < f0, "seed {seed}");
    }
}

#[test]
fn well_conditioned_rank_five_single_start() {
    let mut ok = 0;
    for seed in 0..20 {
        let inst = random_instance(&[20, 20, 20], 5, 400 + seed).unwrap();
        let rep = solve_cpd(&inst.tensor, &SolverOptions { seed, ..SolverOptions::new(5) }).unwrap();
        if rep.rel_error <= 1e-4 {
            ok += 1;
        }
    }
    assert!(ok >= 18, "{ok}/20");
}

#[test]
fn uncompressed_path_recovers_too() {
    let inst = random_instance(&[5, 6, 4], 2, 500).unwrap();
    let opts = SolverOptions {
        compress: false,
        restarts: 3,
        ..SolverOptions::new(2)
    };
    let rep = solve_cpd(&inst.tensor, &opts).unwrap();
    assert_eq!(rep.working_dims, vec![5, 6, 4]);
    assert!(rep.rel_error <= 1e-8, "{}", rep.rel_error);
}

#[test]
fn compressed_then_decompressed_matches_full_space_error() {
    let inst = random_instance(&[5, 5, 5], 2, 501).unwrap();
    let rep = solve_cpd(&inst.tensor, &SolverOptions::new(2)).unwrap();
    assert_eq!(rep.working_dims, vec![2, 2, 2]);
    let direct = inst.tensor.sub(&rep.operand.to_full()).unwrap().norm() / inst.tensor.norm();
    assert!(direct <= 1e-8);
    assert!((direct - rep.rel_error).abs() <= 1e-10);
}

#[test]
fn history_is_finite_and_monotone() {
    let inst = random_instance(&[6, 6, 6], 4, 600).unwrap().with_noise(0.1, 1).unwrap();
    let rep = solve_cpd(&inst.tensor, &SolverOptions { seed: 3, ..SolverOptions::new(4) }).unwrap();
    let mut prev = rep.initial_rel_error;
    for h in &rep.history {
        assert!(h.rel_error.is_finite() && h.rel_error >= 0.0);
        assert!(h.rel_error <= prev);
        prev = h.rel_error;
    }
    assert_ne!(rep.termination, Termination::RelativeError);
}

#[test]
fn border_rank_limit_is_approached_without_crashing() {
    let inst = border_rank_instance(5, 10.0, 700).unwrap();
    let opts = SolverOptions {
        max_outer_iters: 300,
        seed: 1,
        ..SolverOptions::new(2)
    };
    let rep = solve_cpd(&inst.tensor, &opts).unwrap();
    let mut prev = rep.initial_rel_error;
    for h in rep.history.iter().filter(|h| h.accepted) {
        assert!(h.rel_error <= prev);
        prev = h.rel_error;
    }
    let before: f64 = rep.initial_operand.param_norm();
    assert!(rep.operand.param_norm() > before);
}

#[test]
fn literal_damping_rule_keeps_the_error_monotone() {
    let inst = random_instance(&[5, 5, 5], 3, 800).unwrap();
    let opts = SolverOptions {
        damping_rule: DampingRule::Inverse,
        ..SolverOptions::new(3)
    };
    let rep = solve_cpd(&inst.tensor, &opts).unwrap();
    assert!(rep.rel_error <= rep.initial_rel_error);
}

#[test]
fn symmetric_solve_yields_symmetric_tensor() {
    let u = random_operand(&[5], 2, 900).factor(0).clone();
    let t = KruskalOperand::new(vec![u.clone(), u.clone(), u]).unwrap().to_full();
    let opts = SolverOptions {
        symmetric: true,
        restarts: 5,
        ..SolverOptions::new(2)
    };
    let rep = solve_cpd(&t, &opts).unwrap();
    let full = rep.operand.to_full();
    for perm in [[0, 2, 1], [1, 0, 2], [2, 1, 0]] {
        let p = full.permute(&perm).unwrap();
        assert!(p.sub(&full).unwrap().norm() <= 1e-8 * full.norm());
    }
    assert!(rep.rel_error <= 1e-6, "{}", rep.rel_error);
    let f = rep.operand.factors();
    assert!((&f[0] - &f[1]).norm() <= 1e-12 && (&f[0] - &f[2]).norm() <= 1e-12);
    let again = enforce_symmetry(&rep.operand).unwrap().to_full();
    assert!(again.sub(&full).unwrap().norm() <= 1e-12 * full.norm());
}

#[test]
fn explicit_start_point_and_zero_error_start() {
    let inst = random_instance(&[4, 4, 4], 2, 1000).unwrap();
    let opts = SolverOptions {
        compress: false,
        ..SolverOptions::new(2)
    };
    let problem = PreparedProblem::new(&inst.tensor, &opts).unwrap();
    let truth = inst.ground_truth.clone().unwrap();
    let rep = problem.run_from(truth.clone(), &opts).unwrap();
    assert_eq!(rep.termination, Termination::RelativeError);
    assert!(rep.history.is_empty());
    assert_eq!(rep.operand, truth);
    let wrong = random_operand(&[4, 4, 3], 2, 1);
    assert!(problem.run_from(wrong, &opts).is_err());
}

#[test]
fn invalid_inputs() {
    let t = DenseTensor::zeros(&[3, 3, 3]);
    assert!(solve_cpd(&t, &SolverOptions::new(1)).is_err());
    let t = random_operand(&[3, 3, 3], 1, 1).to_full();
    assert!(solve_cpd(&t, &SolverOptions::new(0)).is_err());
    let rect = random_operand(&[3, 4, 3], 1, 1).to_full();
    let sym = SolverOptions {
        symmetric: true,
        ..SolverOptions::new(1)
    };
    assert!(solve_cpd(&rect, &sym).is_err());
}

#[test]
fn rank_above_dimensions_is_allowed() {
    let t = random_operand(&[2, 2, 2], 3, 7).to_full();
    let rep = solve_cpd(&t, &SolverOptions { restarts: 5, ..SolverOptions::new(3) }).unwrap();
    assert_eq!(rep.operand.rank(), 3);
    assert!(rep.rel_error <= 1e-6, "{}", rep.rel_error);
}
