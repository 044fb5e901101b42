//! Kernel checks against exhaustive references on random small problems.

use msro_optkernel::brute::{lp_by_basis_enumeration, milp_by_enumeration, qp_by_active_sets};
use msro_optkernel::qp::solve_qp_from;
use msro_optkernel::random::{general_lp, random_cut_pool, standard_form, sup_shaped};
use msro_optkernel::{solve_lp, solve_milp, solve_qp, LinearProgram, LpStatus, MipOptions, MipStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INF: f64 = f64::INFINITY;

#[test]
fn lp_matches_basis_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let (a, b, c) = standard_form(&mut rng);
        let mut lp = LinearProgram::new();
        for &cj in &c {
            lp.add_var(cj, 0.0, INF);
        }
        for i in 0..5 {
            lp.add_eq((0..8).map(|j| (j, a[i * 8 + j])).collect(), b[i]);
        }
        let sol = solve_lp(&lp).unwrap();
        let oracle = lp_by_basis_enumeration(&a, &b, &c, 5, 8).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()), "{} vs {}", sol.objective, oracle);
    }
}

#[test]
fn strong_duality_and_complementarity_on_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut optimal = 0;
    for _ in 0..200 {
        let lp = general_lp(&mut rng);
        let sol = solve_lp(&lp).unwrap();
        if sol.status != LpStatus::Optimal {
            assert_eq!(sol.status, LpStatus::Unbounded);
            continue;
        }
        optimal += 1;
        assert!(lp.max_violation(&sol.x) <= 1e-7);
        assert!((sol.objective - sol.dual_objective(&lp)).abs() <= 1e-7 * (1.0 + sol.objective.abs()));
        for (i, row) in lp.ge_rows.iter().enumerate() {
            let slack: f64 = row.iter().map(|&(j, v)| v * sol.x[j]).sum::<f64>() - lp.ge_rhs[i];
            assert!(sol.ge_duals[i] >= -1e-9);
            assert!((slack * sol.ge_duals[i]).abs() <= 1e-7);
        }
    }
    assert!(optimal >= 100, "only {optimal} bounded instances");
}

#[test]
fn milp_matches_binary_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..60 {
        let mip = sup_shaped(&mut rng, 1 + trial % 6);
        let oracle = milp_by_enumeration(&mip);
        let sol = solve_milp(&mip, &MipOptions { gap_tol: 1e-9, ..Default::default() }).unwrap();
        match oracle {
            None => assert_eq!(sol.status, MipStatus::Infeasible),
            Some(v) => {
                assert_eq!(sol.status, MipStatus::Optimal);
                assert!((sol.objective - v).abs() <= 1e-6 * (1.0 + v.abs()), "trial {trial}: {} vs {v}", sol.objective);
            }
        }
    }
}

#[test]
fn qp_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let qp = random_cut_pool(&mut rng);
        let sol = solve_qp(&qp).unwrap();
        let oracle = qp_by_active_sets(&qp).unwrap();
        for j in 0..3 {
            assert!((sol.x[j] - oracle[j]).abs() <= 1e-6, "{:?} vs {:?}", sol.x, oracle);
        }
        assert!(sol.kkt_residual <= 1e-6);
    }
}

#[test]
fn qp_minimizer_is_independent_of_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let qp = random_cut_pool(&mut rng);
        let a = solve_qp(&qp).unwrap();
        // any box point with eta large enough is feasible
        let start: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).chain([1e3]).collect();
        let b = solve_qp_from(&qp, Some(&start)).unwrap();
        for j in 0..3 {
            assert!((a.x[j] - b.x[j]).abs() <= 1e-6);
        }
    }
}
