mod common;

use proptest::prelude::*;
use shiftauc::{
    calibrate, pair_weight, solve, target_moments_from_cohort, Cohort, Error, FeatureMap, Role, SolverOptions,
    WeightVector,
};

fn residual(g: &[f64], q: usize, w: &[f64], target: &[f64]) -> f64 {
    (0..q)
        .map(|k| {
            let m: f64 = g.chunks_exact(q).zip(w).map(|(row, wi)| wi * row[k]).sum();
            (m - target[k]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn two_point_closed_form() {
    let sol = solve(&[0.0, 1.0], 1, &[0.75], &SolverOptions::default()).unwrap();
    assert!((sol.lambda[0] - 3f64.ln()).abs() < 1e-8);
    let q = sol.q_weights.as_slice();
    assert!((q[0] - 0.25).abs() < 1e-10 && (q[1] - 0.75).abs() < 1e-10);
}

#[test]
fn infeasible_targets_are_rejected() {
    let g = [0.0, 1.0, 2.0];
    assert!(matches!(
        solve(&g, 1, &[2.5], &SolverOptions::default()),
        Err(Error::InfeasibleTarget(_))
    ));
    assert!(matches!(
        solve(&g, 1, &[-0.1], &SolverOptions::default()),
        Err(Error::InfeasibleTarget(_))
    ));
}

#[test]
fn iteration_budget_is_enforced() {
    let g: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    let opts = SolverOptions {
        max_iter: 2,
        ..SolverOptions::default()
    };
    assert!(matches!(solve(&g, 1, &[0.97], &opts), Err(Error::MaxIterations { .. })));
    assert!(solve(&g, 1, &[0.97], &SolverOptions::default()).is_ok());
}

#[test]
fn pair_weights_are_products() {
    let w = WeightVector::new(vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(pair_weight(&w, 0, 2).unwrap(), 3.0);
    assert!(matches!(pair_weight(&w, 1, 1), Err(Error::IndexOutOfRange(..))));
    assert!(matches!(pair_weight(&w, 0, 3), Err(Error::IndexOutOfRange(..))));
}

#[test]
fn weights_track_an_exponential_tilt() {
    // source N(0, 1) tilted to N(0.5, 1): density ratio exp(0.5 x − 0.125)
    let n = 4000;
    let x = common::covariates(17, n, 0.0);
    let c = Cohort::from_parts(common::names(2), x, None, None, None, Role::TargetSample).unwrap();
    let map = FeatureMap::custom(2, vec![shiftauc::Term::Main(0)]).unwrap();
    let sol = solve(&map.matrix(&c).unwrap(), 1, &[0.5], &SolverOptions::default()).unwrap();
    assert!((sol.lambda[0] - 0.5).abs() < 0.05, "λ = {}", sol.lambda[0]);
    let truth: Vec<f64> = c.rows().map(|r| (0.5 * r[0]).exp()).collect();
    let r = common::pearson(sol.q_weights.as_slice(), &truth);
    assert!(r > 0.99, "correlation {r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_balances_and_descends(seed in any::<u64>(), n in 30usize..200, shift in -0.5f64..0.5) {
        let c = Cohort::from_parts(common::names(2), common::covariates(seed, n, 0.0), None, None, None, Role::TargetSample).unwrap();
        let t = Cohort::from_parts(common::names(2), common::covariates(seed ^ 7, 300, shift), None, None, None, Role::TargetSample).unwrap();
        let map = FeatureMap::g1(&[true, true]);
        let target = target_moments_from_cohort(&map, &t).unwrap();
        let sol = match calibrate(&c, &target, &SolverOptions::default()) {
            Ok(s) => s,
            Err(Error::InfeasibleTarget(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let w = sol.q_weights.as_slice();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v > 0.0));
        let r = residual(&map.matrix(&c).unwrap(), map.q(), w, &target.g_tilde);
        prop_assert!(r <= 1e-8, "residual {r}");
        prop_assert!((r - sol.residual).abs() < 1e-12);
        for pair in sol.objective_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "trace {:?}", sol.objective_trace);
        }
    }

    #[test]
    fn affine_equivariance(seed in any::<u64>(), scale in 0.1f64..20.0, offset in -50.0f64..50.0) {
        let n = 80;
        let x = common::covariates(seed, n, 0.0);
        let g: Vec<f64> = x.chunks_exact(2).flat_map(|r| [r[0], r[1], r[0] * r[0]]).collect();
        let target = [0.2, 1.1, 1.1];
        let opts = SolverOptions::default();
        let base = match solve(&g, 3, &target, &opts) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let moved: Vec<f64> = g.iter().map(|v| scale * v + offset).collect();
        let moved_target: Vec<f64> = target.iter().map(|v| scale * v + offset).collect();
        let other = solve(&moved, 3, &moved_target, &opts).unwrap();
        for (a, b) in base.q_weights.as_slice().iter().zip(other.q_weights.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
        }
        for (a, b) in base.lambda.iter().zip(&other.lambda) {
            prop_assert!((a - scale * b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {}", scale * b);
        }
    }
}
