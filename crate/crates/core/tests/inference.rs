mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftauc::inference::bootstrap_all;
use shiftauc::rng::{stream, Purpose};
use shiftauc::sim::{generate_population, replicate_data, select_validation, DgpSpec, Shift};
use shiftauc::{
    bootstrap, compare, estimate, Benchmark, BootstrapOptions, CiKind, Cohort, Error, EstimationData, EstimatorKind,
    EstimatorOptions, EstimatorTag, FeatureMap, Role,
};

fn kind(tag: EstimatorTag, p: usize) -> EstimatorKind {
    EstimatorKind::new(tag, EstimatorOptions::new(FeatureMap::g1(&vec![true; p])))
}

#[test]
fn separated_data_has_zero_standard_error() {
    let n = 60;
    let x: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
    let d: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(i, &di)| f64::from(di) * 10.0 + i as f64 / 100.0)
        .collect();
    let c = Cohort::from_parts(common::names(1), x, Some(y), Some(d), None, Role::Validation).unwrap();
    let data = EstimationData::new(c).unwrap();
    let r = bootstrap(&kind(EstimatorTag::Naive, 1), &data, &BootstrapOptions::new(200, 3)).unwrap();
    assert_eq!((r.point, r.se, r.ci_low, r.ci_high), (1.0, 0.0, 1.0, 1.0));
    assert_eq!(r.n_boot_failed, 0);
}

#[test]
fn too_many_failed_resamples_is_an_error() {
    let n = 40;
    let x: Vec<f64> = (0..n).map(f64::from).collect();
    let d: Vec<u8> = (0..n).map(|i| u8::from(i == 0)).collect();
    let y: Vec<f64> = x.clone();
    let c = Cohort::from_parts(common::names(1), x, Some(y), Some(d), None, Role::Validation).unwrap();
    let data = EstimationData::new(c).unwrap();
    assert!(matches!(
        bootstrap(&kind(EstimatorTag::Naive, 1), &data, &BootstrapOptions::new(100, 1)),
        Err(Error::TooManyFailures { .. })
    ));
}

#[test]
fn reports_are_reproducible_and_consistent() {
    let v = common::small_cohort(4, 120);
    let data = EstimationData::new(v.clone())
        .unwrap()
        .with_rwd(common::small_cohort(5, 200).with_role(Role::Rwd).unwrap())
        .unwrap();
    let kinds: Vec<EstimatorKind> = EstimatorTag::ALL.into_iter().map(|t| kind(t, 2)).collect();
    let opts = BootstrapOptions::new(60, 9);
    let a = bootstrap_all(&kinds, &data, &opts).unwrap();
    let b = bootstrap_all(&kinds, &data, &opts).unwrap();
    assert_eq!(a, b);
    for (r, k) in a.iter().zip(&kinds) {
        let r = r.as_ref().unwrap();
        assert_eq!(r.point, estimate(k, &data).unwrap().value);
        assert!((r.ci_high - r.point - 1.96 * r.se).abs() < 1e-15);
        assert!((r.point - r.ci_low - 1.96 * r.se).abs() < 1e-15);
        assert_eq!(r.seed, 9);
    }
    let mut pct = opts;
    pct.ci = CiKind::Percentile;
    let p = bootstrap(&kinds[2], &data, &pct).unwrap();
    assert!(p.ci_low <= p.ci_high);
    assert_eq!(p.se, a[2].as_ref().unwrap().se);
}

#[test]
fn comparison_identities() {
    let a = common::small_cohort(11, 150);
    let b = common::small_cohort(12, 110);
    let cw = kind(EstimatorTag::Cw, 2);
    let opts = BootstrapOptions::new(30, 2);

    // calibrating a cohort to itself leaves its AUC unchanged
    let r = compare(&a, &b, Benchmark::CohortA, &cw, &opts).unwrap();
    let naive = estimate(&kind(EstimatorTag::Naive, 2), &EstimationData::new(a.clone()).unwrap())
        .unwrap()
        .value;
    assert!((r.auc_a.point - naive).abs() < 1e-10);
    assert!((r.difference.point - (r.auc_b.point - r.auc_a.point)).abs() < 1e-15);

    let same = compare(&a, &a, Benchmark::Mixture, &cw, &opts).unwrap();
    assert!(same.difference.point.abs() < 1e-12);

    let ab = compare(&a, &b, Benchmark::Mixture, &cw, &opts).unwrap();
    let ba = compare(&b, &a, Benchmark::Mixture, &cw, &opts).unwrap();
    assert!((ab.difference.point + ba.difference.point).abs() < 1e-12);
    assert!((ab.auc_a.point - ba.auc_b.point).abs() < 1e-12);
}

#[test]
fn benchmarking_removes_selection_driven_differences() {
    let dgp = DgpSpec::default();
    let pop = generate_population(&dgp, 50_000, &mut stream(6, 0, Purpose::Population));
    let random = select_validation(&pop, &Shift::None.alpha(), 2000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let biased = select_validation(&pop, &[-2.0, 0.9, -0.5, 0.4], 1500, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let opts = BootstrapOptions::new(20, 4);
    let raw = compare(
        &random,
        &biased,
        Benchmark::CohortA,
        &kind(EstimatorTag::Naive, 3),
        &opts,
    )
    .unwrap();
    let cal = compare(&random, &biased, Benchmark::CohortA, &kind(EstimatorTag::Cw, 3), &opts).unwrap();
    assert!(
        raw.difference.point.abs() > 0.02,
        "naive difference {}",
        raw.difference.point
    );
    assert!(
        cal.difference.point.abs() < 0.5 * raw.difference.point.abs(),
        "{} vs {}",
        cal.difference.point,
        raw.difference.point
    );
}

#[test]
fn bootstrap_standard_error_matches_monte_carlo_spread() {
    let dgp = DgpSpec::with_shift(Shift::Moderate);
    let cw = kind(EstimatorTag::Cw, 3);
    let data = |rep: u64| {
        let (v, r) = replicate_data(&dgp, 77, rep).unwrap();
        EstimationData::new(v).unwrap().with_rwd(r).unwrap()
    };
    let values: Vec<f64> = (0..200).map(|rep| estimate(&cw, &data(rep)).unwrap().value).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mc_sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
    let se: f64 = (0..20)
        .map(|rep| bootstrap(&cw, &data(rep), &BootstrapOptions::new(100, rep)).unwrap().se)
        .sum::<f64>()
        / 20.0;
    assert!((se / mc_sd - 1.0).abs() < 0.15, "bootstrap se {se} vs MC sd {mc_sd}");
}
