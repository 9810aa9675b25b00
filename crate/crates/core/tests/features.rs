mod common;

use proptest::prelude::*;
use shiftauc::features::parse_terms;
use shiftauc::rng::{stream, Purpose};
use shiftauc::sim::{generate_rwd, DgpSpec};
use shiftauc::{
    target_moments_from_cohort, target_moments_from_summary, Cohort, Error, FeatureMap, MomentSource, Role,
    SummaryDocument, SummaryStats, Term,
};

#[test]
fn g1_and_g2_dimensions() {
    let mask = [true, false, true];
    let g1 = FeatureMap::g1(&mask);
    let g2 = FeatureMap::g2(&mask);
    assert_eq!(g1.q(), 5);
    assert_eq!(g2.q(), 8);
    assert_eq!(g1.apply(&[2.0, 1.0, -3.0]).unwrap(), vec![2.0, 1.0, -3.0, 4.0, 9.0]);
    assert_eq!(
        g2.apply(&[2.0, 1.0, -3.0]).unwrap(),
        vec![2.0, 1.0, -3.0, 4.0, 9.0, 2.0, -6.0, -3.0]
    );
    assert!(matches!(
        g1.apply(&[1.0]),
        Err(Error::DimensionMismatch { expected: 3, actual: 1 })
    ));
}

#[test]
fn term_parsing() {
    let names = common::names(3);
    let t = parse_terms("x1, x2^2, x3:x1, x2:x2", &names).unwrap();
    assert_eq!(
        t,
        vec![Term::Main(0), Term::Square(1), Term::Interaction(0, 2), Term::Square(1)]
    );
    assert!(matches!(parse_terms("x4", &names), Err(Error::MissingColumn(_))));
    assert!(FeatureMap::custom(2, vec![Term::Main(2)]).is_err());
}

fn population_summary(c: &Cohort) -> SummaryStats {
    let n = c.n() as f64;
    let p = c.p();
    let mean: Vec<f64> = (0..p).map(|j| c.rows().map(|r| r[j]).sum::<f64>() / n).collect();
    let var = (0..p)
        .map(|j| c.rows().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    let mut inter = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            inter.push(c.rows().map(|r| r[i] * r[j]).sum::<f64>() / n);
        }
    }
    SummaryStats {
        means: mean,
        variances: Some(var),
        interaction_means: Some(inter),
    }
}

#[test]
fn summary_moments_match_sample_moments() {
    let dgp = DgpSpec::default();
    let c = generate_rwd(&dgp, 500, &mut stream(4, 0, Purpose::Rwd));
    let stats = population_summary(&c);
    let map = FeatureMap::g2(&[true; 3]);
    let from_sample = target_moments_from_cohort(&map, &c).unwrap();
    let from_summary = target_moments_from_summary(&map, &stats).unwrap();
    assert_eq!(from_sample.source, MomentSource::RwdEmpirical);
    assert_eq!(from_summary.source, MomentSource::UserSummary);
    for (a, b) in from_sample.g_tilde.iter().zip(&from_summary.g_tilde) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn summaries_must_cover_the_map() {
    let stats = SummaryStats {
        means: vec![1.0, 2.0],
        variances: None,
        interaction_means: None,
    };
    assert!(target_moments_from_summary(&FeatureMap::main_effects(2), &stats).is_ok());
    assert!(matches!(
        target_moments_from_summary(&FeatureMap::g1(&[true, true]), &stats),
        Err(Error::MissingSummary(_))
    ));
    assert!(matches!(
        target_moments_from_summary(&FeatureMap::main_effects(3), &stats),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn summary_document_resolves_names() {
    let doc = SummaryDocument::from_json(
        r#"{"means": {"x1": 1.0, "x2": -1.0}, "variances": {"x1": 0.25, "x2": 0.5}, "interaction_means": {"x2:x1": -0.9}}"#,
    )
    .unwrap();
    let stats = doc.to_stats(&common::names(2)).unwrap();
    let g = target_moments_from_summary(&FeatureMap::g2(&[true, true]), &stats).unwrap();
    assert_eq!(g.g_tilde, vec![1.0, -1.0, 1.25, 1.5, -0.9]);

    let unknown = SummaryDocument::from_json(r#"{"means": {"x1": 1.0, "age": 3.0}}"#).unwrap();
    assert!(matches!(
        unknown.to_stats(&common::names(2)),
        Err(Error::SchemaMismatch(_))
    ));
    assert!(SummaryDocument::from_json(r#"{"means": {}, "medians": {}}"#).is_err());
}

#[test]
fn design_weighted_moments() {
    let c = Cohort::from_parts(
        common::names(1),
        vec![0.0, 1.0, 2.0],
        None,
        None,
        Some(vec![1.0, 1.0, 2.0]),
        Role::TargetSample,
    )
    .unwrap();
    let m = target_moments_from_cohort(&FeatureMap::g1(&[true]), &c).unwrap();
    assert_eq!(m.source, MomentSource::DesignWeighted);
    assert_eq!(m.g_tilde, vec![1.25, 2.25]);
}

#[test]
fn rwd_moments_are_within_monte_carlo_error() {
    let dgp = DgpSpec::default();
    let m = 8000;
    let rwd = generate_rwd(&dgp, m, &mut stream(9, 0, Purpose::Rwd));
    let g = target_moments_from_cohort(&FeatureMap::g1(&[true; 3]), &rwd).unwrap();
    // X1 ~ N(1, 0.25), X2 ~ N(-1, 0.25), X3 ~ U(0, 1)
    let truth = [1.0, -1.0, 0.5, 1.25, 1.25, 1.0 / 3.0];
    let var = [0.25, 0.25, 1.0 / 12.0, 1.125, 1.125, 4.0 / 45.0];
    for k in 0..6 {
        let se = (var[k] / m as f64).sqrt();
        assert!(
            (g.g_tilde[k] - truth[k]).abs() < 3.0 * se,
            "moment {k}: {} vs {}",
            g.g_tilde[k],
            truth[k]
        );
    }
}

proptest! {
    #[test]
    fn g2_extends_g1(x in prop::collection::vec(-10.0f64..10.0, 1..6)) {
        let mask = vec![true; x.len()];
        let g1 = FeatureMap::g1(&mask).apply(&x).unwrap();
        let g2 = FeatureMap::g2(&mask).apply(&x).unwrap();
        prop_assert_eq!(&g2[..g1.len()], &g1[..]);
        let p = x.len();
        prop_assert_eq!(g2.len(), 2 * p + p * (p - 1) / 2);
        for (i, xi) in x.iter().enumerate() {
            prop_assert_eq!(g1[p + i], xi * xi);
        }
    }

    #[test]
    fn binary_columns_get_no_square(mask in prop::collection::vec(any::<bool>(), 1..6)) {
        let q = FeatureMap::g1(&mask).q();
        prop_assert_eq!(q, mask.len() + mask.iter().filter(|&&m| m).count());
    }
}
