mod common;

use proptest::prelude::*;
use shiftauc::{
    check_compatibility, estimate, read_cohort, Cohort, Error, EstimationData, EstimatorKind, EstimatorOptions,
    EstimatorTag, FeatureMap, Role, Schema,
};

const CSV: &str = "x1,x2,y,d\n0.5,1,2.0,1\n-0.2,0,1.5,0\n1.1,1,0.3,1\n0.0,0,0.9,0\n";

fn schema() -> Schema {
    Schema::new(&["x1", "x2"])
}

#[test]
fn reads_a_validation_cohort() {
    let c = read_cohort(CSV.as_bytes(), Role::Validation, &schema()).unwrap();
    assert_eq!((c.n(), c.p()), (4, 2));
    assert_eq!(c.row(2), &[1.1, 1.0]);
    assert_eq!(c.y().unwrap(), &[2.0, 1.5, 0.3, 0.9]);
    assert_eq!(c.d().unwrap(), &[1, 0, 1, 0]);
    assert_eq!(c.design_weight(3), 1.0);
}

#[test]
fn missing_columns_are_listed() {
    let s = Schema::new(&["x1", "x3"]);
    match read_cohort(CSV.as_bytes(), Role::Validation, &s) {
        Err(Error::MissingColumn(cols)) => assert_eq!(cols, vec!["x3".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_values_name_row_and_column() {
    let csv = "x1,x2,y,d\n0.5,1,2.0,1\n-0.2,0,1.5,2\n";
    match read_cohort(csv.as_bytes(), Role::Validation, &schema()) {
        Err(Error::BadValue { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "d")),
        other => panic!("{other:?}"),
    }
    let csv = "x1,x2,y,d\n0.5,abc,2.0,1\n";
    assert!(matches!(
        read_cohort(csv.as_bytes(), Role::Validation, &schema()),
        Err(Error::BadValue { row: 1, .. })
    ));
}

#[test]
fn single_class_validation_is_rejected() {
    let csv = "x1,x2,y,d\n0.5,1,2.0,1\n-0.2,0,1.5,1\n";
    assert!(matches!(
        read_cohort(csv.as_bytes(), Role::Validation, &schema()),
        Err(Error::DegenerateResponse(1))
    ));
}

#[test]
fn rwd_and_target_roles_need_fewer_columns() {
    let rwd = "x1,x2,d\n0.5,1,1\n-0.2,0,0\n";
    let c = read_cohort(rwd.as_bytes(), Role::Rwd, &schema()).unwrap();
    assert!(c.y().is_none());
    let target = "x1,x2\n0.5,1\n";
    let c = read_cohort(target.as_bytes(), Role::TargetSample, &schema()).unwrap();
    assert!(c.d().is_none());
}

#[test]
fn design_weights_must_be_positive() {
    let mut s = schema();
    s.design_weight = Some("w".into());
    let csv = "x1,x2,w\n0.5,1,2\n-0.2,0,0\n";
    assert!(matches!(
        read_cohort(csv.as_bytes(), Role::TargetSample, &s),
        Err(Error::BadValue { row: 2, .. })
    ));
    let csv = "x1,x2,w\n0.5,1,2\n-0.2,0,0.5\n";
    let c = read_cohort(csv.as_bytes(), Role::TargetSample, &s).unwrap();
    assert_eq!(c.design_weights().unwrap(), &[2.0, 0.5]);
}

#[test]
fn empty_file_is_an_empty_cohort() {
    assert!(matches!(
        read_cohort("x1,x2,y,d\n".as_bytes(), Role::Validation, &schema()),
        Err(Error::EmptyCohort)
    ));
}

#[test]
fn csv_round_trip_is_lossless() {
    let c = common::small_cohort(3, 40);
    let mut buf = Vec::new();
    c.write_csv(&schema(), &mut buf).unwrap();
    let back = read_cohort(buf.as_slice(), Role::Validation, &schema()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn incompatible_schemas_report_divergent_columns() {
    let a = common::small_cohort(1, 10);
    let b = Cohort::from_parts(
        vec!["x1".into(), "z".into()],
        vec![0.0, 1.0, 2.0, 3.0],
        None,
        Some(vec![0, 1]),
        None,
        Role::Rwd,
    )
    .unwrap();
    match check_compatibility(&a, &b) {
        Err(Error::SchemaMismatch(cols)) => assert_eq!(cols, vec!["x2".to_string(), "z".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pooling_is_symmetric() {
    let a = common::small_cohort(1, 15);
    let b = common::small_cohort(2, 9);
    let ab = Cohort::pooled(&a, &b, Role::Rwd).unwrap();
    let ba = Cohort::pooled(&b, &a, Role::Rwd).unwrap();
    assert_eq!(ab, ba);
    assert_eq!(ab.n(), 24);
}

fn value(tag: EstimatorTag, c: &Cohort, target: &Cohort) -> f64 {
    let data = EstimationData::new(c.clone())
        .unwrap()
        .with_target_sample(target.clone())
        .unwrap();
    let kind = EstimatorKind::new(tag, EstimatorOptions::new(FeatureMap::g1(&[true, true])));
    estimate(&kind, &data).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimates_ignore_row_order(seed in any::<u64>(), n in 20usize..80, rot in 1usize..19) {
        let c = common::small_cohort(seed, n);
        let target = Cohort::from_parts(common::names(2), common::covariates(seed ^ 1, 60, 0.3), None, None, None, Role::TargetSample).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.rotate_left(rot);
        idx.reverse();
        let permuted = c.select_rows(&idx);
        for tag in [EstimatorTag::Naive, EstimatorTag::Cw, EstimatorTag::Om] {
            let (a, b) = (value(tag, &c, &target), value(tag, &permuted, &target));
            prop_assert!((a - b).abs() < 1e-12, "{tag:?}: {a} vs {b}");
        }
    }
}
