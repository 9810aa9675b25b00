//! AUC estimation under covariate shift.
//!
//! A biomarker's AUC measured in a validation cohort need not transfer to a
//! target population whose covariate mix differs. This crate reweights or
//! models the validation data so that the AUC refers to the target:
//!
//! | estimator | needs |
//! |-----------|-------|
//! | naive     | validation cohort |
//! | IPSW      | patient-level RWD (sampling model) |
//! | CW        | target moments `g̃` (summary statistics suffice) |
//! | OM        | target moments |
//! | OM+RWD    | patient-level RWD |
//! | ACW       | patient-level RWD |
//! | AIPSW     | patient-level RWD |
//!
//! ```
//! use shiftauc::{weighted_auc, Ties};
//!
//! let y = [3.0, 1.0, 2.0, 2.0];
//! let d = [1, 0, 1, 0];
//! let w = [1.0, 1.0, 2.0, 3.0];
//! let auc = weighted_auc(&y, &d, &w, Ties::Strict).unwrap();
//! assert_eq!(auc.value, 0.5);
//! ```

pub mod auc;
pub mod cohort;
pub mod entropy;
pub mod error;
pub mod estimate;
pub mod features;
pub mod inference;
pub mod kernel;
mod linalg;
pub mod outcome;
pub mod rng;
pub mod sampling;
pub mod sim;
pub mod sum;

pub use auc::{acw, aipsw, om_rwd, om_weighted, weighted_auc, Augmented, PointEstimate, Ties};
pub use cohort::{check_compatibility, load_cohort, read_cohort, Cohort, CombinedData, Role, Schema};
pub use entropy::{calibrate, pair_weight, solve, CalibrationSolution, SolverOptions, WeightVector};
pub use error::{Error, Result};
pub use estimate::{estimate, Estimate, EstimationData, EstimatorKind, EstimatorOptions, EstimatorTag, Session};
pub use features::{
    target_moments_from_cohort, target_moments_from_summary, FeatureKind, FeatureMap, MomentSource, SummaryDocument,
    SummaryStats, TargetMoments, Term,
};
pub use inference::{bootstrap, compare, Benchmark, BootstrapOptions, CiKind, ComparisonReport, EstimateReport};
pub use outcome::{fit_outcome, std_normal_cdf, OutcomeBasis, OutcomeModelFit};
pub use sampling::{fit_logistic, fit_sampling, ipsw_weights, truncate_normalize, LogisticOptions, SamplingFit};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    pub mod calibration {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub mod sampling {}
    #[doc = include_str!("../../../book/src/outcome.md")]
    pub mod outcome {}
    #[doc = include_str!("../../../book/src/inference.md")]
    pub mod inference {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
