//! Estimator dispatch.
//!
//! An [`EstimatorKind`] names one of the seven estimators together with the
//! models it uses. [`estimate`] runs a single estimator; a [`Session`]
//! evaluates several over the same data and reuses shared pieces (weights,
//! fitted models, the RWD outcome-model term) between them.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auc::{om_from_means, weighted_auc, Augmented, PointEstimate, Ties};
use crate::cohort::{check_compatibility, Cohort};
use crate::entropy::{solve, CalibrationSolution, SolverOptions, WeightVector};
use crate::error::{Error, Result};
use crate::features::{
    target_moments_from_cohort, target_moments_from_summary, FeatureMap, SummaryStats, TargetMoments,
};
use crate::outcome::{fit_outcome, OutcomeBasis, OutcomeModelFit};
use crate::rng::{stream2, Purpose};
use crate::sampling::{fit_sampling, ipsw_weights, truncate_normalize, LogisticOptions, SamplingFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Naive,
    Ipsw,
    Cw,
    Om,
    OmRwd,
    Acw,
    Aipsw,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 7] = [
        EstimatorTag::Naive,
        EstimatorTag::Ipsw,
        EstimatorTag::Cw,
        EstimatorTag::Om,
        EstimatorTag::OmRwd,
        EstimatorTag::Acw,
        EstimatorTag::Aipsw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Naive => "naive",
            EstimatorTag::Ipsw => "ipsw",
            EstimatorTag::Cw => "cw",
            EstimatorTag::Om => "om",
            EstimatorTag::OmRwd => "om_rwd",
            EstimatorTag::Acw => "acw",
            EstimatorTag::Aipsw => "aipsw",
        }
    }

    /// Whether the estimator needs patient-level RWD.
    pub fn needs_rwd(self) -> bool {
        matches!(
            self,
            EstimatorTag::Ipsw | EstimatorTag::OmRwd | EstimatorTag::Acw | EstimatorTag::Aipsw
        )
    }

    /// Whether the estimator needs target moments `g̃`.
    pub fn needs_moments(self) -> bool {
        matches!(self, EstimatorTag::Cw | EstimatorTag::Om | EstimatorTag::Acw)
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        EstimatorTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

/// Model choices shared by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Calibration function `g` for CW (and the weights OM and ACW use).
    pub calibration: FeatureMap,
    /// Design basis of the sampling model, intercept added automatically.
    pub sampling: FeatureMap,
    pub outcome: OutcomeBasis,
    /// Quantile truncation `(lower %, upper %)` of IPSW and CW weights.
    pub truncation: Option<(f64, f64)>,
    pub ties: Ties,
    pub solver: SolverOptions,
    pub logistic: LogisticOptions,
}

impl EstimatorOptions {
    /// Sampling model on the calibration features, main-effects outcome
    /// model, no truncation, strict ties.
    pub fn new(calibration: FeatureMap) -> Self {
        let p = calibration.p();
        Self {
            sampling: calibration.clone(),
            calibration,
            outcome: OutcomeBasis::main_effects(p),
            truncation: None,
            ties: Ties::Strict,
            solver: SolverOptions::default(),
            logistic: LogisticOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorKind {
    pub tag: EstimatorTag,
    pub options: EstimatorOptions,
}

impl EstimatorKind {
    pub fn new(tag: EstimatorTag, options: EstimatorOptions) -> Self {
        Self { tag, options }
    }
}

/// Validation cohort plus whatever describes the target population.
///
/// Target moments come from the summary statistics when given, else from
/// the target sample, else from the RWD covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationData {
    pub validation: Cohort,
    pub rwd: Option<Cohort>,
    pub target_sample: Option<Cohort>,
    pub target_summary: Option<SummaryStats>,
}

impl EstimationData {
    pub fn new(validation: Cohort) -> Result<Self> {
        validation.require_y()?;
        validation.require_d()?;
        Ok(Self {
            validation,
            rwd: None,
            target_sample: None,
            target_summary: None,
        })
    }

    pub fn with_rwd(mut self, rwd: Cohort) -> Result<Self> {
        check_compatibility(&self.validation, &rwd)?;
        rwd.require_d()?;
        self.rwd = Some(rwd);
        Ok(self)
    }

    pub fn with_target_sample(mut self, target: Cohort) -> Result<Self> {
        check_compatibility(&self.validation, &target)?;
        self.target_sample = Some(target);
        Ok(self)
    }

    pub fn with_target_summary(mut self, stats: SummaryStats) -> Result<Self> {
        if stats.means.len() != self.validation.p() {
            return Err(Error::DimensionMismatch {
                expected: self.validation.p(),
                actual: stats.means.len(),
            });
        }
        self.target_summary = Some(stats);
        Ok(self)
    }

    pub fn has_moments(&self) -> bool {
        self.target_summary.is_some() || self.target_sample.is_some() || self.rwd.is_some()
    }

    /// `g̃` for the given map from the highest-priority target source.
    pub fn target_moments(&self, map: &FeatureMap) -> Result<TargetMoments> {
        if let Some(s) = &self.target_summary {
            target_moments_from_summary(map, s)
        } else if let Some(t) = self.target_sample.as_ref().or(self.rwd.as_ref()) {
            target_moments_from_cohort(map, t)
        } else {
            Err(Error::RequirementUnmet {
                estimator: "cw".into(),
                requirement: "target moments (summary statistics, target sample or RWD)",
            })
        }
    }

    /// Nonparametric bootstrap resample `r`: every patient-level cohort is
    /// resampled with replacement, each from its own stream.
    pub fn resample(&self, seed: u64, r: u64) -> EstimationData {
        let draw = |c: &Cohort, part: u64| {
            let mut rng = stream2(seed, r, part, Purpose::Bootstrap);
            let n = c.n();
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            c.select_rows(&idx)
        };
        EstimationData {
            validation: draw(&self.validation, 0),
            rwd: self.rwd.as_ref().map(|c| draw(c, 1)),
            target_sample: self.target_sample.as_ref().map(|c| draw(c, 2)),
            target_summary: self.target_summary.clone(),
        }
    }
}

/// Solver and weight summaries attached to an estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<[f64; 2]>,
    /// Kish effective sample size of the per-subject weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_component: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub om_component: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub om_rwd_component: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamped_value: Option<f64>,
    pub effective_pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimator: EstimatorTag,
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub diagnostics: Diagnostics,
}

impl Estimate {
    fn from_point(tag: EstimatorTag, p: PointEstimate, mut diagnostics: Diagnostics) -> Self {
        diagnostics.effective_pairs = p.effective_pairs;
        Self {
            estimator: tag,
            value: p.value,
            numerator: p.numerator,
            denominator: p.denominator,
            diagnostics,
        }
    }
}

fn ess(w: &[f64]) -> f64 {
    let s = crate::sum::sum(w);
    let s2 = crate::sum::sum_iter(w.iter().map(|v| v * v));
    s * s / s2
}

struct Calibrated {
    solution: CalibrationSolution,
    weights: WeightVector,
}

struct Sampled {
    fit: SamplingFit,
    weights: WeightVector,
}

type Memo<T> = RefCell<HashMap<String, Result<Rc<T>>>>;

fn memo<T>(cache: &Memo<T>, key: String, f: impl FnOnce() -> Result<T>) -> Result<Rc<T>> {
    if let Some(v) = cache.borrow().get(&key) {
        return v.clone();
    }
    let v = f().map(Rc::new);
    cache.borrow_mut().insert(key, v.clone());
    v
}

/// Evaluates estimators over one dataset, caching intermediate results.
pub struct Session<'a> {
    data: &'a EstimationData,
    calibrated: Memo<Calibrated>,
    sampled: Memo<Sampled>,
    outcome: Memo<OutcomeModelFit>,
    om: Memo<PointEstimate>,
}

impl<'a> Session<'a> {
    pub fn new(data: &'a EstimationData) -> Self {
        Self {
            data,
            calibrated: RefCell::default(),
            sampled: RefCell::default(),
            outcome: RefCell::default(),
            om: RefCell::default(),
        }
    }

    fn rwd(&self, tag: EstimatorTag) -> Result<&'a Cohort> {
        self.data.rwd.as_ref().ok_or_else(|| Error::RequirementUnmet {
            estimator: tag.to_string(),
            requirement: "patient-level RWD",
        })
    }

    fn truncate(w: WeightVector, o: &EstimatorOptions) -> Result<WeightVector> {
        match o.truncation {
            Some((lo, hi)) => truncate_normalize(&w, lo, hi),
            None => Ok(w),
        }
    }

    fn calibrated(&self, o: &EstimatorOptions) -> Result<Rc<Calibrated>> {
        let key = format!("{:?}|{:?}|{:?}", o.calibration, o.solver, o.truncation);
        memo(&self.calibrated, key, || {
            let target = self.data.target_moments(&o.calibration)?;
            let g = o.calibration.matrix(&self.data.validation)?;
            let solution = solve(&g, o.calibration.q(), &target.g_tilde, &o.solver)?;
            let weights = Self::truncate(solution.q_weights.clone(), o)?;
            Ok(Calibrated { solution, weights })
        })
    }

    fn sampled(&self, o: &EstimatorOptions) -> Result<Rc<Sampled>> {
        let rwd = self.rwd(EstimatorTag::Ipsw)?;
        let key = format!("{:?}|{:?}|{:?}", o.sampling, o.logistic, o.truncation);
        memo(&self.sampled, key, || {
            let fit = fit_sampling(&self.data.validation, rwd, &o.sampling, &o.logistic)?;
            let weights = Self::truncate(ipsw_weights(&fit, &self.data.validation)?, o)?;
            Ok(Sampled { fit, weights })
        })
    }

    fn outcome(&self, o: &EstimatorOptions) -> Result<Rc<OutcomeModelFit>> {
        memo(&self.outcome, format!("{:?}", o.outcome), || {
            fit_outcome(&self.data.validation, &o.outcome)
        })
    }

    /// Outcome-model AUC over validation pairs under the given weights.
    fn om_weighted(&self, o: &EstimatorOptions, weights_key: &str, w: &WeightVector) -> Result<PointEstimate> {
        let fit = self.outcome(o)?;
        let key = format!("{:?}|{weights_key}", o.outcome);
        memo(&self.om, key, || {
            let v = &self.data.validation;
            let d = v.require_d()?;
            let (mut w1, mut w0) = (Vec::new(), Vec::new());
            for (&di, &wi) in d.iter().zip(w.as_slice()) {
                if di == 1 {
                    w1.push(wi)
                } else {
                    w0.push(wi)
                }
            }
            om_from_means(
                &fit.group_means(v, 1)?,
                &w1,
                &fit.group_means(v, 0)?,
                &w0,
                fit.pair_scale()?,
            )
        })
        .map(|p| *p)
    }

    fn om_rwd(&self, o: &EstimatorOptions) -> Result<PointEstimate> {
        let rwd = self.rwd(EstimatorTag::OmRwd)?;
        let fit = self.outcome(o)?;
        let key = format!("{:?}|rwd", o.outcome);
        memo(&self.om, key, || {
            let m1 = fit.group_means(rwd, 1)?;
            let m0 = fit.group_means(rwd, 0)?;
            om_from_means(&m1, &vec![1.0; m1.len()], &m0, &vec![1.0; m0.len()], fit.pair_scale()?)
        })
        .map(|p| *p)
    }

    fn check(&self, kind: &EstimatorKind) -> Result<()> {
        let tag = kind.tag;
        if tag.needs_rwd() {
            self.rwd(tag)?;
        }
        if tag.needs_moments() && !self.data.has_moments() {
            return Err(Error::RequirementUnmet {
                estimator: tag.to_string(),
                requirement: "target moments (summary statistics, target sample or RWD)",
            });
        }
        let p = self.data.validation.p();
        let o = &kind.options;
        if o.calibration.p() != p || o.sampling.p() != p || o.outcome.p != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: o.calibration.p(),
            });
        }
        Ok(())
    }

    pub fn estimate(&self, kind: &EstimatorKind) -> Result<Estimate> {
        self.check(kind)?;
        let o = &kind.options;
        let v = &self.data.validation;
        let y = v.require_y()?;
        let d = v.require_d()?;
        let tag = kind.tag;
        let mut diag = Diagnostics::default();

        let cw_key = || format!("cw|{:?}|{:?}|{:?}", o.calibration, o.solver, o.truncation);
        let ipsw_key = || format!("ipsw|{:?}|{:?}|{:?}", o.sampling, o.logistic, o.truncation);
        let cal_diag = |diag: &mut Diagnostics, c: &Calibrated| {
            diag.lambda = Some(c.solution.lambda.clone());
            diag.solver_iterations = Some(c.solution.iterations);
            diag.moment_residual = Some(c.solution.residual);
            diag.effective_sample_size = Some(ess(c.weights.as_slice()));
        };
        let samp_diag = |diag: &mut Diagnostics, s: &Sampled| {
            diag.sampling_alpha = Some(s.fit.alpha.clone());
            diag.effective_sample_size = Some(ess(s.weights.as_slice()));
        };
        let augment = |diag: &mut Diagnostics, weighted: PointEstimate, om: PointEstimate| -> Result<PointEstimate> {
            let fit = self.outcome(o)?;
            let a = Augmented::combine(weighted, om, self.om_rwd(o)?);
            diag.sigma = Some([fit.sigma_0, fit.sigma_1]);
            diag.weighted_component = Some(a.weighted.value);
            diag.om_component = Some(a.om.value);
            diag.om_rwd_component = Some(a.om_rwd.value);
            diag.clamped_value = Some(a.clamped);
            Ok(a.point())
        };

        let point = match tag {
            EstimatorTag::Naive => weighted_auc(y, d, &vec![1.0; y.len()], o.ties)?,
            EstimatorTag::Ipsw => {
                let s = self.sampled(o)?;
                samp_diag(&mut diag, &s);
                weighted_auc(y, d, s.weights.as_slice(), o.ties)?
            }
            EstimatorTag::Cw => {
                let c = self.calibrated(o)?;
                cal_diag(&mut diag, &c);
                weighted_auc(y, d, c.weights.as_slice(), o.ties)?
            }
            EstimatorTag::Om => {
                let c = self.calibrated(o)?;
                cal_diag(&mut diag, &c);
                let fit = self.outcome(o)?;
                diag.sigma = Some([fit.sigma_0, fit.sigma_1]);
                self.om_weighted(o, &cw_key(), &c.weights)?
            }
            EstimatorTag::OmRwd => {
                let fit = self.outcome(o)?;
                diag.sigma = Some([fit.sigma_0, fit.sigma_1]);
                self.om_rwd(o)?
            }
            EstimatorTag::Acw => {
                let c = self.calibrated(o)?;
                cal_diag(&mut diag, &c);
                let weighted = weighted_auc(y, d, c.weights.as_slice(), o.ties)?;
                let om = self.om_weighted(o, &cw_key(), &c.weights)?;
                augment(&mut diag, weighted, om)?
            }
            EstimatorTag::Aipsw => {
                let s = self.sampled(o)?;
                samp_diag(&mut diag, &s);
                let weighted = weighted_auc(y, d, s.weights.as_slice(), o.ties)?;
                let om = self.om_weighted(o, &ipsw_key(), &s.weights)?;
                augment(&mut diag, weighted, om)?
            }
        };
        Ok(Estimate::from_point(tag, point, diag))
    }
}

/// Runs one estimator.
pub fn estimate(kind: &EstimatorKind, data: &EstimationData) -> Result<Estimate> {
    Session::new(data).estimate(kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Role;

    fn toy() -> EstimationData {
        let x = vec![0.1, 0.5, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 1.0];
        let y = vec![0.3, 0.2, 1.4, 0.5, 0.9, 0.1, 1.1, 0.7, 0.4, 1.3];
        let d = vec![0, 1, 1, 0, 1, 0, 1, 0, 0, 1];
        let v = Cohort::from_parts(vec!["x".into()], x, Some(y), Some(d), None, Role::Validation).unwrap();
        EstimationData::new(v).unwrap()
    }

    #[test]
    fn naive_and_requirements() {
        let data = toy();
        let opts = EstimatorOptions::new(FeatureMap::g1(&[true]));
        let naive = estimate(&EstimatorKind::new(EstimatorTag::Naive, opts.clone()), &data).unwrap();
        let v = &data.validation;
        let direct = weighted_auc(v.y().unwrap(), v.d().unwrap(), &[1.0; 10], Ties::Strict).unwrap();
        assert_eq!(naive.value, direct.value);
        for tag in [EstimatorTag::OmRwd, EstimatorTag::Cw, EstimatorTag::Aipsw] {
            let e = estimate(&EstimatorKind::new(tag, opts.clone()), &data).unwrap_err();
            assert!(matches!(e, Error::RequirementUnmet { .. }), "{tag}: {e}");
        }
    }

    #[test]
    fn self_calibration_equals_naive() {
        let data = toy();
        let target = data.validation.with_role(Role::TargetSample).unwrap();
        let data = data.with_target_sample(target).unwrap();
        let opts = EstimatorOptions::new(FeatureMap::g1(&[true]));
        let naive = estimate(&EstimatorKind::new(EstimatorTag::Naive, opts.clone()), &data).unwrap();
        let cw = estimate(&EstimatorKind::new(EstimatorTag::Cw, opts), &data).unwrap();
        assert!((naive.value - cw.value).abs() < 1e-10);
        assert_eq!(cw.diagnostics.solver_iterations, Some(0));
    }

    #[test]
    fn tags_round_trip() {
        for t in EstimatorTag::ALL {
            assert_eq!(t.as_str().parse::<EstimatorTag>().unwrap(), t);
        }
        assert_eq!("OM+RWD".parse::<EstimatorTag>().unwrap(), EstimatorTag::OmRwd);
    }
}
