//! Weighted AUC statistics.
//!
//! Every estimator here is a ratio over responder/non-responder pairs whose
//! pair weight factors as `wᵢ · wⱼ`:
//!
//! ```text
//! τ̂ = Σ_{i: D=1} Σ_{j: D=0} wᵢ wⱼ k(i, j)  /  Σ_{i: D=1} Σ_{j: D=0} wᵢ wⱼ
//! ```
//!
//! with `k = 𝕀(Yᵢ > Yⱼ)` for the Mann-Whitney forms (naive, IPSW, CW) and
//! the model-based probability `Φ((M(xᵢ,1) − M(xⱼ,0))/√(σ̂₀²+σ̂₁²))` for the
//! outcome-model forms. The augmented estimators add the difference between
//! the outcome-model AUC over the RWD and its weighted validation analogue.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CombinedData};
use crate::entropy::{CalibrationSolution, WeightVector};
use crate::error::{Error, Result};
use crate::kernel::normal_pair_sum;
use crate::outcome::OutcomeModelFit;
use crate::sampling::{ipsw_weights, SamplingFit};
use crate::sum::Neumaier;

/// How tied biomarker values between a responder and a non-responder count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    /// `𝕀(Yᵢ > Yⱼ)`: ties count as losses.
    #[default]
    Strict,
    /// Ties count one half.
    Half,
}

impl fmt::Display for Ties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ties::Strict => "strict",
            Ties::Half => "half",
        })
    }
}

impl FromStr for Ties {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Ties::Strict),
            "half" => Ok(Ties::Half),
            _ => Err(Error::InvalidArgument(format!("unknown ties policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Responder/non-responder pairs with positive product weight.
    pub effective_pairs: u64,
}

fn check_weights(w: &[f64]) -> Result<()> {
    match w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(i) => Err(Error::NonFiniteWeight(i)),
        None => Ok(()),
    }
}

fn split<'a>(v: &'a [f64], d: &'a [u8], w: &'a [f64], group: u8) -> (Vec<f64>, Vec<f64>) {
    d.iter()
        .zip(v.iter().zip(w))
        .filter(|(&di, _)| di == group)
        .map(|(_, (&vi, &wi))| (vi, wi))
        .unzip()
}

fn positive(w: &[f64]) -> u64 {
    w.iter().filter(|&&v| v > 0.0).count() as u64
}

/// Weighted Mann-Whitney AUC in `O(n log n)`.
///
/// Non-responders are sorted by biomarker value and their weights
/// accumulated, so each responder needs one binary search for the weight
/// strictly below it and one for the weight tied with it.
pub fn weighted_auc(y: &[f64], d: &[u8], w: &[f64], ties: Ties) -> Result<PointEstimate> {
    if y.len() != d.len() || w.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: if y.len() != d.len() { y.len() } else { w.len() },
        });
    }
    check_weights(w)?;
    let (y1, w1) = split(y, d, w, 1);
    let (y0, w0) = split(y, d, w, 0);
    let tot1: f64 = crate::sum::sum(&w1);
    let tot0: f64 = crate::sum::sum(&w0);
    if !(tot1 > 0.0 && tot0 > 0.0) {
        return Err(Error::NoPairs);
    }

    let mut order: Vec<usize> = (0..y0.len()).collect();
    order.sort_by(|&i, &j| y0[i].total_cmp(&y0[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| y0[i]).collect();
    // prefix[k] = weight of the k smallest non-responders
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    let mut acc = Neumaier::new();
    prefix.push(0.0);
    for &i in &order {
        acc.add(w0[i]);
        prefix.push(acc.total());
    }

    let mut num = Neumaier::new();
    for (&yi, &wi) in y1.iter().zip(&w1) {
        if wi == 0.0 {
            continue;
        }
        let below = sorted.partition_point(|&v| v < yi);
        let mut k = prefix[below];
        if ties == Ties::Half {
            let upto = sorted.partition_point(|&v| v <= yi);
            k += 0.5 * (prefix[upto] - prefix[below]);
        }
        num.add(wi * k);
    }
    let numerator = num.total();
    let denominator = tot1 * tot0;
    Ok(PointEstimate {
        value: numerator / denominator,
        numerator,
        denominator,
        effective_pairs: positive(&w1) * positive(&w0),
    })
}

/// Brute-force `O(n₁ n₀)` version of [`weighted_auc`].
pub fn weighted_auc_brute(y: &[f64], d: &[u8], w: &[f64], ties: Ties) -> Result<PointEstimate> {
    check_weights(w)?;
    let mut num = Neumaier::new();
    let mut den = Neumaier::new();
    let mut pairs = 0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if d[i] != 1 || d[j] != 0 {
                continue;
            }
            let pw = w[i] * w[j];
            den.add(pw);
            if pw > 0.0 {
                pairs += 1;
            }
            if y[i] > y[j] {
                num.add(pw);
            } else if y[i] == y[j] && ties == Ties::Half {
                num.add(0.5 * pw);
            }
        }
    }
    let denominator = den.total();
    if denominator <= 0.0 {
        return Err(Error::NoPairs);
    }
    Ok(PointEstimate {
        value: num.total() / denominator,
        numerator: num.total(),
        denominator,
        effective_pairs: pairs,
    })
}

/// Outcome-model AUC from predicted group means and per-subject weights.
pub fn om_from_means(m1: &[f64], w1: &[f64], m0: &[f64], w0: &[f64], scale: f64) -> Result<PointEstimate> {
    check_weights(w1)?;
    check_weights(w0)?;
    let tot1 = crate::sum::sum(w1);
    let tot0 = crate::sum::sum(w0);
    if !(tot1 > 0.0 && tot0 > 0.0) {
        return Err(Error::NoPairs);
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateVariance);
    }
    let numerator = normal_pair_sum(m1, w1, m0, w0, scale);
    let denominator = tot1 * tot0;
    Ok(PointEstimate {
        value: numerator / denominator,
        numerator,
        denominator,
        effective_pairs: positive(w1) * positive(w0),
    })
}

/// Weighted outcome-model AUC over validation pairs.
pub fn om_weighted(validation: &Cohort, fit: &OutcomeModelFit, w: &WeightVector) -> Result<PointEstimate> {
    let d = validation.require_d()?;
    if w.len() != validation.n() {
        return Err(Error::DimensionMismatch {
            expected: validation.n(),
            actual: w.len(),
        });
    }
    let scale = fit.pair_scale()?;
    let (w1, w0) = group_weights(d, w.as_slice());
    let m1 = fit.group_means(validation, 1)?;
    let m0 = fit.group_means(validation, 0)?;
    om_from_means(&m1, &w1, &m0, &w0, scale)
}

/// Unweighted outcome-model AUC over every RWD responder/non-responder pair.
pub fn om_rwd(rwd: &Cohort, fit: &OutcomeModelFit) -> Result<PointEstimate> {
    let scale = fit.pair_scale()?;
    let m1 = fit.group_means(rwd, 1)?;
    let m0 = fit.group_means(rwd, 0)?;
    om_from_means(&m1, &vec![1.0; m1.len()], &m0, &vec![1.0; m0.len()], scale)
}

fn group_weights(d: &[u8], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut w1 = Vec::new();
    let mut w0 = Vec::new();
    for (&di, &wi) in d.iter().zip(w) {
        if di == 1 {
            w1.push(wi);
        } else {
            w0.push(wi);
        }
    }
    (w1, w0)
}

/// An augmented estimate `weighted − om + om_rwd` with its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmented {
    /// Unclamped value; may leave `[0, 1]` in small samples.
    pub value: f64,
    /// `value` clamped to `[0, 1]`, reported for diagnostics only.
    pub clamped: f64,
    pub weighted: PointEstimate,
    pub om: PointEstimate,
    pub om_rwd: PointEstimate,
}

impl Augmented {
    pub fn combine(weighted: PointEstimate, om: PointEstimate, om_rwd: PointEstimate) -> Self {
        let value = weighted.value - om.value + om_rwd.value;
        Self {
            value,
            clamped: value.clamp(0.0, 1.0),
            weighted,
            om,
            om_rwd,
        }
    }

    pub fn point(&self) -> PointEstimate {
        PointEstimate {
            value: self.value,
            numerator: self.value,
            denominator: 1.0,
            effective_pairs: self.weighted.effective_pairs,
        }
    }
}

/// `weighted_auc(w) − om_weighted(w) + om_rwd` for any per-subject weights.
pub fn augmented(combined: &CombinedData, w: &WeightVector, fit: &OutcomeModelFit, ties: Ties) -> Result<Augmented> {
    let v = &combined.validation;
    let rwd = combined.rwd.as_ref().ok_or_else(|| Error::RequirementUnmet {
        estimator: "augmented".into(),
        requirement: "patient-level RWD",
    })?;
    let weighted = weighted_auc(v.require_y()?, v.require_d()?, w.as_slice(), ties)?;
    let om = om_weighted(v, fit, w)?;
    Ok(Augmented::combine(weighted, om, om_rwd(rwd, fit)?))
}

/// Augmented calibration weighting: CW − OM(CW weights) + OM+RWD.
pub fn acw(combined: &CombinedData, cal: &CalibrationSolution, fit: &OutcomeModelFit, ties: Ties) -> Result<Augmented> {
    augmented(combined, &cal.q_weights, fit, ties)
}

/// Augmented IPSW: IPSW − OM(IPSW weights) + OM+RWD.
pub fn aipsw(combined: &CombinedData, sfit: &SamplingFit, fit: &OutcomeModelFit, ties: Ties) -> Result<Augmented> {
    let w = ipsw_weights(sfit, &combined.validation)?;
    augmented(combined, &w, fit, ties)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_and_ties() {
        let r = weighted_auc(&[2.0, 3.0, 1.0], &[1, 1, 0], &[1.0; 3], Ties::Strict).unwrap();
        assert_eq!(r.value, 1.0);
        let r = weighted_auc(&[1.0, 1.0], &[1, 0], &[1.0; 2], Ties::Strict).unwrap();
        assert_eq!(r.value, 0.0);
        let r = weighted_auc(&[1.0, 1.0], &[1, 0], &[1.0; 2], Ties::Half).unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn worked_example() {
        let r = weighted_auc(
            &[3.0, 1.0, 2.0, 2.0],
            &[1, 0, 1, 0],
            &[1.0, 1.0, 2.0, 3.0],
            Ties::Strict,
        )
        .unwrap();
        assert_eq!((r.numerator, r.denominator, r.value), (6.0, 12.0, 0.5));
        assert_eq!(r.effective_pairs, 4);
    }

    #[test]
    fn no_pairs() {
        let r = weighted_auc(&[1.0, 2.0], &[1, 0], &[1.0, 0.0], Ties::Strict);
        assert_eq!(r.unwrap_err(), Error::NoPairs);
        let r = weighted_auc(&[1.0, 2.0], &[1, 1], &[1.0, 1.0], Ties::Strict);
        assert_eq!(r.unwrap_err(), Error::NoPairs);
    }

    #[test]
    fn om_single_pair() {
        let r = om_from_means(&[1.0], &[1.0], &[0.0], &[1.0], 1.0).unwrap();
        assert!((r.value - 0.841_344_746_068_542_9).abs() < 1e-12);
        let r = om_from_means(&[0.3, 0.7], &[1.0, 5.0], &[0.3, 0.7], &[2.0, 0.1], 1.0);
        assert!(r.is_ok());
        let r = om_from_means(&[0.5, 0.5], &[1.0, 5.0], &[0.5], &[2.0], 1.0).unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn augmented_arithmetic() {
        let p = |v: f64| PointEstimate {
            value: v,
            numerator: v,
            denominator: 1.0,
            effective_pairs: 1,
        };
        let a = Augmented::combine(p(0.80), p(0.78), p(0.79));
        assert!((a.value - 0.81).abs() < 1e-12);
        let a = Augmented::combine(p(0.79), p(0.80), p(0.82));
        assert!((a.value - 0.81).abs() < 1e-12);
        let a = Augmented::combine(p(0.99), p(0.2), p(0.9));
        assert!(a.value > 1.0 && a.clamped == 1.0);
    }
}
