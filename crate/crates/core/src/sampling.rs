//! Logistic sampling-score model and inverse-probability weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::entropy::WeightVector;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{column_moments, solve_spd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Stop once the deviance changes by less than this.
    pub deviance_tol: f64,
    /// Stop once the max-norm of the mean score falls below this.
    pub gradient_tol: f64,
    /// Bound on `‖α‖∞` over standardized columns; larger means separation.
    pub separation_cap: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            deviance_tol: 1e-10,
            gradient_tol: 1e-8,
            separation_cap: 30.0,
        }
    }
}

/// Maximum-likelihood logistic coefficients on the original column scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub alpha: Vec<f64>,
    pub converged: bool,
    pub deviance: f64,
    pub iterations: usize,
}

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn deviance(eta: &[f64], s: &[u8]) -> f64 {
    let mut acc = crate::sum::Neumaier::new();
    for (&e, &si) in eta.iter().zip(s) {
        acc.add(softplus(e) - f64::from(si) * e);
    }
    2.0 * acc.total()
}

/// IRLS for a row-major `n × k` design whose first column is the intercept.
///
/// Non-intercept columns are standardized internally; coefficients are
/// reported on the original scale.
pub fn fit_logistic(design: &[f64], k: usize, s: &[u8], opts: &LogisticOptions) -> Result<LogisticFit> {
    if k == 0 || design.len() != s.len() * k {
        return Err(Error::DimensionMismatch {
            expected: s.len() * k,
            actual: design.len(),
        });
    }
    let n = s.len();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    if s.iter().all(|&v| v == s[0]) {
        return Err(Error::DegenerateResponse(s[0]));
    }
    if design.chunks_exact(k).any(|r| r[0] != 1.0) {
        return Err(Error::InvalidArgument(
            "first design column must be the intercept".into(),
        ));
    }

    let (mean, sd) = column_moments(design, k);
    if (1..k).any(|c| sd[c] == 0.0) {
        return Err(Error::SingularDesign);
    }
    let mut z = DMatrix::zeros(n, k);
    for (i, row) in design.chunks_exact(k).enumerate() {
        z[(i, 0)] = 1.0;
        for c in 1..k {
            z[(i, c)] = (row[c] - mean[c]) / sd[c];
        }
    }
    let sv = DVector::from_iterator(n, s.iter().map(|&v| f64::from(v)));

    let mut beta = DVector::zeros(k);
    let mut eta = vec![0.0; n];
    let mut dev = deviance(&eta, s);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter + 1 {
        iterations += 1;
        let p = DVector::from_iterator(n, eta.iter().map(|&e| logistic(e)));
        let grad = z.transpose() * (&sv - &p) / n as f64;
        let grad_max = grad.amax();

        let mut zw = z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= p[i] * (1.0 - p[i]);
        }
        let h = z.transpose() * zw / n as f64;
        let step = solve_spd(&h, &grad, 0.0).ok_or(Error::SingularDesign)?;

        let mut t = 1.0;
        let (next_beta, next_eta, next_dev) = loop {
            let b = &beta + &step * t;
            let e: Vec<f64> = (&z * &b).iter().copied().collect();
            let d = deviance(&e, s);
            if d <= dev + 1e-12 * dev.abs() || t < 1e-10 {
                break (b, e, d);
            }
            t *= 0.5;
        };
        let change = (dev - next_dev).abs();
        beta = next_beta;
        eta = next_eta;
        dev = next_dev;

        if beta.amax() > opts.separation_cap || dev < 1e-6 {
            return Err(Error::SeparationDetected);
        }
        if converged {
            break;
        }
        // one more full step once the criterion is met, so the reported
        // coefficients carry Newton's quadratic accuracy
        converged = change < opts.deviance_tol || grad_max < opts.gradient_tol;
    }
    if !converged {
        return Err(Error::MaxIterations {
            solver: "logistic IRLS",
            iterations,
        });
    }

    let mut alpha = vec![0.0; k];
    alpha[0] = beta[0];
    for c in 1..k {
        alpha[c] = beta[c] / sd[c];
        alpha[0] -= alpha[c] * mean[c];
    }
    Ok(LogisticFit {
        alpha,
        converged,
        deviance: dev,
        iterations,
    })
}

/// Fitted `Pr(S = 1 | X)` with the feature map used as its design basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingFit {
    /// Intercept followed by one coefficient per feature.
    pub alpha: Vec<f64>,
    pub converged: bool,
    pub deviance: f64,
    pub feature_map: FeatureMap,
}

impl SamplingFit {
    /// Linear predictor `α₀ + αᵀ g(x)`.
    pub fn linear_predictor(&self, x_row: &[f64]) -> Result<f64> {
        let g = self.feature_map.apply(x_row)?;
        Ok(self.alpha[0] + g.iter().zip(&self.alpha[1..]).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Sampling score `π(x)`.
    pub fn score(&self, x_row: &[f64]) -> Result<f64> {
        self.linear_predictor(x_row).map(logistic)
    }
}

/// Appends the intercept-augmented design `[1, g(x)]` of a cohort.
fn design_rows(map: &FeatureMap, cohort: &Cohort, out: &mut Vec<f64>) -> Result<()> {
    let g = map.matrix(cohort)?;
    let q = map.q();
    for i in 0..cohort.n() {
        out.push(1.0);
        out.extend_from_slice(&g[i * q..(i + 1) * q]);
    }
    Ok(())
}

/// Fits the sampling model on validation rows (`S = 1`) stacked over the
/// RWD rows (`S = 0`).
pub fn fit_sampling(
    validation: &Cohort,
    rwd: &Cohort,
    map: &FeatureMap,
    opts: &LogisticOptions,
) -> Result<SamplingFit> {
    crate::cohort::check_compatibility(validation, rwd)?;
    let k = map.q() + 1;
    let mut design = Vec::with_capacity((validation.n() + rwd.n()) * k);
    design_rows(map, validation, &mut design)?;
    design_rows(map, rwd, &mut design)?;
    let mut s = vec![1u8; validation.n()];
    s.resize(validation.n() + rwd.n(), 0);
    let fit = fit_logistic(&design, k, &s, opts)?;
    Ok(SamplingFit {
        alpha: fit.alpha,
        converged: fit.converged,
        deviance: fit.deviance,
        feature_map: map.clone(),
    })
}

/// Per-subject inverse sampling scores `1/π(xᵢ)`, unnormalized.
pub fn ipsw_weights(fit: &SamplingFit, validation: &Cohort) -> Result<WeightVector> {
    let mut w = Vec::with_capacity(validation.n());
    for (i, row) in validation.rows().enumerate() {
        // 1/π = 1 + e^{-η}, exact for the logistic link
        let v = 1.0 + (-fit.linear_predictor(row)?).exp();
        if !v.is_finite() {
            return Err(Error::NonFiniteWeight(i));
        }
        w.push(v);
    }
    WeightVector::new(w)
}

/// Sample quantile with linear interpolation between order statistics
/// (`sorted` ascending, `pct` in `[0, 100]`).
pub fn quantile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let mut h = (n - 1) as f64 * pct / 100.0;
    if (h - h.round()).abs() < 1e-9 {
        h = h.round();
    }
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let f = h - lo as f64;
    if f == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + f * (sorted[lo + 1] - sorted[lo])
    }
}

/// Clamps weights to their `[lower_pct, upper_pct]` sample quantiles, then
/// rescales them to sum to one.
pub fn truncate_normalize(w: &WeightVector, lower_pct: f64, upper_pct: f64) -> Result<WeightVector> {
    if !(0.0..=100.0).contains(&lower_pct) || !(0.0..=100.0).contains(&upper_pct) || lower_pct >= upper_pct {
        return Err(Error::InvalidArgument(format!(
            "truncation percentiles must satisfy 0 <= lower < upper <= 100, got {lower_pct} and {upper_pct}"
        )));
    }
    if w.is_empty() {
        return Ok(w.clone());
    }
    let mut sorted = w.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile(&sorted, lower_pct);
    let hi = quantile(&sorted, upper_pct);
    let clamped = w.as_slice().iter().map(|v| v.clamp(lo, hi)).collect();
    Ok(WeightVector::new(clamped)?.normalize())
}
