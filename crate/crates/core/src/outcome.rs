//! Per-response-group linear outcome models and the normal pair kernel.
//!
//! Within each response group `d` the biomarker is regressed on a term
//! basis by least squares, `E[Y | X, D = d] = M(X, d; β_d)`, with residual
//! scale `σ̂_d² = RSS_d / (n_d − p_d)`. Under a Gaussian residual model the
//! probability that a responder at `x_i` outscores a non-responder at `x_j`
//! is `Φ((M(x_i, 1) − M(x_j, 0)) / √(σ̂₀² + σ̂₁²))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::features::Term;
use crate::linalg::column_moments;

/// Term lists for the two response groups; an intercept is always added.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutcomeBasis {
    pub p: usize,
    pub d1: Vec<Term>,
    pub d0: Vec<Term>,
}

impl OutcomeBasis {
    pub fn new(p: usize, d1: Vec<Term>, d0: Vec<Term>) -> Result<Self> {
        for t in d1.iter().chain(&d0) {
            let max = match *t {
                Term::Main(i) | Term::Square(i) => i,
                Term::Interaction(i, j) => i.max(j),
            };
            if max >= p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: max + 1,
                });
            }
        }
        Ok(Self { p, d1, d0 })
    }

    /// The same terms in both groups.
    pub fn shared(p: usize, terms: Vec<Term>) -> Result<Self> {
        Self::new(p, terms.clone(), terms)
    }

    /// Main effects of every covariate in both groups.
    pub fn main_effects(p: usize) -> Self {
        let t: Vec<Term> = (0..p).map(Term::Main).collect();
        Self {
            p,
            d1: t.clone(),
            d0: t,
        }
    }

    pub fn terms(&self, d: u8) -> &[Term] {
        if d == 1 {
            &self.d1
        } else {
            &self.d0
        }
    }
}

/// Least-squares fit of one response group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    /// Intercept followed by one coefficient per term.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    /// Parameter count, intercept included.
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelFit {
    pub beta_1: Vec<f64>,
    pub beta_0: Vec<f64>,
    pub sigma_1: f64,
    pub sigma_0: f64,
    pub basis: OutcomeBasis,
    pub n_1: usize,
    pub n_0: usize,
    pub p_1: usize,
    pub p_0: usize,
}

/// Ordinary least squares for a row-major `n × k` design whose first column
/// is the intercept. Non-intercept columns are centred and scaled before an
/// SVD solve; a numerically rank-deficient design is an error.
pub fn ols(design: &[f64], k: usize, y: &[f64], group: u8) -> Result<GroupFit> {
    let n = y.len();
    if design.len() != n * k {
        return Err(Error::DimensionMismatch {
            expected: n * k,
            actual: design.len(),
        });
    }
    if n <= k {
        return Err(Error::GroupTooSmall { group, n, p: k });
    }
    let (mean, sd) = column_moments(design, k);
    if (1..k).any(|c| sd[c] == 0.0) {
        return Err(Error::RankDeficientDesign { group });
    }
    let mut z = DMatrix::zeros(n, k);
    for (i, row) in design.chunks_exact(k).enumerate() {
        z[(i, 0)] = 1.0;
        for c in 1..k {
            z[(i, c)] = (row[c] - mean[c]) / sd[c];
        }
    }
    let yv = DVector::from_column_slice(y);
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax * (n as f64).sqrt();
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::RankDeficientDesign { group });
    }
    let b = svd
        .solve(&yv, 0.0)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))?;

    let resid = &yv - &z * &b;
    let rss: f64 = crate::sum::sum_iter(resid.iter().map(|r| r * r));
    let mut beta = vec![0.0; k];
    beta[0] = b[0];
    for c in 1..k {
        beta[c] = b[c] / sd[c];
        beta[0] -= beta[c] * mean[c];
    }
    Ok(GroupFit {
        beta,
        sigma: (rss / (n - k) as f64).sqrt(),
        n,
        p: k,
    })
}

fn design_for(terms: &[Term], rows: impl Iterator<Item = usize>, cohort: &Cohort) -> Vec<f64> {
    let mut out = Vec::new();
    for i in rows {
        let x = cohort.row(i);
        out.push(1.0);
        out.extend(terms.iter().map(|t| t.eval(x)));
    }
    out
}

/// Fits both group models on the validation cohort.
pub fn fit_outcome(validation: &Cohort, basis: &OutcomeBasis) -> Result<OutcomeModelFit> {
    if validation.p() != basis.p {
        return Err(Error::DimensionMismatch {
            expected: basis.p,
            actual: validation.p(),
        });
    }
    let y = validation.require_y()?;
    let d = validation.require_d()?;
    let group = |g: u8| -> Result<GroupFit> {
        let idx: Vec<usize> = (0..validation.n()).filter(|&i| d[i] == g).collect();
        let terms = basis.terms(g);
        let design = design_for(terms, idx.iter().copied(), validation);
        let yy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        ols(&design, terms.len() + 1, &yy, g)
    };
    let g1 = group(1)?;
    let g0 = group(0)?;
    Ok(OutcomeModelFit {
        beta_1: g1.beta,
        beta_0: g0.beta,
        sigma_1: g1.sigma,
        sigma_0: g0.sigma,
        basis: basis.clone(),
        n_1: g1.n,
        n_0: g0.n,
        p_1: g1.p,
        p_0: g0.p,
    })
}

impl OutcomeModelFit {
    /// `M(x, d; β̂_d)`.
    pub fn predict_mean(&self, x_row: &[f64], d: u8) -> Result<f64> {
        if x_row.len() != self.basis.p {
            return Err(Error::DimensionMismatch {
                expected: self.basis.p,
                actual: x_row.len(),
            });
        }
        let beta = if d == 1 { &self.beta_1 } else { &self.beta_0 };
        let terms = self.basis.terms(d);
        Ok(beta[0]
            + terms
                .iter()
                .zip(&beta[1..])
                .map(|(t, b)| b * t.eval(x_row))
                .sum::<f64>())
    }

    /// Predicted means of the rows of `cohort` whose response equals `d`,
    /// evaluated under the group-`d` model.
    pub fn group_means(&self, cohort: &Cohort, d: u8) -> Result<Vec<f64>> {
        let dd = cohort.require_d()?;
        cohort
            .rows()
            .zip(dd)
            .filter(|(_, &di)| di == d)
            .map(|(x, _)| self.predict_mean(x, d))
            .collect()
    }

    /// `√(σ̂₀² + σ̂₁²)`, the scale of the pairwise difference.
    pub fn pair_scale(&self) -> Result<f64> {
        let s = (self.sigma_0 * self.sigma_0 + self.sigma_1 * self.sigma_1).sqrt();
        if s > 0.0 && s.is_finite() {
            Ok(s)
        } else {
            Err(Error::DegenerateVariance)
        }
    }

    /// `Pr(Yᵢ > Yⱼ | xᵢ, xⱼ, Dᵢ = 1, Dⱼ = 0)` under the normal model.
    pub fn pair_prob(&self, x_i: &[f64], x_j: &[f64]) -> Result<f64> {
        let s = self.pair_scale()?;
        let delta = self.predict_mean(x_i, 1)? - self.predict_mean(x_j, 0)?;
        Ok(std_normal_cdf(delta / s))
    }
}

/// Standard normal distribution function.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}
