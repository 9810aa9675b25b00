//! Entropy-balancing calibration weights.
//!
//! Finds weights `q` on the validation cohort that minimise `Σ q log q`
//! subject to `q ≥ 0`, `Σ q = 1` and `Σ q g(x) = g̃`. The minimiser has the
//! closed form `q ∝ exp(λᵀ g(x))`, with `λ` the minimiser of the convex dual
//!
//! ```text
//! φ(λ) = log Σ_i exp(λᵀ (g_i − g̃))
//! ```
//!
//! whose gradient is the weighted moment residual and whose Hessian is the
//! weighted feature covariance. [`solve`] runs damped Newton on `φ` over
//! standardized features, evaluating `φ` with max-subtraction so that large
//! multipliers do not overflow.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::features::TargetMoments;
use crate::linalg::{column_moments, solve_spd};
use crate::sum::Neumaier;

/// Per-subject weights, nonnegative and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    w: Vec<f64>,
    normalized: bool,
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFiniteWeight(i));
        }
        Ok(Self { w, normalized: false })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            w: vec![1.0 / n as f64; n],
            normalized: true,
        }
    }

    /// Weights already known to sum to one.
    pub(crate) fn normalized_unchecked(w: Vec<f64>) -> Self {
        Self { w, normalized: true }
    }

    /// Rescaled to sum to one.
    pub fn normalize(&self) -> Self {
        let total: f64 = crate::sum::sum(&self.w);
        Self {
            w: self.w.iter().map(|v| v / total).collect(),
            normalized: true,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }
}

/// Pairwise weight `w_i · w_j` for `i ≠ j`.
pub fn pair_weight(w: &WeightVector, i: usize, j: usize) -> Result<f64> {
    if i == j || i >= w.len() || j >= w.len() {
        return Err(Error::IndexOutOfRange(i, j));
    }
    Ok(w.w[i] * w.w[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Max-norm tolerance on the moment residual, in original feature units.
    pub tol: f64,
    pub max_iter: usize,
    /// Bound on `‖λ‖∞` over standardized features; exceeding it means the
    /// target is (numerically) outside the convex hull of the features.
    pub lambda_cap: f64,
    pub standardize: bool,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Relative ridge applied when the Hessian will not factor.
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            lambda_cap: 50.0,
            standardize: true,
            armijo: 1e-4,
            ridge: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    /// Dual multipliers on the original feature scale.
    pub lambda: Vec<f64>,
    pub q_weights: WeightVector,
    /// `‖Σ q_i g_i − g̃‖∞` at the returned weights.
    pub residual: f64,
    pub iterations: usize,
    /// Dual objective at every accepted iterate (starting point included).
    pub objective_trace: Vec<f64>,
}

struct Dual {
    objective: f64,
    q: Vec<f64>,
}

/// `φ(μ)` and the softmax weights at `μ`, over the standardized features `z`.
fn evaluate(z: &[f64], k: usize, mu: &[f64]) -> Dual {
    let eta: Vec<f64> = z
        .chunks_exact(k)
        .map(|zi| zi.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = crate::sum::sum(&e);
    Dual {
        objective: m + s.ln(),
        q: e.into_iter().map(|v| v / s).collect(),
    }
}

fn gradient(z: &[f64], k: usize, q: &[f64]) -> Vec<f64> {
    let mut acc = vec![Neumaier::new(); k];
    for (zi, &qi) in z.chunks_exact(k).zip(q) {
        for (a, v) in acc.iter_mut().zip(zi) {
            a.add(qi * v);
        }
    }
    acc.iter().map(Neumaier::total).collect()
}

fn hessian(z: &[f64], k: usize, q: &[f64], grad: &[f64]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(k, k);
    for (zi, &qi) in z.chunks_exact(k).zip(q) {
        for a in 0..k {
            let za = qi * zi[a];
            for b in 0..=a {
                h[(a, b)] += za * zi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..=a {
            let v = h[(a, b)] - grad[a] * grad[b];
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Entropy-balancing weights for a row-major `n × q` feature matrix.
pub fn solve(g_matrix: &[f64], q: usize, g_tilde: &[f64], opts: &SolverOptions) -> Result<CalibrationSolution> {
    if q == 0 || g_tilde.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            actual: g_tilde.len(),
        });
    }
    if !g_matrix.len().is_multiple_of(q) || g_matrix.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: q,
            actual: g_matrix.len() % q,
        });
    }
    let n = g_matrix.len() / q;

    // A target outside the per-feature range can never be matched.
    for k in 0..q {
        let (lo, hi) = g_matrix
            .chunks_exact(q)
            .map(|r| r[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let slack = opts.tol.max(1e-12 * hi.abs().max(lo.abs()));
        if g_tilde[k] < lo - slack || g_tilde[k] > hi + slack {
            return Err(Error::InfeasibleTarget(f64::INFINITY));
        }
    }

    let (_, sd) = column_moments(g_matrix, q);
    // Constant columns carry no information once the range check passed.
    let active: Vec<usize> = (0..q).filter(|&k| sd[k] > 0.0).collect();
    let scale: Vec<f64> = active
        .iter()
        .map(|&k| if opts.standardize { sd[k] } else { 1.0 })
        .collect();
    let k = active.len();

    if k == 0 {
        return Ok(CalibrationSolution {
            lambda: vec![0.0; q],
            q_weights: WeightVector::uniform(n),
            residual: 0.0,
            iterations: 0,
            objective_trace: vec![(n as f64).ln()],
        });
    }

    let mut z = Vec::with_capacity(n * k);
    for row in g_matrix.chunks_exact(q) {
        for (&c, s) in active.iter().zip(&scale) {
            z.push((row[c] - g_tilde[c]) / s);
        }
    }

    let residual_of = |grad: &[f64]| grad.iter().zip(&scale).map(|(g, s)| (g * s).abs()).fold(0.0, f64::max);

    let mut mu = vec![0.0; k];
    let mut cur = evaluate(&z, k, &mu);
    let mut trace = vec![cur.objective];
    let mut iterations = 0;

    loop {
        let grad = gradient(&z, k, &cur.q);
        let residual = residual_of(&grad);
        if residual <= opts.tol {
            let lambda = {
                let mut l = vec![0.0; q];
                for ((&c, m), s) in active.iter().zip(&mu).zip(&scale) {
                    l[c] = m / s;
                }
                l
            };
            return Ok(CalibrationSolution {
                lambda,
                q_weights: WeightVector::normalized_unchecked(cur.q),
                residual,
                iterations,
                objective_trace: trace,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations {
                solver: "entropy balancing",
                iterations,
            });
        }

        let h = hessian(&z, k, &cur.q, &grad);
        let neg_grad = DVector::from_iterator(k, grad.iter().map(|g| -g));
        let step = solve_spd(&h, &neg_grad, opts.ridge)
            .ok_or_else(|| Error::NumericalBreakdown("calibration Hessian is singular after ridge fallback".into()))?;
        let slope: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();

        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = mu.iter().zip(step.iter()).map(|(m, s)| m + t * s).collect();
            let next = evaluate(&z, k, &trial);
            if next.objective.is_finite() && next.objective <= cur.objective + opts.armijo * t * slope {
                break Some((trial, next));
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        match accepted {
            Some((trial, next)) => {
                if norm(&trial) > opts.lambda_cap {
                    return Err(Error::InfeasibleTarget(norm(&trial)));
                }
                mu = trial;
                cur = next;
                trace.push(cur.objective);
            }
            None => {
                if norm(&mu) > 0.5 * opts.lambda_cap {
                    return Err(Error::InfeasibleTarget(norm(&mu)));
                }
                return Err(Error::NumericalBreakdown(format!(
                    "line search stalled with residual {residual:.3e}"
                )));
            }
        }
        iterations += 1;
    }
}

/// Calibrates a cohort to target moments using the moments' own feature map.
pub fn calibrate(cohort: &Cohort, target: &TargetMoments, opts: &SolverOptions) -> Result<CalibrationSolution> {
    let g = target.map.matrix(cohort)?;
    solve(&g, target.map.q(), &target.g_tilde, opts)
}
