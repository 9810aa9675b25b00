//! Monte-Carlo laboratory for covariate-shifted AUC estimation.
//!
//! The data-generating process has three covariates
//! `X₁ ~ N(1, 0.5²)`, `X₂ ~ N(−1, 0.5²)`, `X₃ ~ U(0, 1)`, a logistic
//! response model, a biomarker that depends on covariates and response,
//! and a logistic sampling model that selects the validation cohort from a
//! finite population. Each replication draws a fresh population, selects a
//! validation cohort from it, draws an independent RWD sample, and runs the
//! estimator grid under every requested model-specification cell.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auc::weighted_auc;
use crate::auc::Ties;
use crate::cohort::{Cohort, Role};
use crate::error::{Error, Result};
use crate::estimate::{EstimationData, EstimatorKind, EstimatorOptions, EstimatorTag, Session};
use crate::features::{FeatureMap, Term};
use crate::inference::{resample_values, summarize, CiKind};
use crate::outcome::OutcomeBasis;
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampling::logistic;

/// Parameters of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// `logit Pr(D=1) = c₀ + c₁X₁ + c₂X₂ + c₃X₂X₃ + c₄X₃²`
    pub response_coeffs: [f64; 5],
    /// `Y = b₀ + b₁X₁ + b₂X₃ + b₃X₂X₃ + b₄X₂² + b₅D + b₆DX₁² + b₇DX₁X₃ + ε`
    pub outcome_coeffs: [f64; 8],
    /// `logit Pr(S=1|X) = α₀ + α₁X₁² + α₂X₂² + α₃X₁X₃`
    pub sampling_alpha: [f64; 4],
    pub noise_sd: f64,
    pub n_pop: usize,
    pub n_val: usize,
    pub m_rwd: usize,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            response_coeffs: [0.2, -0.25, -0.15, 0.25, 0.3],
            outcome_coeffs: [0.2, -0.15, 0.2, 0.1, -0.1, 0.15, 0.4, 0.2],
            sampling_alpha: Shift::None.alpha(),
            noise_sd: 0.5,
            n_pop: 50_000,
            n_val: 800,
            m_rwd: 8_000,
        }
    }
}

pub const COLUMNS: [&str; 3] = ["x1", "x2", "x3"];

fn column_names() -> Vec<String> {
    COLUMNS.iter().map(|s| s.to_string()).collect()
}

impl DgpSpec {
    pub fn with_shift(shift: Shift) -> Self {
        Self {
            sampling_alpha: shift.alpha(),
            ..Self::default()
        }
    }

    fn draw_x<R: Rng>(rng: &mut R) -> [f64; 3] {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        [1.0 + 0.5 * z1, -1.0 + 0.5 * z2, rng.random::<f64>()]
    }

    pub fn response_prob(&self, x: &[f64]) -> f64 {
        let c = &self.response_coeffs;
        logistic(c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[1] * x[2] + c[4] * x[2] * x[2])
    }

    /// Mean biomarker given covariates and response.
    pub fn outcome_mean(&self, x: &[f64], d: u8) -> f64 {
        let b = &self.outcome_coeffs;
        let dd = f64::from(d);
        b[0] + b[1] * x[0]
            + b[2] * x[2]
            + b[3] * x[1] * x[2]
            + b[4] * x[1] * x[1]
            + dd * (b[5] + b[6] * x[0] * x[0] + b[7] * x[0] * x[2])
    }

    pub fn sampling_prob(&self, x: &[f64]) -> f64 {
        let a = &self.sampling_alpha;
        logistic(a[0] + a[1] * x[0] * x[0] + a[2] * x[1] * x[1] + a[3] * x[0] * x[2])
    }

    fn draw_row<R: Rng>(&self, rng: &mut R) -> ([f64; 3], u8, f64) {
        let x = Self::draw_x(rng);
        let d = u8::from(rng.random::<f64>() < self.response_prob(&x));
        let eps: f64 = rng.sample(StandardNormal);
        (x, d, self.outcome_mean(&x, d) + self.noise_sd * eps)
    }
}

/// `size` iid subjects with covariates, response and biomarker.
pub fn generate_population<R: Rng>(spec: &DgpSpec, size: usize, rng: &mut R) -> Cohort {
    let mut x = Vec::with_capacity(3 * size);
    let mut y = Vec::with_capacity(size);
    let mut d = Vec::with_capacity(size);
    for _ in 0..size {
        let (xi, di, yi) = spec.draw_row(rng);
        x.extend_from_slice(&xi);
        d.push(di);
        y.push(yi);
    }
    Cohort::unchecked(column_names(), x, Some(y), Some(d), Role::Validation)
}

/// Reference sample of covariates and responses (biomarker dropped).
pub fn generate_rwd<R: Rng>(spec: &DgpSpec, size: usize, rng: &mut R) -> Cohort {
    let pop = generate_population(spec, size, rng);
    Cohort::unchecked(
        column_names(),
        pop.x().to_vec(),
        None,
        pop.d().map(<[u8]>::to_vec),
        Role::Rwd,
    )
}

/// Population AUC with an approximate 95% Monte-Carlo half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau0 {
    pub value: f64,
    pub half_width: f64,
}

/// Naive AUC on a large draw from the target population.
pub fn true_tau0<R: Rng>(spec: &DgpSpec, oracle_size: usize, rng: &mut R) -> Tau0 {
    let mut y = Vec::with_capacity(oracle_size);
    let mut d = Vec::with_capacity(oracle_size);
    for _ in 0..oracle_size {
        let (_, di, yi) = spec.draw_row(rng);
        y.push(yi);
        d.push(di);
    }
    let value = weighted_auc(&y, &d, &vec![1.0; y.len()], Ties::Strict)
        .map(|p| p.value)
        .unwrap_or(f64::NAN);
    // Hanley-McNeil variance of the Mann-Whitney statistic
    let n1 = d.iter().filter(|&&v| v == 1).count() as f64;
    let n0 = oracle_size as f64 - n1;
    let a = value;
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let var = (a * (1.0 - a) + (n1 - 1.0) * (q1 - a * a) + (n0 - 1.0) * (q2 - a * a)) / (n1 * n0);
    Tau0 {
        value,
        half_width: 1.96 * var.max(0.0).sqrt(),
    }
}

/// Exactly `n_val` rows drawn without replacement with probability
/// proportional to `π(X)`, returned in population order.
pub fn select_validation<R: Rng>(population: &Cohort, alpha: &[f64; 4], n_val: usize, rng: &mut R) -> Result<Cohort> {
    let n = population.n();
    if n_val > n {
        return Err(Error::InvalidArgument(format!(
            "cannot select {n_val} rows from a population of {n}"
        )));
    }
    let spec = DgpSpec {
        sampling_alpha: *alpha,
        ..DgpSpec::default()
    };
    let mut idx = if n_val == n {
        (0..n).collect()
    } else {
        rand::seq::index::sample_weighted(rng, n, |i| spec.sampling_prob(population.row(i)), n_val)
            .map_err(|e| Error::NumericalBreakdown(format!("weighted selection: {e}")))?
            .into_vec()
    };
    idx.sort_unstable();
    Ok(population.select_rows(&idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    None,
    Moderate,
    Severe,
}

impl Shift {
    pub fn alpha(self) -> [f64; 4] {
        match self {
            Shift::None => [0.15, 0.0, 0.0, 0.0],
            Shift::Moderate => [0.15, 0.30, -0.10, 0.10],
            Shift::Severe => [0.15, 0.45, -0.25, 0.20],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Shift::None => "none",
            Shift::Moderate => "moderate",
            Shift::Severe => "severe",
        }
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shift {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Shift::None),
            "moderate" => Ok(Shift::Moderate),
            "severe" => Ok(Shift::Severe),
            _ => Err(Error::InvalidArgument(format!(
                "unknown shift `{s}` (expected none, moderate or severe)"
            ))),
        }
    }
}

/// Which of the sampling and outcome models are correctly specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecCell {
    BothCorrect,
    SmCorrectOmWrong,
    SmWrongOmCorrect,
    BothWrong,
}

impl SpecCell {
    pub const ALL: [SpecCell; 4] = [
        SpecCell::BothCorrect,
        SpecCell::SmCorrectOmWrong,
        SpecCell::SmWrongOmCorrect,
        SpecCell::BothWrong,
    ];

    pub fn sampling_correct(self) -> bool {
        matches!(self, SpecCell::BothCorrect | SpecCell::SmCorrectOmWrong)
    }

    pub fn outcome_correct(self) -> bool {
        matches!(self, SpecCell::BothCorrect | SpecCell::SmWrongOmCorrect)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpecCell::BothCorrect => "both_correct",
            SpecCell::SmCorrectOmWrong => "sm_correct_om_wrong",
            SpecCell::SmWrongOmCorrect => "sm_wrong_om_correct",
            SpecCell::BothWrong => "both_wrong",
        }
    }
}

impl fmt::Display for SpecCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpecCell {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SpecCell::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown specification cell `{s}`")))
    }
}

/// Form of the misspecified ("wrong") sampling and outcome models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspecification {
    /// Main effects of `X₂` and `X₃`; `X₁` is omitted.
    #[default]
    OmitX1,
    /// Main effects of all three covariates.
    MainEffects,
}

impl Misspecification {
    pub fn as_str(self) -> &'static str {
        match self {
            Misspecification::OmitX1 => "omit_x1",
            Misspecification::MainEffects => "main_effects",
        }
    }

    fn terms(self) -> Vec<Term> {
        match self {
            Misspecification::OmitX1 => vec![Term::Main(1), Term::Main(2)],
            Misspecification::MainEffects => (0..3).map(Term::Main).collect(),
        }
    }
}

impl fmt::Display for Misspecification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Misspecification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omit_x1" => Ok(Misspecification::OmitX1),
            "main_effects" => Ok(Misspecification::MainEffects),
            _ => Err(Error::InvalidArgument(format!(
                "unknown misspecification `{s}` (expected omit_x1 or main_effects)"
            ))),
        }
    }
}

/// Sampling-model basis: the generating terms when correct.
pub fn sampling_basis(correct: bool, wrong: Misspecification) -> FeatureMap {
    let terms = if correct {
        vec![Term::Square(0), Term::Square(1), Term::Interaction(0, 2)]
    } else {
        wrong.terms()
    };
    FeatureMap::custom(3, terms).expect("indices in range")
}

/// Outcome-model basis: the generating terms of each response group when
/// correct.
pub fn outcome_basis(correct: bool, wrong: Misspecification) -> OutcomeBasis {
    if correct {
        let d0 = vec![Term::Main(0), Term::Main(2), Term::Interaction(1, 2), Term::Square(1)];
        let mut d1 = d0.clone();
        d1.extend([Term::Square(0), Term::Interaction(0, 2)]);
        OutcomeBasis::new(3, d1, d0).expect("indices in range")
    } else {
        OutcomeBasis::shared(3, wrong.terms()).expect("indices in range")
    }
}

/// The ten columns of the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimEstimator {
    Naive,
    Ipsw,
    CwG1,
    CwG2,
    OmG1,
    OmG2,
    OmRwd,
    Aipsw,
    AcwG1,
    AcwG2,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 10] = [
        SimEstimator::Naive,
        SimEstimator::Ipsw,
        SimEstimator::CwG1,
        SimEstimator::CwG2,
        SimEstimator::OmG1,
        SimEstimator::OmG2,
        SimEstimator::OmRwd,
        SimEstimator::Aipsw,
        SimEstimator::AcwG1,
        SimEstimator::AcwG2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SimEstimator::Naive => "Naive",
            SimEstimator::Ipsw => "IPSW",
            SimEstimator::CwG1 => "CW(g1)",
            SimEstimator::CwG2 => "CW(g2)",
            SimEstimator::OmG1 => "OM(g1)",
            SimEstimator::OmG2 => "OM(g2)",
            SimEstimator::OmRwd => "OM+RWD",
            SimEstimator::Aipsw => "AIPSW",
            SimEstimator::AcwG1 => "ACW(g1)",
            SimEstimator::AcwG2 => "ACW(g2)",
        }
    }

    pub fn tag(self) -> EstimatorTag {
        match self {
            SimEstimator::Naive => EstimatorTag::Naive,
            SimEstimator::Ipsw => EstimatorTag::Ipsw,
            SimEstimator::CwG1 | SimEstimator::CwG2 => EstimatorTag::Cw,
            SimEstimator::OmG1 | SimEstimator::OmG2 => EstimatorTag::Om,
            SimEstimator::OmRwd => EstimatorTag::OmRwd,
            SimEstimator::Aipsw => EstimatorTag::Aipsw,
            SimEstimator::AcwG1 | SimEstimator::AcwG2 => EstimatorTag::Acw,
        }
    }

    fn uses_g2(self) -> bool {
        matches!(self, SimEstimator::CwG2 | SimEstimator::OmG2 | SimEstimator::AcwG2)
    }

    /// Estimator configuration under a specification cell.
    pub fn kind(self, cell: SpecCell, wrong: Misspecification) -> EstimatorKind {
        let mask = [true; 3];
        let calibration = if self.uses_g2() {
            FeatureMap::g2(&mask)
        } else {
            FeatureMap::g1(&mask)
        };
        let mut options = EstimatorOptions::new(calibration);
        options.sampling = sampling_basis(cell.sampling_correct(), wrong);
        options.outcome = outcome_basis(cell.outcome_correct(), wrong);
        EstimatorKind::new(self.tag(), options)
    }
}

impl FromStr for SimEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = |v: &str| v.to_ascii_lowercase().replace(['(', ')', '+', '_', '-'], "");
        SimEstimator::ALL
            .into_iter()
            .find(|e| norm(e.label()) == norm(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown simulation estimator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub dgp: DgpSpec,
    pub shift: Shift,
    pub cells: Vec<SpecCell>,
    pub estimators: Vec<SimEstimator>,
    pub misspecification: Misspecification,
    pub n_reps: usize,
    /// Bootstrap resamples per replication; 0 skips interval estimation.
    pub n_boot: usize,
    pub seed: u64,
    pub oracle_size: usize,
}

impl ScenarioSpec {
    pub fn new(shift: Shift, n_reps: usize, n_boot: usize, seed: u64) -> Self {
        Self {
            dgp: DgpSpec::with_shift(shift),
            shift,
            cells: vec![SpecCell::BothCorrect],
            estimators: SimEstimator::ALL.to_vec(),
            misspecification: Misspecification::default(),
            n_reps,
            n_boot,
            seed,
            oracle_size: 2_000_000,
        }
    }
}

/// Validation cohort and RWD of replication `rep`.
pub fn replicate_data(dgp: &DgpSpec, seed: u64, rep: u64) -> Result<(Cohort, Cohort)> {
    let pop = generate_population(dgp, dgp.n_pop, &mut stream(seed, rep, Purpose::Population));
    let validation = select_validation(
        &pop,
        &dgp.sampling_alpha,
        dgp.n_val,
        &mut stream(seed, rep, Purpose::Selection),
    )?;
    let rwd = generate_rwd(dgp, dgp.m_rwd, &mut stream(seed, rep, Purpose::Rwd));
    Ok((validation, rwd))
}

/// One estimator in one cell of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub cell: SpecCell,
    pub estimator: SimEstimator,
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_boot_failed: usize,
    pub error: Option<String>,
}

/// Monte-Carlo summary of one estimator in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: SpecCell,
    pub estimator: SimEstimator,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub bias: f64,
    /// `100 · (mean − τ₀) / τ₀`.
    pub relative_bias_pct: f64,
    /// Mean bias over the Monte-Carlo standard deviation.
    pub bias_over_se: f64,
    pub mc_sd: f64,
    pub rmse: f64,
    /// Fraction of bootstrap intervals containing `τ₀`.
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
    /// Replications whose bootstrap lost more than 5% of resamples.
    pub n_unreliable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub tau0: Tau0,
    pub metrics: Vec<MetricsRow>,
    pub reps: Vec<RepRecord>,
}

impl ScenarioResult {
    pub fn row(&self, cell: SpecCell, est: SimEstimator) -> Option<&MetricsRow> {
        self.metrics.iter().find(|m| m.cell == cell && m.estimator == est)
    }
}

fn run_rep(spec: &ScenarioSpec, grid: &[(SpecCell, SimEstimator, EstimatorKind)], rep: usize) -> Vec<RepRecord> {
    let blank = |cell, estimator, error: String| RepRecord {
        rep,
        cell,
        estimator,
        value: None,
        se: None,
        ci_low: None,
        ci_high: None,
        n_boot_failed: 0,
        error: Some(error),
    };
    let data = replicate_data(&spec.dgp, spec.seed, rep as u64).and_then(|(v, r)| EstimationData::new(v)?.with_rwd(r));
    let data = match data {
        Ok(d) => d,
        Err(e) => return grid.iter().map(|(c, s, _)| blank(*c, *s, e.to_string())).collect(),
    };
    let session = Session::new(&data);
    let points: Vec<Result<f64>> = grid
        .iter()
        .map(|(_, _, k)| session.estimate(k).map(|e| e.value))
        .collect();
    drop(session);

    let boot = if spec.n_boot > 0 {
        let kinds: Vec<EstimatorKind> = grid.iter().map(|(_, _, k)| k.clone()).collect();
        Some(resample_values(
            &kinds,
            &data,
            spec.n_boot,
            derive_seed(spec.seed, rep as u64),
        ))
    } else {
        None
    };

    grid.iter()
        .enumerate()
        .map(|(g, (cell, est, _))| match &points[g] {
            Err(e) => blank(*cell, *est, e.to_string()),
            Ok(v) => {
                let mut r = RepRecord {
                    rep,
                    cell: *cell,
                    estimator: *est,
                    value: Some(*v),
                    se: None,
                    ci_low: None,
                    ci_high: None,
                    n_boot_failed: 0,
                    error: None,
                };
                if let Some(b) = &boot {
                    let iv = summarize(*v, &b[g], CiKind::Normal);
                    r.n_boot_failed = iv.n_failed;
                    if iv.se.is_finite() {
                        r.se = Some(iv.se);
                        r.ci_low = Some(iv.low);
                        r.ci_high = Some(iv.high);
                    }
                }
                r
            }
        })
        .collect()
}

fn metrics(spec: &ScenarioSpec, tau0: f64, cell: SpecCell, est: SimEstimator, reps: &[RepRecord]) -> MetricsRow {
    let recs: Vec<&RepRecord> = reps.iter().filter(|r| r.cell == cell && r.estimator == est).collect();
    let vals: Vec<f64> = recs.iter().filter_map(|r| r.value).collect();
    let n = vals.len() as f64;
    let mean = crate::sum::sum(&vals) / n;
    let var = crate::sum::sum_iter(vals.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    let mc_sd = var.sqrt();
    let bias = mean - tau0;
    let mse = crate::sum::sum_iter(vals.iter().map(|v| (v - tau0) * (v - tau0))) / n;
    let with_ci: Vec<&&RepRecord> = recs.iter().filter(|r| r.ci_low.is_some()).collect();
    let (coverage, mean_se) = if spec.n_boot > 0 && !with_ci.is_empty() {
        let covered = with_ci
            .iter()
            .filter(|r| r.ci_low.unwrap() <= tau0 && tau0 <= r.ci_high.unwrap())
            .count();
        let se = crate::sum::sum_iter(with_ci.iter().map(|r| r.se.unwrap()));
        (
            Some(covered as f64 / with_ci.len() as f64),
            Some(se / with_ci.len() as f64),
        )
    } else {
        (None, None)
    };
    MetricsRow {
        cell,
        estimator: est,
        n_ok: vals.len(),
        n_failed: recs.len() - vals.len(),
        mean,
        bias,
        relative_bias_pct: 100.0 * bias / tau0,
        bias_over_se: bias / mc_sd,
        mc_sd,
        rmse: mse.sqrt(),
        coverage,
        mean_se,
        n_unreliable: recs
            .iter()
            .filter(|r| r.n_boot_failed as f64 > 0.05 * spec.n_boot as f64)
            .count(),
    }
}

/// Runs every replication of a scenario and aggregates the metrics.
///
/// Replications run in parallel; every random draw comes from a stream
/// keyed by `(seed, replication, purpose)`, so the result is the same for
/// any thread count.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioResult> {
    if spec.n_reps == 0 || spec.cells.is_empty() || spec.estimators.is_empty() {
        return Err(Error::InvalidArgument(
            "scenario needs replications, cells and estimators".into(),
        ));
    }
    if spec.n_boot == 1 {
        return Err(Error::InvalidArgument(
            "at least 2 bootstrap resamples are required".into(),
        ));
    }
    let tau0 = true_tau0(&spec.dgp, spec.oracle_size, &mut stream(spec.seed, 0, Purpose::Oracle));
    let grid: Vec<(SpecCell, SimEstimator, EstimatorKind)> = spec
        .cells
        .iter()
        .flat_map(|&c| {
            spec.estimators
                .iter()
                .map(move |&e| (c, e, e.kind(c, spec.misspecification)))
        })
        .collect();
    let reps: Vec<RepRecord> = (0..spec.n_reps)
        .into_par_iter()
        .flat_map_iter(|rep| run_rep(spec, &grid, rep))
        .collect();
    let metrics = grid
        .iter()
        .map(|(c, e, _)| metrics(spec, tau0.value, *c, *e, &reps))
        .collect();
    Ok(ScenarioResult {
        spec: spec.clone(),
        tau0,
        metrics,
        reps,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-replication estimates as CSV.
pub fn write_replicates_csv<W: Write>(result: &ScenarioResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "rep",
        "cell",
        "estimator",
        "value",
        "se",
        "ci_low",
        "ci_high",
        "n_boot_failed",
        "error",
    ])
    .map_err(io)?;
    for r in &result.reps {
        w.write_record([
            r.rep.to_string(),
            r.cell.to_string(),
            r.estimator.label().to_string(),
            opt(r.value),
            opt(r.se),
            opt(r.ci_low),
            opt(r.ci_high),
            r.n_boot_failed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(Error::from)
}

/// Metrics table without the per-replication records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub shift: Shift,
    pub alpha: [f64; 4],
    pub n_reps: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub tau0: Tau0,
    pub metrics: Vec<MetricsRow>,
}

impl From<&ScenarioResult> for MetricsReport {
    fn from(r: &ScenarioResult) -> Self {
        Self {
            shift: r.spec.shift,
            alpha: r.spec.dgp.sampling_alpha,
            n_reps: r.spec.n_reps,
            n_boot: r.spec.n_boot,
            seed: r.spec.seed,
            tau0: r.tau0,
            metrics: r.metrics.clone(),
        }
    }
}

/// Plain-text table with one block per specification cell.
pub fn format_table(result: &ScenarioResult) -> String {
    let a = result.spec.dgp.sampling_alpha;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "shift: {}  alpha = ({}, {}, {}, {})  tau0 = {:.4} (+/- {:.4})  reps = {}  boot = {}",
        result.spec.shift,
        a[0],
        a[1],
        a[2],
        a[3],
        result.tau0.value,
        result.tau0.half_width,
        result.spec.n_reps,
        result.spec.n_boot
    );
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    for &cell in &result.spec.cells {
        let _ = writeln!(s, "\n[{cell}]");
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>12} {:>9} {:>8} {:>8} {:>6}",
            "estimator", "mean", "rel.bias(%)", "bias/SE", "RMSE", "CP", "fail"
        );
        for m in result.metrics.iter().filter(|m| m.cell == cell) {
            let _ = writeln!(
                s,
                "{:<10} {:>8.4} {:>12.3} {:>9.3} {:>8.3} {:>8} {:>6}",
                m.estimator.label(),
                m.mean,
                m.relative_bias_pct,
                m.bias_over_se,
                m.rmse,
                fmt_opt(m.coverage),
                m.n_failed
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariate_means() {
        let pop = generate_population(&DgpSpec::default(), 50_000, &mut stream(3, 0, Purpose::Fixture));
        let m1 = pop.rows().map(|r| r[0]).sum::<f64>() / 50_000.0;
        assert!((m1 - 1.0).abs() < 4.0 * 0.5 / 50_000f64.sqrt());
    }

    #[test]
    fn full_selection_is_identity() {
        let pop = generate_population(&DgpSpec::default(), 50, &mut stream(3, 0, Purpose::Fixture));
        let v = select_validation(&pop, &Shift::Severe.alpha(), 50, &mut stream(3, 1, Purpose::Fixture)).unwrap();
        assert_eq!(v, pop);
    }

    #[test]
    fn labels_parse() {
        for e in SimEstimator::ALL {
            assert_eq!(e.label().parse::<SimEstimator>().unwrap(), e);
        }
        assert!("moderate".parse::<Shift>().is_ok());
        assert!("mild".parse::<Shift>().is_err());
    }
}
