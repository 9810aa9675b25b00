//! Bootstrap standard errors and two-cohort benchmarking.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{check_compatibility, Cohort, Role};
use crate::error::{Error, Result};
use crate::estimate::{Estimate, EstimationData, EstimatorKind, Session};
use crate::rng::{stream2, Purpose};
use crate::sampling::quantile;

const Z975: f64 = 1.96;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    /// `point ± 1.96·se`.
    #[default]
    Normal,
    /// 2.5% and 97.5% quantiles of the resample estimates.
    Percentile,
}

impl FromStr for CiKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(CiKind::Normal),
            "percentile" => Ok(CiKind::Percentile),
            _ => Err(Error::InvalidArgument(format!("unknown CI kind `{s}`"))),
        }
    }
}

impl fmt::Display for CiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiKind::Normal => "normal",
            CiKind::Percentile => "percentile",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub seed: u64,
    pub ci: CiKind,
    /// Largest tolerated fraction of failed resamples.
    pub max_failure_rate: f64,
}

impl BootstrapOptions {
    pub fn new(n_boot: usize, seed: u64) -> Self {
        Self {
            n_boot,
            seed,
            ci: CiKind::Normal,
            max_failure_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci: CiKind,
    pub n_boot: usize,
    pub n_boot_failed: usize,
    pub seed: u64,
    /// More than the tolerated fraction of resamples failed.
    pub unreliable: bool,
    pub estimate: Estimate,
}

/// Spread of bootstrap values around a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub se: f64,
    pub low: f64,
    pub high: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Sample standard deviation and confidence limits from resample values
/// (`None` marks a failed resample).
pub fn summarize(point: f64, values: &[Option<f64>], ci: CiKind) -> Interval {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let n_failed = values.len() - ok.len();
    let se = if ok.len() >= 2 {
        let mean = crate::sum::sum(&ok) / ok.len() as f64;
        let ss = crate::sum::sum_iter(ok.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (ok.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let (low, high) = match ci {
        CiKind::Normal => (point - Z975 * se, point + Z975 * se),
        CiKind::Percentile if !ok.is_empty() => {
            let mut s = ok.clone();
            s.sort_by(f64::total_cmp);
            (quantile(&s, 2.5), quantile(&s, 97.5))
        }
        CiKind::Percentile => (f64::NAN, f64::NAN),
    };
    Interval {
        se,
        low,
        high,
        n_ok: ok.len(),
        n_failed,
    }
}

/// Estimates of every kind on each of `n_boot` resamples, indexed
/// `[kind][resample]`. Resamples run in parallel; the output does not
/// depend on the thread count.
pub fn resample_values(
    kinds: &[EstimatorKind],
    data: &EstimationData,
    n_boot: usize,
    seed: u64,
) -> Vec<Vec<Option<f64>>> {
    let per_resample: Vec<Vec<Option<f64>>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let boot = data.resample(seed, r);
            let session = Session::new(&boot);
            kinds
                .iter()
                .map(|k| session.estimate(k).ok().map(|e| e.value).filter(|v| v.is_finite()))
                .collect()
        })
        .collect();
    (0..kinds.len())
        .map(|k| per_resample.iter().map(|row| row[k]).collect())
        .collect()
}

fn report(est: Estimate, values: &[Option<f64>], opts: &BootstrapOptions) -> EstimateReport {
    let iv = summarize(est.value, values, opts.ci);
    EstimateReport {
        estimator: est.estimator.to_string(),
        point: est.value,
        se: iv.se,
        ci_low: iv.low,
        ci_high: iv.high,
        ci: opts.ci,
        n_boot: opts.n_boot,
        n_boot_failed: iv.n_failed,
        seed: opts.seed,
        unreliable: too_many(iv.n_failed, opts),
        estimate: est,
    }
}

fn too_many(failed: usize, opts: &BootstrapOptions) -> bool {
    failed as f64 > opts.max_failure_rate * opts.n_boot as f64
}

/// Point estimates and bootstrap reports for several estimators, sharing
/// each resample between them. A failed point estimate or too many failed
/// resamples gives an error for that estimator only.
pub fn bootstrap_all(
    kinds: &[EstimatorKind],
    data: &EstimationData,
    opts: &BootstrapOptions,
) -> Result<Vec<Result<EstimateReport>>> {
    if opts.n_boot < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 bootstrap resamples are required".into(),
        ));
    }
    let session = Session::new(data);
    let points: Vec<Result<Estimate>> = kinds.iter().map(|k| session.estimate(k)).collect();
    let live: Vec<EstimatorKind> = kinds
        .iter()
        .zip(&points)
        .filter(|(_, p)| p.is_ok())
        .map(|(k, _)| k.clone())
        .collect();
    let mut values = resample_values(&live, data, opts.n_boot, opts.seed).into_iter();
    Ok(points
        .into_iter()
        .map(|p| {
            let est = p?;
            let v = values.next().expect("one value series per live estimator");
            let rep = report(est, &v, opts);
            if rep.unreliable {
                return Err(Error::TooManyFailures {
                    failed: rep.n_boot_failed,
                    total: opts.n_boot,
                });
            }
            Ok(rep)
        })
        .collect())
}

/// Bootstrap report for one estimator.
pub fn bootstrap(kind: &EstimatorKind, data: &EstimationData, opts: &BootstrapOptions) -> Result<EstimateReport> {
    bootstrap_all(std::slice::from_ref(kind), data, opts)?.remove(0)
}

/// Target population for a two-cohort comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    CohortA,
    CohortB,
    /// Pooled rows of both cohorts.
    Mixture,
}

impl FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "cohort_a" => Ok(Benchmark::CohortA),
            "b" | "cohort_b" => Ok(Benchmark::CohortB),
            "mixture" => Ok(Benchmark::Mixture),
            _ => Err(Error::InvalidArgument(format!("unknown benchmark `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub benchmark: Benchmark,
    pub auc_a: EstimateReport,
    pub auc_b: EstimateReport,
    /// `auc_b − auc_a`.
    pub difference: Difference,
}

fn benchmark_data(a: &Cohort, b: &Cohort, benchmark: Benchmark) -> Result<(EstimationData, EstimationData)> {
    let target = match benchmark {
        Benchmark::CohortA => a.with_role(Role::Rwd)?,
        Benchmark::CohortB => b.with_role(Role::Rwd)?,
        Benchmark::Mixture => Cohort::pooled(a, b, Role::Rwd)?,
    };
    Ok((
        EstimationData::new(a.clone())?.with_rwd(target.clone())?,
        EstimationData::new(b.clone())?.with_rwd(target)?,
    ))
}

fn resample_cohort(c: &Cohort, seed: u64, r: u64, part: u64) -> Cohort {
    let mut rng = stream2(seed, r, part, Purpose::Bootstrap);
    let n = c.n();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    c.select_rows(&idx)
}

/// Benchmarks two cohorts' AUCs to a common target.
///
/// Each cohort plays the validation role in turn, with the target rows as
/// the reference sample. Bootstrap replicates resample both cohorts
/// jointly and rebuild the target from the resampled rows.
pub fn compare(
    a: &Cohort,
    b: &Cohort,
    benchmark: Benchmark,
    kind: &EstimatorKind,
    opts: &BootstrapOptions,
) -> Result<ComparisonReport> {
    check_compatibility(a, b)?;
    if opts.n_boot < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 bootstrap resamples are required".into(),
        ));
    }
    let (da, db) = benchmark_data(a, b, benchmark)?;
    let ea = Session::new(&da).estimate(kind)?;
    let eb = Session::new(&db).estimate(kind)?;

    let pairs: Vec<(Option<f64>, Option<f64>)> = (0..opts.n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let ra = resample_cohort(a, opts.seed, r, 0);
            let rb = resample_cohort(b, opts.seed, r, 1);
            let Ok((da, db)) = benchmark_data(&ra, &rb, benchmark) else {
                return (None, None);
            };
            let va = Session::new(&da).estimate(kind).ok().map(|e| e.value);
            let vb = Session::new(&db).estimate(kind).ok().map(|e| e.value);
            (va, vb)
        })
        .collect();
    let va: Vec<Option<f64>> = pairs.iter().map(|p| p.0).collect();
    let vb: Vec<Option<f64>> = pairs.iter().map(|p| p.1).collect();
    let vd: Vec<Option<f64>> = pairs.iter().map(|p| Some(p.1? - p.0?)).collect();

    let point = eb.value - ea.value;
    let auc_a = report(ea, &va, opts);
    let auc_b = report(eb, &vb, opts);
    let d = summarize(point, &vd, opts.ci);
    if too_many(d.n_failed, opts) {
        return Err(Error::TooManyFailures {
            failed: d.n_failed,
            total: opts.n_boot,
        });
    }
    Ok(ComparisonReport {
        benchmark,
        auc_a,
        auc_b,
        difference: Difference {
            point,
            se: d.se,
            ci_low: d.low,
            ci_high: d.high,
            n_boot_failed: d.n_failed,
        },
    })
}
