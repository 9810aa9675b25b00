//! Calibration feature maps `g(x)` and target-population moment vectors.
//!
//! A [`FeatureMap`] is an ordered list of [`Term`]s over covariate columns.
//! The two stock maps follow a frozen ordering: main effects in column
//! order, then squares of continuous columns in column order, then (for
//! `g2`) all pairwise interactions in lexicographic pair order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::sum::Neumaier;

/// A single feature built from covariate columns (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Main(usize),
    Square(usize),
    Interaction(usize, usize),
}

impl Term {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Term::Main(i) => x[i],
            Term::Square(i) => x[i] * x[i],
            Term::Interaction(i, j) => x[i] * x[j],
        }
    }

    fn max_index(&self) -> usize {
        match *self {
            Term::Main(i) | Term::Square(i) => i,
            Term::Interaction(i, j) => i.max(j),
        }
    }

    /// Human-readable form using column names: `x1`, `x1^2`, `x1:x2`.
    pub fn describe(&self, names: &[String]) -> String {
        match *self {
            Term::Main(i) => names[i].clone(),
            Term::Square(i) => format!("{}^2", names[i]),
            Term::Interaction(i, j) => format!("{}:{}", names[i], names[j]),
        }
    }

    /// Parses `name`, `name^2` or `a:b` against the column names.
    pub fn parse(s: &str, names: &[String]) -> Result<Term> {
        let col = |n: &str| {
            names
                .iter()
                .position(|c| c == n.trim())
                .ok_or_else(|| Error::MissingColumn(vec![n.trim().to_string()]))
        };
        let s = s.trim();
        if let Some(base) = s.strip_suffix("^2") {
            return Ok(Term::Square(col(base)?));
        }
        if let Some((a, b)) = s.split_once(':') {
            let (i, j) = (col(a)?, col(b)?);
            return Ok(if i == j {
                Term::Square(i)
            } else {
                Term::Interaction(i.min(j), i.max(j))
            });
        }
        Ok(Term::Main(col(s)?))
    }
}

/// Parses a comma-separated list of term descriptors.
pub fn parse_terms(spec: &str, names: &[String]) -> Result<Vec<Term>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Term::parse(s, names))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// First moments plus squares of continuous columns.
    G1,
    /// `G1` plus all pairwise interactions.
    G2,
    Custom,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::G1 => "g1",
            FeatureKind::G2 => "g2",
            FeatureKind::Custom => "custom",
        })
    }
}

/// An ordered set of features over `p` covariates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMap {
    kind: FeatureKind,
    p: usize,
    continuous_mask: Vec<bool>,
    terms: Vec<Term>,
}

impl FeatureMap {
    /// Main effects and squares of the continuous columns.
    pub fn g1(continuous_mask: &[bool]) -> Self {
        let p = continuous_mask.len();
        let mut terms: Vec<Term> = (0..p).map(Term::Main).collect();
        terms.extend((0..p).filter(|&i| continuous_mask[i]).map(Term::Square));
        Self {
            kind: FeatureKind::G1,
            p,
            continuous_mask: continuous_mask.to_vec(),
            terms,
        }
    }

    /// `g1` followed by every pairwise interaction (binary × binary included).
    pub fn g2(continuous_mask: &[bool]) -> Self {
        let mut m = Self::g1(continuous_mask);
        let p = m.p;
        for i in 0..p {
            for j in i + 1..p {
                m.terms.push(Term::Interaction(i, j));
            }
        }
        m.kind = FeatureKind::G2;
        m
    }

    /// Arbitrary term list.
    pub fn custom(p: usize, terms: Vec<Term>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.max_index() >= p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: t.max_index() + 1,
            });
        }
        Ok(Self {
            kind: FeatureKind::Custom,
            p,
            continuous_mask: vec![true; p],
            terms,
        })
    }

    /// Main effects only.
    pub fn main_effects(p: usize) -> Self {
        Self::custom(p, (0..p).map(Term::Main).collect()).expect("indices in range")
    }

    pub fn by_kind(kind: FeatureKind, continuous_mask: &[bool]) -> Result<Self> {
        match kind {
            FeatureKind::G1 => Ok(Self::g1(continuous_mask)),
            FeatureKind::G2 => Ok(Self::g2(continuous_mask)),
            FeatureKind::Custom => Err(Error::InvalidArgument(
                "custom feature maps need an explicit term list".into(),
            )),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Output dimension.
    pub fn q(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn continuous_mask(&self) -> &[bool] {
        &self.continuous_mask
    }

    /// `g(x)` for one covariate row.
    pub fn apply(&self, x_row: &[f64]) -> Result<Vec<f64>> {
        if x_row.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: x_row.len(),
            });
        }
        Ok(self.terms.iter().map(|t| t.eval(x_row)).collect())
    }

    /// Row-major `n × q` feature matrix of a cohort.
    pub fn matrix(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        if cohort.p() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: cohort.p(),
            });
        }
        let mut out = Vec::with_capacity(cohort.n() * self.q());
        for row in cohort.rows() {
            out.extend(self.terms.iter().map(|t| t.eval(row)));
        }
        Ok(out)
    }
}

/// Where a target moment vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    RwdEmpirical,
    DesignWeighted,
    UserSummary,
}

/// Estimate of `E[g(X)]` in the target population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMoments {
    pub g_tilde: Vec<f64>,
    pub source: MomentSource,
    pub map: FeatureMap,
}

impl TargetMoments {
    pub fn new(map: FeatureMap, g_tilde: Vec<f64>, source: MomentSource) -> Result<Self> {
        if g_tilde.len() != map.q() {
            return Err(Error::DimensionMismatch {
                expected: map.q(),
                actual: g_tilde.len(),
            });
        }
        if g_tilde.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite target moment".into()));
        }
        Ok(Self { g_tilde, source, map })
    }
}

/// Design-weighted mean of `g` over the cohort's rows.
pub fn target_moments_from_cohort(map: &FeatureMap, target: &Cohort) -> Result<TargetMoments> {
    if target.n() == 0 {
        return Err(Error::EmptyCohort);
    }
    if target.p() != map.p() {
        return Err(Error::DimensionMismatch {
            expected: map.p(),
            actual: target.p(),
        });
    }
    let q = map.q();
    let mut acc = vec![Neumaier::new(); q];
    let mut total = Neumaier::new();
    for (i, row) in target.rows().enumerate() {
        let w = target.design_weight(i);
        total.add(w);
        for (a, t) in acc.iter_mut().zip(map.terms()) {
            a.add(w * t.eval(row));
        }
    }
    let total = total.total();
    let g_tilde = acc.iter().map(|a| a.total() / total).collect();
    let source = if target.design_weights().is_some() {
        MomentSource::DesignWeighted
    } else {
        MomentSource::RwdEmpirical
    };
    TargetMoments::new(map.clone(), g_tilde, source)
}

/// Published covariate summaries, positionally indexed by column.
///
/// `variances` entries for columns whose second moment is not needed may be
/// NaN. `interaction_means` follows lexicographic pair order
/// `(0,1), (0,2), …, (1,2), …`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub means: Vec<f64>,
    pub variances: Option<Vec<f64>>,
    pub interaction_means: Option<Vec<f64>>,
}

fn pair_index(p: usize, i: usize, j: usize) -> usize {
    // pairs (a, b) with a < i come first: sum_{a<i} (p - 1 - a)
    i * (2 * p - i - 1) / 2 + (j - i - 1)
}

/// Moments implied by summary statistics: `E[X²] = Var + mean²`, interaction
/// means taken verbatim.
pub fn target_moments_from_summary(map: &FeatureMap, stats: &SummaryStats) -> Result<TargetMoments> {
    let p = map.p();
    if stats.means.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: stats.means.len(),
        });
    }
    let mut g = Vec::with_capacity(map.q());
    for t in map.terms() {
        let v = match *t {
            Term::Main(i) => stats.means[i],
            Term::Square(i) => {
                let var = stats
                    .variances
                    .as_ref()
                    .map(|v| v.get(i).copied().unwrap_or(f64::NAN))
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MissingSummary(format!("variance of column {i}")))?;
                var + stats.means[i] * stats.means[i]
            }
            Term::Interaction(i, j) => {
                let (a, b) = (i.min(j), i.max(j));
                stats
                    .interaction_means
                    .as_ref()
                    .and_then(|m| m.get(pair_index(p, a, b)).copied())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MissingSummary(format!("interaction mean of columns {a} and {b}")))?
            }
        };
        g.push(v);
    }
    TargetMoments::new(map.clone(), g, MomentSource::UserSummary)
}

/// JSON form of [`SummaryStats`], keyed by covariate name. Interaction keys
/// are `"a:b"` in either order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryDocument {
    pub means: BTreeMap<String, f64>,
    #[serde(default)]
    pub variances: BTreeMap<String, f64>,
    #[serde(default)]
    pub interaction_means: BTreeMap<String, f64>,
}

impl SummaryDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("summary JSON: {e}")))
    }

    /// Resolves names against the cohort schema.
    pub fn to_stats(&self, names: &[String]) -> Result<SummaryStats> {
        let p = names.len();
        let unknown: Vec<String> = self
            .means
            .keys()
            .chain(self.variances.keys())
            .filter(|k| !names.contains(k))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::SchemaMismatch(unknown));
        }
        let means = names
            .iter()
            .map(|n| {
                self.means
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::MissingSummary(format!("mean of `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let variances = (!self.variances.is_empty()).then(|| {
            names
                .iter()
                .map(|n| self.variances.get(n).copied().unwrap_or(f64::NAN))
                .collect()
        });
        let interaction_means = if self.interaction_means.is_empty() {
            None
        } else {
            let mut v = vec![f64::NAN; p * (p.saturating_sub(1)) / 2];
            for (key, &val) in &self.interaction_means {
                let (a, b) = key
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidArgument(format!("interaction key `{key}`")))?;
                let pos = |s: &str| {
                    names
                        .iter()
                        .position(|n| n == s)
                        .ok_or_else(|| Error::SchemaMismatch(vec![s.to_string()]))
                };
                let (i, j) = (pos(a)?, pos(b)?);
                if i == j {
                    return Err(Error::InvalidArgument(format!("interaction key `{key}`")));
                }
                v[pair_index(p, i.min(j), i.max(j))] = val;
            }
            Some(v)
        };
        Ok(SummaryStats {
            means,
            variances,
            interaction_means,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Role;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn g1_and_g2_layout() {
        let x = [1.0, -1.0, 0.5];
        let g1 = FeatureMap::g1(&[true; 3]);
        assert_eq!(g1.apply(&x).unwrap(), vec![1.0, -1.0, 0.5, 1.0, 1.0, 0.25]);
        let g2 = FeatureMap::g2(&[true; 3]);
        assert_eq!(
            g2.apply(&x).unwrap(),
            vec![1.0, -1.0, 0.5, 1.0, 1.0, 0.25, -1.0, 0.5, -0.5]
        );
        let masked = FeatureMap::g1(&[true, false, true]);
        assert_eq!(masked.apply(&[2.0, 1.0, 3.0]).unwrap(), vec![2.0, 1.0, 3.0, 4.0, 9.0]);
    }

    #[test]
    fn dimension_q() {
        for p in 1..6 {
            let mask: Vec<bool> = (0..p).map(|i| i % 2 == 0).collect();
            let cont = mask.iter().filter(|&&b| b).count();
            assert_eq!(FeatureMap::g1(&mask).q(), p + cont);
            assert_eq!(FeatureMap::g2(&mask).q(), p + cont + p * (p - 1) / 2);
        }
    }

    #[test]
    fn apply_wrong_length() {
        let g1 = FeatureMap::g1(&[true; 3]);
        assert_eq!(
            g1.apply(&[1.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 3, actual: 1 }
        );
    }

    fn one_col(xs: &[f64], w: Option<Vec<f64>>) -> Cohort {
        Cohort::from_parts(vec!["x".into()], xs.to_vec(), None, None, w, Role::TargetSample).unwrap()
    }

    #[test]
    fn cohort_moments() {
        let g1 = FeatureMap::g1(&[true]);
        let m = target_moments_from_cohort(&g1, &one_col(&[0.0, 2.0], None)).unwrap();
        assert_eq!(m.g_tilde, vec![1.0, 2.0]);
        assert_eq!(m.source, MomentSource::RwdEmpirical);
        let m = target_moments_from_cohort(&g1, &one_col(&[0.0, 2.0], Some(vec![1.0, 3.0]))).unwrap();
        assert_eq!(m.g_tilde, vec![1.5, 3.0]);
        assert_eq!(m.source, MomentSource::DesignWeighted);
    }

    #[test]
    fn summary_moments() {
        let g1 = FeatureMap::g1(&[true]);
        let s = SummaryStats {
            means: vec![0.0],
            variances: Some(vec![1.0]),
            interaction_means: None,
        };
        assert_eq!(target_moments_from_summary(&g1, &s).unwrap().g_tilde, vec![0.0, 1.0]);

        let g1 = FeatureMap::g1(&[true, true]);
        let s = SummaryStats {
            means: vec![1.0, -1.0],
            variances: Some(vec![0.25, 0.25]),
            interaction_means: None,
        };
        assert!(close(
            &target_moments_from_summary(&g1, &s).unwrap().g_tilde,
            &[1.0, -1.0, 1.25, 1.25],
            1e-15
        ));

        let g2 = FeatureMap::g2(&[true, true]);
        assert!(matches!(
            target_moments_from_summary(&g2, &s),
            Err(Error::MissingSummary(_))
        ));
    }

    #[test]
    fn pair_index_is_lexicographic() {
        let p = 4;
        let mut k = 0;
        for i in 0..p {
            for j in i + 1..p {
                assert_eq!(pair_index(p, i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn summary_json_by_name() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let doc = SummaryDocument::from_json(
            r#"{"means": {"a": 1, "b": 2}, "variances": {"a": 1, "b": 0.5}, "interaction_means": {"b:a": 3}}"#,
        )
        .unwrap();
        let stats = doc.to_stats(&names).unwrap();
        let g2 = FeatureMap::g2(&[true, true]);
        let m = target_moments_from_summary(&g2, &stats).unwrap();
        assert_eq!(m.g_tilde, vec![1.0, 2.0, 2.0, 4.5, 3.0]);

        let bad = SummaryDocument::from_json(r#"{"means": {"a": 1, "zz": 2}}"#).unwrap();
        assert!(matches!(bad.to_stats(&names), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn term_parsing() {
        let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let t = parse_terms("x1, x3^2, x3:x1", &names).unwrap();
        assert_eq!(t, vec![Term::Main(0), Term::Square(2), Term::Interaction(0, 2)]);
        assert!(parse_terms("x9", &names).is_err());
    }
}
