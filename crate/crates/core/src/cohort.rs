//! Cohorts: rectangular covariate/biomarker/response records and CSV ingestion.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The part a cohort plays in an analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Biased sample with biomarker and response observed.
    Validation,
    /// Patient-level sample representative of the target; response observed,
    /// biomarker absent or ignored.
    Rwd,
    /// Covariates (and optionally design weights) from the target population.
    TargetSample,
}

impl Role {
    fn needs_y(self) -> bool {
        matches!(self, Role::Validation)
    }

    fn needs_d(self) -> bool {
        matches!(self, Role::Validation | Role::Rwd)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Validation => "validation",
            Role::Rwd => "rwd",
            Role::TargetSample => "target-sample",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(Role::Validation),
            "rwd" => Ok(Role::Rwd),
            "target-sample" | "target" => Ok(Role::TargetSample),
            other => Err(Error::InvalidArgument(format!("unknown cohort role `{other}`"))),
        }
    }
}

/// Which CSV columns hold what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub covariates: Vec<String>,
    pub y: Option<String>,
    pub d: Option<String>,
    pub design_weight: Option<String>,
}

impl Schema {
    pub fn new<S: AsRef<str>>(covariates: &[S]) -> Self {
        Self {
            covariates: covariates.iter().map(|s| s.as_ref().to_string()).collect(),
            y: Some("y".into()),
            d: Some("d".into()),
            design_weight: None,
        }
    }
}

/// An immutable, validated cohort.
///
/// Covariates are stored row-major. `y` and `d` are present whenever the
/// role requires them; `design_weight` defaults to all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    x: Vec<f64>,
    n: usize,
    p: usize,
    y: Option<Vec<f64>>,
    d: Option<Vec<u8>>,
    design_weight: Option<Vec<f64>>,
    role: Role,
    column_names: Vec<String>,
}

impl Cohort {
    /// Builds a cohort from in-memory columns, enforcing the same invariants
    /// as [`load_cohort`].
    pub fn from_parts(
        column_names: Vec<String>,
        x: Vec<f64>,
        y: Option<Vec<f64>>,
        d: Option<Vec<u8>>,
        design_weight: Option<Vec<f64>>,
        role: Role,
    ) -> Result<Self> {
        let p = column_names.len();
        if p == 0 {
            return Err(Error::InvalidArgument("no covariate columns".into()));
        }
        if !x.len().is_multiple_of(p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: x.len() % p,
            });
        }
        let n = x.len() / p;
        if n == 0 {
            return Err(Error::EmptyCohort);
        }
        let check_len = |len: usize| {
            if len != n {
                Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                })
            } else {
                Ok(())
            }
        };
        if let Some(y) = &y {
            check_len(y.len())?;
        }
        if let Some(d) = &d {
            check_len(d.len())?;
            if let Some(bad) = d.iter().position(|&v| v > 1) {
                return Err(Error::BadValue {
                    row: bad + 1,
                    column: "d".into(),
                    value: d[bad].to_string(),
                    expected: "0 or 1",
                });
            }
        }
        if let Some(w) = &design_weight {
            check_len(w.len())?;
            if let Some(bad) = w.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::BadValue {
                    row: bad + 1,
                    column: "design_weight".into(),
                    value: w[bad].to_string(),
                    expected: "positive real",
                });
            }
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadValue {
                row: bad / p + 1,
                column: column_names[bad % p].clone(),
                value: x[bad].to_string(),
                expected: "finite real",
            });
        }
        if role.needs_y() && y.is_none() {
            return Err(Error::MissingColumn(vec!["y".into()]));
        }
        if role.needs_d() {
            match &d {
                None => return Err(Error::MissingColumn(vec!["d".into()])),
                Some(d) => {
                    if d.iter().all(|&v| v == d[0]) {
                        return Err(Error::DegenerateResponse(d[0]));
                    }
                }
            }
        }
        Ok(Self {
            x,
            n,
            p,
            y,
            d,
            design_weight,
            role,
            column_names,
        })
    }

    /// Construction without the response-class check, for simulated
    /// samples that may be tiny.
    pub(crate) fn unchecked(
        column_names: Vec<String>,
        x: Vec<f64>,
        y: Option<Vec<f64>>,
        d: Option<Vec<u8>>,
        role: Role,
    ) -> Self {
        let p = column_names.len();
        Self {
            n: x.len() / p,
            p,
            x,
            y,
            d,
            design_weight: None,
            role,
            column_names,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.x.chunks_exact(self.p)
    }

    /// Row-major covariate buffer.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn d(&self) -> Option<&[u8]> {
        self.d.as_deref()
    }

    /// Design weight of row `i` (1 when none were supplied).
    pub fn design_weight(&self, i: usize) -> f64 {
        self.design_weight.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn design_weights(&self) -> Option<&[f64]> {
        self.design_weight.as_deref()
    }

    /// Biomarker values, or `RequirementUnmet` when the cohort has none.
    pub fn require_y(&self) -> Result<&[f64]> {
        self.y().ok_or(Error::RequirementUnmet {
            estimator: "auc".into(),
            requirement: "biomarker values",
        })
    }

    pub fn require_d(&self) -> Result<&[u8]> {
        self.d().ok_or(Error::RequirementUnmet {
            estimator: "auc".into(),
            requirement: "response indicators",
        })
    }

    /// Cohort made of the given rows (repeats allowed), in the given order.
    ///
    /// The result skips the degenerate-response check: a bootstrap resample
    /// may legitimately lose a response class, and the estimators report
    /// that as `NoPairs`.
    pub fn select_rows(&self, idx: &[usize]) -> Cohort {
        let mut x = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Cohort {
            x,
            n: idx.len(),
            p: self.p,
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            d: self.d.as_ref().map(|d| idx.iter().map(|&i| d[i]).collect()),
            design_weight: self.design_weight.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
            role: self.role,
            column_names: self.column_names.clone(),
        }
    }

    /// Same rows under another role. Moving to `Rwd` or `TargetSample`
    /// drops the biomarker.
    pub fn with_role(&self, role: Role) -> Result<Cohort> {
        let y = if role.needs_y() { self.y.clone() } else { None };
        let d = if role == Role::TargetSample {
            None
        } else {
            self.d.clone()
        };
        Cohort::from_parts(
            self.column_names.clone(),
            self.x.clone(),
            y,
            d,
            self.design_weight.clone(),
            role,
        )
    }

    /// Concatenation of two schema-compatible cohorts, rows sorted into a
    /// canonical order so that `pooled(a, b) == pooled(b, a)`.
    pub fn pooled(a: &Cohort, b: &Cohort, role: Role) -> Result<Cohort> {
        check_compatibility(a, b)?;
        let mut rows: Vec<(&Cohort, usize)> = (0..a.n).map(|i| (a, i)).chain((0..b.n).map(|i| (b, i))).collect();
        rows.sort_by(|&(ca, i), &(cb, j)| {
            let key = |c: &Cohort, k: usize| {
                let mut v = c.row(k).to_vec();
                v.push(c.y.as_ref().map_or(f64::NAN, |y| y[k]));
                v.push(c.d.as_ref().map_or(-1.0, |d| f64::from(d[k])));
                v.push(c.design_weight(k));
                v
            };
            let (ka, kb) = (key(ca, i), key(cb, j));
            ka.iter()
                .zip(&kb)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let p = a.p;
        let mut x = Vec::with_capacity(rows.len() * p);
        for &(c, i) in &rows {
            x.extend_from_slice(c.row(i));
        }
        let y = match (&a.y, &b.y) {
            (Some(_), Some(_)) => Some(rows.iter().map(|&(c, i)| c.y.as_ref().unwrap()[i]).collect()),
            _ => None,
        };
        let d = match (&a.d, &b.d) {
            (Some(_), Some(_)) => Some(rows.iter().map(|&(c, i)| c.d.as_ref().unwrap()[i]).collect()),
            _ => None,
        };
        let w = if a.design_weight.is_some() || b.design_weight.is_some() {
            Some(rows.iter().map(|&(c, i)| c.design_weight(i)).collect())
        } else {
            None
        };
        let y = if role.needs_y() { y } else { None };
        let d = if role == Role::TargetSample { None } else { d };
        Cohort::from_parts(a.column_names.clone(), x, y, d, w, role)
    }

    /// Checks that the response indicator has both classes.
    pub fn check_both_classes(&self) -> Result<()> {
        let d = self.require_d()?;
        if d.iter().all(|&v| v == d[0]) {
            return Err(Error::DegenerateResponse(d[0]));
        }
        Ok(())
    }

    /// Writes the cohort as CSV with the given schema's column names.
    pub fn write_csv<W: Write>(&self, schema: &Schema, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.column_names.clone();
        if let (Some(_), Some(name)) = (&self.y, &schema.y) {
            header.push(name.clone());
        }
        if let (Some(_), Some(name)) = (&self.d, &schema.d) {
            header.push(name.clone());
        }
        if let (Some(_), Some(name)) = (&self.design_weight, &schema.design_weight) {
            header.push(name.clone());
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if let (Some(y), Some(_)) = (&self.y, &schema.y) {
                rec.push(y[i].to_string());
            }
            if let (Some(d), Some(_)) = (&self.d, &schema.d) {
                rec.push(d[i].to_string());
            }
            if let (Some(dw), Some(_)) = (&self.design_weight, &schema.design_weight) {
                rec.push(dw[i].to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Loads and validates a cohort from a CSV file.
pub fn load_cohort(path: impl AsRef<Path>, role: Role, schema: &Schema) -> Result<Cohort> {
    let file = std::fs::File::open(path.as_ref())?;
    read_cohort(file, role, schema)
}

/// [`load_cohort`] over any reader.
pub fn read_cohort<R: Read>(input: R, role: Role, schema: &Schema) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);

    let mut missing = Vec::new();
    let x_idx: Vec<usize> = schema
        .covariates
        .iter()
        .filter_map(|c| {
            let pos = find(c);
            if pos.is_none() {
                missing.push(c.clone());
            }
            pos
        })
        .collect();
    let mut optional = |name: &Option<String>, required: bool, fallback: &str| -> Option<usize> {
        match name {
            Some(n) => {
                let pos = find(n);
                if pos.is_none() && required {
                    missing.push(n.clone());
                }
                pos
            }
            None => {
                if required {
                    missing.push(fallback.to_string());
                }
                None
            }
        }
    };
    // Columns the role does not use are not parsed at all.
    let y_idx = if role.needs_y() {
        optional(&schema.y, true, "y")
    } else {
        None
    };
    let d_idx = if role.needs_d() {
        optional(&schema.d, true, "d")
    } else {
        None
    };
    let w_idx = optional(&schema.design_weight, schema.design_weight.is_some(), "design_weight");
    if !missing.is_empty() {
        return Err(Error::MissingColumn(missing));
    }

    let mut x = Vec::new();
    let mut y = y_idx.map(|_| Vec::new());
    let mut d = d_idx.map(|_| Vec::new());
    let mut w = w_idx.map(|_| Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(csv_err)?;
        let cell = |idx: usize| rec.get(idx).unwrap_or("");
        let real = |idx: usize, col: &str| -> Result<f64> {
            let s = cell(idx);
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::BadValue {
                    row,
                    column: col.to_string(),
                    value: s.to_string(),
                    expected: "real number",
                }),
            }
        };
        for (&idx, name) in x_idx.iter().zip(&schema.covariates) {
            x.push(real(idx, name)?);
        }
        if let (Some(idx), Some(ys)) = (y_idx, y.as_mut()) {
            ys.push(real(idx, schema.y.as_deref().unwrap())?);
        }
        if let (Some(idx), Some(ds)) = (d_idx, d.as_mut()) {
            let s = cell(idx);
            ds.push(match s {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::BadValue {
                        row,
                        column: schema.d.clone().unwrap(),
                        value: s.to_string(),
                        expected: "0 or 1",
                    })
                }
            });
        }
        if let (Some(idx), Some(ws)) = (w_idx, w.as_mut()) {
            let col = schema.design_weight.as_deref().unwrap();
            let v = real(idx, col)?;
            if v <= 0.0 {
                return Err(Error::BadValue {
                    row,
                    column: col.to_string(),
                    value: cell(idx).to_string(),
                    expected: "positive real",
                });
            }
            ws.push(v);
        }
    }
    if x.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Cohort::from_parts(schema.covariates.clone(), x, y, d, w, role)
}

/// Succeeds iff both cohorts have identical covariate names in identical order.
pub fn check_compatibility(a: &Cohort, b: &Cohort) -> Result<()> {
    if a.column_names == b.column_names {
        return Ok(());
    }
    let mut divergent: Vec<String> = Vec::new();
    let longest = a.column_names.len().max(b.column_names.len());
    for k in 0..longest {
        let (ca, cb) = (a.column_names.get(k), b.column_names.get(k));
        if ca != cb {
            for c in [ca, cb].into_iter().flatten() {
                if !divergent.contains(c) {
                    divergent.push(c.clone());
                }
            }
        }
    }
    Err(Error::SchemaMismatch(divergent))
}

/// Validation cohort plus optional patient-level RWD.
#[derive(Debug, Clone)]
pub struct CombinedData {
    pub validation: Cohort,
    pub rwd: Option<Cohort>,
}

impl CombinedData {
    pub fn new(validation: Cohort, rwd: Option<Cohort>) -> Result<Self> {
        if validation.role() != Role::Validation {
            return Err(Error::InvalidArgument(format!(
                "expected a validation cohort, got {}",
                validation.role()
            )));
        }
        if let Some(r) = &rwd {
            check_compatibility(&validation, r)?;
            r.require_d()?;
        }
        Ok(Self { validation, rwd })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(&["x1", "x2"])
    }

    const CSV3: &str = "x1,x2,y,d\n0.5,1,2.0,1\n-1,2,1.5,0\n3,0.25,0,1\n";

    #[test]
    fn loads_three_row_validation() {
        let c = read_cohort(CSV3.as_bytes(), Role::Validation, &schema()).unwrap();
        assert_eq!((c.n(), c.p()), (3, 2));
        assert_eq!(c.row(1), &[-1.0, 2.0]);
        assert_eq!(c.y().unwrap(), &[2.0, 1.5, 0.0]);
        assert_eq!(c.d().unwrap(), &[1, 0, 1]);
        assert_eq!(c.design_weight(2), 1.0);
    }

    #[test]
    fn rwd_without_d_column_is_missing_column() {
        let csv = "x1,x2,y\n1,2,3\n";
        let err = read_cohort(csv.as_bytes(), Role::Rwd, &schema()).unwrap_err();
        assert_eq!(err, Error::MissingColumn(vec!["d".into()]));
    }

    #[test]
    fn constant_response_is_degenerate() {
        let csv = "x1,x2,y,d\n1,2,3,1\n2,3,4,1\n";
        let err = read_cohort(csv.as_bytes(), Role::Validation, &schema()).unwrap_err();
        assert_eq!(err, Error::DegenerateResponse(1));
    }

    #[test]
    fn bad_cell_reports_row() {
        let csv = "x1,x2,y,d\n1,2,3,1\n2,abc,4,0\n";
        match read_cohort(csv.as_bytes(), Role::Validation, &schema()).unwrap_err() {
            Error::BadValue { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x2");
            }
            e => panic!("unexpected {e:?}"),
        }
        let csv = "x1,x2,y,d\n1,2,3,1\n2,,4,0\n";
        assert!(matches!(
            read_cohort(csv.as_bytes(), Role::Validation, &schema()),
            Err(Error::BadValue { row: 2, .. })
        ));
    }

    #[test]
    fn boolean_literals_rejected() {
        let csv = "x1,x2,y,d\n1,2,3,true\n2,1,4,0\n";
        assert!(matches!(
            read_cohort(csv.as_bytes(), Role::Validation, &schema()),
            Err(Error::BadValue { row: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_cohort() {
        let csv = "x1,x2,y,d\n";
        assert_eq!(
            read_cohort(csv.as_bytes(), Role::Validation, &schema()).unwrap_err(),
            Error::EmptyCohort
        );
    }

    #[test]
    fn target_sample_needs_only_x() {
        let csv = "x1,x2,w\n1,2,0.5\n2,3,1.5\n";
        let mut s = schema();
        s.design_weight = Some("w".into());
        let c = read_cohort(csv.as_bytes(), Role::TargetSample, &s).unwrap();
        assert!(c.y().is_none() && c.d().is_none());
        assert_eq!(c.design_weight(1), 1.5);
    }

    #[test]
    fn compatibility() {
        let a = read_cohort(CSV3.as_bytes(), Role::Validation, &schema()).unwrap();
        assert!(check_compatibility(&a, &a).is_ok());

        let swapped = "x2,x1,y,d\n1,0.5,2,1\n2,-1,1.5,0\n";
        let b = read_cohort(swapped.as_bytes(), Role::Validation, &Schema::new(&["x2", "x1"])).unwrap();
        assert!(matches!(check_compatibility(&a, &b), Err(Error::SchemaMismatch(_))));

        let extra = "x1,x2,x3,y,d\n1,2,3,4,1\n1,2,3,4,0\n";
        let c = read_cohort(extra.as_bytes(), Role::Validation, &Schema::new(&["x1", "x2", "x3"])).unwrap();
        match check_compatibility(&a, &c) {
            Err(Error::SchemaMismatch(names)) => assert_eq!(names, vec!["x3".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let csv = "x1,x2,y,d\n0.1,-2.5e-3,0.30000000000000004,1\n1e10,3.14159,-7,0\n";
        let c = read_cohort(csv.as_bytes(), Role::Validation, &schema()).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&schema(), &mut buf).unwrap();
        let back = read_cohort(buf.as_slice(), Role::Validation, &schema()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn pooled_is_order_independent() {
        let a = read_cohort(CSV3.as_bytes(), Role::Validation, &schema()).unwrap();
        let b = read_cohort("x1,x2,y,d\n9,9,9,0\n-4,1,2,1\n".as_bytes(), Role::Validation, &schema()).unwrap();
        assert_eq!(
            Cohort::pooled(&a, &b, Role::Rwd).unwrap(),
            Cohort::pooled(&b, &a, Role::Rwd).unwrap()
        );
    }
}
