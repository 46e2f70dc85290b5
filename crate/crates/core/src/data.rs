//! Dataset types shared by every estimator, plus CSV ingestion.
//!
//! All constructors validate their invariants: binary treatments, equal
//! lengths and finite numbers. A value of any of these types is therefore
//! always well formed.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Validation(format!(
            "{what} at unit {i} is not finite ({})",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn arm_mean(values: &[f64], treatment: &[bool], arm: bool) -> Option<f64> {
    let (sum, count) = values
        .iter()
        .zip(treatment)
        .filter(|(_, &a)| a == arm)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Cross-sectional data `(X, A, Y)`: covariates, a binary treatment and an
/// outcome per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    covariates: DMatrix<f64>,
    treatment: Vec<bool>,
    outcome: Vec<f64>,
    covariate_names: Vec<String>,
}

impl ObservationalDataset {
    /// `covariates` is `n x d`; `d = 0` is allowed.
    pub fn new(covariates: DMatrix<f64>, treatment: Vec<bool>, outcome: Vec<f64>) -> Result<Self> {
        let n = outcome.len();
        if treatment.len() != n || covariates.nrows() != n {
            return Err(Error::Validation(format!(
                "length mismatch: {} outcomes, {} treatments, {} covariate rows",
                n,
                treatment.len(),
                covariates.nrows()
            )));
        }
        check_finite(&outcome, "outcome")?;
        check_finite(covariates.as_slice(), "covariate")?;
        let covariate_names = (1..=covariates.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            covariates,
            treatment,
            outcome,
            covariate_names,
        })
    }

    /// Build from per-unit covariate rows. Every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>], treatment: Vec<bool>, outcome: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Validation(format!(
                "covariate row {i} has dimension {}, expected {d}",
                rows[i].len()
            )));
        }
        let covariates = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(covariates, treatment, outcome)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::Validation(format!(
                "{} covariate names for dimension {}",
                names.len(),
                self.dim()
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    /// Covariate dimension `d`.
    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariate_row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&a| a).count()
    }

    pub fn control_count(&self) -> usize {
        self.len() - self.treated_count()
    }

    /// Rows `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let covariates = self.covariates.select_rows(idx);
        Self {
            covariates,
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Same units with outcomes replaced by `f(y)`.
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        out.outcome = self.outcome.iter().map(|&y| f(y)).collect();
        check_finite(&out.outcome, "outcome")?;
        Ok(out)
    }

    /// Same units with outcomes replaced wholesale.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Self::new(self.covariates.clone(), self.treatment.clone(), outcome)
            .and_then(|d| d.with_covariate_names(self.covariate_names.clone()))
    }

    pub fn summarize(&self) -> DatasetSummary {
        DatasetSummary {
            n: self.len(),
            d: self.dim(),
            treated: self.treated_count(),
            control: self.control_count(),
            treated_mean: arm_mean(&self.outcome, &self.treatment, true),
            control_mean: arm_mean(&self.outcome, &self.treatment, false),
        }
    }
}

/// Counts and arm means of an [`ObservationalDataset`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub d: usize,
    pub treated: usize,
    pub control: usize,
    pub treated_mean: Option<f64>,
    pub control_mean: Option<f64>,
}

impl DatasetSummary {
    /// Naive difference in arm means, when both arms are present.
    pub fn difference_in_means(&self) -> Option<f64> {
        Some(self.treated_mean? - self.control_mean?)
    }
}

/// Potential outcomes behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    /// True `P(A = 1 | X)` per unit.
    pub propensity: Vec<f64>,
    pub true_ate: f64,
}

impl GroundTruth {
    pub fn new(y1: Vec<f64>, y0: Vec<f64>, propensity: Vec<f64>) -> Result<Self> {
        if y1.len() != y0.len() || propensity.len() != y0.len() {
            return Err(Error::Validation("ground-truth vectors differ in length".into()));
        }
        let n = y1.len() as f64;
        let true_ate = if y1.is_empty() {
            0.0
        } else {
            y1.iter().sum::<f64>() / n - y0.iter().sum::<f64>() / n
        };
        Ok(Self {
            y1,
            y0,
            propensity,
            true_ate,
        })
    }

    /// `y = a*y1 + (1-a)*y0` for every unit, exactly.
    pub fn check_consistency(&self, data: &ObservationalDataset) -> Result<()> {
        if self.y1.len() != data.len() {
            return Err(Error::Validation("ground truth and dataset differ in size".into()));
        }
        for (i, ((&a, &y), (&y1, &y0))) in data
            .treatment()
            .iter()
            .zip(data.outcome())
            .zip(self.y1.iter().zip(&self.y0))
            .enumerate()
        {
            let expected = if a { y1 } else { y0 };
            if y != expected {
                return Err(Error::Invariant(format!("consistency fails at unit {i}")));
            }
        }
        Ok(())
    }

    /// Min and max of the true propensities.
    pub fn propensity_range(&self) -> Option<(f64, f64)> {
        self.propensity.iter().fold(None, |acc, &p| match acc {
            None => Some((p, p)),
            Some((lo, hi)) => Some((lo.min(p), hi.max(p))),
        })
    }
}

/// Estimator identity carried on every estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    IpwHt,
    IpwHajek,
    IpwOracle,
    Gformula,
    PsmAtt,
    Aipw,
    Did,
    DidPlacebo,
    Rd,
    IvWald,
    Tsls,
    FeWithin,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::IpwHt => "ipw_ht",
            Method::IpwHajek => "ipw_hajek",
            Method::IpwOracle => "ipw_oracle",
            Method::Gformula => "gformula",
            Method::PsmAtt => "psm_att",
            Method::Aipw => "aipw",
            Method::Did => "did",
            Method::DidPlacebo => "did_placebo",
            Method::Rd => "rd",
            Method::IvWald => "iv_wald",
            Method::Tsls => "tsls",
            Method::FeWithin => "fe_within",
        }
    }
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Naive,
        Method::IpwHt,
        Method::IpwHajek,
        Method::IpwOracle,
        Method::Gformula,
        Method::PsmAtt,
        Method::Aipw,
        Method::Did,
        Method::DidPlacebo,
        Method::Rd,
        Method::IvWald,
        Method::Tsls,
        Method::FeWithin,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Point estimate with optional influence values and normal-theory interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AteEstimate {
    pub method: Method,
    pub psi_hat: f64,
    pub eif: Option<Vec<f64>>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n: usize,
}

impl AteEstimate {
    pub fn point(method: Method, psi_hat: f64, n: usize) -> Self {
        Self {
            method,
            psi_hat,
            eif: None,
            se: None,
            ci: None,
            n,
        }
    }

    pub fn ci_low(&self) -> Option<f64> {
        self.ci.map(|c| c.0)
    }

    pub fn ci_high(&self) -> Option<f64> {
        self.ci.map(|c| c.1)
    }

    pub fn covers(&self, value: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= value && value <= hi)
    }
}

/// One row of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub unit: i64,
    pub period: i64,
    pub treated: bool,
    pub y: f64,
    /// Treated-group membership (DID).
    pub group: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    records: Vec<PanelRecord>,
}

impl PanelDataset {
    pub fn new(records: Vec<PanelRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !r.y.is_finite() {
                return Err(Error::Validation(format!("outcome at record {i} is not finite")));
            }
            if !seen.insert((r.unit, r.period)) {
                return Err(Error::Validation(format!(
                    "duplicate (unit, period) = ({}, {})",
                    r.unit, r.period
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct periods.
    pub fn periods(&self) -> Vec<i64> {
        let mut p: Vec<i64> = self.records.iter().map(|r| r.period).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Sorted distinct unit ids.
    pub fn units(&self) -> Vec<i64> {
        let mut u: Vec<i64> = self.records.iter().map(|r| r.unit).collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    pub fn map_outcome(&self, f: impl Fn(&PanelRecord) -> f64) -> Result<Self> {
        Self::new(
            self.records
                .iter()
                .map(|r| PanelRecord { y: f(r), ..*r })
                .collect(),
        )
    }
}

/// Instrument, treatment, outcome and optional exogenous covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    instrument: Vec<bool>,
    treatment: Vec<bool>,
    outcome: Vec<f64>,
    covariates: Option<DMatrix<f64>>,
}

impl IvDataset {
    pub fn new(
        instrument: Vec<bool>,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
        covariates: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = outcome.len();
        if instrument.len() != n || treatment.len() != n {
            return Err(Error::Validation("instrument/treatment/outcome lengths differ".into()));
        }
        check_finite(&outcome, "outcome")?;
        if let Some(x) = &covariates {
            if x.nrows() != n {
                return Err(Error::Validation("covariate rows differ from outcome length".into()));
            }
            check_finite(x.as_slice(), "covariate")?;
        }
        Ok(Self {
            instrument,
            treatment,
            outcome,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn instrument(&self) -> &[bool] {
        &self.instrument
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariates(&self) -> Option<&DMatrix<f64>> {
        self.covariates.as_ref()
    }

    pub fn with_covariates(&self, covariates: Option<DMatrix<f64>>) -> Result<Self> {
        Self::new(
            self.instrument.clone(),
            self.treatment.clone(),
            self.outcome.clone(),
            covariates,
        )
    }

    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.instrument.clone(),
            self.treatment.clone(),
            self.outcome.iter().map(|&y| f(y)).collect(),
            self.covariates.clone(),
        )
    }

    /// View `(a, y)` as an observational dataset without covariates.
    pub fn as_observational(&self) -> Result<ObservationalDataset> {
        ObservationalDataset::new(
            DMatrix::zeros(self.len(), 0),
            self.treatment.clone(),
            self.outcome.clone(),
        )
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Column names for an observational CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl CsvSchema {
    pub fn new(treatment: &str, outcome: &str, covariates: &[&str]) -> Self {
        Self {
            treatment: treatment.to_owned(),
            outcome: outcome.to_owned(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub treatment: String,
    pub outcome: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvSchema {
    pub instrument: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

/// A parsed CSV: header plus raw string records.
#[derive(Debug, Clone)]
pub struct CsvTable {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_owned).collect();
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }

    /// Numeric column; rows are reported 1-based, header excluded.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let raw = r.get(j).unwrap_or("");
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(_) => Err(Error::Validation(format!(
                        "non-finite value `{raw}` at row {}, column `{name}`",
                        i + 1
                    ))),
                    Err(_) => Err(Error::Parse {
                        row: i + 1,
                        column: name.to_owned(),
                        value: raw.to_owned(),
                    }),
                }
            })
            .collect()
    }

    /// Column whose values must be exactly 0 or 1.
    pub fn binary(&self, name: &str) -> Result<Vec<bool>> {
        self.numeric(name)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                v if v == 1.0 => Ok(true),
                v if v == 0.0 => Ok(false),
                v => Err(Error::Validation(format!(
                    "column `{name}` row {} has non-binary value {v}",
                    i + 1
                ))),
            })
            .collect()
    }

    /// Column of integral identifiers.
    pub fn integer(&self, name: &str) -> Result<Vec<i64>> {
        self.numeric(name)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    Ok(v as i64)
                } else {
                    Err(Error::Validation(format!(
                        "column `{name}` row {} is not an integer id ({v})",
                        i + 1
                    )))
                }
            })
            .collect()
    }

    /// `n x names.len()` matrix of numeric columns.
    pub fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let cols = names
            .iter()
            .map(|c| self.numeric(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.len(), names.len(), |i, j| cols[j][i]))
    }

    pub fn observational(&self, schema: &CsvSchema) -> Result<ObservationalDataset> {
        // Resolve every column name before parsing so schema errors win.
        self.index(&schema.treatment)?;
        self.index(&schema.outcome)?;
        for c in &schema.covariates {
            self.index(c)?;
        }
        let x = self.matrix(&schema.covariates)?;
        let a = self.binary(&schema.treatment)?;
        let y = self.numeric(&schema.outcome)?;
        ObservationalDataset::new(x, a, y)?.with_covariate_names(schema.covariates.clone())
    }

    pub fn panel(&self, schema: &PanelSchema) -> Result<PanelDataset> {
        for c in [
            &schema.unit,
            &schema.period,
            &schema.treatment,
            &schema.outcome,
            &schema.group,
        ] {
            self.index(c)?;
        }
        let unit = self.integer(&schema.unit)?;
        let period = self.integer(&schema.period)?;
        let treated = self.binary(&schema.treatment)?;
        let y = self.numeric(&schema.outcome)?;
        let group = self.binary(&schema.group)?;
        PanelDataset::new(
            (0..self.len())
                .map(|i| PanelRecord {
                    unit: unit[i],
                    period: period[i],
                    treated: treated[i],
                    y: y[i],
                    group: group[i],
                })
                .collect(),
        )
    }

    pub fn iv(&self, schema: &IvSchema) -> Result<IvDataset> {
        for c in [&schema.instrument, &schema.treatment, &schema.outcome]
            .into_iter()
            .chain(&schema.covariates)
        {
            self.index(c)?;
        }
        let covariates = if schema.covariates.is_empty() {
            None
        } else {
            Some(self.matrix(&schema.covariates)?)
        };
        IvDataset::new(
            self.binary(&schema.instrument)?,
            self.binary(&schema.treatment)?,
            self.numeric(&schema.outcome)?,
            covariates,
        )
    }
}

/// Load an observational dataset; row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ObservationalDataset> {
    CsvTable::from_path(path.as_ref())?.observational(schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<ObservationalDataset> {
    CsvTable::from_reader(reader)?.observational(schema)
}

fn bit(a: bool) -> &'static str {
    if a {
        "1"
    } else {
        "0"
    }
}

/// Write covariates, treatment and outcome using the dataset's covariate
/// names. Floats use shortest round-trip formatting.
pub fn write_csv_to<W: Write>(data: &ObservationalDataset, schema: &CsvSchema, writer: W) -> Result<()> {
    if schema.covariates.len() != data.dim() {
        return Err(Error::Validation(format!(
            "schema names {} covariates, dataset has {}",
            schema.covariates.len(),
            data.dim()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.covariates.iter().map(String::as_str).collect();
    header.push(&schema.treatment);
    header.push(&schema.outcome);
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.covariates().row(i).iter().map(|v| v.to_string()).collect();
        row.push(bit(data.treatment()[i]).to_owned());
        row.push(data.outcome()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv(data: &ObservationalDataset, schema: &CsvSchema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(data, schema, file)
}

pub fn write_panel_csv<W: Write>(panel: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "period", "a", "y", "group"])?;
    for r in panel.records() {
        w.write_record([
            r.unit.to_string(),
            r.period.to_string(),
            bit(r.treated).to_owned(),
            r.y.to_string(),
            bit(r.group).to_owned(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_iv_csv<W: Write>(iv: &IvDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = iv.covariates().map_or(0, |x| x.ncols());
    let mut header = vec!["z".to_owned(), "a".to_owned(), "y".to_owned()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..iv.len() {
        let mut row = vec![
            bit(iv.instrument()[i]).to_owned(),
            bit(iv.treatment()[i]).to_owned(),
            iv.outcome()[i].to_string(),
        ];
        if let Some(x) = iv.covariates() {
            row.extend(x.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
