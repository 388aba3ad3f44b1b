//! Dataset ingestion, validation, standardization, and resampling.
//!
//! A [`Dataset`] holds an n×p covariate matrix, an n×k treatment matrix and
//! an outcome vector, all finite, plus an optional subgroup mask used to
//! restrict analyses. Ingestion is CSV-only with an explicit column-role
//! schema; rows with missing or non-numeric values in used columns are
//! rejected rather than imputed.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::uniform_index;

/// Column-role schema for CSV ingestion.
///
/// Exactly one outcome column; every listed column must exist in the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub covariates: Vec<String>,
    pub treatments: Vec<String>,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgroup: Option<String>,
}

impl Schema {
    fn validate(&self) -> Result<()> {
        if self.treatments.is_empty() {
            return Err(Error::SchemaMismatch(
                "at least one treatment column is required".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        let all = self
            .covariates
            .iter()
            .chain(self.treatments.iter())
            .chain(std::iter::once(&self.outcome))
            .chain(self.subgroup.iter());
        for name in all {
            if !seen.insert(name.clone()) {
                return Err(Error::SchemaMismatch(format!(
                    "column '{name}' assigned more than one role"
                )));
            }
        }
        Ok(())
    }
}

/// Observational sample of covariates, vector-valued treatments and outcomes.
///
/// Immutable after construction; all entries are finite.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    a: Array2<f64>,
    y: Array1<f64>,
    subgroup: Option<Vec<bool>>,
    covariate_names: Vec<String>,
    treatment_names: Vec<String>,
    outcome_name: String,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        a: Array2<f64>,
        y: Array1<f64>,
        subgroup: Option<Vec<bool>>,
        covariate_names: Vec<String>,
        treatment_names: Vec<String>,
        outcome_name: String,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || a.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows, a has {} rows, y has {} entries",
                x.nrows(),
                a.nrows(),
                n
            )));
        }
        if n == 0 {
            return Err(Error::EmptyDataset("dataset has no rows".into()));
        }
        if a.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "at least one treatment column is required".into(),
            ));
        }
        if let Some(s) = &subgroup {
            if s.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "subgroup mask has {} entries for {} rows",
                    s.len(),
                    n
                )));
            }
        }
        if covariate_names.len() != x.ncols()
            || treatment_names.len() != a.ncols()
        {
            return Err(Error::DimensionMismatch(
                "column name lists do not match matrix widths".into(),
            ));
        }
        for v in x.iter().chain(a.iter()).chain(y.iter()) {
            if !v.is_finite() {
                return Err(Error::ParseError {
                    row: 0,
                    col: "<matrix>".into(),
                    detail: "non-finite value in dataset".into(),
                });
            }
        }
        Ok(Dataset {
            x,
            a,
            y,
            subgroup,
            covariate_names,
            treatment_names,
            outcome_name,
        })
    }

    /// Construct with autogenerated column names (x1.., a1.., y).
    pub fn from_parts(x: Array2<f64>, a: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let cn = (1..=x.ncols()).map(|i| format!("x{i}")).collect();
        let tn = (1..=a.ncols()).map(|i| format!("a{i}")).collect();
        Dataset::new(x, a, y, None, cn, tn, "y".into())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn k(&self) -> usize {
        self.a.ncols()
    }
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }
    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }
    pub fn subgroup(&self) -> Option<&[bool]> {
        self.subgroup.as_deref()
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    pub fn treatment_names(&self) -> &[String] {
        &self.treatment_names
    }
    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn treatment_index(&self, name: &str) -> Option<usize> {
        self.treatment_names.iter().position(|t| t == name)
    }

    /// Joint (x, a) row matrix, n×(p+k).
    pub fn joint(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n(), self.p() + self.k()));
        if self.p() > 0 {
            m.slice_mut(ndarray::s![.., ..self.p()]).assign(&self.x);
        }
        m.slice_mut(ndarray::s![.., self.p()..]).assign(&self.a);
        m
    }

    /// Rows selected by index (with repetition allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let x = self.x.select(Axis(0), idx);
        let a = self.a.select(Axis(0), idx);
        let y = self.y.select(Axis(0), idx);
        let subgroup = self
            .subgroup
            .as_ref()
            .map(|s| idx.iter().map(|&i| s[i]).collect());
        Dataset {
            x,
            a,
            y,
            subgroup,
            covariate_names: self.covariate_names.clone(),
            treatment_names: self.treatment_names.clone(),
            outcome_name: self.outcome_name.clone(),
        }
    }

    /// Restrict to rows where the subgroup mask is true.
    pub fn restrict_to_subgroup(&self) -> Result<Dataset> {
        let mask = self.subgroup.as_ref().ok_or_else(|| {
            Error::SchemaMismatch("dataset has no subgroup column".into())
        })?;
        let idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        if idx.len() < 2 {
            return Err(Error::EmptyDataset(format!(
                "subgroup keeps {} rows; at least 2 required",
                idx.len()
            )));
        }
        let mut d = self.select_rows(&idx);
        d.subgroup = None;
        Ok(d)
    }

    /// Write as CSV with 17-significant-digit floats so a reload is bit-exact.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::Io(e.to_string()))?;
        let mut header: Vec<String> = self.covariate_names.clone();
        header.extend(self.treatment_names.iter().cloned());
        header.push(self.outcome_name.clone());
        if self.subgroup.is_some() {
            header.push("subgroup".into());
        }
        wtr.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            for j in 0..self.p() {
                rec.push(format!("{:.16e}", self.x[[i, j]]));
            }
            for j in 0..self.k() {
                rec.push(format!("{:.16e}", self.a[[i, j]]));
            }
            rec.push(format!("{:.16e}", self.y[i]));
            if let Some(s) = &self.subgroup {
                rec.push(if s[i] { "1".into() } else { "0".into() });
            }
            wtr.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }
}

/// Load a CSV file under an explicit column-role schema.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Io(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let col_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("column '{name}' not found in header")))
    };
    let x_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col_of(c))
        .collect::<Result<_>>()?;
    let a_cols: Vec<usize> = schema
        .treatments
        .iter()
        .map(|c| col_of(c))
        .collect::<Result<_>>()?;
    let y_col = col_of(&schema.outcome)?;
    let s_col = schema.subgroup.as_deref().map(col_of).transpose()?;

    let parse_cell = |record: &csv::StringRecord, row: usize, col: usize| -> Result<f64> {
        let name = &headers[col];
        let raw = record.get(col).ok_or_else(|| Error::ParseError {
            row,
            col: name.clone(),
            detail: "missing field".into(),
        })?;
        let trimmed = raw.trim();
        let v: f64 = trimmed.parse().map_err(|_| Error::ParseError {
            row,
            col: name.clone(),
            detail: format!("cannot parse '{trimmed}' as a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::ParseError {
                row,
                col: name.clone(),
                detail: format!("non-finite value '{trimmed}'"),
            });
        }
        Ok(v)
    };

    let mut x_rows: Vec<f64> = Vec::new();
    let mut a_rows: Vec<f64> = Vec::new();
    let mut y_vals: Vec<f64> = Vec::new();
    let mut s_vals: Vec<bool> = Vec::new();
    for (ri, rec) in rdr.records().enumerate() {
        let row = ri + 1; // 1-based data row index
        let rec = rec.map_err(|e| Error::ParseError {
            row,
            col: "<record>".into(),
            detail: e.to_string(),
        })?;
        for &c in &x_cols {
            x_rows.push(parse_cell(&rec, row, c)?);
        }
        for &c in &a_cols {
            a_rows.push(parse_cell(&rec, row, c)?);
        }
        y_vals.push(parse_cell(&rec, row, y_col)?);
        if let Some(c) = s_col {
            let v = parse_cell(&rec, row, c)?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::ParseError {
                    row,
                    col: headers[c].clone(),
                    detail: format!("subgroup value must be 0 or 1, got {v}"),
                });
            }
            s_vals.push(v == 1.0);
        }
    }

    let n = y_vals.len();
    if n < 2 {
        return Err(Error::EmptyDataset(format!(
            "{n} data rows; at least 2 required"
        )));
    }
    let p = x_cols.len();
    let k = a_cols.len();
    let x = Array2::from_shape_vec((n, p), x_rows)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let a = Array2::from_shape_vec((n, k), a_rows)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Dataset::new(
        x,
        a,
        Array1::from_vec(y_vals),
        s_col.map(|_| s_vals),
        schema.covariates.clone(),
        schema.treatments.clone(),
        schema.outcome.clone(),
    )
}

/// Draw `n_out` rows i.i.d. uniformly with replacement.
///
/// Indices come from [`uniform_index`] on the raw stream, so the draw
/// sequence is pinned by the RNG seed alone.
pub fn resample_with_replacement<R: RngCore>(
    d: &Dataset,
    n_out: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if d.n() == 0 {
        return Err(Error::EmptyDataset("cannot resample an empty dataset".into()));
    }
    if n_out == 0 {
        return Err(Error::EmptyDataset("requested resample of 0 rows".into()));
    }
    let idx = resample_indices(d.n(), n_out, rng);
    Ok(d.select_rows(&idx))
}

/// The index sequence behind [`resample_with_replacement`].
pub fn resample_indices<R: RngCore>(n: usize, n_out: usize, rng: &mut R) -> Vec<usize> {
    (0..n_out).map(|_| uniform_index(rng, n)).collect()
}

/// Add Gaussian noise to each treatment column with sd = fraction × column sd.
///
/// Covariates and outcome are untouched. Columns with zero variance are left
/// unchanged, and `fraction = 0` returns the input bit-exactly. Noise is
/// drawn column-major (all rows of column 0 first) so the output is pinned
/// by the seed.
pub fn jitter_treatments<R: RngCore>(d: &Dataset, fraction: f64, rng: &mut R) -> Result<Dataset> {
    if fraction < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "jitter fraction must be >= 0, got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok(d.clone());
    }
    let mut a = d.a.clone();
    for j in 0..d.k() {
        let col = d.a.column(j);
        let sd = sample_sd(col.as_slice().unwrap_or(&col.to_vec()));
        if sd == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, fraction * sd)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for i in 0..d.n() {
            a[[i, j]] += dist.sample(rng);
        }
    }
    Dataset::new(
        d.x.clone(),
        a,
        d.y.clone(),
        d.subgroup.clone(),
        d.covariate_names.clone(),
        d.treatment_names.clone(),
        d.outcome_name.clone(),
    )
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

/// Per-column affine map fitted on an observed sample: (v − mean) / sd.
///
/// Columns whose sd is (numerically) zero are recorded as constant and map
/// to 0 under `transform`; the same fitted map is applied to policy-shifted
/// points so observed and shifted samples share one metric space.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Array1<f64>,
    sd: Array1<f64>,
    constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(m: &ArrayView2<f64>) -> Standardizer {
        let (n, d) = (m.nrows(), m.ncols());
        let mut mean = Array1::zeros(d);
        let mut sd = Array1::zeros(d);
        let mut constant = vec![false; d];
        for j in 0..d {
            let col = m.column(j);
            let mu = col.sum() / n as f64;
            mean[j] = mu;
            let s = if n >= 2 {
                let ss: f64 = col.iter().map(|x| (x - mu) * (x - mu)).sum();
                (ss / (n as f64 - 1.0)).sqrt()
            } else {
                0.0
            };
            // sd indistinguishable from rounding noise counts as constant
            if s <= 1e-12 * (1.0 + mu.abs()) {
                constant[j] = true;
                sd[j] = 0.0;
            } else {
                sd[j] = s;
            }
        }
        Standardizer { mean, sd, constant }
    }

    /// Identity map of the given width (used where raw coordinates are wanted).
    pub fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: Array1::zeros(dim),
            sd: Array1::ones(dim),
            constant: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, m: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fitted on {} columns, got {}",
                self.dim(),
                m.ncols()
            )));
        }
        let mut out = m.to_owned();
        for j in 0..self.dim() {
            let mut col = out.column_mut(j);
            if self.constant[j] {
                col.fill(0.0);
            } else {
                let (mu, s) = (self.mean[j], self.sd[j]);
                col.mapv_inplace(|v| (v - mu) / s);
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, m: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fitted on {} columns, got {}",
                self.dim(),
                m.ncols()
            )));
        }
        let mut out = m.to_owned();
        for j in 0..self.dim() {
            let mut col = out.column_mut(j);
            if self.constant[j] {
                col.fill(self.mean[j]);
            } else {
                let (mu, s) = (self.mean[j], self.sd[j]);
                col.mapv_inplace(|v| v * s + mu);
            }
        }
        Ok(out)
    }
}
