//! Dataset representation, CSV ingestion and standardization.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations `y`, individual-level rows `x` (n x d), group-varying rows
/// `z` (n x m, possibly m = 0) and a group index per observation.
///
/// Groups are stored 0-based and dense: `group_of[i] < n_groups()`. The
/// original labels are kept in `group_names` in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    group_of: Vec<usize>,
    n_per_group: Vec<usize>,
    group_names: Vec<String>,
}

impl Dataset {
    /// Build from explicit dense group indices. `group_names.len()` fixes J.
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        group_of: Vec<usize>,
        group_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || z.nrows() != n || group_of.len() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows but x has {}, z has {}, groups has {}",
                x.nrows(),
                z.nrows(),
                group_of.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Dimension("design must have at least one column".into()));
        }
        let n_groups = group_names.len();
        let mut n_per_group = vec![0usize; n_groups];
        for (i, &g) in group_of.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::Dimension(format!(
                    "observation {i} has group {g} but only {n_groups} groups exist"
                )));
            }
            n_per_group[g] += 1;
        }
        if n > 0 {
            if let Some(j) = n_per_group.iter().position(|&c| c == 0) {
                return Err(Error::Dimension(format!(
                    "group `{}` has no observations",
                    group_names[j]
                )));
            }
        }
        if y.iter().chain(x.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            y,
            x,
            z,
            group_of,
            n_per_group,
            group_names,
        })
    }

    /// Build from arbitrary labels, relabeled densely in first-appearance order.
    pub fn from_labels<S: AsRef<str>>(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        labels: &[S],
    ) -> Result<Self> {
        let (group_of, names) = dense_labels(labels);
        Dataset::new(y, x, z, group_of, names)
    }

    /// Single-group dataset without group-varying rows.
    pub fn ungrouped(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        Dataset::new(
            y,
            x,
            DMatrix::zeros(n, 0),
            vec![0; n],
            vec!["all".to_string()],
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn m(&self) -> usize {
        self.z.ncols()
    }
    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }
    pub fn n_per_group(&self) -> &[usize] {
        &self.n_per_group
    }
    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    /// Observation indices grouped by group, each list in row order.
    pub fn rows_by_group(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_groups()];
        for (i, &g) in self.group_of.iter().enumerate() {
            rows[g].push(i);
        }
        rows
    }

    /// Copy with `z` replaced (same row count).
    pub fn with_z(&self, z: DMatrix<f64>) -> Result<Self> {
        Dataset::new(
            self.y.clone(),
            self.x.clone(),
            z,
            self.group_of.clone(),
            self.group_names.clone(),
        )
    }

    /// Copy with `y` replaced (same row count).
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self> {
        Dataset::new(
            y,
            self.x.clone(),
            self.z.clone(),
            self.group_of.clone(),
            self.group_names.clone(),
        )
    }
}

pub(crate) fn dense_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let group_of = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            *index.entry(l).or_insert_with(|| {
                names.push(l.to_string());
                names.len() - 1
            })
        })
        .collect();
    (group_of, names)
}

/// Column mapping for the generic CSV layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub response: String,
    pub group: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
}

impl CsvSchema {
    /// `y`, `group`, `x0..x{d-1}`, `z0..z{m-1}`.
    pub fn generic(d: usize, m: usize) -> Self {
        CsvSchema {
            response: "y".into(),
            group: "group".into(),
            x: (0..d).map(|k| format!("x{k}")).collect(),
            z: (0..m).map(|k| format!("z{k}")).collect(),
        }
    }

    /// Generic schema sized by counting consecutive `x{k}` / `z{k}` headers.
    pub fn detect_generic(headers: &[String]) -> Self {
        let count = |prefix: char| {
            (0..)
                .take_while(|k| headers.iter().any(|h| *h == format!("{prefix}{k}")))
                .count()
        };
        CsvSchema::generic(count('x'), count('z'))
    }
}

/// Read the header row of a CSV file.
pub fn read_headers(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| map_open_err(path, e))?;
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

fn map_open_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

pub(crate) fn column_index(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

pub(crate) fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Load a dataset. Rows are kept in file order; groups are relabeled densely
/// in first-appearance order. Data rows are numbered from 1 in errors.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| map_open_err(path, e))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if schema.x.is_empty() {
        return Err(Error::Schema("schema names no x columns".into()));
    }
    let y_col = column_index(&headers, &schema.response)?;
    let g_col = column_index(&headers, &schema.group)?;
    let x_cols = schema
        .x
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let z_cols = schema
        .z
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let (d, m) = (x_cols.len(), z_cols.len());
    let mut y = Vec::new();
    let mut xs = Vec::new();
    let mut zs = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        y.push(parse_cell(cell(y_col), row, &schema.response)?);
        let g = cell(g_col).trim();
        if g.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.group.clone(),
                value: String::new(),
            });
        }
        labels.push(g.to_string());
        for (c, name) in x_cols.iter().zip(&schema.x) {
            xs.push(parse_cell(cell(*c), row, name)?);
        }
        for (c, name) in z_cols.iter().zip(&schema.z) {
            zs.push(parse_cell(cell(*c), row, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = y.len();
    Dataset::from_labels(
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, d, &xs),
        DMatrix::from_row_slice(n, m, &zs),
        &labels,
    )
}

/// Write in the generic layout (`y, group, x0.., z0..`) plus optional extra
/// trailing columns. Values use the shortest round-tripping decimal form.
pub fn write_csv(
    data: &Dataset,
    path: impl AsRef<Path>,
    extra: &[(&str, &[f64])],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let schema = CsvSchema::generic(data.d(), data.m());
    let mut header = vec![schema.response.clone(), schema.group.clone()];
    header.extend(schema.x.iter().cloned());
    header.extend(schema.z.iter().cloned());
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.n() {
        let mut cells = vec![
            format!("{}", data.y[i]),
            data.group_names[data.group_of[i]].clone(),
        ];
        cells.extend((0..data.d()).map(|k| format!("{}", data.x[(i, k)])));
        cells.extend((0..data.m()).map(|k| format!("{}", data.z[(i, k)])));
        cells.extend(extra.iter().map(|(_, v)| format!("{}", v[i])));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

/// Which denominator the standard deviation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SdDenominator {
    /// n - 1
    #[default]
    Sample,
    /// n
    Population,
}

/// Affine map `v -> (v - mean) / sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn fit(values: &[f64], denominator: SdDenominator) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Domain(format!(
                "standardization needs at least 2 values, got {n}"
            )));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let denom = match denominator {
            SdDenominator::Sample => (n - 1) as f64,
            SdDenominator::Population => n as f64,
        };
        let sd = (ss / denom).sqrt();
        if !(sd > 0.0) || sd <= f64::EPSILON * mean.abs() {
            return Err(Error::ZeroVariance);
        }
        Ok(Standardization { mean, sd })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn invert(&self, s: f64) -> f64 {
        s * self.sd + self.mean
    }
}

/// Standardize to sample mean 0 and sample standard deviation 1 (n - 1).
pub fn standardize(values: &[f64]) -> Result<(Vec<f64>, Standardization)> {
    standardize_with(values, SdDenominator::Sample)
}

pub fn standardize_with(
    values: &[f64],
    denominator: SdDenominator,
) -> Result<(Vec<f64>, Standardization)> {
    let st = Standardization::fit(values, denominator)?;
    Ok((values.iter().map(|&v| st.apply(v)).collect(), st))
}
