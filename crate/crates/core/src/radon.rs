//! Minnesota radon table and the six candidate model matrices.
//!
//! `y` is standardized log radon and `v` the standardized county log uranium.
//! The floor indicator `t` enters as `(1 - t, t)` so both floors get the same
//! prior uncertainty.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dense_labels, Dataset, SdDenominator, Standardization};
use crate::dist::InvGamma;
use crate::error::{Error, Result};
use crate::model::{CorrPrior, Family, ModelSpec};

const BUNDLED: &str = include_str!("../data/radon.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct RadonRow {
    pub county: String,
    /// 0 = basement, 1 = first floor.
    pub floor: u8,
    pub log_radon: f64,
    pub log_uranium: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadonTable {
    rows: Vec<RadonRow>,
}

impl RadonTable {
    /// The 919-row Minnesota table shipped with the crate.
    pub fn bundled() -> Self {
        RadonTable::parse(BUNDLED).expect("bundled radon table parses")
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RadonTable::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("radon table has no `{name}` column")))
        };
        let (ic, ifl, iy, iu) = (col("county")?, col("floor")?, col("log_radon")?, col("log_uranium")?);
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k + 1;
            let num = |i: usize, name: &str| -> Result<f64> {
                let cell = rec.get(i).unwrap_or("");
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: name.to_string(),
                    value: cell.to_string(),
                })
            };
            let floor = match rec.get(ifl).unwrap_or("") {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        row,
                        column: "floor".into(),
                        value: other.to_string(),
                    })
                }
            };
            let county = rec.get(ic).unwrap_or("").to_string();
            if county.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: "county".into(),
                    value: String::new(),
                });
            }
            rows.push(RadonRow {
                county,
                floor,
                log_radon: num(iy, "log_radon")?,
                log_uranium: num(iu, "log_uranium")?,
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(RadonTable { rows })
    }

    pub fn rows(&self) -> &[RadonRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// County names in first-appearance order and the county index of each row.
    pub fn counties(&self) -> (Vec<usize>, Vec<String>) {
        dense_labels(&self.rows.iter().map(|r| r.county.as_str()).collect::<Vec<_>>())
    }

    /// One uranium value per county (first-appearance order); errors if a
    /// county carries inconsistent values.
    pub fn county_uranium(&self) -> Result<Vec<f64>> {
        let (group_of, names) = self.counties();
        let mut u: Vec<Option<f64>> = vec![None; names.len()];
        for (r, &g) in self.rows.iter().zip(&group_of) {
            match u[g] {
                None => u[g] = Some(r.log_uranium),
                Some(v) if v != r.log_uranium => {
                    return Err(Error::Schema(format!(
                        "county `{}` has more than one uranium value",
                        names[g]
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(u.into_iter().map(|v| v.expect("every county has a row")).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RadonModel {
    M0,
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl RadonModel {
    pub const ALL: [RadonModel; 6] = [
        RadonModel::M0,
        RadonModel::M1,
        RadonModel::M2,
        RadonModel::M3,
        RadonModel::M4,
        RadonModel::M5,
    ];

    pub fn family(self) -> Family {
        match self {
            RadonModel::M4 => Family::SimpleMultilevel,
            RadonModel::M5 => Family::GeneralMultilevel,
            _ => Family::LinearModel,
        }
    }

    fn uses_uranium(self) -> bool {
        matches!(self, RadonModel::M1 | RadonModel::M4 | RadonModel::M5)
    }
}

impl fmt::Display for RadonModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RadonModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches("radon:");
        RadonModel::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Whether uranium standardization constants come from the county values
/// (one per county) or from the row-expanded column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UraniumScale {
    #[default]
    County,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadonOptions {
    pub y_denominator: SdDenominator,
    pub uranium_scale: UraniumScale,
    pub uranium_denominator: SdDenominator,
}

impl Default for RadonOptions {
    /// Population standard deviations; these reproduce the reference evidence
    /// values (the sample convention shifts every model by about half a nat).
    fn default() -> Self {
        RadonOptions {
            y_denominator: SdDenominator::Population,
            uranium_scale: UraniumScale::County,
            uranium_denominator: SdDenominator::Population,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadonDesign {
    pub model: RadonModel,
    pub data: Dataset,
    /// One label per column of `x`.
    pub labels: Vec<String>,
    /// Columns removed because the county has no first-floor rows (M3 only).
    pub dropped: Vec<String>,
    /// Per-row floor indicator, kept for fit export.
    pub floor: Vec<u8>,
    pub y_scaling: Standardization,
    pub uranium_scaling: Standardization,
    pub options: RadonOptions,
}

impl RadonDesign {
    /// Human-readable notes on preprocessing choices, for output metadata.
    pub fn notes(&self) -> Vec<String> {
        let den = |d: SdDenominator| match d {
            SdDenominator::Sample => "n-1",
            SdDenominator::Population => "n",
        };
        let mut v = vec![format!(
            "log radon standardized with mean {:.6}, sd {:.6} (denominator {})",
            self.y_scaling.mean,
            self.y_scaling.sd,
            den(self.options.y_denominator)
        )];
        if self.model.uses_uranium() {
            v.push(format!(
                "log uranium standardized from {} values with mean {:.6}, sd {:.6} (denominator {})",
                match self.options.uranium_scale {
                    UraniumScale::County => "county-level",
                    UraniumScale::Row => "row-level",
                },
                self.uranium_scaling.mean,
                self.uranium_scaling.sd,
                den(self.options.uranium_denominator)
            ));
        }
        if !self.dropped.is_empty() {
            v.push(format!(
                "{} first-floor columns dropped for counties without first-floor data",
                self.dropped.len()
            ));
        }
        v
    }
}

/// Model matrix with the default preprocessing; returns the dataset and
/// the column labels.
pub fn build_radon_design(raw: &RadonTable, model: RadonModel) -> Result<(Dataset, Vec<String>)> {
    let d = build_radon_design_with(raw, model, &RadonOptions::default())?;
    Ok((d.data, d.labels))
}

pub fn build_radon_design_with(
    raw: &RadonTable,
    model: RadonModel,
    opts: &RadonOptions,
) -> Result<RadonDesign> {
    if raw.is_empty() {
        return Err(Error::EmptyData);
    }
    let rows = raw.rows();
    let n = rows.len();
    let (group_of, names) = raw.counties();
    let j = names.len();

    let log_radon: Vec<f64> = rows.iter().map(|r| r.log_radon).collect();
    let y_scaling = Standardization::fit(&log_radon, opts.y_denominator)?;
    let y = DVector::from_iterator(n, log_radon.iter().map(|&v| y_scaling.apply(v)));

    let county_u = raw.county_uranium()?;
    let uranium_scaling = match opts.uranium_scale {
        UraniumScale::County => Standardization::fit(&county_u, opts.uranium_denominator)?,
        UraniumScale::Row => {
            let all: Vec<f64> = rows.iter().map(|r| r.log_uranium).collect();
            Standardization::fit(&all, opts.uranium_denominator)?
        }
    };
    let v: Vec<f64> = group_of
        .iter()
        .map(|&g| uranium_scaling.apply(county_u[g]))
        .collect();
    let t: Vec<f64> = rows.iter().map(|r| f64::from(r.floor)).collect();

    let mut labels: Vec<String> = Vec::new();
    let mut dropped = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let basement: Vec<f64> = t.iter().map(|t| 1.0 - t).collect();

    match model {
        RadonModel::M0 | RadonModel::M1 | RadonModel::M4 | RadonModel::M5 => {
            cols.push(basement.clone());
            cols.push(t.clone());
            labels.extend(["basement".to_string(), "first_floor".to_string()]);
            if model.uses_uranium() {
                cols.push(v.clone());
                labels.push("uranium".into());
            }
        }
        RadonModel::M2 => {
            for (k, name) in names.iter().enumerate() {
                cols.push(group_of.iter().map(|&g| f64::from(u8::from(g == k))).collect());
                labels.push(format!("county[{name}]"));
            }
            cols.push(basement.clone());
            cols.push(t.clone());
            labels.extend(["basement".to_string(), "first_floor".to_string()]);
        }
        RadonModel::M3 => {
            for (k, name) in names.iter().enumerate() {
                cols.push(
                    group_of
                        .iter()
                        .zip(&basement)
                        .map(|(&g, &b)| if g == k { b } else { 0.0 })
                        .collect(),
                );
                labels.push(format!("basement[{name}]"));
            }
            for (k, name) in names.iter().enumerate() {
                let col: Vec<f64> = group_of
                    .iter()
                    .zip(&t)
                    .map(|(&g, &tt)| if g == k { tt } else { 0.0 })
                    .collect();
                let label = format!("first_floor[{name}]");
                if col.iter().any(|&c| c != 0.0) {
                    cols.push(col);
                    labels.push(label);
                } else {
                    dropped.push(label);
                }
            }
        }
    }

    let d = cols.len();
    let x = DMatrix::from_fn(n, d, |i, k| cols[k][i]);
    let z = if model == RadonModel::M5 {
        DMatrix::from_fn(n, 2, |i, k| if k == 0 { basement[i] } else { t[i] })
    } else {
        DMatrix::zeros(n, 0)
    };
    debug_assert_eq!(names.len(), j);
    let data = Dataset::new(y, x, z, group_of, names)?;
    Ok(RadonDesign {
        model,
        data,
        labels,
        dropped,
        floor: rows.iter().map(|r| r.floor).collect(),
        y_scaling,
        uranium_scaling,
        options: *opts,
    })
}

/// Priors used for every radon model: `β ~ N(0, I)` and `IG(3, 1)` on each
/// variance; M5 adds a truncated-normal correlation between its two group effects.
pub fn radon_spec(model: RadonModel, d: usize) -> ModelSpec {
    let mu = DVector::zeros(d);
    let cov = DMatrix::identity(d, d);
    let ig = InvGamma::new(3.0, 1.0);
    match model {
        RadonModel::M4 => ModelSpec::simple_multilevel(mu, cov, ig, ig),
        RadonModel::M5 => ModelSpec::general_multilevel(
            mu,
            cov,
            ig,
            vec![ig, ig],
            vec![(0, 1)],
            Some(CorrPrior::TruncatedNormal),
        ),
        _ => ModelSpec::linear(mu, cov, ig),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_summary() {
        let t = RadonTable::bundled();
        assert_eq!(t.len(), 919);
        let (_, names) = t.counties();
        assert_eq!(names.len(), 85);
        let basement = t.rows().iter().filter(|r| r.floor == 0).count();
        assert_eq!(basement, 766);
        let y: Vec<f64> = t.rows().iter().map(|r| r.log_radon).collect();
        let s = Standardization::fit(&y, SdDenominator::Sample).unwrap();
        assert!((s.mean - 1.265).abs() < 5e-4);
        assert!((s.sd - 0.819).abs() < 5e-4);
        let u = t.county_uranium().unwrap();
        let su = Standardization::fit(&u, SdDenominator::Sample).unwrap();
        assert!((su.mean - 0.014).abs() < 5e-4);
        assert!((su.sd - 0.384).abs() < 5e-4);
        let (lo, hi) = u.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((lo + 0.882).abs() < 5e-4 && (hi - 0.528).abs() < 5e-4);
    }

    #[test]
    fn county_mean_range() {
        let t = RadonTable::bundled();
        let (g, names) = t.counties();
        let mut s = vec![0.0; names.len()];
        let mut c = vec![0usize; names.len()];
        for (r, &k) in t.rows().iter().zip(&g) {
            s[k] += r.log_radon;
            c[k] += 1;
        }
        let means: Vec<f64> = s.iter().zip(&c).map(|(s, &c)| s / c as f64).collect();
        let lo = means.iter().cloned().fold(f64::MAX, f64::min);
        let hi = means.iter().cloned().fold(f64::MIN, f64::max);
        assert!((lo - 0.410).abs() < 5e-4 && (hi - 2.606).abs() < 5e-4);
        assert_eq!(*c.iter().max().unwrap(), 116);
        assert_eq!(*c.iter().min().unwrap(), 1);
    }

    #[test]
    fn model_dimensions() {
        let t = RadonTable::bundled();
        let dims: Vec<(usize, usize)> = RadonModel::ALL
            .iter()
            .map(|&m| {
                let (d, _) = build_radon_design(&t, m).unwrap();
                (d.d(), d.m())
            })
            .collect();
        assert_eq!(dims, vec![(2, 0), (3, 0), (87, 0), (145, 0), (3, 0), (3, 2)]);
    }

    #[test]
    fn m3_drops_25_first_floor_columns() {
        let t = RadonTable::bundled();
        let d = build_radon_design_with(&t, RadonModel::M3, &RadonOptions::default()).unwrap();
        assert_eq!(d.dropped.len(), 25);
        assert_eq!(d.labels.len(), 145);
        assert!(d.dropped.iter().all(|l| !d.labels.contains(l)));
    }

    #[test]
    fn indicator_blocks_sum_to_one() {
        let t = RadonTable::bundled();
        for m in [RadonModel::M2, RadonModel::M3] {
            let (d, _) = build_radon_design(&t, m).unwrap();
            let j = d.n_groups();
            for i in 0..d.n() {
                let s: f64 = if m == RadonModel::M2 {
                    (0..j).map(|k| d.x()[(i, k)]).sum()
                } else {
                    (0..d.d()).map(|k| d.x()[(i, k)]).sum()
                };
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn single_basement_row_m0() {
        let t = RadonTable::parse("county,floor,log_radon,log_uranium\nA,0,1.0,0.1\nB,1,2.0,0.3\n").unwrap();
        let (d, labels) = build_radon_design(&t, RadonModel::M0).unwrap();
        assert_eq!((d.x()[(0, 0)], d.x()[(0, 1)]), (1.0, 0.0));
        assert_eq!(labels, vec!["basement", "first_floor"]);
    }

    #[test]
    fn deterministic_build() {
        let t = RadonTable::bundled();
        let a = build_radon_design(&t, RadonModel::M5).unwrap();
        let b = build_radon_design(&t, RadonModel::M5).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn model_ids_parse() {
        assert_eq!("radon:M4".parse::<RadonModel>().unwrap(), RadonModel::M4);
        assert_eq!("m0".parse::<RadonModel>().unwrap(), RadonModel::M0);
        assert!("radon:M9".parse::<RadonModel>().is_err());
    }

    #[test]
    fn inconsistent_uranium_is_rejected() {
        let t = RadonTable::parse("county,floor,log_radon,log_uranium\nA,0,1.0,0.1\nA,1,2.0,0.3\n").unwrap();
        assert!(t.county_uranium().is_err());
    }
}
