//! Unit records, the anticipated-length-of-stay instrument and exact-match
//! strata.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Column roles in the input table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub id: String,
    /// Hour of birth (0-23; fractional values floor to the hour).
    pub hour: String,
    /// Observed length of stay in hours.
    #[serde(default)]
    pub los: Option<String>,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub nominal: Vec<String>,
    #[serde(default)]
    pub exact_keys: Vec<String>,
    /// Covariates whose missing cells are replaced by the stratum mean, with
    /// a companion `<name>_missing` indicator appended to the covariates.
    #[serde(default)]
    pub impute: Vec<String>,
}

/// Which columns ingestion may touch.
///
/// `Design` never looks up the outcome column, so a matched design cannot
/// depend on outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Design,
    Analysis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    pub covariates: Vec<f64>,
    pub nominal: Vec<String>,
    pub exact_keys: Vec<String>,
    pub hour: u8,
    pub los: Option<f64>,
    /// Anticipated length of stay, filled by [`Cohort::compute_alos`].
    pub instrument: Option<f64>,
    pub outcome: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub covariate_names: Vec<String>,
    pub nominal_names: Vec<String>,
    pub exact_key_names: Vec<String>,
    pub units: Vec<Unit>,
    columns_read: Vec<String>,
}

/// Median observed stay per birth hour.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlosTable {
    pub by_hour: BTreeMap<u8, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub key: Vec<String>,
    /// Indices into `Cohort::units`, in cohort order.
    pub members: Vec<usize>,
}

impl Stratum {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn key_string(&self) -> String {
        join_key(&self.key)
    }
}

pub fn join_key(key: &[String]) -> String {
    key.join("|")
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })
}

fn parse_binary(cell: &str, row: usize, column: &str) -> Result<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

impl Cohort {
    /// Reads a header-led CSV table. Rows are numbered from 1, header
    /// excluded.
    pub fn ingest<R: Read>(source: R, schema: &Schema, access: Access) -> Result<Cohort> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::Fields)
            .from_reader(source);
        let header = reader.headers()?.clone();
        let mut columns_read = Vec::new();
        let mut locate = |name: &str| -> Result<usize> {
            let idx = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
            if !columns_read.iter().any(|c| c == name) {
                columns_read.push(name.to_string());
            }
            Ok(idx)
        };

        let id_col = locate(&schema.id)?;
        let hour_col = locate(&schema.hour)?;
        let los_col = schema.los.as_deref().map(&mut locate).transpose()?;
        let outcome_col = match access {
            Access::Analysis => schema.outcome.as_deref().map(&mut locate).transpose()?,
            Access::Design => None,
        };
        let cov_cols = schema
            .covariates
            .iter()
            .map(|c| locate(c))
            .collect::<Result<Vec<_>>>()?;
        let nominal_cols = schema
            .nominal
            .iter()
            .map(|c| locate(c))
            .collect::<Result<Vec<_>>>()?;
        let key_cols = schema
            .exact_keys
            .iter()
            .map(|c| locate(c))
            .collect::<Result<Vec<_>>>()?;
        for name in &schema.impute {
            if !schema.covariates.contains(name) {
                return Err(Error::Config(format!(
                    "impute column {name:?} is not a covariate"
                )));
            }
        }
        let imputable: Vec<bool> = schema
            .covariates
            .iter()
            .map(|c| schema.impute.contains(c))
            .collect();

        let mut seen = HashSet::new();
        let mut units = Vec::new();
        // raw covariate cells, None where missing and imputable
        let mut raw: Vec<Vec<Option<f64>>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let cell = |idx: usize| record.get(idx).unwrap_or("");

            let id = cell(id_col).to_string();
            if id.is_empty() {
                return Err(Error::MissingValue {
                    row,
                    column: schema.id.clone(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }

            let hour_cell = cell(hour_col);
            if is_missing(hour_cell) {
                return Err(Error::MissingValue {
                    row,
                    column: schema.hour.clone(),
                });
            }
            let hour_value = parse_number(hour_cell, row, &schema.hour)?;
            let hour = hour_value.floor();
            if !(0.0..24.0).contains(&hour) {
                return Err(Error::Parse {
                    row,
                    column: schema.hour.clone(),
                    value: hour_cell.to_string(),
                });
            }

            let los = match los_col {
                Some(c) if !is_missing(cell(c)) => {
                    let name = schema.los.as_deref().unwrap_or_default();
                    let v = parse_number(cell(c), row, name)?;
                    if v < 0.0 {
                        return Err(Error::Parse {
                            row,
                            column: name.to_string(),
                            value: cell(c).to_string(),
                        });
                    }
                    Some(v)
                }
                _ => None,
            };

            let outcome = match outcome_col {
                Some(c) if !is_missing(cell(c)) => Some(parse_binary(
                    cell(c),
                    row,
                    schema.outcome.as_deref().unwrap_or_default(),
                )?),
                _ => None,
            };

            let mut covs = Vec::with_capacity(cov_cols.len());
            for (k, &c) in cov_cols.iter().enumerate() {
                let name = &schema.covariates[k];
                if is_missing(cell(c)) {
                    if imputable[k] {
                        covs.push(None);
                        continue;
                    }
                    return Err(Error::MissingValue {
                        row,
                        column: name.clone(),
                    });
                }
                covs.push(Some(parse_number(cell(c), row, name)?));
            }

            let nominal = nominal_cols
                .iter()
                .zip(&schema.nominal)
                .map(|(&c, name)| {
                    let v = cell(c);
                    if v.is_empty() {
                        Err(Error::MissingValue {
                            row,
                            column: name.clone(),
                        })
                    } else {
                        Ok(v.to_string())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let exact_keys = key_cols
                .iter()
                .map(|&c| cell(c).to_string())
                .collect::<Vec<_>>();

            units.push(Unit {
                id,
                covariates: Vec::new(),
                nominal,
                exact_keys,
                hour: hour as u8,
                los,
                instrument: None,
                outcome,
            });
            raw.push(covs);
        }

        let mut covariate_names = schema.covariates.clone();
        let flagged: Vec<usize> = (0..imputable.len()).filter(|&k| imputable[k]).collect();
        for &k in &flagged {
            covariate_names.push(format!("{}_missing", schema.covariates[k]));
        }
        let fill = impute_means(&units, &raw, &flagged);
        for (i, unit) in units.iter_mut().enumerate() {
            let mut covs: Vec<f64> = raw[i]
                .iter()
                .enumerate()
                .map(|(k, v)| v.unwrap_or_else(|| fill[i][k]))
                .collect();
            for &k in &flagged {
                covs.push(if raw[i][k].is_none() { 1.0 } else { 0.0 });
            }
            unit.covariates = covs;
        }

        Ok(Cohort {
            covariate_names,
            nominal_names: schema.nominal.clone(),
            exact_key_names: schema.exact_keys.clone(),
            units,
            columns_read,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Input columns that ingestion looked up, in first-access order.
    pub fn columns_read(&self) -> &[String] {
        &self.columns_read
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn nominal_index(&self, name: &str) -> Option<usize> {
        self.nominal_names.iter().position(|c| c == name)
    }

    /// Sorted distinct categories of a nominal variable.
    pub fn categories(&self, nominal: usize) -> Vec<String> {
        let mut cats: Vec<String> = self
            .units
            .iter()
            .map(|u| u.nominal[nominal].clone())
            .collect();
        cats.sort();
        cats.dedup();
        cats
    }

    /// Computes the anticipated length of stay per birth hour and stores it
    /// on every unit as the instrument value.
    pub fn compute_alos(&mut self) -> Result<AlosTable> {
        let table = AlosTable::from_stays(self.units.iter().map(|u| match u.los {
            Some(los) => Ok((u.hour, los)),
            None => Err(Error::InvalidArgument(format!(
                "unit {:?} has no observed length of stay",
                u.id
            ))),
        }))?;
        table.apply(self)?;
        Ok(table)
    }

    /// Partitions units by their exact-match key, ordered lexicographically
    /// by key.
    pub fn stratify(&self) -> Vec<Stratum> {
        let mut groups: BTreeMap<&[String], Vec<usize>> = BTreeMap::new();
        for (i, u) in self.units.iter().enumerate() {
            groups.entry(u.exact_keys.as_slice()).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(key, members)| Stratum {
                key: key.to_vec(),
                members,
            })
            .collect()
    }
}

fn impute_means(units: &[Unit], raw: &[Vec<Option<f64>>], flagged: &[usize]) -> Vec<Vec<f64>> {
    let k = raw.first().map_or(0, Vec::len);
    let mut fill = vec![vec![0.0; k]; units.len()];
    if flagged.is_empty() {
        return fill;
    }
    let mut by_key: BTreeMap<&[String], Vec<usize>> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        by_key.entry(u.exact_keys.as_slice()).or_default().push(i);
    }
    let mean_of = |rows: &mut dyn Iterator<Item = usize>, col: usize| -> Option<f64> {
        let (s, n) = rows
            .filter_map(|i| raw[i][col])
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    for &col in flagged {
        let global = mean_of(&mut (0..units.len()), col).unwrap_or(0.0);
        for members in by_key.values() {
            let m = mean_of(&mut members.iter().copied(), col).unwrap_or(global);
            for &i in members {
                fill[i][col] = m;
            }
        }
    }
    fill
}

/// Median with the even-count rule "mean of the two middle values".
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return Some(upper);
    }
    let lower = values[..mid]
        .iter()
        .copied()
        .max_by(f64::total_cmp)
        .expect("mid > 0 for even n >= 2");
    Some((lower + upper) / 2.0)
}

impl AlosTable {
    pub fn from_stays<I>(stays: I) -> Result<AlosTable>
    where
        I: IntoIterator<Item = Result<(u8, f64)>>,
    {
        let mut groups: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        for s in stays {
            let (hour, los) = s?;
            if hour > 23 {
                return Err(Error::InvalidArgument(format!("hour {hour} outside 0-23")));
            }
            groups.entry(hour).or_default().push(los);
        }
        let by_hour = groups
            .into_iter()
            .map(|(h, mut v)| (h, median(&mut v).expect("groups are non-empty")))
            .collect();
        Ok(AlosTable { by_hour })
    }

    pub fn get(&self, hour: u8) -> Option<f64> {
        self.by_hour.get(&hour).copied()
    }

    /// Writes the table value into each unit's instrument.
    pub fn apply(&self, cohort: &mut Cohort) -> Result<()> {
        for u in &mut cohort.units {
            let v = self.get(u.hour).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unit {:?} has birth hour {} with no ALOS entry",
                    u.id, u.hour
                ))
            })?;
            u.instrument = Some(v);
        }
        Ok(())
    }
}
