//! Zip-code/year panel ingestion and feature engineering.
//!
//! A panel is read from a CSV with one row per zip code and year. Every row
//! is validated, `(zip, year)` pairs must be unique, and the engineered
//! regressors used by the demand and supply equations are derived for each
//! row whose predecessor year is present:
//!
//! - burden: average EV price over median household income,
//! - saturation: `ln(1 + Q[t-1]) / max(ln(1 + E[t-1]), eps)`, min-max
//!   normalized over the whole panel,
//! - instrument: parking lots times the lagged station total of every
//!   *other* zip code.
//!
//! Counts that can be zero are logged with `ln(1 + x)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default fleet survival fraction between consecutive years.
pub const DEFAULT_DELTA: f64 = 0.95;

/// Floor on the saturation denominator `ln(1 + E[t-1])`.
pub const SATURATION_EPSILON: f64 = 1e-6;

/// Canonical column order of the panel CSV.
pub const CANONICAL_COLUMNS: [&str; 12] = [
    "zip",
    "year",
    "ev_sales",
    "ev_stock",
    "station_stock",
    "avg_ev_price",
    "median_income",
    "white_pop",
    "asian_pop",
    "oil_price",
    "parking_lots",
    "rebate_pct",
];

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column mapping: {0}")]
    Mapping(String),
    #[error("missing column `{column}` (field `{field}`)")]
    MissingColumn { field: String, column: String },
    #[error("line {line}: cannot parse `{value}` in column `{column}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("duplicate (zip, year) = ({zip}, {year}) on lines {first_line} and {second_line}")]
    Duplicate {
        zip: String,
        year: i32,
        first_line: u64,
        second_line: u64,
    },
    #[error("{} invalid row(s); first: line {}: {}", .issues.len(), .issues[0].line, .issues[0].message)]
    Validation { issues: Vec<RowIssue> },
    #[error("lagged values unavailable for year(s) {years:?}")]
    LagUnavailable { years: Vec<i32> },
    #[error("no record has lagged values defined")]
    NoLaggedRecords,
    #[error("domain error: {0}")]
    Domain(String),
}

/// One rejected row, addressed by its CSV line number (header is line 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub field: String,
    pub message: String,
}

/// One zip-code/year observation as read from the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub zip: String,
    pub year: i32,
    pub ev_sales: f64,
    pub ev_stock: f64,
    pub station_stock: f64,
    pub avg_ev_price: f64,
    pub median_income: f64,
    pub white_pop: f64,
    pub asian_pop: f64,
    pub oil_price: f64,
    pub parking_lots: f64,
    pub rebate_pct: f64,
}

impl PanelRecord {
    /// Returns `(field, message)` for every violated record invariant.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let non_negative = [
            ("ev_sales", self.ev_sales),
            ("ev_stock", self.ev_stock),
            ("station_stock", self.station_stock),
            ("parking_lots", self.parking_lots),
            ("white_pop", self.white_pop),
            ("asian_pop", self.asian_pop),
        ];
        for (field, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                out.push((field, format!("{field} must be a finite value >= 0, got {v}")));
            }
        }
        let positive = [
            ("median_income", self.median_income),
            ("avg_ev_price", self.avg_ev_price),
            ("oil_price", self.oil_price),
        ];
        for (field, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                out.push((field, format!("{field} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.rebate_pct) {
            out.push((
                "rebate_pct",
                format!("rebate_pct must lie in [0, 1], got {}", self.rebate_pct),
            ));
        }
        out
    }
}

/// Engineered regressors for a record whose predecessor year is present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRecord {
    pub burden: f64,
    /// Min-max normalized saturation in `[0, 1]`.
    pub saturation: f64,
    /// Saturation ratio before normalization.
    pub raw_saturation: f64,
    pub instrument: f64,
    pub lag_ev_stock: f64,
    pub lag_station_stock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub record: PanelRecord,
    pub derived: Option<DerivedRecord>,
}

/// Min-max bounds of the raw saturation ratio over an estimation panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationBounds {
    pub min: f64,
    pub max: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    SATURATION_EPSILON
}

impl SaturationBounds {
    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// Maps a raw ratio onto the frozen scale. Values outside the panel's
    /// range are not clamped.
    pub fn normalize(&self, raw: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (raw - self.min) / (self.max - self.min)
        }
    }

    /// Normalized saturation computed from lagged stocks.
    pub fn saturation(&self, lag_ev_stock: f64, lag_station_stock: f64) -> f64 {
        self.normalize(saturation_ratio(
            lag_ev_stock,
            lag_station_stock,
            self.epsilon,
        ))
    }
}

/// A validated panel with derived regressors. Rows are ordered by
/// `(year, zip)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    rows: Vec<PanelRow>,
    years: Vec<i32>,
    zips: Vec<String>,
    saturation_bounds: Option<SaturationBounds>,
}

impl Panel {
    /// Builds a panel with the default saturation epsilon.
    pub fn from_records(records: Vec<PanelRecord>) -> Result<Self, PanelError> {
        Self::with_epsilon(records, SATURATION_EPSILON)
    }

    pub fn with_epsilon(mut records: Vec<PanelRecord>, epsilon: f64) -> Result<Self, PanelError> {
        if !(epsilon > 0.0) {
            return Err(PanelError::Domain(format!(
                "saturation epsilon must be > 0, got {epsilon}"
            )));
        }
        let issues: Vec<RowIssue> = records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.violations().into_iter().map(move |(field, message)| RowIssue {
                    line: i as u64 + 2,
                    field: field.to_string(),
                    message,
                })
            })
            .collect();
        if !issues.is_empty() {
            return Err(PanelError::Validation { issues });
        }
        let mut seen: HashMap<(String, i32), usize> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = seen.insert((r.zip.clone(), r.year), i) {
                return Err(PanelError::Duplicate {
                    zip: r.zip.clone(),
                    year: r.year,
                    first_line: first as u64 + 2,
                    second_line: i as u64 + 2,
                });
            }
        }

        records.sort_by(|a, b| a.year.cmp(&b.year).then_with(|| a.zip.cmp(&b.zip)));
        let years: Vec<i32> = records
            .iter()
            .map(|r| r.year)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let zips: Vec<String> = records
            .iter()
            .map(|r| r.zip.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let instruments = compute_instrument(&records)?;
        let saturation = compute_saturation(&records, epsilon).ok();
        let index = lag_index(&records);

        let mut rows = Vec::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let lag = index.get(&(record.zip.as_str(), record.year - 1)).copied();
            let derived = match (lag, instruments[i], saturation.as_ref()) {
                (Some(j), Some(instrument), Some(sat)) => {
                    let prev = &records[j];
                    Some(DerivedRecord {
                        burden: compute_burden(record)?,
                        saturation: sat.values[i].expect("lagged record has saturation"),
                        raw_saturation: sat.raw[i].expect("lagged record has raw ratio"),
                        instrument,
                        lag_ev_stock: prev.ev_stock,
                        lag_station_stock: prev.station_stock,
                    })
                }
                _ => None,
            };
            rows.push(PanelRow {
                record: record.clone(),
                derived,
            });
        }
        Ok(Self {
            rows,
            years,
            zips,
            saturation_bounds: saturation.map(|s| s.bounds),
        })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn records(&self) -> impl Iterator<Item = &PanelRecord> {
        self.rows.iter().map(|r| &r.record)
    }

    /// Rows with lagged values, i.e. the estimation sample.
    pub fn derived_rows(&self) -> impl Iterator<Item = (&PanelRecord, &DerivedRecord)> {
        self.rows
            .iter()
            .filter_map(|r| r.derived.as_ref().map(|d| (&r.record, d)))
    }

    pub fn n_derived(&self) -> usize {
        self.rows.iter().filter(|r| r.derived.is_some()).count()
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn zips(&self) -> &[String] {
        &self.zips
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn saturation_bounds(&self) -> Option<SaturationBounds> {
        self.saturation_bounds
    }

    pub fn year_records(&self, year: i32) -> impl Iterator<Item = &PanelRecord> {
        self.records().filter(move |r| r.year == year)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PanelError> {
        write_records_csv(self.records(), writer)
    }
}

fn lag_index(records: &[PanelRecord]) -> HashMap<(&str, i32), usize> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.zip.as_str(), r.year), i))
        .collect()
}

/// `AP / I`: average EV price as a share of median household income.
pub fn compute_burden(record: &PanelRecord) -> Result<f64, PanelError> {
    burden_from(record.avg_ev_price, record.median_income)
}

pub fn burden_from(avg_ev_price: f64, median_income: f64) -> Result<f64, PanelError> {
    if !(median_income > 0.0) {
        return Err(PanelError::Domain(format!(
            "median income must be > 0, got {median_income}"
        )));
    }
    Ok(avg_ev_price / median_income)
}

/// `Q[t] = s[t] + delta * Q[t-1]`.
pub fn compute_install_base(sales: f64, delta: f64, prev_stock: f64) -> Result<f64, PanelError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(PanelError::Domain(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    if !(sales >= 0.0) || !(prev_stock >= 0.0) {
        return Err(PanelError::Domain(format!(
            "sales and previous stock must be >= 0, got {sales} and {prev_stock}"
        )));
    }
    Ok(sales + delta * prev_stock)
}

/// Raw saturation ratio `ln(1 + Q) / max(ln(1 + E), eps)`.
pub fn saturation_ratio(lag_ev_stock: f64, lag_station_stock: f64, epsilon: f64) -> f64 {
    lag_ev_stock.ln_1p() / lag_station_stock.ln_1p().max(epsilon)
}

/// Normalized saturation per record, plus the panel-wide bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationOutput {
    /// `None` for records without a lagged observation of the same zip.
    pub values: Vec<Option<f64>>,
    pub raw: Vec<Option<f64>>,
    pub bounds: SaturationBounds,
}

/// Computes saturation for every record with a same-zip predecessor, min-max
/// normalized over all such records. When every raw ratio is identical all
/// saturations are zero.
pub fn compute_saturation(
    records: &[PanelRecord],
    epsilon: f64,
) -> Result<SaturationOutput, PanelError> {
    if !(epsilon > 0.0) {
        return Err(PanelError::Domain(format!(
            "saturation epsilon must be > 0, got {epsilon}"
        )));
    }
    let index = lag_index(records);
    let raw: Vec<Option<f64>> = records
        .iter()
        .map(|r| {
            index.get(&(r.zip.as_str(), r.year - 1)).map(|&j| {
                saturation_ratio(records[j].ev_stock, records[j].station_stock, epsilon)
            })
        })
        .collect();
    let (min, max) = raw
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !min.is_finite() {
        return Err(PanelError::NoLaggedRecords);
    }
    let bounds = SaturationBounds { min, max, epsilon };
    let values = raw
        .iter()
        .map(|v| v.map(|r| bounds.normalize(r)))
        .collect();
    Ok(SaturationOutput {
        values,
        raw,
        bounds,
    })
}

/// Instrument per record: `parking_lots[z] * sum_{z' != z} E[z', t-1]`.
///
/// Records of the first panel year have no instrument. A year whose
/// predecessor is absent while earlier years exist is a lag gap and is
/// reported as an error.
pub fn compute_instrument(records: &[PanelRecord]) -> Result<Vec<Option<f64>>, PanelError> {
    let mut by_year: BTreeMap<i32, Vec<(&str, f64)>> = BTreeMap::new();
    for r in records {
        by_year
            .entry(r.year)
            .or_default()
            .push((r.zip.as_str(), r.station_stock));
    }
    let first_year = by_year.keys().next().copied();
    let gaps: Vec<i32> = by_year
        .keys()
        .copied()
        .filter(|&y| Some(y) != first_year && !by_year.contains_key(&(y - 1)))
        .collect();
    if !gaps.is_empty() {
        return Err(PanelError::LagUnavailable { years: gaps });
    }
    // The own count is skipped rather than subtracted from a year total, so
    // the sum does not depend on it even in floating point.
    Ok(records
        .iter()
        .map(|r| {
            let lagged = by_year.get(&(r.year - 1))?;
            let external: f64 = lagged
                .iter()
                .filter(|(zip, _)| *zip != r.zip)
                .map(|(_, e)| e)
                .sum();
            Some(r.parking_lots * external)
        })
        .collect())
}

/// Maps canonical field names to header names in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    columns: BTreeMap<String, String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            columns: CANONICAL_COLUMNS
                .iter()
                .map(|c| (c.to_string(), c.to_string()))
                .collect(),
        }
    }
}

impl ColumnMapping {
    /// Reads a JSON sidecar `{ "<canonical field>": "<header name>", ... }`.
    /// Fields not mentioned keep their canonical header name.
    pub fn from_json_str(s: &str) -> Result<Self, PanelError> {
        let overrides: BTreeMap<String, String> =
            serde_json::from_str(s).map_err(|e| PanelError::Mapping(e.to_string()))?;
        let mut mapping = Self::default();
        for (field, header) in overrides {
            if !mapping.columns.contains_key(&field) {
                return Err(PanelError::Mapping(format!("unknown field `{field}`")));
            }
            mapping.columns.insert(field, header);
        }
        Ok(mapping)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, PanelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn header_for<'a>(&'a self, field: &'a str) -> &'a str {
        self.columns.get(field).map(String::as_str).unwrap_or(field)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    /// Abort on the first batch of invalid rows.
    #[default]
    Strict,
    /// Drop invalid rows and report them.
    Lenient,
}

#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: Panel,
    /// Rows dropped in lenient mode.
    pub rejected: Vec<RowIssue>,
}

pub fn load_panel(
    path: impl AsRef<Path>,
    mapping: &ColumnMapping,
    mode: LoadMode,
) -> Result<LoadedPanel, PanelError> {
    read_panel(File::open(path)?, mapping, mode)
}

/// Reads a panel CSV from any reader.
pub fn read_panel<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    mode: LoadMode,
) -> Result<LoadedPanel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = [0usize; 12];
    for (slot, field) in positions.iter_mut().zip(CANONICAL_COLUMNS) {
        let column = mapping.header_for(field);
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| PanelError::MissingColumn {
                field: field.to_string(),
                column: column.to_string(),
            })?;
    }

    let mut kept: Vec<(u64, PanelRecord)> = Vec::new();
    let mut issues: Vec<RowIssue> = Vec::new();
    for result in rdr.records() {
        let row = result?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |i: usize| row.get(positions[i]).unwrap_or("");
        let number = |i: usize| -> Result<f64, PanelError> {
            cell(i).parse::<f64>().map_err(|_| PanelError::Parse {
                line,
                column: mapping.header_for(CANONICAL_COLUMNS[i]).to_string(),
                value: cell(i).to_string(),
            })
        };
        let parsed = (|| -> Result<PanelRecord, PanelError> {
            let year_cell = cell(1);
            let year = year_cell.parse::<i32>().map_err(|_| PanelError::Parse {
                line,
                column: mapping.header_for("year").to_string(),
                value: year_cell.to_string(),
            })?;
            Ok(PanelRecord {
                zip: cell(0).to_string(),
                year,
                ev_sales: number(2)?,
                ev_stock: number(3)?,
                station_stock: number(4)?,
                avg_ev_price: number(5)?,
                median_income: number(6)?,
                white_pop: number(7)?,
                asian_pop: number(8)?,
                oil_price: number(9)?,
                parking_lots: number(10)?,
                rebate_pct: number(11)?,
            })
        })();
        let record = match parsed {
            Ok(r) => r,
            Err(PanelError::Parse {
                line,
                column,
                value,
            }) if mode == LoadMode::Lenient => {
                issues.push(RowIssue {
                    line,
                    field: column.clone(),
                    message: format!("cannot parse `{value}` in column `{column}`"),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let violations = record.violations();
        if violations.is_empty() {
            kept.push((line, record));
        } else {
            issues.extend(violations.into_iter().map(|(field, message)| RowIssue {
                line,
                field: field.to_string(),
                message,
            }));
        }
    }
    if !issues.is_empty() && mode == LoadMode::Strict {
        return Err(PanelError::Validation { issues });
    }

    let mut seen: HashMap<(String, i32), u64> = HashMap::new();
    for (line, r) in &kept {
        if let Some(first) = seen.insert((r.zip.clone(), r.year), *line) {
            return Err(PanelError::Duplicate {
                zip: r.zip.clone(),
                year: r.year,
                first_line: first,
                second_line: *line,
            });
        }
    }
    let panel = Panel::from_records(kept.into_iter().map(|(_, r)| r).collect())?;
    Ok(LoadedPanel {
        panel,
        rejected: issues,
    })
}

/// Writes records under the canonical header. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_records_csv<'a, W: Write>(
    records: impl IntoIterator<Item = &'a PanelRecord>,
    writer: W,
) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CANONICAL_COLUMNS)?;
    for r in records {
        w.write_record([
            r.zip.clone(),
            r.year.to_string(),
            r.ev_sales.to_string(),
            r.ev_stock.to_string(),
            r.station_stock.to_string(),
            r.avg_ev_price.to_string(),
            r.median_income.to_string(),
            r.white_pop.to_string(),
            r.asian_pop.to_string(),
            r.oil_price.to_string(),
            r.parking_lots.to_string(),
            r.rebate_pct.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
