//! Quarterly cross-sections of technical variables: CSV ingestion, labeling,
//! sector partitioning, train/test splitting and z-score standardization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Compustat mnemonics of the 30 explanatory variables, in index order.
pub const FEATURE_SCHEMA: [&str; 30] = [
    "ACTQ", "CHEQ", "DLCQ", "DLTTQ", "EPSPXQ", "EPSX12", "ICAPTQ", "LCTQ", "LTQ", "NIQ", "OEPS12",
    "OIADPQ", "REVTQ", "SPCE12", "SPCEQ", "WCAPQ", "XOPRQ", "CAPXY", "EPSFIY", "IVCHY", "REVTY",
    "SPCEDY", "SPCEEPSPY", "SPCEPY", "XOPRY", "CSHTRQ", "MKVALTQ", "PRCCQ", "PRCHQ", "PRCLQ",
];

pub fn default_schema() -> Vec<String> {
    FEATURE_SCHEMA.iter().map(|s| s.to_string()).collect()
}

/// Default minimum sector size below which a sector is skipped.
pub const DEFAULT_CRITICAL_MASS: usize = 40;

/// Direction of the price shift over the labeling horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// `+1.0` or `-1.0`.
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// Strictly positive values map to `Positive`; zero and below to `Negative`.
    pub fn from_sign(value: f64) -> Label {
        if value > 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl From<Label> for i8 {
    fn from(label: Label) -> i8 {
        match label {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => write!(f, "+1"),
            Label::Negative => write!(f, "-1"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "1" | "+1" | "1.0" | "+1.0" => Ok(Label::Positive),
            "-1" | "-1.0" => Ok(Label::Negative),
            other => Err(format!("unrecognized label `{other}`")),
        }
    }
}

/// +1 iff the subsequent price is strictly above the initial price.
pub fn label_from_prices(initial_price: f64, subsequent_price: f64) -> Result<Label> {
    if !(initial_price > 0.0 && subsequent_price > 0.0) {
        return Err(Error::NonPositivePrice {
            initial: initial_price,
            subsequent: subsequent_price,
        });
    }
    Ok(if subsequent_price > initial_price {
        Label::Positive
    } else {
        Label::Negative
    })
}

/// GICS sectors plus the pseudo-sector used for full-market runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Energy,
    Materials,
    Industrials,
    ConsumerDiscretionary,
    ConsumerStaples,
    HealthCare,
    Financials,
    InformationTechnology,
    TelecommunicationServices,
    Utilities,
    Aggregated,
}

impl Sector {
    pub const GICS: [Sector; 10] = [
        Sector::Energy,
        Sector::Materials,
        Sector::Industrials,
        Sector::ConsumerDiscretionary,
        Sector::ConsumerStaples,
        Sector::HealthCare,
        Sector::Financials,
        Sector::InformationTechnology,
        Sector::TelecommunicationServices,
        Sector::Utilities,
    ];

    /// Two-digit GICS code; `Aggregated` has none and reports 0.
    pub fn code(self) -> u8 {
        match self {
            Sector::Energy => 10,
            Sector::Materials => 15,
            Sector::Industrials => 20,
            Sector::ConsumerDiscretionary => 25,
            Sector::ConsumerStaples => 30,
            Sector::HealthCare => 35,
            Sector::Financials => 40,
            Sector::InformationTechnology => 45,
            Sector::TelecommunicationServices => 50,
            Sector::Utilities => 55,
            Sector::Aggregated => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sector::Energy => "Energy",
            Sector::Materials => "Materials",
            Sector::Industrials => "Industrials",
            Sector::ConsumerDiscretionary => "Consumer Discretionary",
            Sector::ConsumerStaples => "Consumer Staples",
            Sector::HealthCare => "Health Care",
            Sector::Financials => "Financials",
            Sector::InformationTechnology => "Information Technology",
            Sector::TelecommunicationServices => "Telecommunication Services",
            Sector::Utilities => "Utilities",
            Sector::Aggregated => "Aggregated",
        }
    }

    pub fn from_code(code: u8) -> Option<Sector> {
        Sector::GICS.iter().copied().find(|s| s.code() == code)
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u8>() {
            return Sector::from_code(code).ok_or_else(|| format!("unknown GICS code {code}"));
        }
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let sector = match key.as_str() {
            "energy" => Sector::Energy,
            "materials" => Sector::Materials,
            "industrials" => Sector::Industrials,
            "consumerdiscretionary" => Sector::ConsumerDiscretionary,
            "consumerstaples" => Sector::ConsumerStaples,
            "healthcare" => Sector::HealthCare,
            "financials" => Sector::Financials,
            "informationtechnology" => Sector::InformationTechnology,
            "telecommunicationservices" | "telecommunications" => {
                Sector::TelecommunicationServices
            }
            "utilities" => Sector::Utilities,
            "aggregated" => Sector::Aggregated,
            _ => return Err(format!("unknown sector `{s}`")),
        };
        Ok(sector)
    }
}

/// Calendar quarter, ordered chronologically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Quarter {
    pub year: i32,
    pub index: u8,
}

impl Quarter {
    pub fn new(year: i32, index: u8) -> Result<Quarter> {
        if !(1..=4).contains(&index) {
            return Err(Error::InvalidParameter(format!(
                "quarter index must be in 1..=4, got {index}"
            )));
        }
        Ok(Quarter { year, index })
    }

    pub fn next(self) -> Quarter {
        if self.index == 4 {
            Quarter {
                year: self.year + 1,
                index: 1,
            }
        } else {
            Quarter {
                year: self.year,
                index: self.index + 1,
            }
        }
    }

    /// Inclusive range `self..=end`; empty if `end < self`.
    pub fn through(self, end: Quarter) -> Vec<Quarter> {
        let mut out = Vec::new();
        let mut q = self;
        while q <= end {
            out.push(q);
            q = q.next();
        }
        out
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.index)
    }
}

impl FromStr for Quarter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (year, q) = s
            .split_once(['Q', 'q'])
            .ok_or_else(|| format!("expected YYYYQn, got `{s}`"))?;
        let year = year.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let index = q.parse().map_err(|_| format!("bad quarter in `{s}`"))?;
        Quarter::new(year, index).map_err(|e| e.to_string())
    }
}

impl From<Quarter> for String {
    fn from(q: Quarter) -> String {
        q.to_string()
    }
}

impl TryFrom<String> for Quarter {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StockRecord {
    pub stock_id: String,
    pub sector: Sector,
    pub quarter: Quarter,
    pub features: Vec<f64>,
    pub label: Label,
}

/// Per-feature z-score parameters fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Sample standard deviation; 0 marks a constant column.
    pub stddev: Vec<f64>,
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Standardization {
        let d = data.dim();
        let n = data.len();
        let mut mean = vec![0.0; d];
        for r in &data.records {
            for (m, v) in mean.iter_mut().zip(&r.features) {
                *m += v;
            }
        }
        if n > 0 {
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        let mut stddev = vec![0.0; d];
        if n > 1 {
            for r in &data.records {
                for ((s, v), m) in stddev.iter_mut().zip(&r.features).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in stddev.iter_mut() {
                *s = (*s / (n - 1) as f64).sqrt();
                // Relative guard: rounding noise on a constant column is not variance.
                if !s.is_finite() || *s <= 1e-12 * (1.0 + s.abs()) {
                    *s = 0.0;
                }
            }
        }
        Standardization { mean, stddev }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.stddev))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let records = data
            .records
            .iter()
            .map(|r| StockRecord {
                features: self.transform(&r.features),
                ..r.clone()
            })
            .collect();
        Dataset {
            schema: data.schema.clone(),
            records,
            standardization: Some(self.clone()),
        }
    }
}

/// An immutable collection of records sharing one feature schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub records: Vec<StockRecord>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(schema: Vec<String>, records: Vec<StockRecord>) -> Result<Dataset> {
        for r in &records {
            if r.features.len() != schema.len() {
                return Err(Error::DimensionMismatch {
                    expected: schema.len(),
                    got: r.features.len(),
                });
            }
        }
        Ok(Dataset {
            schema,
            records,
            standardization: None,
        })
    }

    /// Wraps a bare design matrix. Records get ids `r0, r1, ...`, sector
    /// `Aggregated` and quarter 2000Q1; features are named `f0, f1, ...`.
    pub fn from_xy(x: Vec<Vec<f64>>, y: Vec<Label>) -> Result<Dataset> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                predictions: x.len(),
                truth: y.len(),
            });
        }
        let d = x.first().map_or(0, Vec::len);
        let schema = (0..d).map(|j| format!("f{j}")).collect();
        let quarter = Quarter {
            year: 2000,
            index: 1,
        };
        let records = x
            .into_iter()
            .zip(y)
            .enumerate()
            .map(|(i, (features, label))| StockRecord {
                stock_id: format!("r{i}"),
                sector: Sector::Aggregated,
                quarter,
                features,
                label,
            })
            .collect();
        Dataset::new(schema, records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.features.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.records.iter().filter(|r| r.label.is_positive()).count();
        (self.len() - pos, pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            standardization: self.standardization.clone(),
        }
    }

    /// Keeps only the feature columns in `columns`, in that order.
    pub fn project(&self, columns: &[usize]) -> Dataset {
        let pick = |v: &[f64]| columns.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Dataset {
            schema: columns.iter().map(|&j| self.schema[j].clone()).collect(),
            records: self
                .records
                .iter()
                .map(|r| StockRecord {
                    features: pick(&r.features),
                    ..r.clone()
                })
                .collect(),
            standardization: self.standardization.as_ref().map(|s| Standardization {
                mean: pick(&s.mean),
                stddev: pick(&s.stddev),
            }),
        }
    }

    pub fn filter_quarter(&self, quarter: Quarter) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.quarter == quarter)
                .cloned()
                .collect(),
            standardization: self.standardization.clone(),
        }
    }

    /// Relabels every record with the `Aggregated` pseudo-sector.
    pub fn aggregated(&self) -> Dataset {
        let mut out = self.clone();
        out.records
            .iter_mut()
            .for_each(|r| r.sector = Sector::Aggregated);
        out
    }

    pub fn below_critical_mass(&self, minimum: usize) -> bool {
        self.len() < minimum
    }
}

/// A data row dropped during ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based line number in the file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub rejected: Vec<RowIssue>,
}

const ID_COLUMN: &str = "stock_id";
const SECTOR_COLUMNS: [&str; 2] = ["gics_sector", "sector"];
const YEAR_COLUMN: &str = "year";
const QUARTER_COLUMN: &str = "quarter";
const LABEL_COLUMN: &str = "label";
const PRICE_COLUMNS: [&str; 2] = ["price_initial", "price_subsequent"];

enum LabelSource {
    Column(usize),
    Prices(usize, usize),
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "NaN" | "nan" | "null" | ".")
}

/// Reads a quarterly CSV with the given feature columns.
///
/// Rows whose sector, quarter or label cannot be parsed are dropped and
/// reported in [`LoadedCsv::rejected`]. Blank numeric cells are filled with
/// the median of the column over the accepted rows.
pub fn load_csv(path: impl AsRef<Path>, schema: &[String]) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let id_col = find(ID_COLUMN)?;
    let sector_col = SECTOR_COLUMNS
        .iter()
        .find_map(|c| position.get(c).copied())
        .ok_or_else(|| Error::MissingColumn(SECTOR_COLUMNS[0].to_string()))?;
    let year_col = find(YEAR_COLUMN)?;
    let quarter_col = find(QUARTER_COLUMN)?;
    let feature_cols = schema
        .iter()
        .map(|name| find(name))
        .collect::<Result<Vec<_>>>()?;
    let label_source = match position.get(LABEL_COLUMN) {
        Some(&c) => LabelSource::Column(c),
        None => match (position.get(PRICE_COLUMNS[0]), position.get(PRICE_COLUMNS[1])) {
            (Some(&a), Some(&b)) => LabelSource::Prices(a, b),
            _ => return Err(Error::MissingColumn(LABEL_COLUMN.to_string())),
        },
    };

    let mut known: HashSet<usize> = feature_cols.iter().copied().collect();
    known.extend([id_col, sector_col, year_col, quarter_col]);
    match label_source {
        LabelSource::Column(c) => {
            known.insert(c);
        }
        LabelSource::Prices(a, b) => {
            known.extend([a, b]);
        }
    }
    for (i, h) in headers.iter().enumerate() {
        if !known.contains(&i) && !SECTOR_COLUMNS.contains(&h) {
            log::warn!("{}: ignoring unknown column `{h}`", path.display());
        }
    }

    struct Partial {
        stock_id: String,
        sector: Sector,
        quarter: Quarter,
        label: Label,
        cells: Vec<Option<f64>>,
    }

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    let mut saw_data = false;
    for record in reader.records() {
        let record = record?;
        saw_data = true;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");

        let parsed = (|| -> std::result::Result<(Sector, Quarter, Label), String> {
            let sector: Sector = cell(sector_col).parse()?;
            let year: i32 = cell(year_col)
                .parse()
                .map_err(|_| format!("bad year `{}`", cell(year_col)))?;
            let index: u8 = cell(quarter_col)
                .parse()
                .map_err(|_| format!("bad quarter `{}`", cell(quarter_col)))?;
            let quarter = Quarter::new(year, index).map_err(|e| e.to_string())?;
            let label = match label_source {
                LabelSource::Column(c) => cell(c).parse()?,
                LabelSource::Prices(a, b) => {
                    let price = |i: usize| {
                        cell(i)
                            .parse::<f64>()
                            .map_err(|_| format!("bad price `{}`", cell(i)))
                    };
                    label_from_prices(price(a)?, price(b)?).map_err(|e| e.to_string())?
                }
            };
            Ok((sector, quarter, label))
        })();
        let (sector, quarter, label) = match parsed {
            Ok(v) => v,
            Err(reason) => {
                log::warn!("{}:{line}: rejected row: {reason}", path.display());
                rejected.push(RowIssue { line, reason });
                continue;
            }
        };

        let mut cells = Vec::with_capacity(feature_cols.len());
        for (&c, name) in feature_cols.iter().zip(schema) {
            let raw = cell(c);
            if is_missing(raw) {
                cells.push(None);
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => cells.push(Some(v)),
                _ => {
                    return Err(Error::MalformedRow {
                        row: line as usize,
                        reason: format!("non-numeric value `{raw}` in column {name}"),
                    })
                }
            }
        }
        rows.push(Partial {
            stock_id: cell(id_col).to_string(),
            sector,
            quarter,
            label,
            cells,
        });
    }
    if !saw_data {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }

    let mut medians = Vec::with_capacity(schema.len());
    for (j, name) in schema.iter().enumerate() {
        let present: Vec<f64> = rows.iter().filter_map(|r| r.cells[j]).collect();
        if present.is_empty() && rows.iter().any(|r| r.cells[j].is_none()) {
            return Err(Error::MalformedRow {
                row: 0,
                reason: format!("column {name} has no values to impute from"),
            });
        }
        medians.push(median(present));
    }

    let records = rows
        .into_iter()
        .map(|r| StockRecord {
            stock_id: r.stock_id,
            sector: r.sector,
            quarter: r.quarter,
            label: r.label,
            features: r
                .cells
                .iter()
                .zip(&medians)
                .map(|(c, m)| c.unwrap_or(*m))
                .collect(),
        })
        .collect();
    Ok(LoadedCsv {
        dataset: Dataset::new(schema.to_vec(), records)?,
        rejected,
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Splits records by sector, ordered by GICS code.
pub fn partition_by_sector(data: &Dataset) -> BTreeMap<Sector, Dataset> {
    let mut parts: BTreeMap<Sector, Dataset> = BTreeMap::new();
    for r in &data.records {
        parts
            .entry(r.sector)
            .or_insert_with(|| Dataset {
                schema: data.schema.clone(),
                records: Vec::new(),
                standardization: data.standardization.clone(),
            })
            .records
            .push(r.clone());
    }
    parts
}

/// Random train/test split; `|train| = max(1, round(fraction * n))`.
pub fn split_train_test(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let n = data.len();
    let n_train = ((train_fraction * n as f64).round() as usize).max(1);
    if n_train >= n {
        return Err(Error::DegenerateSplit {
            train: n_train.min(n),
            test: n.saturating_sub(n_train),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// Fits z-score parameters on `train` and applies them to both sets.
pub fn standardize(train: &Dataset, test: &Dataset) -> (Dataset, Dataset) {
    let params = Standardization::fit(train);
    (params.apply(train), params.apply(test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn header(label_cols: &str) -> String {
        format!(
            "stock_id,gics_sector,year,quarter,{},{label_cols}\n",
            FEATURE_SCHEMA.join(",")
        )
    }

    fn row(id: &str, sector: &str, first: &str, tail: &str) -> String {
        let rest = vec!["1.0"; 29].join(",");
        format!("{id},{sector},2009,1,{first},{rest},{tail}\n")
    }

    #[test]
    fn loads_full_schema() {
        let mut body = header("label");
        for i in 0..5 {
            body.push_str(&row(&format!("S{i}"), "10", "3.5", if i % 2 == 0 { "1" } else { "-1" }));
        }
        let f = write_csv(&body);
        let loaded = load_csv(f.path(), &default_schema()).unwrap();
        assert_eq!(loaded.dataset.len(), 5);
        assert_eq!(loaded.dataset.dim(), 30);
        assert!(loaded.rejected.is_empty());
        assert_eq!(loaded.dataset.records[1].label, Label::Negative);
        assert_eq!(loaded.dataset.records[0].sector, Sector::Energy);
    }

    #[test]
    fn header_only_is_empty_file() {
        let f = write_csv(&header("label"));
        assert!(matches!(load_csv(f.path(), &default_schema()), Err(Error::EmptyFile(_))));
        let f = write_csv("");
        assert!(matches!(load_csv(f.path(), &default_schema()), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn blank_cell_takes_column_median() {
        // ACTQ over the remaining rows: 10, 12, 13, 20 -> median 12.5
        let mut body = header("label");
        for (i, v) in ["10", "", "12", "13", "20"].iter().enumerate() {
            body.push_str(&row(&format!("S{i}"), "Energy", v, "1"));
        }
        let f = write_csv(&body);
        let ds = load_csv(f.path(), &default_schema()).unwrap().dataset;
        assert_eq!(ds.records[1].features[0], 12.5);
    }

    #[test]
    fn missing_schema_column() {
        let body = "stock_id,gics_sector,year,quarter,ACTQ,label\nA,10,2009,1,1.0,1\n";
        let f = write_csv(body);
        match load_csv(f.path(), &default_schema()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "CHEQ"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_malformed() {
        let mut body = header("label");
        body.push_str(&row("A", "10", "abc", "1"));
        let f = write_csv(&body);
        assert!(matches!(
            load_csv(f.path(), &default_schema()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn bad_sector_and_quarter_rows_rejected() {
        let schema = vec!["ACTQ".to_string()];
        let body = "stock_id,gics_sector,year,quarter,ACTQ,label,extra\n\
                    A,10,2009,1,1.0,1,x\n\
                    B,99,2009,1,2.0,1,x\n\
                    C,Financials,2009,7,3.0,-1,x\n\
                    D,Financials,2009,2,4.0,-1,x\n";
        let f = write_csv(body);
        let loaded = load_csv(f.path(), &schema).unwrap();
        assert_eq!(loaded.dataset.len(), 2);
        let lines: Vec<u64> = loaded.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 4]);
    }

    #[test]
    fn labels_from_price_columns() {
        let schema = vec!["ACTQ".to_string()];
        let body = "stock_id,gics_sector,year,quarter,ACTQ,price_initial,price_subsequent\n\
                    A,10,2009,1,1.0,10,12\n\
                    B,10,2009,1,1.0,10,10\n\
                    C,10,2009,1,1.0,0,10\n";
        let f = write_csv(body);
        let loaded = load_csv(f.path(), &schema).unwrap();
        assert_eq!(loaded.dataset.labels(), vec![Label::Positive, Label::Negative]);
        assert_eq!(loaded.rejected.len(), 1);
    }

    #[test]
    fn price_labels() {
        assert_eq!(label_from_prices(10.0, 12.0).unwrap(), Label::Positive);
        assert_eq!(label_from_prices(10.0, 10.0).unwrap(), Label::Negative);
        assert_eq!(label_from_prices(25.0, 19.0).unwrap(), Label::Negative);
        assert!(matches!(
            label_from_prices(0.0, 1.0),
            Err(Error::NonPositivePrice { .. })
        ));
        assert!(label_from_prices(1.0, -2.0).is_err());
    }

    fn toy(sectors: &[Sector]) -> Dataset {
        let records = sectors
            .iter()
            .enumerate()
            .map(|(i, &sector)| StockRecord {
                stock_id: format!("S{i}"),
                sector,
                quarter: Quarter::new(2009, 1).unwrap(),
                features: vec![i as f64],
                label: if i % 2 == 0 { Label::Positive } else { Label::Negative },
            })
            .collect();
        Dataset::new(vec!["x".into()], records).unwrap()
    }

    #[test]
    fn partition_sizes_and_order() {
        let mut sectors = vec![Sector::Financials; 7];
        sectors.extend([Sector::Energy; 3]);
        let parts = partition_by_sector(&toy(&sectors));
        let sizes: Vec<(Sector, usize)> = parts.iter().map(|(s, d)| (*s, d.len())).collect();
        assert_eq!(sizes, vec![(Sector::Energy, 3), (Sector::Financials, 7)]);

        let single = toy(&[Sector::Utilities; 4]);
        let parts = partition_by_sector(&single);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[&Sector::Utilities], single);

        assert!(partition_by_sector(&toy(&[])).is_empty());
    }

    #[test]
    fn split_sizes() {
        let data = toy(&[Sector::Energy; 100]);
        let (train, test) = split_train_test(&data, 0.10, 7).unwrap();
        assert_eq!((train.len(), test.len()), (10, 90));
        let (a, _) = split_train_test(&data, 0.10, 7).unwrap();
        assert_eq!(a, train);

        let two = toy(&[Sector::Energy; 2]);
        let (train, test) = split_train_test(&two, 0.5, 1).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));

        let one = toy(&[Sector::Energy; 1]);
        assert!(matches!(
            split_train_test(&one, 0.5, 1),
            Err(Error::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn standardize_uses_sample_stddev() {
        let train = Dataset::from_xy(
            vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
            vec![Label::Positive; 3],
        )
        .unwrap();
        let test = Dataset::from_xy(vec![vec![2.0, 7.0]], vec![Label::Negative]).unwrap();
        let (tr, te) = standardize(&train, &test);
        let col: Vec<f64> = tr.records.iter().map(|r| r.features[0]).collect();
        for (got, want) in col.iter().zip([-1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(tr.records.iter().all(|r| r.features[1] == 0.0));
        assert_eq!(te.records[0].features, vec![0.0, 0.0]);
    }

    #[test]
    fn quarter_parsing_and_order() {
        let q: Quarter = "2009Q4".parse().unwrap();
        assert_eq!(q.next(), Quarter::new(2010, 1).unwrap());
        assert!(Quarter::new(2009, 2).unwrap() > Quarter::new(2008, 4).unwrap());
        assert_eq!(q.through(Quarter::new(2010, 2).unwrap()).len(), 3);
        assert!("2009Q5".parse::<Quarter>().is_err());
    }

    #[test]
    fn sector_names_and_codes() {
        assert_eq!("45".parse::<Sector>().unwrap(), Sector::InformationTechnology);
        assert_eq!("health care".parse::<Sector>().unwrap(), Sector::HealthCare);
        assert!("12".parse::<Sector>().is_err());
        for s in Sector::GICS {
            assert_eq!(s.name().parse::<Sector>().unwrap(), s);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn price_label_antisymmetric(a in 0.01f64..1e4, b in 0.01f64..1e4) {
                prop_assume!(a != b);
                let ab = label_from_prices(a, b).unwrap();
                let ba = label_from_prices(b, a).unwrap();
                prop_assert_eq!(ab, ba.flipped());
            }

            #[test]
            fn split_partitions_records(n in 2usize..80, frac in 0.05f64..0.95, seed in any::<u64>()) {
                let data = toy(&vec![Sector::Materials; n]);
                if let Ok((train, test)) = split_train_test(&data, frac, seed) {
                    let mut ids: Vec<String> = train.records.iter().chain(&test.records)
                        .map(|r| r.stock_id.clone()).collect();
                    ids.sort();
                    let mut all: Vec<String> = data.records.iter().map(|r| r.stock_id.clone()).collect();
                    all.sort();
                    prop_assert_eq!(ids, all);
                    let again = split_train_test(&data, frac, seed).unwrap();
                    prop_assert_eq!(again.0, train);
                }
            }

            #[test]
            fn partition_is_permutation(codes in proptest::collection::vec(0usize..10, 0..60)) {
                let sectors: Vec<Sector> = codes.iter().map(|&c| Sector::GICS[c]).collect();
                let data = toy(&sectors);
                let parts = partition_by_sector(&data);
                let mut ids: Vec<String> = parts.values()
                    .flat_map(|d| d.records.iter().map(|r| r.stock_id.clone())).collect();
                ids.sort();
                let mut all: Vec<String> = data.records.iter().map(|r| r.stock_id.clone()).collect();
                all.sort();
                prop_assert_eq!(ids, all);
            }

            #[test]
            fn standardized_columns(rows in proptest::collection::vec(
                proptest::collection::vec(-1e3f64..1e3, 3), 2..30)) {
                let n = rows.len();
                let train = Dataset::from_xy(rows, vec![Label::Positive; n]).unwrap();
                let (tr, _) = standardize(&train, &train);
                let params = tr.standardization.as_ref().unwrap();
                for j in 0..3 {
                    if params.stddev[j] == 0.0 { continue; }
                    let col: Vec<f64> = tr.records.iter().map(|r| r.features[j]).collect();
                    let mean = col.iter().sum::<f64>() / n as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    prop_assert!(mean.abs() < 1e-9);
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
